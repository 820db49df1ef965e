//! Dense spectral-norm oracle.

use tta_core::Tensor;

/// Top singular value of `w` viewed as `[rows, cols]`, via 2000 power steps
/// on `WᵀW` in f64.
pub fn top_singular_value(w: &Tensor) -> f64 {
    let rows = w.dim(0);
    let cols = w.numel() / rows;
    let a: Vec<f64> = w.data().iter().map(|&x| x as f64).collect();
    let mut gram = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            gram[i * cols + j] = (0..rows).map(|r| a[r * cols + i] * a[r * cols + j]).sum();
        }
    }
    let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let next: Vec<f64> = (0..cols).map(|i| (0..cols).map(|j| gram[i * cols + j] * v[j]).sum()).collect();
        lambda = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next.iter().map(|x| x / lambda).collect();
    }
    lambda.sqrt()
}

