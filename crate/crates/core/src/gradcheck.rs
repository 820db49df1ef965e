//! Central finite-difference verification of tape gradients.
//!
//! The function under test may return any shape; it is projected to a
//! scalar with fixed random weights.  Finite differences evaluate that
//! projection in `f64` from the `f32` forward outputs, so the comparison is
//! limited only by the forward pass's own rounding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f32,
    /// `(input, element)` where the largest error occurred.
    pub worst: (usize, usize),
    pub analytic: f32,
    pub numeric: f32,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f32) -> bool {
        self.max_rel_err < tol
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f32,
    /// Magnitude below which errors are measured in absolute terms.
    pub floor: f32,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            floor: 1e-1,
            seed: 0x5eed,
        }
    }
}

fn projected(out: &Tensor, weights: &[f32]) -> f64 {
    out.data()
        .iter()
        .zip(weights)
        .map(|(&o, &w)| o as f64 * w as f64)
        .sum()
}

impl GradCheck {
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&[Var]) -> Result<Var>,
    {
        let tape = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&leaves)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let weights = if out.value().numel() == 1 {
            Tensor::ones(out.shape())?
        } else {
            Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng)?
        };
        let loss = out.mul(&tape.constant(weights.clone()))?.sum();
        let grads = tape.backward(&loss)?;

        let eval = |vals: &[Tensor]| -> Result<f64> {
            let tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
            Ok(projected(f(&vars)?.value(), weights.data()))
        };

        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        };
        let mut work: Vec<Tensor> = inputs.to_vec();
        for (i, leaf) in leaves.iter().enumerate() {
            let analytic = grads.wrt(leaf);
            for e in 0..inputs[i].numel() {
                let orig = inputs[i].data()[e];
                work[i].data_mut()[e] = orig + self.eps;
                let plus = eval(&work)?;
                work[i].data_mut()[e] = orig - self.eps;
                let minus = eval(&work)?;
                work[i].data_mut()[e] = orig;
                // the perturbation actually applied, after f32 rounding
                let step = (orig + self.eps) as f64 - (orig - self.eps) as f64;
                let numeric = ((plus - minus) / step) as f32;
                let a = analytic.data()[e];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(self.floor);
                if err > report.max_rel_err {
                    report.max_rel_err = err;
                    report.worst = (i, e);
                    report.analytic = a;
                    report.numeric = numeric;
                }
                report.checked += 1;
            }
        }
        Ok(report)
    }
}
