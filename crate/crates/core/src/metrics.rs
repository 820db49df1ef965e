//! Hole-masked L1 and multi-scale structural similarity.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Standard per-scale exponents, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `(mean |gt - out|` over all pixels, the same over hole pixels only`)`.
/// The hole term is 0 when the mask is empty.
pub fn l1_metric(gt: &Tensor, out: &Tensor, mask: &Tensor) -> Result<(f64, f64)> {
    let [n, c, h, w] = gt.dims4("l1_metric")?;
    if out.shape() != gt.shape() || mask.shape() != [n, 1, h, w] {
        return dim_err(
            "l1_metric",
            format!("gt {:?}, out {:?}, mask {:?}", gt.shape(), out.shape(), mask.shape()),
        );
    }
    let plane = h * w;
    let (mut full, mut hole, mut hole_n) = (0.0f64, 0.0f64, 0usize);
    for (i, (&a, &b)) in gt.data().iter().zip(out.data()).enumerate() {
        let d = (a as f64 - b as f64).abs();
        full += d;
        if mask.data()[(i / (c * plane)) * plane + i % plane] >= 0.5 {
            hole += d;
            hole_n += 1;
        }
    }
    let hole = if hole_n == 0 { 0.0 } else { hole / hole_n as f64 };
    Ok((full / gt.numel() as f64, hole))
}

/// Result of one MS-SSIM evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    pub scales: usize,
    /// Fewer than five scales fit the image.
    pub reduced: bool,
}

/// Scales whose side is at least the window, capped at five; at least one.
pub fn scale_count(size: usize) -> usize {
    let mut s = 0;
    let mut side = size;
    while s < MS_SSIM_WEIGHTS.len() && side >= WINDOW {
        s += 1;
        side /= 2;
    }
    s.max(1)
}

fn gaussian(len: usize) -> Vec<f64> {
    let r = (len / 2) as f64;
    let g: Vec<f64> = (0..len).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one plane.
fn filter(x: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for xo in 0..wo {
            rows[y * wo + xo] = (0..k).map(|t| g[t] * x[y * w + xo + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = (0..k).map(|t| g[t] * rows[(yo + t) * wo + xo]).sum();
        }
    }
    (out, ho, wo)
}

/// Mean SSIM and mean contrast-structure of one plane pair in `[0, 1]`.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, g: &[f64]) -> (f64, f64) {
    let (c1, c2) = (K1 * K1, K2 * K2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mu_a, _, _) = filter(a, h, w, g);
    let (mu_b, _, _) = filter(b, h, w, g);
    let (aa, _, _) = filter(&prod(a, a), h, w, g);
    let (bb, _, _) = filter(&prod(b, b), h, w, g);
    let (ab, _, _) = filter(&prod(a, b), h, w, g);
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let contrast = (2.0 * cov + c2) / (va + vb + c2);
        cs += contrast;
        ssim += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * contrast;
    }
    let n = mu_a.len() as f64;
    (ssim / n, cs / n)
}

fn half(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for xx in 0..wo {
            out[y * wo + xx] =
                (x[2 * y * w + 2 * xx] + x[2 * y * w + 2 * xx + 1] + x[(2 * y + 1) * w + 2 * xx] + x[(2 * y + 1) * w + 2 * xx + 1]) / 4.0;
        }
    }
    (out, ho, wo)
}

fn ms_ssim_plane(a: Vec<f64>, b: Vec<f64>, h: usize, w: usize, scales: usize) -> f64 {
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    // images smaller than the window use the largest odd window that fits
    let side = h.min(w);
    let win = if side >= WINDOW { WINDOW } else { side - (1 - side % 2) };
    let g = gaussian(win.max(1));
    let (mut a, mut b, mut h, mut w) = (a, b, h, w);
    let mut value = 1.0;
    for (s, &wt) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_plane(&a, &b, h, w, &g);
        let term = if s + 1 == scales { ssim } else { cs };
        value *= term.max(0.0).powf(wt / total);
        if s + 1 < scales {
            let (na, nh, nw) = half(&a, h, w);
            let (nb, _, _) = half(&b, h, w);
            (a, b, h, w) = (na, nb, nh, nw);
        }
    }
    value
}

/// MS-SSIM of two `[N, C, H, W]` images in `[-1, 1]`, averaged over samples
/// and channels.  Images are mapped to `[0, 1]` first.
pub fn ms_ssim(a: &Tensor, b: &Tensor) -> Result<MsSsim> {
    let [n, c, h, w] = a.dims4("ms_ssim")?;
    if a.shape() != b.shape() {
        return dim_err("ms_ssim", format!("shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    let scales = scale_count(h.min(w));
    let plane = h * w;
    let to_unit = |t: &Tensor, k: usize| -> Vec<f64> {
        t.data()[k * plane..(k + 1) * plane].iter().map(|&v| (v as f64 + 1.0) / 2.0).collect()
    };
    let mut acc = 0.0;
    for k in 0..n * c {
        acc += ms_ssim_plane(to_unit(a, k), to_unit(b, k), h, w, scales);
    }
    Ok(MsSsim {
        value: acc / (n * c) as f64,
        scales,
        reduced: scales < MS_SSIM_WEIGHTS.len(),
    })
}

/// Per-image metrics plus their aggregate.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub l1_full: f64,
    pub l1_hole: f64,
    pub ms_ssim: f64,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, gt: &Tensor, out: &Tensor, mask: &Tensor) -> Result<()> {
        let (l1_full, l1_hole) = l1_metric(gt, out, mask)?;
        let ms = ms_ssim(gt, out)?.value;
        self.rows.push(MetricRow {
            name: name.into(),
            l1_full,
            l1_hole,
            ms_ssim: ms,
        });
        Ok(())
    }

    fn stat(&self, f: impl Fn(&MetricRow) -> f64) -> (f64, f64) {
        let n = self.rows.len().max(1) as f64;
        let mean = self.rows.iter().map(&f).sum::<f64>() / n;
        let var = self.rows.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// `(mean, population std)` of l1_full, l1_hole and ms_ssim.
    pub fn summary(&self) -> [(f64, f64); 3] {
        [self.stat(|r| r.l1_full), self.stat(|r| r.l1_hole), self.stat(|r| r.ms_ssim)]
    }

    /// Tab-separated table with `mean` and `std` footer rows.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("image\tl1_full\tl1_hole\tms_ssim\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{:.6}\t{:.6}\t{:.6}\n", r.name, r.l1_full, r.l1_hole, r.ms_ssim));
        }
        let [a, b, c] = self.summary();
        s.push_str(&format!("mean\t{:.6}\t{:.6}\t{:.6}\n", a.0, b.0, c.0));
        s.push_str(&format!("std\t{:.6}\t{:.6}\t{:.6}\n", a.1, b.1, c.1));
        s
    }
}
