//! Sliding-window patch extraction (`unfold`) and its overlap-resolving
//! inverse (`fold`).
//!
//! Unfolded rows are laid out `[batch, position, channel * patch * patch]`
//! with positions in raster order and each row ordered `(channel, dy, dx)`.
//! Windows that hang over the border read zeros.

use super::Tensor;
use crate::error::{dim_err, Result};

/// Window size, stride and zero padding shared by `unfold` and `fold`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub patch: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PatchGeometry {
    pub fn new(patch: usize, stride: usize, padding: usize) -> Self {
        Self {
            patch,
            stride,
            padding,
        }
    }

    /// Stride-`stride` windows centred on the pixel grid (`padding = patch / 2`).
    pub fn centered(patch: usize, stride: usize) -> Self {
        Self::new(patch, stride, patch / 2)
    }

    /// Number of window positions along an axis of length `len`.
    pub fn positions(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (self.patch >= 1 && self.stride >= 1 && padded >= self.patch)
            .then(|| (padded - self.patch) / self.stride + 1)
    }

    fn grid(&self, op: &'static str, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.patch == 0 || self.stride == 0 {
            return dim_err(op, format!("patch and stride must be >= 1, got {self:?}"));
        }
        match (self.positions(h), self.positions(w)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => dim_err(
                op,
                format!(
                    "patch {} exceeds padded input {}x{}",
                    self.patch,
                    h + 2 * self.padding,
                    w + 2 * self.padding
                ),
            ),
        }
    }
}

/// Calls `f(row_offset, pixel_offset)` for every in-bounds element of every
/// window of one image, where offsets are relative to the image's rows /
/// `[c, h, w]` block.
fn for_each_window(
    c: usize,
    h: usize,
    w: usize,
    g: PatchGeometry,
    gh: usize,
    gw: usize,
    mut f: impl FnMut(usize, usize),
) {
    let p = g.patch;
    let row_len = c * p * p;
    for py in 0..gh {
        for px in 0..gw {
            let row = (py * gw + px) * row_len;
            let y0 = (py * g.stride) as isize - g.padding as isize;
            let x0 = (px * g.stride) as isize - g.padding as isize;
            for ch in 0..c {
                for dy in 0..p {
                    let y = y0 + dy as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for dx in 0..p {
                        let x = x0 + dx as isize;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        f(
                            row + (ch * p + dy) * p + dx,
                            (ch * h + y as usize) * w + x as usize,
                        );
                    }
                }
            }
        }
    }
}

pub fn unfold(input: &Tensor, g: PatchGeometry) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("unfold")?;
    let (gh, gw) = g.grid("unfold", h, w)?;
    let rows = gh * gw;
    let row_len = c * g.patch * g.patch;
    let mut out = vec![0.0f32; n * rows * row_len];
    for i in 0..n {
        let src = &input.data()[i * c * h * w..(i + 1) * c * h * w];
        let dst = &mut out[i * rows * row_len..(i + 1) * rows * row_len];
        for_each_window(c, h, w, g, gh, gw, |r, px| dst[r] = src[px]);
    }
    Ok(Tensor::from_parts(vec![n, rows, row_len], out))
}

/// Number of windows covering each pixel of a single `h x w` plane.
pub fn coverage(h: usize, w: usize, g: PatchGeometry) -> Result<Vec<u32>> {
    let (gh, gw) = g.grid("coverage", h, w)?;
    let mut counts = vec![0u32; h * w];
    for_each_window(1, h, w, g, gh, gw, |_, px| counts[px] += 1);
    Ok(counts)
}

/// Sums overlapping window contributions back into `out_shape`.  With
/// `normalize`, every pixel is divided by its contribution count; pixels no
/// window reaches stay zero.  Accumulation runs in `f64`, so unfolding then
/// folding with `normalize` reproduces the input bit for bit.
pub fn fold(patches: &Tensor, out_shape: [usize; 4], g: PatchGeometry, normalize: bool) -> Result<Tensor> {
    const OP: &str = "fold";
    let [n, c, h, w] = out_shape;
    let (gh, gw) = g.grid(OP, h, w)?;
    let [pn, rows, row_len] = patches.dims3(OP)?;
    if pn != n || rows != gh * gw || row_len != c * g.patch * g.patch {
        return dim_err(
            OP,
            format!(
                "patches {:?} inconsistent with output {out_shape:?}: expected [{n}, {}, {}]",
                patches.shape(),
                gh * gw,
                c * g.patch * g.patch
            ),
        );
    }
    let counts = if normalize { Some(coverage(h, w, g)?) } else { None };
    let plane = h * w;
    let mut out = vec![0.0f32; n * c * plane];
    let mut acc = vec![0.0f64; c * plane];
    for i in 0..n {
        acc.fill(0.0);
        let src = &patches.data()[i * rows * row_len..(i + 1) * rows * row_len];
        for_each_window(c, h, w, g, gh, gw, |r, px| acc[px] += src[r] as f64);
        let dst = &mut out[i * c * plane..(i + 1) * c * plane];
        match &counts {
            Some(counts) => {
                for (j, (d, a)) in dst.iter_mut().zip(&acc).enumerate() {
                    let k = counts[j % plane];
                    *d = if k == 0 { 0.0 } else { (a / k as f64) as f32 };
                }
            }
            None => {
                for (d, a) in dst.iter_mut().zip(&acc) {
                    *d = *a as f32;
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape.to_vec(), out))
}
