//! Brute-force texture swap: every patch materialized in `f64`, every pair
//! scored, textures reassembled by scatter-add with count division.
//!
//! Quadratic in the number of positions and allocation-heavy; used as the
//! timing baseline by the attention benchmark.

use super::{AttentionConfig, Fallback};
use crate::error::Result;
use crate::tensor::Tensor;

pub struct ReferenceSwap {
    pub candidate_index: Vec<usize>,
    pub ratio_grid: Vec<f64>,
    pub index_map: Vec<usize>,
    pub texture: Tensor,
}

fn pool(x: &[f32], c: usize, h: usize, w: usize, d: usize) -> Vec<f64> {
    let (ho, wo) = (h / d, w / d);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let mut acc = 0.0;
                for dy in 0..d {
                    for dx in 0..d {
                        acc += x[(ch * h + y * d + dy) * w + xx * d + dx] as f64;
                    }
                }
                out[(ch * ho + y) * wo + xx] = acc / (d * d) as f64;
            }
        }
    }
    out
}

/// Patch centered at `(cy, cx)`, zero outside the image.
fn patch_at(x: &[f64], c: usize, h: usize, w: usize, k: usize, cy: usize, cx: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = Vec::with_capacity(c * k * k);
    for ch in 0..c {
        for dy in -r..=r {
            for dx in -r..=r {
                let (y, xx) = (cy as isize + dy, cx as isize + dx);
                let inside = y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w;
                out.push(if inside { x[(ch * h + y as usize) * w + xx as usize] } else { 0.0 });
            }
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na <= 1e-12 || nb <= 1e-12 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

pub fn feature_swap(q: &Tensor, p: &Tensor, valid_mask: &Tensor, cfg: &AttentionConfig) -> Result<ReferenceSwap> {
    cfg.validate()?;
    let [n, c, h, w] = p.dims4("reference::feature_swap")?;
    let (d, s, k) = (cfg.downsample, cfg.stride, cfg.sim_patch);
    let (hd, wd) = (h / d, w / d);
    let centers_y: Vec<usize> = (0..hd).step_by(s).collect();
    let centers_x: Vec<usize> = (0..wd).step_by(s).collect();
    let gw = centers_x.len();
    let cell = d * s;
    let plane = c * h * w;

    let mut candidate_index = Vec::new();
    let mut ratio_grid = Vec::new();
    let mut index_map = Vec::new();
    let mut texture = vec![0.0f32; n * plane];
    for b in 0..n {
        let qd = pool(&q.data()[b * plane..][..plane], c, h, w, d);
        let pd = pool(&p.data()[b * plane..][..plane], c, h, w, d);
        let md = pool(&valid_mask.data()[b * h * w..][..h * w], 1, h, w, d);
        let mut qs = Vec::new();
        let mut ps = Vec::new();
        let mut frac = Vec::new();
        for &cy in &centers_y {
            for &cx in &centers_x {
                qs.push(patch_at(&qd, c, hd, wd, k, cy, cx));
                ps.push(patch_at(&pd, c, hd, wd, k, cy, cx));
                let r = (k / 2) as isize;
                let (mut known, mut total) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (y, x) = (cy as isize + dy, cx as isize + dx);
                        if y >= 0 && x >= 0 && (y as usize) < hd && (x as usize) < wd {
                            known += md[y as usize * wd + x as usize];
                            total += 1.0;
                        }
                    }
                }
                frac.push(known / total);
            }
        }
        let mut admitted: Vec<bool> = frac.iter().map(|&f| f >= cfg.valid_threshold as f64 - 1e-6).collect();
        if !admitted.iter().any(|&a| a) {
            let best = frac.iter().copied().fold(0.0, f64::max);
            admitted = frac
                .iter()
                .map(|&f| cfg.fallback == Fallback::UseAll || best <= 0.0 || f >= best)
                .collect();
        }
        let mut winners = Vec::with_capacity(qs.len());
        for qp in &qs {
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for (j, pp) in ps.iter().enumerate() {
                if !admitted[j] {
                    continue;
                }
                let v = cosine(qp, pp);
                if v > best.1 {
                    best = (j, v);
                }
            }
            winners.push(best.0);
            candidate_index.push(best.0);
            ratio_grid.push(best.1);
        }

        let full: Vec<f64> = p.data()[b * plane..][..plane].iter().map(|&v| v as f64).collect();
        let mut acc = vec![0.0f64; plane];
        let mut count = vec![0u32; h * w];
        let r = (cfg.swap_patch / 2) as isize;
        for y in 0..h {
            for x in 0..w {
                let (a, bb) = (y / cell, x / cell);
                let j = winners[a * gw + bb];
                let sy = ((j / gw) * cell + y - a * cell).min(h - 1);
                let sx = ((j % gw) * cell + x - bb * cell).min(w - 1);
                index_map.push(sy * w + sx);
                let src = patch_at(&full, c, h, w, cfg.swap_patch, sy, sx);
                let mut t = 0;
                for ch in 0..c {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (ty, tx) = (y as isize + dy, x as isize + dx);
                            if ty >= 0 && tx >= 0 && (ty as usize) < h && (tx as usize) < w {
                                acc[(ch * h + ty as usize) * w + tx as usize] += src[t];
                                if ch == 0 {
                                    count[ty as usize * w + tx as usize] += 1;
                                }
                            }
                            t += 1;
                        }
                    }
                }
            }
        }
        for (i, v) in acc.iter().enumerate() {
            texture[b * plane + i] = (v / count[i % (h * w)] as f64) as f32;
        }
    }
    Ok(ReferenceSwap {
        candidate_index,
        ratio_grid,
        index_map,
        texture: Tensor::new(&[n, c, h, w], texture)?,
    })
}
