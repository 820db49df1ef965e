//! Exhaustive attention oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tta_core::attention::AttentionConfig;
use tta_core::Tensor;

/// Exhaustive f64 model of the attention: pooled patches, all-pairs cosine,
/// argmax, and a per-pixel gather of averaged overlapping patches.
pub struct Oracle {
    pub scores: Vec<Vec<Vec<f64>>>,
    pub admitted: Vec<Vec<bool>>,
    pub winners: Vec<Vec<usize>>,
    pub ratio: Vec<Vec<f64>>,
    pub texture: Vec<f64>,
    pub cols: usize,
}

pub fn at(x: &Tensor, n: usize, c: usize, y: isize, xx: isize) -> f64 {
    let s = x.shape();
    if y < 0 || xx < 0 || y as usize >= s[2] || xx as usize >= s[3] {
        return 0.0;
    }
    x.data()[((n * s[1] + c) * s[2] + y as usize) * s[3] + xx as usize] as f64
}

pub fn pooled(x: &Tensor, n: usize, c: usize, y: isize, xx: isize, d: usize) -> f64 {
    let s = x.shape();
    let (h, w) = ((s[2] / d) as isize, (s[3] / d) as isize);
    if y < 0 || xx < 0 || y >= h || xx >= w {
        return 0.0;
    }
    let d = d as isize;
    let mut acc = 0.0;
    for a in 0..d {
        for b in 0..d {
            acc += at(x, n, c, y * d + a, xx * d + b);
        }
    }
    acc / (d * d) as f64
}

pub fn oracle(q: &Tensor, p: &Tensor, mask: &Tensor, cfg: &AttentionConfig) -> Oracle {
    let [n, c, h, w] = [p.dim(0), p.dim(1), p.dim(2), p.dim(3)];
    let d = cfg.downsample;
    let centers = |len: usize| (0..len / d).step_by(cfg.stride).collect::<Vec<_>>();
    let (ys, xs) = (centers(h), centers(w));
    let r = (cfg.sim_patch / 2) as isize;
    let grid: Vec<(isize, isize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y as isize, x as isize))).collect();

    let mut out = Oracle {
        scores: vec![],
        admitted: vec![],
        winners: vec![],
        ratio: vec![],
        texture: vec![0.0; n * c * h * w],
        cols: xs.len(),
    };
    for b in 0..n {
        let vec_at = |t: &Tensor, (cy, cx): (isize, isize)| {
            let mut v = vec![];
            for ch in 0..t.dim(1) {
                for dy in -r..=r {
                    for dx in -r..=r {
                        v.push(pooled(t, b, ch, cy + dy, cx + dx, d));
                    }
                }
            }
            v
        };
        let qs: Vec<Vec<f64>> = grid.iter().map(|&g| vec_at(q, g)).collect();
        let ps: Vec<Vec<f64>> = grid.iter().map(|&g| vec_at(p, g)).collect();
        let frac: Vec<f64> = grid
            .iter()
            .map(|&(cy, cx)| {
                let (mut known, mut inside) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (y, x) = (cy + dy, cx + dx);
                        if y >= 0 && x >= 0 && (y as usize) < h / d && (x as usize) < w / d {
                            inside += 1.0;
                            known += pooled(mask, b, 0, y, x, d);
                        }
                    }
                }
                known / inside
            })
            .collect();
        let mut adm: Vec<bool> = frac.iter().map(|&f| f >= cfg.valid_threshold as f64 - 1e-9).collect();
        if !adm.contains(&true) {
            adm = vec![true; adm.len()];
        }
        let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s: Vec<Vec<f64>> = qs
            .iter()
            .map(|qv| {
                ps.iter()
                    .map(|pv| {
                        let (a, bb) = (norm(qv), norm(pv));
                        if a < 1e-12 || bb < 1e-12 {
                            0.0
                        } else {
                            qv.iter().zip(pv).map(|(x, y)| x * y).sum::<f64>() / (a * bb)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut win = vec![];
        let mut rat = vec![];
        for row in &s {
            let mut best = (0, f64::NEG_INFINITY);
            for (j, &v) in row.iter().enumerate() {
                if adm[j] && v > best.1 {
                    best = (j, v);
                }
            }
            win.push(best.0);
            rat.push(best.1);
        }

        // source pixel of every target pixel
        let cell = d * cfg.stride;
        let cols = xs.len();
        let src = |y: usize, x: usize| {
            let j = win[(y / cell) * cols + x / cell];
            let sy = ((j / cols) * cell + y % cell).min(h - 1);
            let sx = ((j % cols) * cell + x % cell).min(w - 1);
            (sy as isize, sx as isize)
        };
        let k = (cfg.swap_patch / 2) as isize;
        for ch in 0..c {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let (mut acc, mut count) = (0.0, 0.0);
                    for dy in -k..=k {
                        for dx in -k..=k {
                            // patch centered at (y - dy, x - dx) covers (y, x) at offset (dy, dx)
                            let (ty, tx) = (y - dy, x - dx);
                            if ty < 0 || tx < 0 || ty >= h as isize || tx >= w as isize {
                                continue;
                            }
                            let (sy, sx) = src(ty as usize, tx as usize);
                            acc += at(p, b, ch, sy + dy, sx + dx);
                            count += 1.0;
                        }
                    }
                    out.texture[((b * c + ch) * h + y as usize) * w + x as usize] = acc / count;
                }
            }
        }
        out.scores.push(s);
        out.admitted.push(adm);
        out.winners.push(win);
        out.ratio.push(rat);
    }
    out
}

pub fn random_mask(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
    // one axis-aligned hole per sample
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut m = vec![1.0; n * h * w];
    for b in 0..n {
        let (hh, hw) = (r.gen_range(2..=h / 2), r.gen_range(2..=w / 2));
        let (y0, x0) = (r.gen_range(0..=h - hh), r.gen_range(0..=w - hw));
        for y in y0..y0 + hh {
            for x in x0..x0 + hw {
                m[(b * h + y) * w + x] = 0.0;
            }
        }
    }
    Tensor::new(&[n, 1, h, w], m).unwrap()
}

