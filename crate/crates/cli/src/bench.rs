//! `bench-attention`: argmax swap against weighted-sum attention.
//!
//! Inputs are uniform random features with a centered square hole covering
//! a quarter of each side, so the validity filter excludes a real block.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tta_core::attention::{self, reference, AttentionConfig};
use tta_core::model::ModelConfig;
use tta_core::{Tape, Tensor};

use crate::{ensure_dir, write_file, CliResult, Failure, Kind, Mode};

/// Oracle runs are skipped above this many candidate pairs.
const ORACLE_PAIR_LIMIT: usize = 1 << 22;
/// Agreement tolerance on R and T.
const ORACLE_TOL: f64 = 1e-5;

#[derive(clap::Args, Debug)]
pub struct BenchArgs {
    /// Comma-separated NxCxHxW feature shapes.
    #[arg(long, value_delimiter = ',', default_value = "1x4x16x16,1x16x32x32")]
    sizes: Vec<String>,
    /// Full-resolution swap patch size (odd).
    #[arg(long, default_value_t = 5)]
    patch: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, value_enum, default_value_t = Mode::Both)]
    mode: Mode,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Softmax temperature of the weighted variant.
    #[arg(long, default_value_t = ModelConfig::default().temperature)]
    temperature: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write `bench_attention.tsv` here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_size(s: &str) -> CliResult<[usize; 4]> {
    let dims: Vec<usize> = s.trim().split('x').map(|d| d.parse().ok().filter(|&v| v > 0)).collect::<Option<_>>().ok_or_else(|| {
        Failure::new(Kind::Usage, format!("size {s:?} is not NxCxHxW with positive integers"))
    })?;
    dims.try_into().map_err(|_| Failure::new(Kind::Usage, format!("size {s:?} must have four dimensions")))
}

/// Mean gradient magnitude `sqrt(dx^2 + dy^2)` over forward differences.
pub fn sharpness(t: &Tensor) -> f64 {
    let [n, c, h, w] = [t.dim(0), t.dim(1), t.dim(2), t.dim(3)];
    let d = t.data();
    let (mut acc, mut count) = (0.0f64, 0usize);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..h.saturating_sub(1) {
            for x in 0..w.saturating_sub(1) {
                let v = d[base + y * w + x] as f64;
                let dx = d[base + y * w + x + 1] as f64 - v;
                let dy = d[base + (y + 1) * w + x] as f64 - v;
                acc += (dx * dx + dy * dy).sqrt();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

fn known_mask(n: usize, h: usize, w: usize) -> Tensor {
    let (hy, hx) = ((h / 4).max(1), (w / 4).max(1));
    let (y0, x0) = ((h - hy) / 2, (w - hx) / 2);
    let mut data = vec![1.0f32; n * h * w];
    for b in 0..n {
        for y in y0..y0 + hy {
            for x in x0..x0 + hx {
                data[(b * h + y) * w + x] = 0.0;
            }
        }
    }
    Tensor::new(&[n, 1, h, w], data).expect("consistent shape")
}

struct Row {
    size: String,
    mode: &'static str,
    seconds: f64,
    positions_per_s: f64,
    memory_mb: f64,
    oracle: String,
    sharpness: f64,
}

pub fn run(a: BenchArgs) -> CliResult {
    if a.repeats == 0 {
        return Err(Failure::new(Kind::Usage, "--repeats must be >= 1"));
    }
    let cfg = AttentionConfig {
        swap_patch: a.patch,
        stride: a.stride,
        ..AttentionConfig::default()
    };
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(Failure::new(Kind::Usage, problems.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut rows = Vec::new();
    let mut disagreements = Vec::new();
    for size in &a.sizes {
        let [n, c, h, w] = parse_size(size)?;
        let q = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng)?;
        let p = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng)?;
        let valid = known_mask(n, h, w);
        let tape = Tape::new();
        let (qv, pv) = (tape.constant(q.clone()), tape.constant(p.clone()));

        if matches!(a.mode, Mode::Swap | Mode::Both) {
            let mut best = f64::INFINITY;
            let mut last = None;
            for _ in 0..a.repeats {
                let t0 = Instant::now();
                let s = attention::relevance_embedding(&qv, &pv, &valid, &cfg)?;
                let r = attention::feature_swap(&pv, &s, &cfg)?;
                best = best.min(t0.elapsed().as_secs_f64());
                last = Some((s.grid, r));
            }
            let (grid, r) = last.expect("repeats >= 1");
            let (lq, lp) = (grid.positions(), grid.positions());
            let k2 = cfg.sim_patch * cfg.sim_patch;
            let floats = n * lq * lp + 2 * n * lp * c * k2 + n * h * w * c * cfg.swap_patch * cfg.swap_patch + n * c * h * w;
            let oracle = if n * lq * lp > ORACLE_PAIR_LIMIT {
                "skipped".to_string()
            } else {
                let o = reference::feature_swap(&q, &p, &valid, &cfg)?;
                let h_ok = o.candidate_index == r.candidate_index;
                let r_err = o
                    .ratio_grid
                    .iter()
                    .zip(r.ratio_grid.value().data())
                    .map(|(&a, &b)| (a - b as f64).abs())
                    .fold(0.0, f64::max);
                let t_err = o.texture.max_abs_diff(r.texture_map.value()) as f64;
                let ok = h_ok && r_err <= ORACLE_TOL && t_err <= ORACLE_TOL;
                if !ok {
                    disagreements.push(size.clone());
                }
                format!("{} (H {}, R {r_err:.1e}, T {t_err:.1e})", if ok { "ok" } else { "MISMATCH" }, if h_ok { "exact" } else { "differs" })
            };
            rows.push(Row {
                size: size.clone(),
                mode: "swap",
                seconds: best,
                positions_per_s: (n * lq) as f64 / best,
                memory_mb: floats as f64 * 4.0 / 1e6,
                oracle,
                sharpness: sharpness(r.texture_map.value()),
            });
        }

        if matches!(a.mode, Mode::Weighted | Mode::Both) {
            let mut best = f64::INFINITY;
            let mut last = None;
            for _ in 0..a.repeats {
                let t0 = Instant::now();
                let s = attention::relevance_embedding(&qv, &pv, &valid, &cfg)?;
                let t = attention::weighted_texture(&pv, &s, &cfg, a.temperature)?;
                best = best.min(t0.elapsed().as_secs_f64());
                last = Some((s.grid, t));
            }
            let (grid, t) = last.expect("repeats >= 1");
            let (lq, lp) = (grid.positions(), grid.positions());
            let cell = grid.cell * grid.cell;
            let k2 = cfg.sim_patch * cfg.sim_patch;
            let ps2 = cfg.swap_patch * cfg.swap_patch;
            // scores and softmax weights, both unfoldings, one gathered
            // candidate block and the weighted rows per block offset
            let floats = 2 * n * lq * lp + 2 * n * lp * c * k2 + n * h * w * c * ps2 + n * lp * c * ps2 + cell * n * lq * c * ps2;
            rows.push(Row {
                size: size.clone(),
                mode: "weighted",
                seconds: best,
                positions_per_s: (n * lq) as f64 / best,
                memory_mb: floats as f64 * 4.0 / 1e6,
                oracle: "-".to_string(),
                sharpness: sharpness(t.value()),
            });
        }
    }

    let mut table = String::from("size\tmode\tseconds\tpositions_per_s\tmemory_mb\toracle\tsharpness\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{}\t{}\t{:.6}\t{:.1}\t{:.3}\t{}\t{:.6}",
            r.size, r.mode, r.seconds, r.positions_per_s, r.memory_mb, r.oracle, r.sharpness
        );
    }
    print!("{table}");
    for size in &a.sizes {
        let of = |mode: &str| rows.iter().find(|r| &r.size == size && r.mode == mode).map(|r| r.sharpness);
        if let (Some(s), Some(w)) = (of("swap"), of("weighted")) {
            println!("{size}: sharpness swap/weighted = {:.3}", if w > 0.0 { s / w } else { f64::INFINITY });
        }
    }
    if let Some(dir) = &a.out_dir {
        ensure_dir(dir)?;
        write_file(&dir.join("bench_attention.tsv"), &table)?;
    }
    if !disagreements.is_empty() {
        return Err(Failure::new(
            Kind::Numeric,
            format!("swap disagrees with the brute-force oracle at {}", disagreements.join(", ")),
        ));
    }
    Ok(())
}
