//! Free-form brush-stroke hole masks.
//!
//! Each stroke is a chain of vertices joined by thick line segments with
//! round caps.  Consecutive segment directions alternate around a random
//! base angle, which produces the zig-zag scribbles typical of hand-drawn
//! holes.  Whole masks are redrawn until the hole ratio falls in the band.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSpec {
    pub size: usize,
    pub min_ratio: f32,
    pub max_ratio: f32,
    /// Strokes per mask, inclusive range.
    pub strokes: (usize, usize),
    /// Vertices per stroke after the start point, at least 1.
    pub max_vertices: usize,
    /// Brush diameter in pixels, inclusive range.
    pub brush_width: (f32, f32),
    /// Segment length as a fraction of `size`.
    pub max_length: f32,
    /// Half-width of the direction jitter around the base angle, radians.
    pub angle_jitter: f32,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self::for_size(64)
    }
}

impl MaskSpec {
    /// Stroke settings scaled to `size`.
    pub fn for_size(size: usize) -> Self {
        let s = size as f32;
        Self {
            size,
            min_ratio: 0.10,
            max_ratio: 0.40,
            strokes: (1, 4),
            max_vertices: 6,
            brush_width: (s / 12.0, s / 6.0),
            max_length: 0.3,
            angle_jitter: 2.0 * std::f32::consts::PI / 15.0,
            seed: 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.size == 0 {
            v.push("mask size must be >= 1".into());
        }
        if !(0.0 < self.min_ratio && self.min_ratio < self.max_ratio && self.max_ratio < 1.0) {
            v.push(format!(
                "ratios must satisfy 0 < min < max < 1, got min {} max {}",
                self.min_ratio, self.max_ratio
            ));
        }
        if self.strokes.0 == 0 || self.strokes.0 > self.strokes.1 {
            v.push(format!("stroke count range {:?} must be 1 <= lo <= hi", self.strokes));
        }
        if self.max_vertices == 0 {
            v.push("max_vertices must be >= 1".into());
        }
        let (lo, hi) = self.brush_width;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            v.push(format!("brush width range ({lo}, {hi}) must be 0 < lo <= hi"));
        }
        if !(self.max_length >= 0.0 && self.max_length.is_finite()) {
            v.push(format!("max_length must be >= 0, got {}", self.max_length));
        }
        v
    }
}

/// Marks every pixel within `radius` of segment `a`–`b`.
fn stamp_segment(buf: &mut [f32], size: usize, a: (f32, f32), b: (f32, f32), radius: f32) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + radius).ceil().max(0.0) as usize).min(size - 1);
    let y1 = ((a.1.max(b.1) + radius).ceil().max(0.0) as usize).min(size - 1);
    let r2 = radius * radius;
    for y in y0..=y1 {
        for x in x0..=x1 {
            // pixel centers sit at half-integer coordinates
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let t = if len2 > 0.0 {
                (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
            if cx * cx + cy * cy <= r2 {
                buf[y * size + x] = 1.0;
            }
        }
    }
}

fn draw<R: Rng>(spec: &MaskSpec, rng: &mut R) -> Vec<f32> {
    let size = spec.size;
    let s = size as f32;
    let mut buf = vec![0.0f32; size * size];
    let strokes = rng.gen_range(spec.strokes.0..=spec.strokes.1);
    for _ in 0..strokes {
        let mut p = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let vertices = rng.gen_range(1..=spec.max_vertices);
        let base = rng.gen_range(0.0..std::f32::consts::TAU);
        let width = rng.gen_range(spec.brush_width.0..=spec.brush_width.1);
        for i in 0..vertices {
            let mut angle = base + rng.gen_range(-spec.angle_jitter..=spec.angle_jitter);
            if i % 2 == 1 {
                angle += std::f32::consts::PI;
            }
            let len = rng.gen_range(0.0..=spec.max_length) * s;
            let q = (
                (p.0 + len * angle.cos()).clamp(0.0, s),
                (p.1 + len * angle.sin()).clamp(0.0, s),
            );
            stamp_segment(&mut buf, size, p, q, width / 2.0);
            p = q;
        }
    }
    buf
}

/// Binary `[1, 1, size, size]` mask (1 on holes) with hole ratio inside
/// `[min_ratio, max_ratio]`.
pub fn generate_mask(spec: &MaskSpec) -> Result<Tensor> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = (spec.size * spec.size) as f64;
    for _ in 0..MAX_ATTEMPTS {
        let buf = draw(spec, &mut rng);
        let ratio = buf.iter().map(|&v| v as f64).sum::<f64>() / total;
        if ratio >= spec.min_ratio as f64 && ratio <= spec.max_ratio as f64 {
            return Tensor::new(&[1, 1, spec.size, spec.size], buf);
        }
    }
    Err(Error::Parameter(format!(
        "no mask with hole ratio in [{}, {}] after {MAX_ATTEMPTS} attempts (seed {}); widen the stroke \
         settings (brush width, stroke count, segment length) or the ratio band",
        spec.min_ratio, spec.max_ratio, spec.seed
    )))
}

/// Fraction of pixels marked as hole.
pub fn hole_ratio(mask: &Tensor) -> f64 {
    mask.data().iter().filter(|&&v| v >= 0.5).count() as f64 / mask.numel() as f64
}
