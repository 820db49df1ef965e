//! Procedural stationary textures in `[-1, 1]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFamily {
    Stripes,
    Checker,
    Blobs,
    GradientNoise,
}

impl TextureFamily {
    pub const ALL: [TextureFamily; 4] = [
        TextureFamily::Stripes,
        TextureFamily::Checker,
        TextureFamily::Blobs,
        TextureFamily::GradientNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TextureFamily::Stripes => "stripes",
            TextureFamily::Checker => "checker",
            TextureFamily::Blobs => "blobs",
            TextureFamily::GradientNoise => "gradient_noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub family: TextureFamily,
    pub size: usize,
    /// Stripe period, checker period (two cells), or noise lattice spacing.
    pub period: f32,
    /// Stripe direction; 0 gives constant rows.
    pub angle: f32,
    /// The two colors the pattern alternates or blends between.
    pub colors: [[f32; 3]; 2],
    /// Noise octaves (gradient noise only).
    pub octaves: usize,
    /// Seed of the noise lattice.
    pub seed: u64,
}

impl TextureSpec {
    /// Black/white pattern with period 8 and angle 0.
    pub fn new(family: TextureFamily, size: usize, seed: u64) -> Self {
        Self {
            family,
            size,
            period: 8.0,
            angle: 0.0,
            colors: [[1.0; 3], [-1.0; 3]],
            octaves: 3,
            seed,
        }
    }

    /// Parameters drawn from `seed`: period in `[4, 8]`, any angle, two
    /// colors symmetric about a random mid tone.
    ///
    /// A square wave's mean over a window of length `L` deviates from the
    /// global mean by at most `half_contrast * period / (2L)`; the ranges keep
    /// half-image means of 64-pixel stripes and checkers within 0.1.
    pub fn sample(family: TextureFamily, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_u64.rotate_left(32));
        let mut colors = [[0.0; 3]; 2];
        for ch in 0..3 {
            let mid = rng.gen_range(-0.4..=0.4f32);
            let half = rng.gen_range(0.25..=0.375f32);
            colors[0][ch] = mid + half;
            colors[1][ch] = mid - half;
        }
        Self {
            family,
            size,
            period: rng.gen_range(4.0..=8.0),
            angle: rng.gen_range(0.0..std::f32::consts::PI),
            colors,
            octaves: rng.gen_range(2..=4),
            seed,
        }
    }
}

/// Smooth value noise on a lattice with `spacing` pixels per cell.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f32>,
    grad: Vec<(f32, f32)>,
}

impl ValueNoise {
    fn new(size: usize, spacing: f32, rng: &mut ChaCha8Rng) -> Self {
        let cells = (size as f32 / spacing).ceil() as usize + 2;
        let lattice = (0..cells * cells).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let grad = (0..cells * cells)
            .map(|_| {
                let a = rng.gen_range(0.0..std::f32::consts::TAU);
                (a.cos(), a.sin())
            })
            .collect();
        Self { cells, lattice, grad }
    }

    fn fade(t: f32) -> f32 {
        t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
    }

    /// Interpolated lattice values in `[-1, 1]`.
    fn value(&self, x: f32, y: f32) -> f32 {
        let (i, j) = (x.floor() as usize, y.floor() as usize);
        let (u, v) = (Self::fade(x - i as f32), Self::fade(y - j as f32));
        let at = |a: usize, b: usize| self.lattice[(b.min(self.cells - 1)) * self.cells + a.min(self.cells - 1)];
        let top = at(i, j) * (1.0 - u) + at(i + 1, j) * u;
        let bottom = at(i, j + 1) * (1.0 - u) + at(i + 1, j + 1) * u;
        top * (1.0 - v) + bottom * v
    }

    /// Gradient (Perlin) noise, roughly in `[-0.7, 0.7]`.
    fn gradient(&self, x: f32, y: f32) -> f32 {
        let (i, j) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - i as f32, y - j as f32);
        let dot = |a: usize, b: usize, dx: f32, dy: f32| {
            let g = self.grad[(b.min(self.cells - 1)) * self.cells + a.min(self.cells - 1)];
            g.0 * dx + g.1 * dy
        };
        let (u, v) = (Self::fade(fx), Self::fade(fy));
        let top = dot(i, j, fx, fy) * (1.0 - u) + dot(i + 1, j, fx - 1.0, fy) * u;
        let bottom = dot(i, j + 1, fx, fy - 1.0) * (1.0 - u) + dot(i + 1, j + 1, fx - 1.0, fy - 1.0) * u;
        top * (1.0 - v) + bottom * v
    }
}

/// `[1, 3, size, size]` texture image.
pub fn generate_texture(spec: &TextureSpec) -> Result<Tensor> {
    let size = spec.size;
    if size == 0 || !(spec.period > 0.0 && spec.period.is_finite()) {
        return Err(Error::Parameter(format!(
            "texture needs size >= 1 and a positive period, got size {size} period {}",
            spec.period
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // selector in [0, 1]: 1 picks colors[0], 0 picks colors[1]
    let selector: Vec<f32> = match spec.family {
        TextureFamily::Stripes => {
            let (s, c) = spec.angle.sin_cos();
            grid(size, |x, y| {
                let u = y * c + x * s;
                if u.rem_euclid(spec.period) < spec.period / 2.0 {
                    1.0
                } else {
                    0.0
                }
            })
        }
        TextureFamily::Checker => {
            let cell = spec.period / 2.0;
            grid(size, |x, y| {
                let parity = ((x / cell).floor() as i64 + (y / cell).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    1.0
                } else {
                    0.0
                }
            })
        }
        TextureFamily::Blobs => {
            let noise = ValueNoise::new(size, spec.period, &mut rng);
            grid(size, |x, y| {
                let n = noise.value(x / spec.period, y / spec.period);
                // steep ramp around zero gives blob-shaped regions
                (0.5 + 2.5 * n).clamp(0.0, 1.0)
            })
        }
        TextureFamily::GradientNoise => {
            let octaves: Vec<ValueNoise> = (0..spec.octaves.max(1))
                .map(|o| ValueNoise::new(size, spec.period / (1 << o) as f32, &mut rng))
                .collect();
            grid(size, |x, y| {
                let mut acc = 0.0;
                let mut amp = 1.0;
                let mut norm = 0.0;
                for (o, noise) in octaves.iter().enumerate() {
                    let f = (1 << o) as f32 / spec.period;
                    acc += amp * noise.gradient(x * f, y * f);
                    norm += amp;
                    amp *= 0.5;
                }
                (0.5 + acc / norm).clamp(0.0, 1.0)
            })
        }
    };
    let mut data = vec![0.0f32; 3 * size * size];
    for ch in 0..3 {
        let (a, b) = (spec.colors[0][ch], spec.colors[1][ch]);
        for (i, &t) in selector.iter().enumerate() {
            data[ch * size * size + i] = (t * a + (1.0 - t) * b).clamp(-1.0, 1.0);
        }
    }
    Tensor::new(&[1, 3, size, size], data)
}

fn grid(size: usize, f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            out.push(f(x as f32, y as f32));
        }
    }
    out
}
