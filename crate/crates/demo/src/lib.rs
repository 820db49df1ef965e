//! Browser demo: draw a procedural texture, cut free-form holes into it and
//! fill them by texture transform attention applied directly to pixels.
//!
//! There is no trained generator in the page.  The fill starts from the
//! mean known color and runs a few rounds of
//! `relevance_embedding -> feature_swap -> composite` with the current
//! estimate as both context and texture, so every round copies whole known
//! patches into the hole.  The weighted mode replaces the argmax swap with
//! softmax averaging, which shows the blur the swap avoids.

use wasm_bindgen::prelude::*;

use tta_core::attention::{self, AttentionConfig};
use tta_core::data::{self, image, MaskSpec, TextureFamily, TextureSpec};
use tta_core::model::composite_tensor;
use tta_core::{Tape, Tensor};

/// Softmax temperature of the weighted fill.
pub const TEMPERATURE: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FillMode {
    Swap,
    Weighted,
}

impl FillMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "swap" => Some(FillMode::Swap),
            "weighted" => Some(FillMode::Weighted),
            _ => None,
        }
    }
}

#[wasm_bindgen]
pub struct Scene {
    size: usize,
    texture: Tensor,
    /// `[1, 1, S, S]`, 1 on holes.
    mask: Tensor,
    fill: Option<Tensor>,
    /// Ratio map of the last fill round, `[1, 1, S, S]`.
    ratio: Option<Tensor>,
}

fn rgba_of_image(t: &Tensor) -> Vec<u8> {
    let hw = t.dim(2) * t.dim(3);
    let d = t.data();
    let mut out = Vec::with_capacity(hw * 4);
    for i in 0..hw {
        out.extend_from_slice(&[image::to_byte(d[i]), image::to_byte(d[hw + i]), image::to_byte(d[2 * hw + i]), 255]);
    }
    out
}

/// Gray levels for values in `[0, 1]`.
fn rgba_of_plane(t: &Tensor) -> Vec<u8> {
    t.data()
        .iter()
        .flat_map(|&v| {
            let b = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [b, b, b, 255]
        })
        .collect()
}

impl Scene {
    /// Side must be a multiple of 2 for the half-resolution similarity pass.
    pub fn try_new(size: usize) -> tta_core::Result<Self> {
        if size < 8 || size % 2 != 0 {
            return Err(tta_core::Error::Parameter(format!("size must be even and >= 8, got {size}")));
        }
        let mut scene = Self {
            size,
            texture: Tensor::zeros(&[1, 3, size, size])?,
            mask: Tensor::zeros(&[1, 1, size, size])?,
            fill: None,
            ratio: None,
        };
        scene.try_set_texture("checker", 0)?;
        scene.try_random_mask(0, 0.10, 0.40)?;
        Ok(scene)
    }

    pub fn try_set_texture(&mut self, family: &str, seed: u64) -> tta_core::Result<()> {
        let family = TextureFamily::parse(family).ok_or_else(|| tta_core::Error::Parameter(format!("unknown texture family {family:?}")))?;
        self.texture = data::generate_texture(&TextureSpec::sample(family, self.size, seed))?;
        self.fill = None;
        self.ratio = None;
        Ok(())
    }

    pub fn try_random_mask(&mut self, seed: u64, min_ratio: f32, max_ratio: f32) -> tta_core::Result<()> {
        let spec = MaskSpec {
            min_ratio,
            max_ratio,
            ..MaskSpec::for_size(self.size)
        };
        self.mask = data::generate_mask(&spec.with_seed(seed))?;
        self.fill = None;
        self.ratio = None;
        Ok(())
    }

    /// Runs `rounds` fill rounds from the mean known color.
    pub fn try_fill(&mut self, mode: FillMode, rounds: usize) -> tta_core::Result<()> {
        let (s, hw) = (self.size, self.size * self.size);
        let known = self.mask.map(|m| 1.0 - m);
        let mut mean = [0.0f64; 3];
        let count = known.data().iter().filter(|&&k| k > 0.5).count().max(1);
        for (ch, m) in mean.iter_mut().enumerate() {
            let plane = &self.texture.data()[ch * hw..(ch + 1) * hw];
            *m = plane.iter().zip(known.data()).filter(|(_, &k)| k > 0.5).map(|(&v, _)| v as f64).sum::<f64>() / count as f64;
        }
        let start: Vec<f32> = (0..3 * hw)
            .map(|i| if self.mask.data()[i % hw] > 0.5 { mean[i / hw] as f32 } else { self.texture.data()[i] })
            .collect();
        let mut current = Tensor::new(&[1, 3, s, s], start)?;
        let cfg = AttentionConfig::default();
        let mut ratio = Tensor::zeros(&[1, 1, s, s])?;
        for _ in 0..rounds {
            let tape = Tape::new();
            let x = tape.constant(current.clone());
            let sim = attention::relevance_embedding(&x, &x, &known, &cfg)?;
            let texture = match mode {
                FillMode::Swap => {
                    let r = attention::feature_swap(&x, &sim, &cfg)?;
                    ratio = r.ratio_map.value().clone();
                    r.texture_map.value().clone()
                }
                FillMode::Weighted => {
                    ratio = attention::ratio_map(&sim)?.value().clone();
                    attention::weighted_texture(&x, &sim, &cfg, TEMPERATURE)?.value().clone()
                }
            };
            current = composite_tensor(&texture, &self.texture, &self.mask)?;
        }
        self.fill = Some(current);
        self.ratio = Some(ratio);
        Ok(())
    }

    pub fn texture(&self) -> &Tensor {
        &self.texture
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn filled(&self) -> Option<&Tensor> {
        self.fill.as_ref()
    }
}

fn js<T>(r: tta_core::Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize) -> Result<Scene, JsError> {
        js(Self::try_new(size))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `family` is `stripes` or `checker`.
    pub fn set_texture(&mut self, family: &str, seed: u32) -> Result<(), JsError> {
        js(self.try_set_texture(family, seed as u64))
    }

    /// Replaces the mask with a random free-form one whose hole ratio lies
    /// in `[min_ratio, max_ratio]`.
    pub fn random_mask(&mut self, seed: u32, min_ratio: f32, max_ratio: f32) -> Result<(), JsError> {
        js(self.try_random_mask(seed as u64, min_ratio, max_ratio))
    }

    pub fn clear_mask(&mut self) {
        self.mask = self.mask.map(|_| 0.0);
        self.fill = None;
        self.ratio = None;
    }

    /// Stamps a disc of holes (or known pixels when `erase`) at `(x, y)`.
    pub fn paint(&mut self, x: f32, y: f32, radius: f32, erase: bool) {
        let s = self.size;
        let value = if erase { 0.0 } else { 1.0 };
        let m = self.mask.data_mut();
        for py in 0..s {
            for px in 0..s {
                let (dx, dy) = (px as f32 + 0.5 - x, py as f32 + 0.5 - y);
                if dx * dx + dy * dy <= radius * radius {
                    m[py * s + px] = value;
                }
            }
        }
        self.fill = None;
        self.ratio = None;
    }

    pub fn hole_ratio(&self) -> f64 {
        data::hole_ratio(&self.mask)
    }

    /// `mode` is `swap` or `weighted`.
    pub fn fill(&mut self, mode: &str, rounds: usize) -> Result<(), JsError> {
        let mode = FillMode::parse(mode).ok_or_else(|| JsError::new(&format!("unknown fill mode {mode:?}")))?;
        js(self.try_fill(mode, rounds))
    }

    pub fn texture_rgba(&self) -> Vec<u8> {
        rgba_of_image(&self.texture)
    }

    /// The incomplete input with holes drawn white.
    pub fn masked_rgba(&self) -> Vec<u8> {
        let mut out = rgba_of_image(&self.texture);
        for (i, &m) in self.mask.data().iter().enumerate() {
            if m > 0.5 {
                out[4 * i..4 * i + 3].copy_from_slice(&[255, 255, 255]);
            }
        }
        out
    }

    /// The last fill, or the masked input when nothing has been filled.
    pub fn fill_rgba(&self) -> Vec<u8> {
        match &self.fill {
            Some(f) => rgba_of_image(f),
            None => self.masked_rgba(),
        }
    }

    /// Ratio map of the last fill round (black before any fill).
    pub fn ratio_rgba(&self) -> Vec<u8> {
        match &self.ratio {
            Some(r) => rgba_of_plane(r),
            None => vec![0, 0, 0, 255].repeat(self.size * self.size),
        }
    }

    /// Mean gradient magnitude of the filled hole region, a sharpness proxy.
    pub fn hole_sharpness(&self) -> f64 {
        let Some(f) = &self.fill else { return 0.0 };
        let s = self.size;
        let (d, m) = (f.data(), self.mask.data());
        let (mut acc, mut n) = (0.0f64, 0usize);
        for ch in 0..3 {
            for y in 0..s - 1 {
                for x in 0..s - 1 {
                    if m[y * s + x] < 0.5 {
                        continue;
                    }
                    let i = ch * s * s + y * s + x;
                    let (dx, dy) = ((d[i + 1] - d[i]) as f64, (d[i + s] - d[i]) as f64);
                    acc += (dx * dx + dy * dy).sqrt();
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    }
}
