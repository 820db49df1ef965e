//! Generator and discriminator assembly.
//!
//! Generator layout for `levels = L` at input size `S`:
//!
//! ```text
//! stem     z ⊕ M ─ gated 3x3 ───────────────────────────── S,         c0
//! enc l    stride-2 gated 3x3                 → P_l        S/2^(l+1), c_l = base·2^l
//! neck     dilated gated block on P_{L-1}     → Q_{L-1}
//! dec l    TTA(Q_l, P_l) → synthesize → ×2 nearest, gated 3x3 → Q_{l-1}
//! head     ×2 nearest, gated 3x3, gated 3x3 to RGB (linear), tanh
//! ```
//!
//! Levels run from the finest (`0`) to the bottleneck (`L-1`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionConfig, Fusion};
use crate::error::{dim_err, Error, Result};
use crate::layers::{dilated_block, fan_in_normal, patch_discriminator, Activation, GatedConvLayer, SpectralConvLayer};
use crate::losses::LossWeights;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{kernels, Tape, Tensor, Var};

/// How the texture map reaches each decoder level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Synthesis {
    /// Argmax swap with ratio-weighted, renormalized fusion.
    Tta,
    /// Argmax swap, fusion without the `(1 + R)^-1` factor.
    TtaUnnormalized,
    /// Softmax-weighted texture with the normalized fusion.
    Weighted,
    /// Argmax swap fused by a plain convolution over `F ⊕ T`.
    Concat,
    /// Skip connections unused: `F_out = F`.
    Off,
}

impl Synthesis {
    pub const ALL: [Synthesis; 5] = [
        Synthesis::Tta,
        Synthesis::TtaUnnormalized,
        Synthesis::Weighted,
        Synthesis::Concat,
        Synthesis::Off,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Synthesis::Tta => "tta",
            Synthesis::TtaUnnormalized => "tta_unnormalized",
            Synthesis::Weighted => "weighted",
            Synthesis::Concat => "concat",
            Synthesis::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub input_size: usize,
    pub dilations: Vec<usize>,
    /// Shared by every level unless `level_attention` overrides it.
    pub attention: AttentionConfig,
    /// Empty, or one entry per level (finest first).
    pub level_attention: Vec<AttentionConfig>,
    pub synthesis: Synthesis,
    /// Empty (all enabled), or one switch per level (finest first).
    pub tta_levels: Vec<bool>,
    /// Softmax temperature of the weighted variant.
    pub temperature: f32,
    pub disc_channels: Vec<usize>,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 32,
            input_size: 64,
            dilations: vec![2, 4, 8, 16],
            attention: AttentionConfig::default(),
            level_attention: Vec::new(),
            synthesis: Synthesis::Tta,
            tta_levels: Vec::new(),
            temperature: 0.1,
            disc_channels: vec![64, 128, 256, 256, 256, 256],
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small enough to train on one CPU core in minutes.
    pub fn toy() -> Self {
        Self {
            base_channels: 8,
            disc_channels: vec![8, 16, 32, 32, 32, 32],
            ..Self::default()
        }
    }

    /// Full-resolution setting.
    pub fn full_256() -> Self {
        Self {
            levels: 4,
            input_size: 256,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "default" => Some(Self::default()),
            "full-256" => Some(Self::full_256()),
            _ => None,
        }
    }

    pub fn level_config(&self, level: usize) -> &AttentionConfig {
        self.level_attention.get(level).unwrap_or(&self.attention)
    }

    pub fn tta_enabled(&self, level: usize) -> bool {
        self.synthesis != Synthesis::Off && self.tta_levels.get(level).copied().unwrap_or(true)
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.levels == 0 {
            v.push("levels must be >= 1".into());
        }
        if self.base_channels == 0 {
            v.push("base_channels must be >= 1".into());
        }
        if self.dilations.iter().any(|&d| d == 0) {
            v.push("dilations must be >= 1".into());
        }
        if !self.level_attention.is_empty() && self.level_attention.len() != self.levels {
            v.push(format!(
                "level_attention has {} entries for {} levels",
                self.level_attention.len(),
                self.levels
            ));
        }
        if !self.tta_levels.is_empty() && self.tta_levels.len() != self.levels {
            v.push(format!("tta_levels has {} entries for {} levels", self.tta_levels.len(), self.levels));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            v.push(format!("temperature must be positive, got {}", self.temperature));
        }
        for l in 0..self.levels.max(1) {
            for msg in self.level_config(l).violations() {
                v.push(format!("attention level {l}: {msg}"));
            }
        }
        if self.levels > 0 && self.levels < usize::BITS as usize - 2 {
            let d = (0..self.levels).map(|l| self.level_config(l).downsample).max().unwrap_or(1);
            let need = (1usize << self.levels) * d;
            if self.input_size == 0 || self.input_size % need != 0 {
                v.push(format!(
                    "input_size {} must be divisible by 2^levels * downsample = {need}",
                    self.input_size
                ));
            }
        }
        if self.disc_channels.is_empty() {
            v.push("disc_channels must not be empty".into());
        } else if self.disc_channels.iter().any(|&c| c == 0) {
            v.push("disc_channels must be >= 1".into());
        } else if self.disc_channels.len() < usize::BITS as usize
            && self.input_size < (1usize << self.disc_channels.len())
        {
            v.push(format!(
                "input_size {} smaller than the discriminator stride product {}",
                self.input_size,
                1usize << self.disc_channels.len()
            ));
        }
        v.extend(self.loss_weights.violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Fusion convolution of one decoder level.
#[derive(Clone, Debug)]
struct Fuse {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    fuse: Option<Fuse>,
    /// Upsample-and-convolve to the next finer level.
    up: GatedConvLayer,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: ModelConfig,
    pub params: ParamStore,
    stem: GatedConvLayer,
    encoder: Vec<GatedConvLayer>,
    bottleneck: Vec<GatedConvLayer>,
    decoder: Vec<DecoderLevel>,
    head: GatedConvLayer,
    rgb: GatedConvLayer,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamStore,
    pub layers: Vec<SpectralConvLayer>,
}

/// What one decoder level's attention did.
#[derive(Clone, Debug)]
pub struct LevelTrace {
    pub level: usize,
    /// Per sample, whether no candidate passed the validity filter.
    pub fallback: Vec<bool>,
    /// Winning similarity position per query (empty for the weighted variant).
    pub candidate_index: Vec<usize>,
    pub mean_ratio: f32,
}

pub struct GeneratorOutput {
    /// `[N, 3, S, S]` prediction in `[-1, 1]`.
    pub pred: Var,
    pub traces: Vec<LevelTrace>,
}

impl GeneratorOutput {
    pub fn fallback_engaged(&self) -> bool {
        self.traces.iter().any(|t| t.fallback.iter().any(|&f| f))
    }
}

/// Builds both networks deterministically from `cfg.seed`.
pub fn build(cfg: &ModelConfig) -> Result<(Generator, Discriminator)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = Generator::new(cfg, &mut rng)?;
    let d = Discriminator::new(&cfg.disc_channels, &mut rng)?;
    Ok((g, d))
}

impl Generator {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let gated = |store: &mut ParamStore, name: String, cin, cout, stride, dilation, act, rng: &mut ChaCha8Rng| {
            GatedConvLayer::new(store, &name, cin, cout, 3, stride, dilation, act, rng)
        };
        let c0 = cfg.channels(0);
        let stem = gated(&mut store, "generator/stem/conv".into(), 4, c0, 1, 1, Activation::Elu, rng)?;
        let mut encoder = Vec::with_capacity(cfg.levels);
        let mut cin = c0;
        for l in 0..cfg.levels {
            let c = cfg.channels(l);
            encoder.push(gated(&mut store, format!("generator/enc{l}/down"), cin, c, 2, 1, Activation::Elu, rng)?);
            cin = c;
        }
        let bottleneck = cfg
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| gated(&mut store, format!("generator/neck/dilated{i}"), cin, cin, 1, d, Activation::Elu, rng))
            .collect::<Result<Vec<_>>>()?;

        let mut decoder = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let c = cfg.channels(l);
            let fuse = if cfg.tta_enabled(l) {
                let weight = store.add(
                    format!("generator/dec{l}/fusion/weight"),
                    fan_in_normal(&[c, 2 * c, 3, 3], 1.0, rng)?,
                )?;
                let bias = store.add(format!("generator/dec{l}/fusion/bias"), Tensor::zeros(&[c])?)?;
                Some(Fuse { weight, bias })
            } else {
                None
            };
            let cout = if l == 0 { c0 } else { cfg.channels(l - 1) };
            let up = gated(&mut store, format!("generator/dec{l}/up"), c, cout, 1, 1, Activation::Elu, rng)?;
            decoder.push(DecoderLevel { fuse, up });
        }
        let head = gated(&mut store, "generator/head/conv".into(), c0, c0, 1, 1, Activation::Elu, rng)?;
        let rgb = gated(&mut store, "generator/head/rgb".into(), c0, 3, 1, 1, Activation::None, rng)?;
        Ok(Self {
            config: cfg.clone(),
            params: store,
            stem,
            encoder,
            bottleneck,
            decoder,
            head,
            rgb,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// `z`: `[N, 3, S, S]` incomplete image; `mask`: `[N, 1, S, S]`, 1 on holes.
    pub fn forward(&self, p: &Bound, z: &Var, mask: &Tensor) -> Result<GeneratorOutput> {
        let cfg = &self.config;
        let s = cfg.input_size;
        let [n, c, h, w] = z.value().dims4("generator")?;
        if c != 3 || h != s || w != s {
            return dim_err("generator", format!("input [{n}, {c}, {h}, {w}] must be [N, 3, {s}, {s}]"));
        }
        if mask.shape() != [n, 1, s, s] {
            return dim_err("generator", format!("mask {:?} must be [{n}, 1, {s}, {s}]", mask.shape()));
        }
        let m = z.constant_like(mask.clone());
        let x = Var::concat(&[z, &m], 1)?;
        let mut h = self.stem.forward(p, &x)?;
        let mut skips = Vec::with_capacity(cfg.levels);
        for layer in &self.encoder {
            h = layer.forward(p, &h)?;
            skips.push(h.clone());
        }
        h = dilated_block(p, &self.bottleneck, &h)?;

        let known = mask.map(|v| 1.0 - v);
        let mut traces = Vec::new();
        for l in (0..cfg.levels).rev() {
            if let Some(fuse) = &self.decoder[l].fuse {
                let valid = level_validity(&known, 1 << (l + 1))?;
                let (f_out, trace) = self.attend(p, l, fuse, &h, &skips[l], &valid)?;
                h = f_out;
                traces.push(trace);
            }
            h = self.decoder[l].up.forward(p, &h.nearest_upsample(2)?)?;
        }
        h = self.head.forward(p, &h)?;
        let pred = self.rgb.forward(p, &h)?.tanh();
        Ok(GeneratorOutput { pred, traces })
    }

    fn attend(&self, p: &Bound, level: usize, fuse: &Fuse, q: &Var, skip: &Var, valid: &Tensor) -> Result<(Var, LevelTrace)> {
        let cfg = self.config.level_config(level);
        let s = attention::relevance_embedding(q, skip, valid, cfg)?;
        let (texture, ratio, candidate_index) = match self.config.synthesis {
            Synthesis::Weighted => (
                attention::weighted_texture(skip, &s, cfg, self.config.temperature)?,
                attention::ratio_map(&s)?,
                Vec::new(),
            ),
            _ => {
                let res = attention::feature_swap(skip, &s, cfg)?;
                (res.texture_map, res.ratio_map, res.candidate_index)
            }
        };
        let mode = match self.config.synthesis {
            Synthesis::TtaUnnormalized => Fusion::Unnormalized,
            Synthesis::Concat => Fusion::ConcatOnly,
            _ => Fusion::Normalized,
        };
        let out = attention::synthesize_with(q, &texture, &ratio, p.get(fuse.weight), p.get(fuse.bias), mode)?;
        let trace = LevelTrace {
            level,
            fallback: s.fallback.clone(),
            candidate_index,
            mean_ratio: ratio.value().mean(),
        };
        Ok((out, trace))
    }

    /// Forward pass with frozen parameters on a private tape.
    pub fn infer(&self, z: &Tensor, mask: &Tensor) -> Result<(Tensor, Vec<LevelTrace>)> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let out = self.forward(&p, &tape.constant(z.clone()), mask)?;
        Ok((out.pred.value().clone(), out.traces))
    }
}

/// Pixels at `1/factor` resolution whose whole footprint is known.
fn level_validity(known: &Tensor, factor: usize) -> Result<Tensor> {
    Ok(kernels::avg_pool(known, factor)?.map(|v| if v >= 1.0 - 1e-6 { 1.0 } else { 0.0 }))
}

/// `M ⊙ pred + (1 - M) ⊙ gt`.
pub fn composite(pred: &Var, gt: &Var, mask: &Tensor) -> Result<Var> {
    let m = pred.constant_like(mask.clone());
    let keep = pred.constant_like(mask.map(|v| 1.0 - v));
    pred.mul(&m)?.add(&gt.mul(&keep)?)
}

/// Tensor form of [`composite`].
pub fn composite_tensor(pred: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let [n, _, h, w] = pred.dims4("composite")?;
    if gt.shape() != pred.shape() || mask.shape() != [n, 1, h, w] {
        return dim_err(
            "composite",
            format!("pred {:?}, gt {:?}, mask {:?}", pred.shape(), gt.shape(), mask.shape()),
        );
    }
    let m = kernels::expand(mask, pred.shape());
    let data = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(m.data())
        .map(|((&p, &g), &m)| if m != 0.0 { m * p + (1.0 - m) * g } else { g })
        .collect();
    Tensor::new(pred.shape(), data)
}

impl Discriminator {
    fn new(channels: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut cin = 4;
        let mut layers = Vec::with_capacity(channels.len());
        for (i, &c) in channels.iter().enumerate() {
            layers.push(SpectralConvLayer::new(&mut params, &format!("discriminator/{i}/conv"), cin, c, 5, 2, rng)?);
            cin = c;
        }
        Ok(Self { params, layers })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Scores `image ⊕ mask`; `train_mode` advances each power iteration.
    pub fn forward(&mut self, p: &Bound, image: &Var, mask: &Tensor, train_mode: bool) -> Result<Var> {
        let m = image.constant_like(mask.clone());
        let x = Var::concat(&[image, &m], 1)?;
        patch_discriminator(p, &mut self.layers, &x, train_mode)
    }
}
