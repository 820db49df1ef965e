//! Training objective: reconstruction, hinge adversarial, perceptual and
//! style terms, and the frozen feature extractor behind the last two.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::layers::fan_in_normal;
use crate::tensor::conv::ConvParams;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rec: f32,
    pub adv: f32,
    pub per: f32,
    pub style: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            adv: 1.0,
            per: 0.1,
            style: 100.0,
        }
    }
}

impl LossWeights {
    pub fn violations(&self) -> Vec<String> {
        [("rec", self.rec), ("adv", self.adv), ("per", self.per), ("style", self.style)]
            .into_iter()
            .filter(|(_, w)| !(w.is_finite() && *w >= 0.0))
            .map(|(n, w)| format!("loss weight {n} must be finite and >= 0, got {w}"))
            .collect()
    }
}

/// The four objective terms.
#[derive(Clone, Debug)]
pub struct LossParts<T> {
    pub rec: T,
    pub adv: T,
    pub per: T,
    pub style: T,
}

fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(op, format!("shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

/// `mean |gt - pred|`.
pub fn rec_loss(gt: &Var, pred: &Var) -> Result<Var> {
    same_shape("rec_loss", gt, pred)?;
    Ok(gt.sub(pred)?.abs().mean())
}

/// `-mean D(fake)`.
pub fn adv_g_loss(fake_scores: &Var) -> Var {
    fake_scores.mean().neg()
}

/// `mean relu(1 - D(real)) + mean relu(1 + D(fake))`.
pub fn adv_d_loss(real_scores: &Var, fake_scores: &Var) -> Result<Var> {
    same_shape("adv_d_loss", real_scores, fake_scores)?;
    let real = real_scores.neg().add_scalar(1.0).relu().mean();
    let fake = fake_scores.add_scalar(1.0).relu().mean();
    real.add(&fake)
}

/// One frozen convolution stage.
#[derive(Clone, Debug)]
pub struct Stage {
    pub weight: Tensor,
    pub bias: Tensor,
    pub conv: ConvParams,
    pub relu: bool,
}

/// Fixed random convolutional feature stack.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    pub stages: Vec<Stage>,
    /// Seed the weights were drawn from (`None` for hand-built stacks).
    pub seed: Option<u64>,
}

impl PerceptualExtractor {
    pub const CHANNELS: [usize; 5] = [8, 16, 32, 64, 64];

    /// Side of the noise image used to calibrate stage gains.
    pub const CALIBRATION_SIZE: usize = 64;

    /// Five stride-2 3x3 ReLU stages on RGB input, weights drawn from `seed`.
    ///
    /// Each stage is rescaled so that its output RMS equals its input RMS
    /// on a fixed uniform-noise image drawn from the same seed; without this
    /// the feature scale (and so the meaning of the loss weights) varies by
    /// almost two orders of magnitude between seeds.  Biases are zero and
    /// ReLU is positively homogeneous, so the rescaling is exact.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Self::CALIBRATION_SIZE;
        let mut probe = Tensor::uniform(&[1, 3, s, s], -1.0, 1.0, &mut rng).expect("valid shape");
        let mut cin = 3;
        let mut stages = Vec::with_capacity(Self::CHANNELS.len());
        for &c in &Self::CHANNELS {
            let mut stage = Stage {
                weight: fan_in_normal(&[c, cin, 3, 3], std::f32::consts::SQRT_2, &mut rng).expect("valid shape"),
                bias: Tensor::zeros(&[c]).expect("valid shape"),
                conv: ConvParams::new(2, 1, 1),
                relu: true,
            };
            let tape = crate::tensor::Tape::new();
            let out = tape
                .constant(probe.clone())
                .conv2d(&tape.constant(stage.weight.clone()), None, stage.conv)
                .expect("calibration shapes agree")
                .relu()
                .value()
                .clone();
            let rms = |t: &Tensor| (t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / t.numel() as f64).sqrt();
            let (r_in, r_out) = (rms(&probe), rms(&out));
            let gain = if r_out > 0.0 { (r_in / r_out) as f32 } else { 1.0 };
            stage.weight = stage.weight.map(|w| w * gain);
            probe = out.map(|v| v * gain);
            cin = c;
            stages.push(stage);
        }
        Self { stages, seed: Some(seed) }
    }

    pub fn from_stages(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Parameter("extractor needs at least one stage".into()));
        }
        Ok(Self { stages, seed: None })
    }

    /// Activation map of every stage.  Weights enter the tape as constants.
    pub fn features(&self, x: &Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for s in &self.stages {
            let w = x.constant_like(s.weight.clone());
            let b = x.constant_like(s.bias.clone());
            h = h.conv2d(&w, Some(&b), s.conv)?;
            if s.relu {
                h = h.relu();
            }
            out.push(h.clone());
        }
        Ok(out)
    }
}

/// `Σ_i mean |φ_i(gt) - φ_i(pred)|`.
pub fn perceptual_loss(ext: &PerceptualExtractor, gt: &Var, pred: &Var) -> Result<Var> {
    same_shape("perceptual_loss", gt, pred)?;
    let (fg, fp) = (ext.features(gt)?, ext.features(pred)?);
    sum_terms(fg.iter().zip(&fp).map(|(a, b)| Ok(a.sub(b)?.abs().mean())))
}

/// Per-sample `φ φᵀ / (C H W)` as `[N, C, C]`.
pub fn gram(phi: &Var) -> Result<Var> {
    let [n, c, h, w] = phi.value().dims4("gram")?;
    let flat = phi.reshape(&[n, c, h * w])?;
    Ok(flat.matmul(&flat, true)?.mul_scalar(1.0 / (c * h * w) as f32))
}

/// `Σ_i ‖gram(φ_i(comp)) - gram(φ_i(pred))‖₁`, averaged over the batch.
pub fn style_loss(ext: &PerceptualExtractor, comp: &Var, pred: &Var) -> Result<Var> {
    same_shape("style_loss", comp, pred)?;
    let n = comp.shape()[0] as f32;
    let (fc, fp) = (ext.features(comp)?, ext.features(pred)?);
    sum_terms(fc.iter().zip(&fp).map(|(a, b)| Ok(gram(a)?.sub(&gram(b)?)?.abs().sum().mul_scalar(1.0 / n))))
}

fn sum_terms(terms: impl Iterator<Item = Result<Var>>) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for t in terms {
        let t = t?;
        acc = Some(match acc {
            Some(a) => a.add(&t)?,
            None => t,
        });
    }
    acc.ok_or_else(|| Error::Parameter("no loss terms".into()))
}

/// `λ_rec L_rec + λ_adv L_G + λ_per L_per + λ_style L_style`.
pub fn total_loss(weights: &LossWeights, parts: &LossParts<Var>) -> Result<Var> {
    parts
        .rec
        .mul_scalar(weights.rec)
        .add(&parts.adv.mul_scalar(weights.adv))?
        .add(&parts.per.mul_scalar(weights.per))?
        .add(&parts.style.mul_scalar(weights.style))
}
