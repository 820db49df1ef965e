//! Gated convolution, the dilated bottleneck, spectral-normalized
//! convolution and the patch discriminator stack.

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::conv::ConvParams;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    None,
}

impl Activation {
    fn apply(self, x: &Var) -> Var {
        match self {
            Activation::Elu => x.elu(),
            Activation::None => x.clone(),
        }
    }
}

/// Fan-in scaled normal initialization with the given gain.
pub(crate) fn fan_in_normal<R: Rng + ?Sized>(shape: &[usize], gain: f32, rng: &mut R) -> Result<Tensor> {
    let fan_in: usize = shape[1..].iter().product();
    Tensor::randn(shape, gain / (fan_in as f32).sqrt(), rng)
}

/// `activation(conv(x; feature)) ⊙ sigmoid(conv(x; gate))`.
#[derive(Clone, Debug)]
pub struct GatedConvLayer {
    pub feature_weight: ParamId,
    pub feature_bias: ParamId,
    pub gate_weight: ParamId,
    pub gate_bias: ParamId,
    pub conv: ConvParams,
    pub activation: Activation,
    pub out_channels: usize,
}

impl GatedConvLayer {
    /// Registers a "same"-padded gated layer under `prefix` in `store`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = [out_channels, in_channels, kernel, kernel];
        let feature_gain = match activation {
            Activation::Elu => std::f32::consts::SQRT_2,
            Activation::None => 1.0,
        };
        let feature_weight = store.add(format!("{prefix}/feature_weight"), fan_in_normal(&shape, feature_gain, rng)?)?;
        let feature_bias = store.add(format!("{prefix}/feature_bias"), Tensor::zeros(&[out_channels])?)?;
        let gate_weight = store.add(format!("{prefix}/gate_weight"), fan_in_normal(&shape, 1.0, rng)?)?;
        let gate_bias = store.add(format!("{prefix}/gate_bias"), Tensor::zeros(&[out_channels])?)?;
        Ok(Self {
            feature_weight,
            feature_bias,
            gate_weight,
            gate_bias,
            conv: ConvParams::new(stride, dilation * (kernel - 1) / 2, dilation),
            activation,
            out_channels,
        })
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Result<Var> {
        // one convolution over the stacked feature and gate kernels
        let w = Var::concat(&[p.get(self.feature_weight), p.get(self.gate_weight)], 0)?;
        let b = Var::concat(&[p.get(self.feature_bias), p.get(self.gate_bias)], 0)?;
        let y = x.conv2d(&w, Some(&b), self.conv)?;
        let c = self.out_channels;
        let feature = self.activation.apply(&y.slice(1, 0, c)?);
        let gate = y.slice(1, c, c)?.sigmoid();
        feature.mul(&gate)
    }
}

/// Stack of same-shape dilated gated convolutions.
#[derive(Clone, Debug)]
pub struct DilatedBlock {
    pub layers: Vec<GatedConvLayer>,
}

impl DilatedBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        dilations: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let layers = dilations
            .iter()
            .map(|&d| GatedConvLayer::new(store, &format!("{prefix}/dilated{d}"), channels, channels, 3, 1, d, Activation::Elu, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Result<Var> {
        dilated_block(p, &self.layers, x)
    }
}

/// Applies `layers` in sequence; each keeps the spatial shape.
pub fn dilated_block(p: &Bound, layers: &[GatedConvLayer], x: &Var) -> Result<Var> {
    let mut h = x.clone();
    for layer in layers {
        h = layer.forward(p, &h)?;
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Spectral normalization

/// Smallest singular-value estimate used as a divisor.
pub const SIGMA_FLOOR: f32 = 1e-12;

pub const DISCRIMINATOR_SLOPE: f32 = 0.2;

/// Convolution whose weight is divided by a power-iteration estimate of its
/// largest singular value, followed by leaky ReLU.
#[derive(Clone, Debug)]
pub struct SpectralConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    /// Left singular vector estimate, unit norm, length `out_channels`.
    pub u: Vec<f32>,
    pub conv: ConvParams,
}

fn normalize(v: &mut [f32]) -> bool {
    let norm = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if norm <= SIGMA_FLOOR as f64 {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    true
}

/// `W v` for `W` viewed as `[rows, cols]`.
fn mat_vec(w: &[f32], rows: usize, cols: usize, v: &[f32]) -> Vec<f32> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| (a * b) as f64).sum::<f64>() as f32)
        .collect()
}

/// `Wᵀ u`.
fn mat_t_vec(w: &[f32], rows: usize, cols: usize, u: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f64; cols];
    for r in 0..rows {
        for (o, &x) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += (x * u[r]) as f64;
        }
    }
    out.into_iter().map(|x| x as f32).collect()
}

/// One power-iteration step on `u` for weight matrix `w`.  Leaves `u`
/// untouched when `w` is zero.
pub fn power_iteration(w: &Tensor, u: &mut [f32]) {
    let rows = w.dim(0);
    let cols = w.numel() / rows;
    let mut v = mat_t_vec(w.data(), rows, cols, u);
    if !normalize(&mut v) {
        return;
    }
    let mut next = mat_vec(w.data(), rows, cols, &v);
    if normalize(&mut next) {
        u.copy_from_slice(&next);
    }
}

/// Right vector `v = normalize(Wᵀ u)` and `σ̂ = uᵀ W v`.
pub fn spectral_estimate(w: &Tensor, u: &[f32]) -> (Vec<f32>, f32) {
    let rows = w.dim(0);
    let cols = w.numel() / rows;
    let mut v = mat_t_vec(w.data(), rows, cols, u);
    if !normalize(&mut v) {
        return (v, 0.0);
    }
    let wv = mat_vec(w.data(), rows, cols, &v);
    (v, u.iter().zip(&wv).map(|(a, b)| a * b).sum())
}

impl SpectralConvLayer {
    pub const INIT_ITERATIONS: usize = 50;

    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = fan_in_normal(&[out_channels, in_channels, kernel, kernel], std::f32::consts::SQRT_2, rng)?;
        let mut u = Tensor::randn(&[out_channels], 1.0, rng)?.into_vec();
        normalize(&mut u);
        let weight = store.add(format!("{prefix}/weight"), w)?;
        let bias = store.add(format!("{prefix}/bias"), Tensor::zeros(&[out_channels])?)?;
        let mut layer = Self {
            weight,
            bias,
            u,
            conv: ConvParams::new(stride, kernel / 2, 1),
        };
        layer.converge(store, Self::INIT_ITERATIONS);
        Ok(layer)
    }

    /// Runs `iterations` power-iteration steps against the stored weight.
    pub fn converge(&mut self, store: &ParamStore, iterations: usize) {
        let w = store.get(self.weight);
        for _ in 0..iterations {
            power_iteration(w, &mut self.u);
        }
    }

    /// Current `σ̂` for the stored weight.
    pub fn sigma(&self, store: &ParamStore) -> f32 {
        spectral_estimate(store.get(self.weight), &self.u).1
    }

    /// The weight divided by `σ̂`, differentiable through `σ̂ = uᵀ W v` with
    /// `u` and `v` held constant.
    pub fn normalized_weight(&self, p: &Bound) -> Result<Var> {
        let w = p.get(self.weight);
        let (v, _) = spectral_estimate(w.value(), &self.u);
        let rows = self.u.len();
        let cols = v.len();
        let outer: Vec<f32> = self.u.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect();
        debug_assert_eq!(outer.len(), rows * cols);
        let outer = w.constant_like(Tensor::new(w.shape(), outer)?);
        let sigma = w.mul(&outer)?.sum().clamp_min(SIGMA_FLOOR);
        let inv = sigma.reciprocal()?.reshape(&[1, 1, 1, 1])?;
        w.mul(&inv)
    }

    /// With `train_mode`, one power-iteration step refreshes `u` first.
    pub fn forward(&mut self, p: &Bound, x: &Var, train_mode: bool) -> Result<Var> {
        if train_mode {
            power_iteration(p.get(self.weight).value(), &mut self.u);
        }
        let w = self.normalized_weight(p)?;
        Ok(x.conv2d(&w, Some(p.get(self.bias)), self.conv)?.leaky_relu(DISCRIMINATOR_SLOPE))
    }
}

/// Image ⊕ mask in, per-patch score map `[N, C, h, w]` out.
pub fn patch_discriminator(p: &Bound, layers: &mut [SpectralConvLayer], x: &Var, train_mode: bool) -> Result<Var> {
    let [_, _, h, w] = x.value().dims4("patch_discriminator")?;
    let total_stride: usize = layers.iter().map(|l| l.conv.stride).product();
    if h < total_stride || w < total_stride {
        return dim_err(
            "patch_discriminator",
            format!("input {h}x{w} smaller than the total stride {total_stride}"),
        );
    }
    let mut out = x.clone();
    for layer in layers.iter_mut() {
        out = layer.forward(p, &out, train_mode)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn saturated_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = GatedConvLayer::new(&mut store, "g", 2, 3, 3, 1, 1, Activation::Elu, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 2, 5, 5], 1.0, &mut rng).unwrap();

        let tape = Tape::new();
        let plain = {
            let p = store.bind(&tape, false);
            let xv = tape.constant(x.clone());
            xv.conv2d(p.get(layer.feature_weight), Some(p.get(layer.feature_bias)), layer.conv)
                .unwrap()
                .elu()
        };
        *store.get_mut(layer.gate_bias) = Tensor::full(&[3], 20.0).unwrap();
        *store.get_mut(layer.gate_weight) = Tensor::zeros(&[3, 2, 3, 3]).unwrap();
        let open = layer.forward(&store.bind(&tape, false), &tape.constant(x.clone())).unwrap();
        assert!(open.value().max_abs_diff(plain.value()) < 1e-6);

        *store.get_mut(layer.gate_bias) = Tensor::full(&[3], -20.0).unwrap();
        let closed = layer.forward(&store.bind(&tape, false), &tape.constant(x)).unwrap();
        assert!(closed.value().data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn zero_weight_sigma_is_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mut layer = SpectralConvLayer::new(&mut store, "d", 2, 3, 3, 1, &mut rng).unwrap();
        *store.get_mut(layer.weight) = Tensor::zeros(&[3, 2, 3, 3]).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 4, 4]).unwrap());
        let y = layer.forward(&store.bind(&tape, true), &x, true).unwrap();
        assert!(y.value().data().iter().all(|v| *v == 0.0));
        let norm: f32 = layer.u.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-5);
    }
}
