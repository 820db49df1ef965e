//! Differentiable operations on [`Var`].

use std::sync::Arc;

use super::conv::{self, ConvParams};
use super::kernels as k;
use super::patch::{self, PatchGeometry};
use super::{Tensor, Var};
use crate::error::{contract_err, dim_err, Result};

fn unary(x: &Var, f: impl Fn(f32) -> f32, df: impl Fn(f32, f32) -> f32 + 'static) -> Var {
    let y = x.value().map(f);
    let (xv, yv) = (x.value().clone(), y.clone());
    x.tape().record(y, &[x], move |g| {
        let data = g
            .data()
            .iter()
            .zip(xv.data())
            .zip(yv.data())
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
    })
}

impl Var {
    // -- elementwise ------------------------------------------------------

    pub fn add(&self, other: &Var) -> Result<Var> {
        let y = k::binary("add", self.value(), other.value(), |a, b| a + b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(self.tape().record(y, &[self, other], move |g| {
            vec![Some(k::sum_to_shape(g, &sa)), Some(k::sum_to_shape(g, &sb))]
        }))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let y = k::binary("sub", self.value(), other.value(), |a, b| a - b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(self.tape().record(y, &[self, other], move |g| {
            vec![
                Some(k::sum_to_shape(g, &sa)),
                Some(k::sum_to_shape(&g.map(|v| -v), &sb)),
            ]
        }))
    }

    /// Hadamard product with broadcasting.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        let y = k::binary("mul", self.value(), other.value(), |a, b| a * b)?;
        let (a, b) = (self.value().clone(), other.value().clone());
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape().record(y, &[self, other], move |g| {
            let ga = ra.then(|| {
                let prod = k::binary("mul", g, &b, |x, y| x * y).expect("broadcast checked in forward");
                k::sum_to_shape(&prod, a.shape())
            });
            let gb = rb.then(|| {
                let prod = k::binary("mul", g, &a, |x, y| x * y).expect("broadcast checked in forward");
                k::sum_to_shape(&prod, b.shape())
            });
            vec![ga, gb]
        }))
    }

    pub fn add_scalar(&self, c: f32) -> Var {
        unary(self, move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f32) -> Var {
        unary(self, move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Var {
        self.mul_scalar(-1.0)
    }

    pub fn reciprocal(&self) -> Result<Var> {
        if self.value().data().iter().any(|&x| x == 0.0) {
            return contract_err("reciprocal", "input contains zeros");
        }
        Ok(unary(self, |x| 1.0 / x, |_, y| -y * y))
    }

    pub fn abs(&self) -> Var {
        unary(self, f32::abs, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn clamp_min(&self, lo: f32) -> Var {
        unary(self, move |x| x.max(lo), move |x, _| if x > lo { 1.0 } else { 0.0 })
    }

    pub fn relu(&self) -> Var {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, alpha: f32) -> Var {
        unary(self, move |x| k::leaky_relu(x, alpha), move |x, _| if x > 0.0 { 1.0 } else { alpha })
    }

    pub fn elu(&self) -> Var {
        unary(self, k::elu, |x, y| if x > 0.0 { 1.0 } else { y + 1.0 })
    }

    pub fn sigmoid(&self) -> Var {
        unary(self, k::sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Var {
        unary(self, f32::tanh, |_, y| 1.0 - y * y)
    }

    // -- convolution and patches -------------------------------------------

    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, p: ConvParams) -> Result<Var> {
        let y = conv::conv2d(self.value(), weight.value(), bias.map(|b| b.value()), p)?;
        let (x, w) = (self.value().clone(), weight.value().clone());
        let need = [
            self.requires_grad(),
            weight.requires_grad(),
            bias.is_some_and(|b| b.requires_grad()),
        ];
        let has_bias = bias.is_some();
        let mut parents = vec![self, weight];
        parents.extend(bias);
        Ok(self.tape().record(y, &parents, move |g| {
            let grads = conv::conv2d_backward(&x, &w, g, p, need).expect("geometry checked in forward");
            let mut out = vec![grads.input, grads.weight];
            if has_bias {
                out.push(grads.bias);
            }
            out
        }))
    }

    pub fn unfold(&self, g: PatchGeometry) -> Result<Var> {
        let y = patch::unfold(self.value(), g)?;
        let shape = self.value().dims4("unfold")?;
        Ok(self.tape().record(y, &[self], move |grad| {
            vec![Some(patch::fold(grad, shape, g, false).expect("geometry checked in forward"))]
        }))
    }

    pub fn fold(&self, out_shape: [usize; 4], g: PatchGeometry, normalize: bool) -> Result<Var> {
        let y = patch::fold(self.value(), out_shape, g, normalize)?;
        let counts = if normalize {
            Some(patch::coverage(out_shape[2], out_shape[3], g)?)
        } else {
            None
        };
        Ok(self.tape().record(y, &[self], move |grad| {
            let scaled = match &counts {
                Some(counts) => {
                    let plane = counts.len();
                    let data = grad
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| match counts[i % plane] {
                            0 => 0.0,
                            c => v / c as f32,
                        })
                        .collect();
                    Tensor::from_parts(grad.shape().to_vec(), data)
                }
                None => grad.clone(),
            };
            vec![Some(patch::unfold(&scaled, g).expect("geometry checked in forward"))]
        }))
    }

    // -- structural --------------------------------------------------------

    pub fn concat(parts: &[&Var], axis: usize) -> Result<Var> {
        let Some(first) = parts.first() else {
            return contract_err("concat", "nothing to concatenate");
        };
        let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        let y = k::concat(&values, axis)?;
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Ok(first.tape().record(y, parts, move |g| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&len| {
                    let part = k::slice(g, axis, start, len).expect("sizes recorded in forward");
                    start += len;
                    Some(part)
                })
                .collect()
        }))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let y = k::slice(self.value(), axis, start, len)?;
        let shape = self.shape().to_vec();
        Ok(self.tape().record(y, &[self], move |g| {
            vec![Some(k::unslice(g, &shape, axis, start))]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let y = self.value().reshape(shape)?;
        let orig = self.shape().to_vec();
        Ok(self.tape().record(y, &[self], move |g| {
            vec![Some(g.reshape(&orig).expect("same element count"))]
        }))
    }

    /// Broadcasts to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Var> {
        let out = k::broadcast_shape("expand", self.shape(), shape)?;
        if out != shape {
            return dim_err("expand", format!("cannot expand {:?} to {shape:?}", self.shape()));
        }
        let y = k::expand(self.value(), shape);
        let orig = self.shape().to_vec();
        Ok(self.tape().record(y, &[self], move |g| vec![Some(k::sum_to_shape(g, &orig))]))
    }

    pub fn nearest_upsample(&self, factor: usize) -> Result<Var> {
        let y = k::nearest_upsample(self.value(), factor)?;
        Ok(self.tape().record(y, &[self], move |g| {
            vec![Some(k::nearest_upsample_backward(g, factor))]
        }))
    }

    pub fn avg_pool(&self, factor: usize) -> Result<Var> {
        let y = k::avg_pool(self.value(), factor)?;
        Ok(self.tape().record(y, &[self], move |g| {
            vec![Some(k::avg_pool_backward(g, factor))]
        }))
    }

    /// Batched `self · other` (or `self · otherᵀ` with `trans_b`).
    pub fn matmul(&self, other: &Var, trans_b: bool) -> Result<Var> {
        let y = k::matmul(self.value(), other.value(), trans_b)?;
        let (a, b) = (self.value().clone(), other.value().clone());
        let need = [self.requires_grad(), other.requires_grad()];
        Ok(self.tape().record(y, &[self, other], move |g| {
            let (ga, gb) = k::matmul_backward(&a, &b, g, trans_b, need);
            vec![ga, gb]
        }))
    }

    /// Selects rows of a `[N, L, D]` tensor: `out[n, i] = self[n, idx[n * rows + i]]`.
    /// Indices are constants; gradients scatter-add back to the source rows.
    pub fn gather_rows(&self, idx: Arc<Vec<usize>>, rows: usize) -> Result<Var> {
        let y = k::gather_rows(self.value(), &idx, rows)?;
        let shape = self.value().dims3("gather_rows")?;
        Ok(self.tape().record(y, &[self], move |g| {
            vec![Some(k::scatter_rows(g, &idx, shape))]
        }))
    }

    // -- reductions --------------------------------------------------------

    pub fn reduce_sum(&self, axis: usize) -> Result<Var> {
        let y = k::reduce_sum(self.value(), axis)?;
        let shape = self.shape().to_vec();
        Ok(self.tape().record(y, &[self], move |g| {
            vec![Some(k::spread_axis(g, &shape, axis, 1.0))]
        }))
    }

    pub fn reduce_mean(&self, axis: usize) -> Result<Var> {
        let len = self.shape().get(axis).copied().unwrap_or(1);
        Ok(self.reduce_sum(axis)?.mul_scalar(1.0 / len as f32))
    }

    /// Maximum along `axis` with the first maximal index; the gradient flows
    /// only to the selected element.
    pub fn reduce_max(&self, axis: usize) -> Result<(Var, Vec<usize>)> {
        let (y, idx) = k::reduce_max(self.value(), axis)?;
        let shape = self.shape().to_vec();
        let saved = idx.clone();
        let var = self.tape().record(y, &[self], move |g| {
            vec![Some(k::scatter_max_grad(g, &shape, axis, &saved))]
        });
        Ok((var, idx))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&self) -> Var {
        let y = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        self.tape().record(y, &[self], move |g| {
            let n = shape.iter().product();
            vec![Some(Tensor::from_parts(shape.clone(), vec![g.item(); n]))]
        })
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f32;
        self.sum().mul_scalar(1.0 / n)
    }

    // -- row-wise ----------------------------------------------------------

    /// Divides each last-axis row by its L2 norm; zero rows map to zero.
    pub fn l2_normalize_rows(&self) -> Var {
        let (y, norms) = k::l2_normalize_rows(self.value());
        let saved = y.clone();
        self.tape().record(y, &[self], move |g| {
            vec![Some(k::l2_normalize_rows_backward(&saved, &norms, g))]
        })
    }

    /// Replaces entries where `mask` is true by `value`; those entries get
    /// zero gradient.
    pub fn masked_fill(&self, mask: Arc<Vec<bool>>, value: f32) -> Result<Var> {
        if mask.len() != self.value().numel() {
            return dim_err("masked_fill", format!("mask has {} entries for shape {:?}", mask.len(), self.shape()));
        }
        let data = self
            .value()
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let y = Tensor::from_parts(self.shape().to_vec(), data);
        Ok(self.tape().record(y, &[self], move |g| {
            let data = g.data().iter().zip(mask.iter()).map(|(&v, &m)| if m { 0.0 } else { v }).collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        }))
    }

    /// Softmax of `scale * self` over the last axis restricted to `valid`.
    pub fn masked_softmax(&self, valid: Arc<Vec<bool>>, scale: f32) -> Result<Var> {
        if valid.len() != self.value().numel() {
            return dim_err("masked_softmax", format!("mask has {} entries for shape {:?}", valid.len(), self.shape()));
        }
        let y = k::masked_softmax(self.value(), &valid, scale);
        let saved = y.clone();
        Ok(self.tape().record(y, &[self], move |g| {
            vec![Some(k::masked_softmax_backward(&saved, g, scale))]
        }))
    }
}
