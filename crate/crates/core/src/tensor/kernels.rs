//! Elementwise, structural and reduction kernels on [`Tensor`].

use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{contract_err, dim_err, Result};

// ---------------------------------------------------------------------------
// Broadcasting

/// Shape of `a ∘ b` under right-aligned broadcasting (dims equal or 1).
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return dim_err(
                    op,
                    format!("shapes {a:?} and {b:?} disagree on axis {i} ({da} vs {db})"),
                )
            }
        };
    }
    Ok(out)
}

/// Element strides of `shape` aligned to `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output index with the matching flat offsets into `a` and `b`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let total: usize = out.iter().product();
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        // advance the outer multi-index
        let mut ax = rank - 1;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![0.0f32; out.iter().product()];
    let (da, db) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, i, j| data[o] = f(da[i], db[j]));
    Ok(Tensor::from_parts(out, data))
}

/// Sums `grad` (shaped like a broadcast result) down to `shape`.
pub fn sum_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out = grad.shape();
    let s = broadcast_strides(shape, out);
    let zero = vec![0; out.len()];
    let mut acc = vec![0.0f64; shape.iter().product()];
    let g = grad.data();
    for_each_broadcast(out, &s, &zero, |o, i, _| acc[i] += g[o] as f64);
    Tensor::from_parts(shape.to_vec(), acc.into_iter().map(|v| v as f32).collect())
}

/// `src` broadcast up to `out`.
pub fn expand(src: &Tensor, out: &[usize]) -> Tensor {
    if src.shape() == out {
        return src.clone();
    }
    let s = broadcast_strides(src.shape(), out);
    let zero = vec![0; out.len()];
    let mut data = vec![0.0f32; out.iter().product()];
    let d = src.data();
    for_each_broadcast(out, &s, &zero, |o, i, _| data[o] = d[i]);
    Tensor::from_parts(out.to_vec(), data)
}

// ---------------------------------------------------------------------------
// Activations

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn leaky_relu(x: f32, alpha: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        alpha * x
    }
}

// ---------------------------------------------------------------------------
// Axis helpers

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return dim_err(op, format!("axis {axis} out of range for shape {:?}", t.shape()));
    }
    Ok(())
}

/// `(outer, len, inner)` decomposition around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

// ---------------------------------------------------------------------------
// Reductions

pub fn reduce_sum(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("reduce_sum", x, axis)?;
    let (outer, len, inner) = split_at_axis(x.shape(), axis);
    let mut out = vec![0.0f32; outer * inner];
    let d = x.data();
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0f64;
            for k in 0..len {
                acc += d[(o * len + k) * inner + i] as f64;
            }
            out[o * inner + i] = acc as f32;
        }
    }
    Ok(Tensor::from_parts(without_axis(x.shape(), axis), out))
}

/// Undo of [`reduce_sum`]: spreads `grad` back along `axis`.
pub fn spread_axis(grad: &Tensor, shape: &[usize], axis: usize, scale: f32) -> Tensor {
    let (outer, len, inner) = split_at_axis(shape, axis);
    let g = grad.data();
    let mut out = vec![0.0f32; outer * len * inner];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                out[(o * len + k) * inner + i] = g[o * inner + i] * scale;
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

/// Maximum along `axis` plus the index of the first maximal element.
pub fn reduce_max(x: &Tensor, axis: usize) -> Result<(Tensor, Vec<usize>)> {
    check_axis("reduce_max", x, axis)?;
    let (outer, len, inner) = split_at_axis(x.shape(), axis);
    let mut vals = vec![0.0f32; outer * inner];
    let mut idx = vec![0usize; outer * inner];
    let d = x.data();
    for o in 0..outer {
        for i in 0..inner {
            let mut best = 0;
            let mut best_v = d[o * len * inner + i];
            for k in 1..len {
                let v = d[(o * len + k) * inner + i];
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            vals[o * inner + i] = best_v;
            idx[o * inner + i] = best;
        }
    }
    Ok((Tensor::from_parts(without_axis(x.shape(), axis), vals), idx))
}

pub fn scatter_max_grad(grad: &Tensor, shape: &[usize], axis: usize, idx: &[usize]) -> Tensor {
    let (outer, len, inner) = split_at_axis(shape, axis);
    let g = grad.data();
    let mut out = vec![0.0f32; outer * len * inner];
    for o in 0..outer {
        for i in 0..inner {
            let k = idx[o * inner + i];
            out[(o * len + k) * inner + i] = g[o * inner + i];
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

// ---------------------------------------------------------------------------
// Structural

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    const OP: &str = "concat";
    let Some(first) = parts.first() else {
        return contract_err(OP, "nothing to concatenate");
    };
    check_axis(OP, first, axis)?;
    for p in parts {
        let same = p.rank() == first.rank()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return dim_err(
                OP,
                format!("shape {:?} does not match {:?} off axis {axis}", p.shape(), first.shape()),
            );
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let total: usize = parts.iter().map(|p| p.dim(axis)).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let block = p.dim(axis) * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, out))
}

pub fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    const OP: &str = "slice";
    check_axis(OP, x, axis)?;
    if len == 0 || start + len > x.dim(axis) {
        return dim_err(
            OP,
            format!("range {start}..{} outside axis {axis} of {:?}", start + len, x.shape()),
        );
    }
    let (outer, full, inner) = split_at_axis(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, out))
}

/// Adjoint of [`slice`]: embeds `grad` into zeros of `shape`.
pub fn unslice(grad: &Tensor, shape: &[usize], axis: usize, start: usize) -> Tensor {
    let len = grad.dim(axis);
    let (outer, full, inner) = split_at_axis(shape, axis);
    let mut out = vec![0.0f32; outer * full * inner];
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out[base..base + len * inner].copy_from_slice(&grad.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(shape.to_vec(), out)
}

pub fn nearest_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("nearest_upsample")?;
    if factor == 0 {
        return dim_err("nearest_upsample", "factor must be >= 1");
    }
    let (ho, wo) = (h * factor, w * factor);
    let mut out = vec![0.0f32; n * c * ho * wo];
    for (p, dst) in out.chunks_mut(ho * wo).enumerate() {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for xo in 0..wo {
                dst[y * wo + xo] = src[(y / factor) * w + xo / factor];
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

/// Sums each `factor x factor` block; shared by pooling and upsample adjoints.
fn block_sum(x: &Tensor, factor: usize, scale: f32) -> Tensor {
    let [n, c, h, w] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
    let (ho, wo) = (h / factor, w / factor);
    let mut out = vec![0.0f32; n * c * ho * wo];
    for (p, dst) in out.chunks_mut(ho * wo).enumerate() {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            for xo in 0..wo {
                let mut acc = 0.0f32;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += src[(y * factor + dy) * w + xo * factor + dx];
                    }
                }
                dst[y * wo + xo] = acc * scale;
            }
        }
    }
    Tensor::from_parts(vec![n, c, ho, wo], out)
}

pub fn nearest_upsample_backward(grad: &Tensor, factor: usize) -> Tensor {
    block_sum(grad, factor, 1.0)
}

pub fn avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    let [_, _, h, w] = x.dims4("avg_pool")?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return dim_err(
            "avg_pool",
            format!("spatial axes (2, 3) of size {h}x{w} not divisible by {factor}"),
        );
    }
    Ok(block_sum(x, factor, 1.0 / (factor * factor) as f32))
}

pub fn avg_pool_backward(grad: &Tensor, factor: usize) -> Tensor {
    let up = nearest_upsample(grad, factor).expect("rank-4 pooled gradient");
    up.map(|v| v / (factor * factor) as f32)
}

// ---------------------------------------------------------------------------
// Matrix products

fn batch_of(op: &'static str, a: &Tensor, b: &Tensor) -> Result<usize> {
    if a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank() || a.shape()[..a.rank() - 2] != b.shape()[..b.rank() - 2] {
        return dim_err(op, format!("incompatible batch axes {:?} and {:?}", a.shape(), b.shape()));
    }
    Ok(a.shape()[..a.rank() - 2].iter().product())
}

/// Batched product over the last two axes; `trans_b` multiplies by `bᵀ`.
pub fn matmul(a: &Tensor, b: &Tensor, trans_b: bool) -> Result<Tensor> {
    const OP: &str = "matmul";
    let batch = batch_of(OP, a, b)?;
    let r = a.rank();
    let (m, k) = (a.dim(r - 2), a.dim(r - 1));
    let (kb, n) = if trans_b { (b.dim(r - 1), b.dim(r - 2)) } else { (b.dim(r - 2), b.dim(r - 1)) };
    if k != kb {
        return dim_err(OP, format!("contracted axes disagree: {:?} x {:?} (trans_b={trans_b})", a.shape(), b.shape()));
    }
    let mut out = vec![0.0f32; batch * m * n];
    for i in 0..batch {
        let am = MatRef::row_major(&a.data()[i * m * k..(i + 1) * m * k], m, k);
        let bd = &b.data()[i * k * n..(i + 1) * k * n];
        let bm = if trans_b { MatRef::row_major(bd, n, k).t() } else { MatRef::row_major(bd, k, n) };
        gemm(am, bm, 0.0, &mut out[i * m * n..(i + 1) * m * n]);
    }
    let mut shape = a.shape().to_vec();
    shape[r - 1] = n;
    Ok(Tensor::from_parts(shape, out))
}

/// Gradients of `matmul(a, b, trans_b)` given the output gradient.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor, trans_b: bool, need: [bool; 2]) -> (Option<Tensor>, Option<Tensor>) {
    let r = a.rank();
    let batch: usize = a.shape()[..r - 2].iter().product();
    let (m, k) = (a.dim(r - 2), a.dim(r - 1));
    let n = grad.dim(r - 1);
    let mut ga = need[0].then(|| vec![0.0f32; a.numel()]);
    let mut gb = need[1].then(|| vec![0.0f32; b.numel()]);
    for i in 0..batch {
        let gm = MatRef::row_major(&grad.data()[i * m * n..(i + 1) * m * n], m, n);
        let am = MatRef::row_major(&a.data()[i * m * k..(i + 1) * m * k], m, k);
        let bd = &b.data()[i * k * n..(i + 1) * k * n];
        // b as stored: [k, n] or, when transposed, [n, k]
        let bm = if trans_b { MatRef::row_major(bd, n, k).t() } else { MatRef::row_major(bd, k, n) };
        if let Some(ga) = ga.as_mut() {
            gemm(gm, bm.t(), 0.0, &mut ga[i * m * k..(i + 1) * m * k]);
        }
        if let Some(gb) = gb.as_mut() {
            let dst = &mut gb[i * k * n..(i + 1) * k * n];
            if trans_b {
                gemm(gm.t(), am, 0.0, dst);
            } else {
                gemm(am.t(), gm, 0.0, dst);
            }
        }
    }
    (
        ga.map(|d| Tensor::from_parts(a.shape().to_vec(), d)),
        gb.map(|d| Tensor::from_parts(b.shape().to_vec(), d)),
    )
}

// ---------------------------------------------------------------------------
// Row gathering

/// `out[n, i, :] = src[n, idx[n * rows + i], :]` for `src` of shape `[N, L, D]`.
pub fn gather_rows(src: &Tensor, idx: &[usize], rows: usize) -> Result<Tensor> {
    const OP: &str = "gather_rows";
    let [n, l, d] = src.dims3(OP)?;
    if idx.len() != n * rows {
        return dim_err(OP, format!("{} indices for {n} x {rows} output rows", idx.len()));
    }
    if let Some(&bad) = idx.iter().find(|&&j| j >= l) {
        return dim_err(OP, format!("row index {bad} out of range for axis 1 of size {l}"));
    }
    let mut out = Vec::with_capacity(n * rows * d);
    for b in 0..n {
        let base = &src.data()[b * l * d..(b + 1) * l * d];
        for &j in &idx[b * rows..(b + 1) * rows] {
            out.extend_from_slice(&base[j * d..(j + 1) * d]);
        }
    }
    Ok(Tensor::from_parts(vec![n, rows, d], out))
}

pub fn scatter_rows(grad: &Tensor, idx: &[usize], src_shape: [usize; 3]) -> Tensor {
    let [n, l, d] = src_shape;
    let rows = grad.dim(1);
    let mut out = vec![0.0f32; n * l * d];
    for b in 0..n {
        for (i, &j) in idx[b * rows..(b + 1) * rows].iter().enumerate() {
            let g = &grad.data()[(b * rows + i) * d..(b * rows + i + 1) * d];
            let dst = &mut out[(b * l + j) * d..(b * l + j + 1) * d];
            for (o, v) in dst.iter_mut().zip(g) {
                *o += v;
            }
        }
    }
    Tensor::from_parts(src_shape.to_vec(), out)
}

// ---------------------------------------------------------------------------
// Row-wise normalization and softmax over the last axis

/// Norms below this are treated as zero vectors.
pub const NORM_FLOOR: f32 = 1e-12;

/// Each last-axis row divided by its L2 norm; zero rows stay zero.
/// Returns the normalized tensor and the per-row norms.
pub fn l2_normalize_rows(x: &Tensor) -> (Tensor, Vec<f32>) {
    let d = x.dim(x.rank() - 1);
    let mut out = vec![0.0f32; x.numel()];
    let mut norms = Vec::with_capacity(x.numel() / d);
    for (src, dst) in x.data().chunks(d).zip(out.chunks_mut(d)) {
        let norm = src.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt() as f32;
        norms.push(norm);
        if norm > NORM_FLOOR {
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = v / norm;
            }
        }
    }
    (Tensor::from_parts(x.shape().to_vec(), out), norms)
}

pub fn l2_normalize_rows_backward(y: &Tensor, norms: &[f32], grad: &Tensor) -> Tensor {
    let d = y.dim(y.rank() - 1);
    let mut out = vec![0.0f32; y.numel()];
    for (r, ((yr, gr), dst)) in y.data().chunks(d).zip(grad.data().chunks(d)).zip(out.chunks_mut(d)).enumerate() {
        let norm = norms[r];
        if norm <= NORM_FLOOR {
            continue;
        }
        let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
            *o = (gv - yv * dot) / norm;
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

/// Softmax of `scale * x` along the last axis restricted to entries where
/// `valid` is true; masked entries get weight zero.  A row with no valid
/// entry is all zeros.
pub fn masked_softmax(x: &Tensor, valid: &[bool], scale: f32) -> Tensor {
    let d = x.dim(x.rank() - 1);
    let mut out = vec![0.0f32; x.numel()];
    for ((src, mask), dst) in x.data().chunks(d).zip(valid.chunks(d)).zip(out.chunks_mut(d)) {
        let max = src
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v * scale)
            .fold(f32::NEG_INFINITY, f32::max);
        if max == f32::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0f64;
        for ((o, &v), &m) in dst.iter_mut().zip(src).zip(mask) {
            if m {
                *o = (v * scale - max).exp();
                total += *o as f64;
            }
        }
        let inv = (1.0 / total) as f32;
        for o in dst.iter_mut() {
            *o *= inv;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

pub fn masked_softmax_backward(y: &Tensor, grad: &Tensor, scale: f32) -> Tensor {
    let d = y.dim(y.rank() - 1);
    let mut out = vec![0.0f32; y.numel()];
    for ((yr, gr), dst) in y.data().chunks(d).zip(grad.data().chunks(d)).zip(out.chunks_mut(d)) {
        let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
            *o = scale * yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}
