//! 2-D convolution by im2col + GEMM.

use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{dim_err, Result};

/// Stride, zero padding and dilation of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one axis, or `None` when the dilated kernel does
    /// not fit into the padded input.
    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    p: ConvParams,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

fn geometry(input: &Tensor, weight: &Tensor, p: ConvParams) -> Result<Geometry> {
    const OP: &str = "conv2d";
    let [n, cin, h, w] = input.dims4(OP)?;
    let [cout, wcin, kh, kw] = weight.dims4(OP)?;
    if p.stride == 0 || p.dilation == 0 {
        return dim_err(OP, format!("stride and dilation must be >= 1, got {p:?}"));
    }
    if wcin != cin {
        return dim_err(
            OP,
            format!("input channel axis (1) is {cin} but weight axis 1 is {wcin}"),
        );
    }
    let (Some(ho), Some(wo)) = (p.output_size(h, kh), p.output_size(w, kw)) else {
        return dim_err(
            OP,
            format!("kernel {kh}x{kw} with {p:?} does not fit spatial axes (2, 3) of size {h}x{w}"),
        );
    };
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho,
        wo,
        p,
    })
}

/// Unrolls one image `[cin, h, w]` into columns `[cin*kh*kw, ho*wo]`.
fn im2col(img: &[f32], g: &Geometry, cols: &mut [f32]) {
    let hw_out = g.ho * g.wo;
    let (s, pad, d) = (g.p.stride as isize, g.p.padding as isize, g.p.dilation as isize);
    for c in 0..g.cin {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = oy as isize * s - pad + ky as isize * d;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s - pad + kx as isize * d;
                        *v = if ix >= 0 && ix < g.w as isize {
                            src[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back onto an image; the adjoint of [`im2col`].
fn col2im(cols: &[f32], g: &Geometry, img: &mut [f32]) {
    let hw_out = g.ho * g.wo;
    let (s, pad, d) = (g.p.stride as isize, g.p.padding as isize, g.p.dilation as isize);
    for c in 0..g.cin {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = oy as isize * s - pad + ky as isize * d;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = ox as isize * s - pad + kx as isize * d;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, p: ConvParams) -> Result<Tensor> {
    let g = geometry(input, weight, p)?;
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return dim_err(
                "conv2d",
                format!("bias has {} entries but weight axis 0 is {}", b.numel(), g.cout),
            );
        }
    }
    let (k, hw_out) = (g.k(), g.ho * g.wo);
    let mut out = vec![0.0f32; g.n * g.cout * hw_out];
    let mut cols = vec![0.0f32; k * hw_out];
    let wmat = MatRef::row_major(weight.data(), g.cout, k);
    for i in 0..g.n {
        let img = &input.data()[i * g.cin * g.h * g.w..(i + 1) * g.cin * g.h * g.w];
        im2col(img, &g, &mut cols);
        let dst = &mut out[i * g.cout * hw_out..(i + 1) * g.cout * hw_out];
        if let Some(b) = bias {
            for (co, plane) in dst.chunks_mut(hw_out).enumerate() {
                plane.fill(b.data()[co]);
            }
            gemm(wmat, MatRef::row_major(&cols, k, hw_out), 1.0, dst);
        } else {
            gemm(wmat, MatRef::row_major(&cols, k, hw_out), 0.0, dst);
        }
    }
    Ok(Tensor::from_parts(vec![g.n, g.cout, g.ho, g.wo], out))
}

/// Gradients of [`conv2d`] with respect to the requested inputs.
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    p: ConvParams,
    need: [bool; 3],
) -> Result<ConvGrads> {
    let g = geometry(input, weight, p)?;
    let (k, hw_out) = (g.k(), g.ho * g.wo);
    let [need_input, need_weight, need_bias] = need;
    let mut gin = need_input.then(|| vec![0.0f32; input.numel()]);
    let mut gw = need_weight.then(|| vec![0.0f32; weight.numel()]);
    let mut gb = need_bias.then(|| vec![0.0f32; g.cout]);
    let mut cols = vec![0.0f32; k * hw_out];
    let wmat = MatRef::row_major(weight.data(), g.cout, k);
    let img_len = g.cin * g.h * g.w;
    for i in 0..g.n {
        let go = &grad_out.data()[i * g.cout * hw_out..(i + 1) * g.cout * hw_out];
        let go_mat = MatRef::row_major(go, g.cout, hw_out);
        if let Some(gb) = gb.as_mut() {
            for (co, plane) in go.chunks(hw_out).enumerate() {
                gb[co] += plane.iter().map(|&x| x as f64).sum::<f64>() as f32;
            }
        }
        if let Some(gw) = gw.as_mut() {
            im2col(&input.data()[i * img_len..(i + 1) * img_len], &g, &mut cols);
            gemm(go_mat, MatRef::row_major(&cols, k, hw_out).t(), 1.0, gw);
        }
        if let Some(gin) = gin.as_mut() {
            gemm(wmat.t(), go_mat, 0.0, &mut cols);
            col2im(&cols, &g, &mut gin[i * img_len..(i + 1) * img_len]);
        }
    }
    Ok(ConvGrads {
        input: gin.map(|d| Tensor::from_parts(input.shape().to_vec(), d)),
        weight: gw.map(|d| Tensor::from_parts(weight.shape().to_vec(), d)),
        bias: gb.map(|d| Tensor::from_parts(vec![g.cout], d)),
    })
}
