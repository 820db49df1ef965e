//! Texture transform attention.
//!
//! Given a decoder context feature `Q` and an encoder texture feature `P` of
//! the same shape, the attention
//!
//! 1. scores every query patch of `Q` against every candidate patch of `P`
//!    by cosine similarity, at `1/downsample` resolution with small patches
//!    ([`relevance_embedding`]);
//! 2. picks, per query, the best candidate among those lying outside the
//!    hole, giving the index map `H` and the ratio map `R = max_j s_ij`;
//! 3. copies the winning full-resolution `swap_patch` patches of `P` to the
//!    query positions and folds them with overlap averaging into the
//!    reassembled texture map `T` ([`feature_swap`]);
//! 4. fuses `T` into the context feature, scaled by `R` and renormalized by
//!    `(1 + R)^-1` ([`synthesize`]).
//!
//! Similarity positions form a grid with pitch `stride` at the reduced
//! resolution; each grid cell covers a `downsample * stride` square block of
//! full-resolution pixels.  A pixel at offset `o` inside the block of query
//! `i` takes the pixel at the same offset inside the block of candidate
//! `h_i`, so a query matching itself reproduces `P` exactly.

pub mod reference;

use std::sync::Arc;

use crate::error::{contract_err, dim_err, Error, Result};
use crate::tensor::conv::ConvParams;
use crate::tensor::kernels;
use crate::tensor::patch::{self, PatchGeometry};
use crate::tensor::{Tensor, Var};

/// Score stored for candidates excluded by the validity filter.
pub const INVALID_SCORE: f32 = -2.0;

/// Scores within this band of the row maximum are re-ranked in `f64`.
const TIE_BAND: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Admit every candidate.
    UseAll,
    /// Admit the candidates with the largest valid fraction.
    NearestValid,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    /// Patch size used to reassemble textures at full resolution.
    pub swap_patch: usize,
    /// Patch size used for similarity at the reduced resolution.
    pub sim_patch: usize,
    /// Pitch of the similarity grid.
    pub stride: usize,
    /// Resolution reduction before scoring (1 or 2).
    pub downsample: usize,
    /// Minimum fraction of known pixels for a candidate patch.
    pub valid_threshold: f32,
    pub fallback: Fallback,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            swap_patch: 5,
            sim_patch: 3,
            stride: 1,
            downsample: 2,
            valid_threshold: 1.0,
            fallback: Fallback::UseAll,
        }
    }
}

impl AttentionConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.swap_patch % 2 == 0 {
            v.push(format!("swap_patch must be odd, got {}", self.swap_patch));
        }
        if self.sim_patch % 2 == 0 {
            v.push(format!("sim_patch must be odd, got {}", self.sim_patch));
        }
        if !matches!(self.downsample, 1 | 2) {
            v.push(format!("downsample must be 1 or 2, got {}", self.downsample));
        }
        if self.stride == 0 {
            v.push("stride must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.valid_threshold) {
            v.push(format!("valid_threshold must lie in [0, 1], got {}", self.valid_threshold));
        }
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

    /// Side of the full-resolution pixel block one similarity position covers.
    pub fn cell(&self) -> usize {
        self.downsample * self.stride
    }
}

/// Geometry shared by every stage of one attention call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionGrid {
    pub batch: usize,
    pub channels: usize,
    /// Full-resolution height and width.
    pub height: usize,
    pub width: usize,
    /// Similarity grid rows and columns.
    pub rows: usize,
    pub cols: usize,
    pub cell: usize,
}

impl AttentionGrid {
    pub fn positions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Similarity position whose block contains pixel `(y, x)`, and the
    /// pixel's offset inside that block.
    pub fn cell_of(&self, y: usize, x: usize) -> (usize, usize, usize) {
        let (a, b) = (y / self.cell, x / self.cell);
        (a * self.cols + b, y - a * self.cell, x - b * self.cell)
    }

    /// Full-resolution pixel at offset `(oy, ox)` inside the block of
    /// similarity position `j`, clamped to the image.
    pub fn pixel_in(&self, j: usize, oy: usize, ox: usize) -> usize {
        let (a, b) = (j / self.cols, j % self.cols);
        let y = (a * self.cell + oy).min(self.height - 1);
        let x = (b * self.cell + ox).min(self.width - 1);
        y * self.width + x
    }
}

/// Cosine similarities between query and candidate patches.
pub struct SimilarityMatrix {
    /// `[N, L_q, L_p]` cosine scores; excluded candidates hold [`INVALID_SCORE`].
    pub scores: Tensor,
    /// Whether candidate `j` of sample `n` is admitted, at `n * L_p + j`.
    pub admitted: Vec<bool>,
    /// Per sample, whether no candidate passed the validity filter.
    pub fallback: Vec<bool>,
    pub grid: AttentionGrid,
    query_rows: Var,
    candidate_rows: Var,
    raw_query: Tensor,
    raw_candidate: Tensor,
}

impl SimilarityMatrix {
    /// The scores as a differentiable `[N, L_q, L_p]` product of the
    /// normalized patch rows (excluded columns not masked).
    pub fn differentiable(&self) -> Result<Var> {
        self.query_rows.matmul(&self.candidate_rows, true)
    }

    /// Exact cosine of raw query row `i` and candidate row `j` of sample `n`.
    fn cosine_f64(&self, n: usize, i: usize, j: usize) -> f64 {
        let d = self.raw_query.dim(2);
        let lq = self.raw_query.dim(1);
        let lp = self.raw_candidate.dim(1);
        let q = &self.raw_query.data()[(n * lq + i) * d..][..d];
        let p = &self.raw_candidate.data()[(n * lp + j) * d..][..d];
        let (mut dot, mut nq, mut np) = (0.0f64, 0.0f64, 0.0f64);
        for (&a, &b) in q.iter().zip(p) {
            dot += a as f64 * b as f64;
            nq += a as f64 * a as f64;
            np += b as f64 * b as f64;
        }
        let denom = nq.sqrt() * np.sqrt();
        if nq.sqrt() <= kernels::NORM_FLOOR as f64 || np.sqrt() <= kernels::NORM_FLOOR as f64 {
            0.0
        } else {
            dot / denom
        }
    }
}

/// Full-resolution pixel → pixel mapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    pub batch: usize,
    pub len: usize,
    pub data: Vec<usize>,
}

/// Index, ratio and texture maps of one attention call.
pub struct AttentionResult {
    /// Winning candidate per similarity position, `[N, L_q]` flattened.
    pub candidate_index: Vec<usize>,
    /// Winning source pixel per full-resolution pixel.
    pub index_map: IndexMap,
    /// `max_j s_ij` per similarity position, `[N, L_q]`.
    pub ratio_grid: Var,
    /// Ratio map upsampled to `[N, 1, H, W]`.
    pub ratio_map: Var,
    /// Reassembled texture map `[N, C, H, W]`.
    pub texture_map: Var,
    /// Per sample, whether the validity fallback engaged.
    pub fallback: Vec<bool>,
}

fn check_inputs(op: &'static str, q: &Var, p: &Var, valid_mask: &Tensor, cfg: &AttentionConfig) -> Result<[usize; 4]> {
    cfg.validate()?;
    let dims = q.value().dims4(op)?;
    if q.shape() != p.shape() {
        return dim_err(op, format!("Q {:?} and P {:?} differ", q.shape(), p.shape()));
    }
    let [n, _, h, w] = dims;
    if valid_mask.shape() != [n, 1, h, w] {
        return dim_err(op, format!("valid mask {:?} must be [{n}, 1, {h}, {w}]", valid_mask.shape()));
    }
    if h % cfg.downsample != 0 || w % cfg.downsample != 0 {
        return dim_err(op, format!("spatial size {h}x{w} not divisible by downsample {}", cfg.downsample));
    }
    Ok(dims)
}

/// Scores every patch of `q` against every patch of `p` and applies the
/// candidate validity filter.  `valid_mask` is `[N, 1, H, W]` with 1 on known
/// pixels.
pub fn relevance_embedding(q: &Var, p: &Var, valid_mask: &Tensor, cfg: &AttentionConfig) -> Result<SimilarityMatrix> {
    let [n, c, h, w] = check_inputs("relevance_embedding", q, p, valid_mask, cfg)?;
    let d = cfg.downsample;
    let (qd, pd) = if d > 1 { (q.avg_pool(d)?, p.avg_pool(d)?) } else { (q.clone(), p.clone()) };
    let g = PatchGeometry::centered(cfg.sim_patch, cfg.stride);
    let q_unf = qd.unfold(g)?;
    let p_unf = pd.unfold(g)?;
    let query_rows = q_unf.l2_normalize_rows();
    let candidate_rows = p_unf.l2_normalize_rows();
    let mut scores = kernels::matmul(query_rows.value(), candidate_rows.value(), true)?;

    let (hd, wd) = (h / d, w / d);
    let rows = g.positions(hd).expect("centered window always fits");
    let cols = g.positions(wd).expect("centered window always fits");
    let lp = rows * cols;

    // valid fraction of each candidate patch over its in-image pixels
    let pooled = if d > 1 { kernels::avg_pool(valid_mask, d)? } else { valid_mask.clone() };
    let valid_sum = kernels::reduce_sum(&patch::unfold(&pooled, g)?, 2)?;
    let in_image = kernels::reduce_sum(&patch::unfold(&Tensor::ones(&[1, 1, hd, wd])?, g)?, 2)?;
    let fraction: Vec<f32> = valid_sum
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v / in_image.data()[i % lp])
        .collect();

    let mut admitted = vec![false; n * lp];
    let mut fallback = vec![false; n];
    for b in 0..n {
        let frac = &fraction[b * lp..(b + 1) * lp];
        let adm = &mut admitted[b * lp..(b + 1) * lp];
        for (a, &f) in adm.iter_mut().zip(frac) {
            *a = f >= cfg.valid_threshold - 1e-6;
        }
        if adm.iter().any(|&a| a) {
            continue;
        }
        fallback[b] = true;
        let best = frac.iter().copied().fold(0.0f32, f32::max);
        for (a, &f) in adm.iter_mut().zip(frac) {
            *a = match cfg.fallback {
                Fallback::UseAll => true,
                Fallback::NearestValid => best <= 0.0 || f >= best,
            };
        }
    }

    let lq = query_rows.shape()[1];
    {
        let s = scores.data_mut();
        for b in 0..n {
            for i in 0..lq {
                let row = &mut s[(b * lq + i) * lp..][..lp];
                for (v, &a) in row.iter_mut().zip(&admitted[b * lp..(b + 1) * lp]) {
                    if !a {
                        *v = INVALID_SCORE;
                    }
                }
            }
        }
    }

    Ok(SimilarityMatrix {
        scores,
        admitted,
        fallback,
        grid: AttentionGrid {
            batch: n,
            channels: c,
            height: h,
            width: w,
            rows,
            cols,
            cell: cfg.cell(),
        },
        raw_query: q_unf.value().clone(),
        raw_candidate: p_unf.value().clone(),
        query_rows,
        candidate_rows,
    })
}

/// Per-query argmax over admitted candidates, lowest index on ties.
/// Near-ties are re-ranked with exact `f64` cosines so the choice does not
/// depend on GEMM rounding.
pub fn select(s: &SimilarityMatrix) -> Vec<usize> {
    let lp = s.grid.positions();
    let [n, lq, _] = [s.scores.dim(0), s.scores.dim(1), s.scores.dim(2)];
    let mut out = vec![0usize; n * lq];
    for b in 0..n {
        let adm = &s.admitted[b * lp..(b + 1) * lp];
        for i in 0..lq {
            let row = &s.scores.data()[(b * lq + i) * lp..][..lp];
            let mut best = usize::MAX;
            let mut best_v = f32::NEG_INFINITY;
            for (j, (&v, &a)) in row.iter().zip(adm).enumerate() {
                if a && v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            let close: Vec<usize> = (0..lp).filter(|&j| adm[j] && row[j] >= best_v - TIE_BAND).collect();
            if close.len() > 1 {
                let mut best_exact = f64::NEG_INFINITY;
                for &j in &close {
                    let v = s.cosine_f64(b, i, j);
                    if v > best_exact {
                        best_exact = v;
                        best = j;
                    }
                }
            }
            out[b * lq + i] = best;
        }
    }
    out
}

/// Per-pixel similarity position (`[N * H * W]`, batch-replicated).
fn pixel_to_query(grid: &AttentionGrid) -> Vec<usize> {
    let mut map = Vec::with_capacity(grid.batch * grid.pixels());
    for _ in 0..grid.batch {
        for y in 0..grid.height {
            for x in 0..grid.width {
                map.push(grid.cell_of(y, x).0);
            }
        }
    }
    map
}

/// Source pixel for every full-resolution pixel given the winners.
pub fn upsample_index(grid: &AttentionGrid, candidate_index: &[usize]) -> IndexMap {
    let lq = grid.positions();
    let mut data = Vec::with_capacity(grid.batch * grid.pixels());
    for b in 0..grid.batch {
        for y in 0..grid.height {
            for x in 0..grid.width {
                let (q, oy, ox) = grid.cell_of(y, x);
                data.push(grid.pixel_in(candidate_index[b * lq + q], oy, ox));
            }
        }
    }
    IndexMap {
        batch: grid.batch,
        len: grid.pixels(),
        data,
    }
}

/// `r_i = s_{i, h_i}`, differentiable through both normalized patch rows.
fn winning_scores(s: &SimilarityMatrix, candidate_index: &[usize]) -> Result<Var> {
    let lq = s.grid.positions();
    let picked = s.candidate_rows.gather_rows(Arc::new(candidate_index.to_vec()), lq)?;
    s.query_rows.mul(&picked)?.reduce_sum(2)
}

/// `[N, L_q]` grid values spread to `[N, 1, H, W]` by nearest upsampling.
fn grid_to_pixels(grid: &AttentionGrid, values: &Var) -> Result<Var> {
    let (n, lq) = (grid.batch, grid.positions());
    values
        .reshape(&[n, lq, 1])?
        .gather_rows(Arc::new(pixel_to_query(grid)), grid.pixels())?
        .reshape(&[n, 1, grid.height, grid.width])
}

/// Gathers full-resolution patches of `p` by `index` and folds them back
/// with overlap averaging.
pub fn reassemble(p: &Var, index: &IndexMap, swap_patch: usize) -> Result<Var> {
    let [n, c, h, w] = p.value().dims4("reassemble")?;
    if index.batch != n || index.len != h * w {
        return dim_err("reassemble", format!("index map {}x{} for feature {n}x{c}x{h}x{w}", index.batch, index.len));
    }
    let g = PatchGeometry::centered(swap_patch, 1);
    p.unfold(g)?
        .gather_rows(Arc::new(index.data.clone()), h * w)?
        .fold([n, c, h, w], g, true)
}

/// Argmax swap: index map, ratio map and reassembled texture map.
pub fn feature_swap(p: &Var, s: &SimilarityMatrix, cfg: &AttentionConfig) -> Result<AttentionResult> {
    let grid = s.grid;
    if p.shape() != [grid.batch, grid.channels, grid.height, grid.width] {
        return dim_err("feature_swap", format!("P {:?} does not match the similarity grid {grid:?}", p.shape()));
    }
    let candidate_index = select(s);
    let ratio_grid = winning_scores(s, &candidate_index)?;
    let ratio_map = grid_to_pixels(&grid, &ratio_grid)?;
    let index_map = upsample_index(&grid, &candidate_index);
    let texture_map = reassemble(p, &index_map, cfg.swap_patch)?;
    Ok(AttentionResult {
        candidate_index,
        index_map,
        ratio_grid,
        ratio_map,
        texture_map,
        fallback: s.fallback.clone(),
    })
}

/// Ratio map alone (the fusion weight used alongside any texture source).
pub fn ratio_map(s: &SimilarityMatrix) -> Result<Var> {
    let idx = select(s);
    grid_to_pixels(&s.grid, &winning_scores(s, &idx)?)
}

/// Softmax-weighted texture: every query receives the average of all
/// admitted candidate patches weighted by `softmax(s_ij / temperature)`.
pub fn weighted_texture(p: &Var, s: &SimilarityMatrix, cfg: &AttentionConfig, temperature: f32) -> Result<Var> {
    if temperature <= 0.0 {
        return contract_err("weighted_texture", format!("temperature must be positive, got {temperature}"));
    }
    let grid = s.grid;
    let (n, lq, lp) = (grid.batch, grid.positions(), grid.positions());
    let scores = s.differentiable()?;
    let valid: Vec<bool> = (0..n)
        .flat_map(|b| (0..lq).flat_map(move |_| s.admitted[b * lp..(b + 1) * lp].iter().copied()))
        .collect();
    let weights = scores.masked_softmax(Arc::new(valid), 1.0 / temperature)?;

    let g = PatchGeometry::centered(cfg.swap_patch, 1);
    let rows = p.unfold(g)?;
    let cell = grid.cell;
    let mut blocks = Vec::with_capacity(cell * cell);
    for oy in 0..cell {
        for ox in 0..cell {
            let idx: Vec<usize> = (0..n).flat_map(|_| (0..lp).map(|j| grid.pixel_in(j, oy, ox))).collect();
            let candidates = rows.gather_rows(Arc::new(idx), lp)?;
            blocks.push(weights.matmul(&candidates, false)?);
        }
    }
    let stacked = Var::concat(&blocks.iter().collect::<Vec<_>>(), 1)?;
    let mut pick = Vec::with_capacity(n * grid.pixels());
    for _ in 0..n {
        for y in 0..grid.height {
            for x in 0..grid.width {
                let (q, oy, ox) = grid.cell_of(y, x);
                pick.push((oy * cell + ox) * lq + q);
            }
        }
    }
    stacked
        .gather_rows(Arc::new(pick), grid.pixels())?
        .fold([n, grid.channels, grid.height, grid.width], g, true)
}

/// Conventional soft attention baseline: [`relevance_embedding`] followed by
/// [`weighted_texture`].
pub fn weighted_sum_attention(q: &Var, p: &Var, valid_mask: &Tensor, cfg: &AttentionConfig, temperature: f32) -> Result<Var> {
    let s = relevance_embedding(q, p, valid_mask, cfg)?;
    weighted_texture(p, &s, cfg, temperature)
}

/// How the texture map enters the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// `F + conv(F ⊕ T) ⊙ R`, then `⊙ (1 + R)^-1`.
    Normalized,
    /// `F + conv(F ⊕ T) ⊙ R` without renormalization.
    Unnormalized,
    /// `conv(F ⊕ T)`, ignoring the ratio map.
    ConcatOnly,
}

/// Similarity-weighted fusion of texture `t` into feature `f`.
pub fn synthesize(f: &Var, t: &Var, r: &Var, fusion_weight: &Var, fusion_bias: &Var) -> Result<Var> {
    synthesize_with(f, t, r, fusion_weight, fusion_bias, Fusion::Normalized)
}

pub fn synthesize_with(f: &Var, t: &Var, r: &Var, fusion_weight: &Var, fusion_bias: &Var, mode: Fusion) -> Result<Var> {
    if f.shape() != t.shape() {
        return dim_err("synthesize", format!("F {:?} and T {:?} differ", f.shape(), t.shape()));
    }
    let k = fusion_weight.shape().get(2).copied().unwrap_or(1);
    let fused = Var::concat(&[f, t], 1)?.conv2d(fusion_weight, Some(fusion_bias), ConvParams::new(1, k / 2, 1))?;
    if mode == Fusion::ConcatOnly {
        return Ok(fused);
    }
    if r.value().data().iter().any(|&v| v <= -1.0) {
        return contract_err("synthesize", "ratio map values must exceed -1");
    }
    let f_fus = f.add(&fused.mul(r)?)?;
    match mode {
        Fusion::Normalized => f_fus.mul(&r.add_scalar(1.0).reciprocal()?),
        _ => Ok(f_fus),
    }
}
