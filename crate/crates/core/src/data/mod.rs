//! Training data: hole masks, procedural textures, image files and
//! line-oriented manifests.

pub mod image;
pub mod mask;
pub mod texture;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
pub use image::{load_image, load_mask, save_image, save_mask};
pub use mask::{generate_mask, hole_ratio, MaskSpec};
pub use texture::{generate_texture, TextureFamily, TextureSpec};

/// One manifest line: `path<TAB>seed<TAB>family`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub seed: u64,
    pub family: String,
}

/// Parses a manifest; blank lines and `#` comments are skipped and relative
/// paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::Format {
            path: origin.to_path_buf(),
            msg: format!("line {}: {msg}", no + 1),
        };
        if cols.len() != 3 {
            return Err(bad("expected path<TAB>seed<TAB>family"));
        }
        let seed = cols[1].parse().map_err(|_| bad("seed is not an unsigned integer"))?;
        let path = Path::new(cols[0]);
        out.push(ManifestEntry {
            path: if path.is_absolute() { path.to_path_buf() } else { base.join(path) },
            seed,
            family: cols[2].to_string(),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")), path)
}

/// Manifest text with paths written relative to the manifest's directory.
pub fn format_manifest(entries: &[(String, u64, String)]) -> String {
    let mut s = String::new();
    for (p, seed, fam) in entries {
        let _ = writeln!(s, "{p}\t{seed}\t{fam}");
    }
    s
}

/// Ground truth, hole mask and the incomplete input `gt ⊙ (1 - mask)`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub gt: Tensor,
    pub mask: Tensor,
    pub z: Tensor,
}

impl Batch {
    pub fn new(gt: Tensor, mask: Tensor) -> Result<Self> {
        let [n, c, h, w] = gt.dims4("batch")?;
        if c != 3 || mask.shape() != [n, 1, h, w] {
            return Err(Error::Parameter(format!(
                "batch needs gt [N, 3, H, W] and mask [N, 1, H, W], got {:?} and {:?}",
                gt.shape(),
                mask.shape()
            )));
        }
        let plane = h * w;
        let mut z = gt.data().to_vec();
        for (i, v) in z.iter_mut().enumerate() {
            let (b, pix) = (i / (3 * plane), i % plane);
            if mask.data()[b * plane + pix] != 0.0 {
                *v = 0.0;
            }
        }
        let z = Tensor::new(gt.shape(), z)?;
        Ok(Self { gt, mask, z })
    }

    pub fn len(&self) -> usize {
        self.gt.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `i` as a batch of one.
    pub fn sample(&self, i: usize) -> Result<Batch> {
        let [_, c, h, w] = self.gt.dims4("batch")?;
        let gt = Tensor::new(&[1, c, h, w], self.gt.data()[i * c * h * w..][..c * h * w].to_vec())?;
        let mask = Tensor::new(&[1, 1, h, w], self.mask.data()[i * h * w..][..h * w].to_vec())?;
        Batch::new(gt, mask)
    }
}

/// Stacks `[1, C, H, W]` tensors along the batch axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = items.iter().collect();
    crate::tensor::kernels::concat(&refs, 0)
}

/// Where ground-truth images come from.
#[derive(Clone, Debug)]
pub enum Source {
    Procedural(Vec<TextureFamily>),
    Images(Vec<Tensor>),
}

/// Which deterministic stream a batch is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
}

/// SplitMix64 finalizer.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of sample `i` at `index` of `split`, fixed by position alone.
pub fn sample_seed(seed: u64, split: Split, index: u64, i: usize) -> u64 {
    let tag = match split {
        Split::Train => 0x7261_696e,
        Split::Holdout => 0x686f_6c64,
    };
    mix(mix(mix(seed ^ tag).wrapping_add(index)).wrapping_add(i as u64))
}

/// Batch `index` of `split`: a pure function of its arguments.
pub fn make_batch(source: &Source, masks: &MaskSpec, size: usize, n: usize, seed: u64, split: Split, index: u64) -> Result<Batch> {
    let mut gts = Vec::with_capacity(n);
    let mut ms = Vec::with_capacity(n);
    for i in 0..n {
        let s = sample_seed(seed, split, index, i);
        let gt = match source {
            Source::Procedural(families) => {
                if families.is_empty() {
                    return Err(Error::Parameter("no texture families selected".into()));
                }
                let family = families[(mix(s) % families.len() as u64) as usize];
                generate_texture(&TextureSpec::sample(family, size, s))?
            }
            Source::Images(images) => {
                if images.is_empty() {
                    return Err(Error::Parameter("image source is empty".into()));
                }
                images[(mix(s) % images.len() as u64) as usize].clone()
            }
        };
        if gt.shape() != [1, 3, size, size] {
            return Err(Error::Parameter(format!("image {:?} does not match input size {size}", gt.shape())));
        }
        gts.push(gt);
        ms.push(generate_mask(&masks.with_seed(mix(s ^ 0x6d61_736b)))?);
    }
    Batch::new(stack(&gts)?, stack(&ms)?)
}
