//! 8-bit raster I/O: PNG through the `png` crate, binary PPM/PGM by hand.
//!
//! Pixel values map linearly between `0..=255` and `[-1, 1]`; saving rounds
//! half away from zero, so `load(save(x))` is exact for quantized `x` and
//! `save(load(file))` reproduces the pixel bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit interleaved pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Png,
    Pnm,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(Format::Png),
        Some("ppm" | "pgm" | "pnm") => Ok(Format::Pnm),
        _ => Err(fmt_err(path, "unsupported extension (expected .png, .ppm or .pgm)")),
    }
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let format = format_of(path)?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    match format {
        Format::Png => read_png(path, BufReader::new(file)),
        Format::Pnm => {
            let mut bytes = Vec::new();
            BufReader::new(file).read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
            parse_pnm(path, &bytes)
        }
    }
}

fn read_png(path: &Path, reader: BufReader<File>) -> Result<Raster> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| fmt_err(path, e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(fmt_err(path, format!("unsupported bit depth {depth:?} (expected 8)")));
    }
    let size = reader.output_buffer_size().ok_or_else(|| fmt_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt_err(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_channels, channels) = match color {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(fmt_err(path, format!("unsupported color type {other:?}"))),
    };
    // alpha is dropped
    let pixels = buf
        .chunks_exact(src_channels)
        .flat_map(|px| px[..channels].iter().copied())
        .collect();
    Ok(Raster {
        width: w,
        height: h,
        channels,
        pixels,
    })
}

/// Binary `P5`/`P6` with maxval 255.
fn parse_pnm(path: &Path, bytes: &[u8]) -> Result<Raster> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt_err(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(fmt_err(path, format!("unsupported magic {m:?} (expected P5 or P6)"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        token()?.parse().map_err(|_| fmt_err(path, format!("bad {what} in header")))
    };
    let (width, height, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(fmt_err(path, format!("unsupported bit depth: maxval {maxval} (expected 255)")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let len = width * height * channels;
    if width == 0 || height == 0 || bytes.len() < start + len {
        return Err(fmt_err(path, "raster shorter than its header declares"));
    }
    Ok(Raster {
        width,
        height,
        channels,
        pixels: bytes[start..start + len].to_vec(),
    })
}

pub fn write_raster(path: &Path, r: &Raster) -> Result<()> {
    let format = format_of(path)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Png => {
            let mut enc = png::Encoder::new(&mut out, r.width as u32, r.height as u32);
            enc.set_color(if r.channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| fmt_err(path, e.to_string()))?;
            w.write_image_data(&r.pixels).map_err(|e| fmt_err(path, e.to_string()))?;
            w.finish().map_err(|e| fmt_err(path, e.to_string()))?;
        }
        Format::Pnm => {
            let magic = if r.channels == 1 { "P5" } else { "P6" };
            write!(out, "{magic}\n{} {}\n255\n", r.width, r.height).map_err(|e| io_err(path, e))?;
            out.write_all(&r.pixels).map_err(|e| io_err(path, e))?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn from_byte(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// `[1, 3, H, W]` in `[-1, 1]`; gray files are replicated to three channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let r = read_raster(path.as_ref())?;
    let plane = r.width * r.height;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            let src = if r.channels == 1 { i } else { i * 3 + ch };
            data[ch * plane + i] = from_byte(r.pixels[src]);
        }
    }
    Tensor::new(&[1, 3, r.height, r.width], data)
}

fn image_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [1, c, h, w] | [c, h, w] if c == 1 || c == 3 => Ok((c, h, w)),
        _ => Err(Error::Parameter(format!(
            "image tensor must be [1, 3, H, W] or [1, 1, H, W], got {:?}",
            t.shape()
        ))),
    }
}

pub fn image_raster(t: &Tensor) -> Result<Raster> {
    let (c, h, w) = image_dims(t)?;
    let plane = h * w;
    let mut pixels = vec![0u8; c * plane];
    for i in 0..plane {
        for ch in 0..c {
            pixels[i * c + ch] = to_byte(t.data()[ch * plane + i]);
        }
    }
    Ok(Raster {
        width: w,
        height: h,
        channels: c,
        pixels,
    })
}

pub fn save_image(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_raster(path.as_ref(), &image_raster(t)?)
}

/// `[1, 1, H, W]` binary; pixels >= 128 are holes.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let r = read_raster(path)?;
    if r.channels != 1 {
        return Err(fmt_err(path, "mask must be a single-channel image"));
    }
    let data = r.pixels.iter().map(|&b| if b >= 128 { 1.0 } else { 0.0 }).collect();
    Tensor::new(&[1, 1, r.height, r.width], data)
}

/// Writes 255 on holes, 0 elsewhere.
pub fn save_mask(path: impl AsRef<Path>, mask: &Tensor) -> Result<()> {
    let (c, h, w) = image_dims(mask)?;
    if c != 1 {
        return Err(Error::Parameter(format!("mask must have one channel, got {:?}", mask.shape())));
    }
    let pixels = mask.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
    write_raster(
        path.as_ref(),
        &Raster {
            width: w,
            height: h,
            channels: 1,
            pixels,
        },
    )
}

/// Side-by-side RGB strip of equally sized images.
pub fn triptych(images: &[&Tensor]) -> Result<Tensor> {
    let (_, h, w) = image_dims(images[0])?;
    let n = images.len();
    let mut data = vec![0.0f32; 3 * h * w * n];
    for (k, img) in images.iter().enumerate() {
        if img.shape() != [1, 3, h, w] {
            return Err(Error::Parameter(format!("triptych panel {k} has shape {:?}", img.shape())));
        }
        for ch in 0..3 {
            for y in 0..h {
                let src = &img.data()[(ch * h + y) * w..][..w];
                data[(ch * h + y) * w * n + k * w..][..w].copy_from_slice(src);
            }
        }
    }
    Tensor::new(&[1, 3, h, w * n], data)
}
