//! Single-channel `f32` images and their on-disk formats.
//!
//! Raw `.f32` layout (little-endian): magic `PSCN-IMG`, `u32` version,
//! `u32` height, `u32` width, then `height * width` `f32` values row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use pscan_tensor::Tensor;

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 8] = b"PSCN-IMG";
pub const RAW_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::contract(format!("{height}x{width} image needs {} values, got {}", height * width, data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.ensure_same_dims(other, "zip_map")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { height: self.height, width: self.width, data })
    }

    pub fn ensure_same_dims(&self, other: &Image, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::contract(format!("{what}: {:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// `[1, 1, H, W]` tensor view.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, 1, self.height, self.width], self.data.clone()).expect("extents match")
    }

    /// Builds an image from a tensor holding exactly one `H×W` plane.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let s = t.shape();
        if s.len() < 2 || s[..s.len() - 2].iter().product::<usize>() != 1 {
            return Err(Error::contract(format!("tensor {s:?} is not a single plane")));
        }
        Self::new(s[s.len() - 2], s[s.len() - 1], t.data().to_vec())
    }

    /// Non-overlapping `side×side` tiles in row-major order; partial tiles
    /// at the right and bottom edges are dropped.
    pub fn crops(&self, side: usize) -> Vec<Image> {
        let mut out = Vec::new();
        if side == 0 {
            return out;
        }
        for top in (0..self.height / side).map(|i| i * side) {
            for left in (0..self.width / side).map(|j| j * side) {
                out.push(Image::from_fn(side, side, |r, c| self.get(top + r, left + c)));
            }
        }
        out
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), detail: detail.into() }
}

pub fn write_raw(path: &Path, image: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RAW_MAGIC)?;
    w.write_all(&RAW_VERSION.to_le_bytes())?;
    w.write_all(&(image.height as u32).to_le_bytes())?;
    w.write_all(&(image.width as u32).to_le_bytes())?;
    for v in &image.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != RAW_MAGIC {
        return Err(format_err(path, "missing PSCN-IMG header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != RAW_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let (h, w) = (word(12) as usize, word(16) as usize);
    let payload = &bytes[20..];
    if payload.len() != h * w * 4 {
        return Err(format_err(path, format!("{h}x{w} image needs {} payload bytes, found {}", h * w * 4, payload.len())));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Image::new(h, w, data)
}

/// 8-bit binary PGM with `lo..=hi` mapped linearly onto `0..=255`.
pub fn write_pgm8(path: &Path, image: &Image, lo: f32, hi: f32) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", image.width, image.height)?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = image.data.iter().map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// 16-bit binary PGM (big-endian samples) with `lo..=hi` mapped onto `0..=65535`.
pub fn write_pgm16(path: &Path, image: &Image, lo: f32, hi: f32) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n65535\n", image.width, image.height)?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    for &v in &image.data {
        let q = (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16;
        w.write_all(&q.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary (P5) PGM, scaling samples by `1/maxval` into `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    // header: magic, width, height, maxval, separated by whitespace and
    // optional `#` comments, then exactly one whitespace byte
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(format_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format_err(path, "only binary P5 PGM is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad PGM header field `{s}`")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, format!("PGM maxval {maxval} out of range")));
    }
    let payload = bytes.get(i + 1..).unwrap_or(&[]);
    let wide = maxval > 255;
    let need = h * w * if wide { 2 } else { 1 };
    if payload.len() < need {
        return Err(format_err(path, format!("{h}x{w} PGM needs {need} payload bytes, found {}", payload.len())));
    }
    let scale = 1.0 / maxval as f32;
    let data = if wide {
        payload[..need].chunks_exact(2).map(|c| f32::from(u16::from_be_bytes([c[0], c[1]])) * scale).collect()
    } else {
        payload[..need].iter().map(|&b| f32::from(b) * scale).collect()
    };
    Image::new(h, w, data)
}

/// Reads a single-channel TIFF as `f32`. 8/16-bit integer and 64-bit float
/// samples are converted.
pub fn read_tiff(path: &Path) -> Result<Image> {
    use tiff::decoder::{Decoder, DecodingResult};
    let file = BufReader::new(File::open(path)?);
    let mut dec = Decoder::new(file).map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = dec.dimensions().map_err(|e| format_err(path, e.to_string()))?;
    let data: Vec<f32> = match dec.read_image().map_err(|e| format_err(path, e.to_string()))? {
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U16(v) => {
            log::info!("{}: converting 16-bit integer samples to float", path.display());
            v.into_iter().map(f32::from).collect()
        }
        DecodingResult::U8(v) => {
            log::info!("{}: converting 8-bit integer samples to float", path.display());
            v.into_iter().map(f32::from).collect()
        }
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        _ => return Err(format_err(path, "unsupported sample format")),
    };
    if data.len() != (w as usize) * (h as usize) {
        return Err(format_err(path, "multi-channel TIFFs are not supported"));
    }
    Image::new(h as usize, w as usize, data)
}

pub fn write_tiff_f32(path: &Path, image: &Image) -> Result<()> {
    use tiff::encoder::{colortype, TiffEncoder};
    let file = BufWriter::new(File::create(path)?);
    let mut enc = TiffEncoder::new(file).map_err(|e| format_err(path, e.to_string()))?;
    enc.write_image::<colortype::Gray32Float>(image.width as u32, image.height as u32, &image.data)
        .map_err(|e| format_err(path, e.to_string()))?;
    Ok(())
}

/// Loads `.tif`/`.tiff` or `.f32` by extension.
pub fn read_any(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("tif") | Some("tiff") => read_tiff(path),
        Some("f32") => read_raw(path),
        _ => Err(format_err(path, "unknown image extension")),
    }
}
