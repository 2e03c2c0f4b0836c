//! Float rasters, binary masks and their on-disk format.
//!
//! File layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       2     magic  b"RF" (image) or b"RM" (mask)
//! 2       2     height u16
//! 4       2     width  u16
//! 6       2     channels u16
//! 8       4*N   N = height*width*channels f32 values, row-major, channel-last
//! ```
//!
//! Values are held in memory as `f64` and stored as `f32`, so a raster whose
//! values are already `f32`-representable (see [`RasterImage::quantize`])
//! round-trips bit for bit.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: [u8; 2] = *b"RF";
pub const MASK_MAGIC: [u8; 2] = *b"RM";
pub const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("raster height and width must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::contract(format!(
                "raster channels must be 1 or 3, got {channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::contract(format!(
                "raster value count {} != {height}x{width}x{channels}",
                values.len()
            )));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::contract(format!("raster value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds an image from values that may stray slightly outside `[0, 1]`,
    /// clamping them.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut values: Vec<f64>,
    ) -> Result<Self> {
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, channels, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.index(row, col, channel)]
    }

    /// Sets one value, clamped to `[0, 1]`.
    pub fn set(&mut self, row: usize, col: usize, channel: usize, v: f64) {
        let i = self.index(row, col, channel);
        self.values[i] = v.clamp(0.0, 1.0);
    }

    /// Rounds every value to the nearest `f32`, making the image exactly
    /// representable in the file format.
    pub fn quantize(&mut self) {
        for v in &mut self.values {
            *v = f64::from(*v as f32);
        }
    }

    /// Values of one channel in row-major order.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(
            IMAGE_MAGIC,
            self.height,
            self.width,
            self.channels,
            &self.values,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, w, c, values) = decode(bytes, IMAGE_MAGIC, "image")?;
        Self::new(h, w, c, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Binary lesion mask aligned with an image's spatial grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LesionMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl LesionMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::contract(format!(
                "mask bit count {} != {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn union(&self, other: &LesionMask) -> Result<LesionMask> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::contract("mask union with mismatched dimensions"));
        }
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| *a || *b)
            .collect();
        Ok(LesionMask {
            height: self.height,
            width: self.width,
            bits,
        })
    }

    pub fn matches(&self, image: &RasterImage) -> bool {
        self.height == image.height() && self.width == image.width()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let values: Vec<f64> = self
            .bits
            .iter()
            .map(|b| if *b { 1.0 } else { 0.0 })
            .collect();
        encode(MASK_MAGIC, self.height, self.width, 1, &values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, w, c, values) = decode(bytes, MASK_MAGIC, "mask")?;
        if c != 1 {
            return Err(Error::parse(
                "mask",
                format!("expected 1 channel, found {c}"),
            ));
        }
        let mut bits = Vec::with_capacity(values.len());
        for v in values {
            if v == 0.0 {
                bits.push(false);
            } else if v == 1.0 {
                bits.push(true);
            } else {
                return Err(Error::parse("mask", format!("non-binary value {v}")));
            }
        }
        Self::from_bits(h, w, bits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn encode(magic: [u8; 2], h: usize, w: usize, c: usize, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(&magic);
    for d in [h, w, c] {
        out.extend_from_slice(
            &u16::try_from(d)
                .expect("raster dimension exceeds u16")
                .to_le_bytes(),
        );
    }
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8], magic: [u8; 2], what: &str) -> Result<(usize, usize, usize, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(
            what,
            format!("truncated header ({} bytes)", bytes.len()),
        ));
    }
    if bytes[..2] != magic {
        return Err(Error::parse(what, format!("bad magic {:?}", &bytes[..2])));
    }
    let dim = |i: usize| usize::from(u16::from_le_bytes([bytes[i], bytes[i + 1]]));
    let (h, w, c) = (dim(2), dim(4), dim(6));
    let n = h * w * c;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n {
        return Err(Error::parse(
            what,
            format!("payload is {} bytes, header implies {}", body.len(), 4 * n),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Ok((h, w, c, values))
}
