//! Byte and real-valued rasters, PNG I/O, resampling and the HF map file format.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer pixel box `(x, y, w, h)` in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl From<[i64; 4]> for BBox {
    fn from([x, y, w, h]: [i64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn tuple(&self) -> (i64, i64, i64, i64) {
        (self.x, self.y, self.w, self.h)
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && self.x >= 0
            && self.y >= 0
            && self.x + self.w <= width as i64
            && self.y + self.h <= height as i64
    }

    pub fn check_inside(&self, width: u32, height: u32) -> Result<()> {
        if self.fits_in(width, height) {
            Ok(())
        } else {
            Err(Error::RegionOutOfBounds {
                bbox: self.tuple(),
                width,
                height,
            })
        }
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w && y < self.y + self.h
    }

    /// Grow by `r` pixels on every side, clipped to the image.
    pub fn dilate(&self, r: i64, width: u32, height: u32) -> BBox {
        let x0 = (self.x - r).max(0);
        let y0 = (self.y - r).max(0);
        let x1 = (self.x + self.w + r).min(width as i64);
        let y1 = (self.y + self.h + r).min(height as i64);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// 8-bit raster, row-major, channel-interleaved. One or three channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

fn check_channels(channels: u8) -> Result<()> {
    if channels == 1 || channels == 3 {
        Ok(())
    } else {
        Err(Error::UnsupportedChannels(channels))
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        check_channels(channels)?;
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "raster data has {} samples, expected {expected}",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    /// Raster with every sample set to `value`.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert!(width > 0 && height > 0, "raster must be non-empty");
        Raster {
            width,
            height,
            channels,
            data: vec![value; width as usize * height as usize * channels as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, channels: u8, mut f: impl FnMut(u32, u32, u8) -> u8) -> Self {
        let mut r = Raster::filled(width, height, channels, 0);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    r.set(x, y, c, f(x, y, c));
                }
            }
        }
        r
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn channels(&self) -> u8 {
        self.channels
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    fn offset(&self, x: u32, y: u32, c: u8) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.offset(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let o = self.offset(x, y, c);
        self.data[o] = v;
    }

    /// Replicate-border sample access.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64, c: u8) -> u8 {
        let x = x.clamp(0, self.width as i64 - 1) as u32;
        let y = y.clamp(0, self.height as i64 - 1) as u32;
        self.get(x, y, c)
    }

    /// Number of samples strictly above 127 (single-channel masks).
    pub fn count_on(&self) -> u64 {
        self.data.iter().filter(|&&v| v > 127).count() as u64
    }

    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Luma (BT.601 integer weights) for three-channel input, identity otherwise.
    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8)
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn crop(&self, bbox: BBox) -> Result<Raster> {
        bbox.check_inside(self.width, self.height)?;
        let (w, h) = (bbox.w as u32, bbox.h as u32);
        let ch = self.channels as usize;
        let mut data = Vec::with_capacity(w as usize * h as usize * ch);
        for y in 0..h {
            let start = self.offset(bbox.x as u32, bbox.y as u32 + y, 0);
            data.extend_from_slice(&self.data[start..start + w as usize * ch]);
        }
        Raster::new(w, h, self.channels, data)
    }

    /// Copy `patch` into this raster at `(x, y)`.
    pub fn paste(&mut self, patch: &Raster, x: u32, y: u32) -> Result<()> {
        if patch.channels != self.channels {
            return Err(Error::DimensionMismatch("paste channel mismatch".into()));
        }
        BBox::new(x as i64, y as i64, patch.width as i64, patch.height as i64).check_inside(self.width, self.height)?;
        let ch = self.channels as usize;
        for py in 0..patch.height {
            let src = patch.offset(0, py, 0);
            let dst = self.offset(x, y + py, 0);
            let n = patch.width as usize * ch;
            self.data[dst..dst + n].copy_from_slice(&patch.data[src..src + n]);
        }
        Ok(())
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Raster {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Raster::from_fn(width, height, self.channels, |x, y, c| {
            let v = bilinear(
                |xi, yi| self.get_clamped(xi, yi, c) as f64,
                (x as f64 + 0.5) * sx - 0.5,
                (y as f64 + 0.5) * sy - 0.5,
            );
            v.round().clamp(0.0, 255.0) as u8
        })
    }

    /// Nearest-neighbour resampling; keeps masks binary.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Raster {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Raster::from_fn(width, height, self.channels, |x, y, c| {
            let xs = (((x as f64 + 0.5) * sx).floor() as i64).min(self.width as i64 - 1);
            let ys = (((y as f64 + 0.5) * sy).floor() as i64).min(self.height as i64 - 1);
            self.get(xs as u32, ys as u32, c)
        })
    }

    pub fn from_dynamic(img: DynamicImage) -> Result<Raster> {
        let (w, h) = (img.width(), img.height());
        match img {
            DynamicImage::ImageLuma8(buf) => Raster::new(w, h, 1, buf.into_raw()),
            other if !other.color().has_color() => Raster::new(w, h, 1, other.to_luma8().into_raw()),
            other => Raster::new(w, h, 3, other.to_rgb8().into_raw()),
        }
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Raster> {
        let img =
            image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::Codec(e.to_string()))?;
        Raster::from_dynamic(img)
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let mut out = Cursor::new(Vec::new());
        image::write_buffer_with_format(&mut out, &self.data, self.width, self.height, color, ImageFormat::Png)
            .expect("in-memory PNG encoding of a valid raster cannot fail");
        out.into_inner()
    }

    /// Load any image format the `image` crate was built with (PNG here).
    pub fn load(path: &Path) -> Result<Raster> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory(&bytes).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
        Raster::from_dynamic(img)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }
}

#[inline]
fn bilinear(sample: impl Fn(i64, i64) -> f64, fx: f64, fy: f64) -> f64 {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let top = sample(x0, y0) * (1.0 - tx) + sample(x0 + 1, y0) * tx;
    let bottom = sample(x0, y0 + 1) * (1.0 - tx) + sample(x0 + 1, y0 + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Real-valued detail raster aligned to a crop.
#[derive(Debug, Clone, PartialEq)]
pub struct HFMap {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<f64>,
}

const HF_MAGIC: &[u8; 8] = b"SAICHF1\0";

impl HFMap {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<f64>) -> Result<Self> {
        check_channels(channels)?;
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width as usize * height as usize * channels as usize {
            return Err(Error::DimensionMismatch(format!(
                "hf map has {} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("hf map contains non-finite values".into()));
        }
        Ok(HFMap {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32, channels: u8) -> Self {
        HFMap {
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn channels(&self) -> u8 {
        self.channels
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> f64 {
        self.data[(y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize]
    }

    #[inline]
    fn get_clamped(&self, x: i64, y: i64, c: u8) -> f64 {
        let x = x.clamp(0, self.width as i64 - 1) as u32;
        let y = y.clamp(0, self.height as i64 - 1) as u32;
        self.get(x, y, c)
    }

    pub fn same_shape(&self, other: &HFMap) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn resize_bilinear(&self, width: u32, height: u32) -> HFMap {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let ch = self.channels;
        let mut data = Vec::with_capacity(width as usize * height as usize * ch as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..ch {
                    data.push(bilinear(
                        |xi, yi| self.get_clamped(xi, yi, c),
                        (x as f64 + 0.5) * sx - 0.5,
                        (y as f64 + 0.5) * sy - 0.5,
                    ));
                }
            }
        }
        HFMap {
            width,
            height,
            channels: ch,
            data,
        }
    }

    /// Min-max normalisation to 8 bits. A flat map normalises to all zeros.
    pub fn normalize_to_u8(&self) -> Raster {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        let data = self
            .data
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }

    /// `SAICHF1\0` magic, then width, height, channels as little-endian u32,
    /// then row-major little-endian f32 samples.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(HF_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<HFMap> {
        if bytes.len() < 20 || &bytes[..8] != HF_MAGIC {
            return Err(Error::Codec("not an HF map (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (w, h, c) = (word(8), word(12), word(16));
        if c > u8::MAX as u32 {
            return Err(Error::UnsupportedChannels(u8::MAX));
        }
        let n = w as usize * h as usize * c as usize;
        let body = &bytes[20..];
        if body.len() != n * 4 {
            return Err(Error::Codec(format!(
                "HF map body has {} bytes, expected {}",
                body.len(),
                n * 4
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        HFMap::new(w, h, c as u8, data)
    }
}
