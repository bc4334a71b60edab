//! Pixel rasters, grayscale conversion and binary masks.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Error, Result};

/// An 8-bit image with 1 (gray), 3 (RGB) or 4 (RGBA) interleaved channels,
/// stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::Input(format!(
                "unsupported channel count {channels}; expected 1, 3 or 4"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::Input(format!(
                "raster data has {} bytes, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// A raster where every pixel equals `pixel` (whose length sets the channel count).
    pub fn filled(width: u32, height: u32, pixel: &[u8]) -> Result<Self> {
        let n = width as usize * height as usize;
        let data = pixel.iter().copied().cycle().take(n * pixel.len()).collect();
        Self::new(width, height, pixel.len() as u8, data)
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

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &mut self.data[i..i + c]
    }

    /// Decodes a PNG byte stream. Gray+alpha and 16-bit inputs are widened
    /// or narrowed to the nearest supported 8-bit layout.
    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(Self::from_dynamic(img))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes)
    }

    fn from_dynamic(img: DynamicImage) -> Self {
        let (width, height) = (img.width(), img.height());
        let (channels, data) = match img {
            DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
            DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
            DynamicImage::ImageRgba8(buf) => (4, buf.into_raw()),
            other if other.color().has_alpha() => (4, other.to_rgba8().into_raw()),
            other if other.color().has_color() => (3, other.to_rgb8().into_raw()),
            other => (1, other.to_luma8().into_raw()),
        };
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            _ => image::ExtendedColorType::Rgba8,
        };
        let mut out = Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.data,
            self.width,
            self.height,
            color,
            ImageFormat::Png,
        )
        .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Luminance `round(0.299 R + 0.587 G + 0.114 B)`. RGBA pixels are first
    /// composited over white. Single-channel input is returned unchanged.
    pub fn to_grayscale(&self) -> Raster {
        match self.channels {
            1 => self.clone(),
            c => {
                let data = self
                    .data
                    .chunks_exact(c as usize)
                    .map(|px| {
                        let (r, g, b) = if c == 4 {
                            let a = px[3] as f64 / 255.0;
                            let over = |v: u8| v as f64 * a + 255.0 * (1.0 - a);
                            (over(px[0]), over(px[1]), over(px[2]))
                        } else {
                            (px[0] as f64, px[1] as f64, px[2] as f64)
                        };
                        luminance(r, g, b)
                    })
                    .collect();
                Raster {
                    width: self.width,
                    height: self.height,
                    channels: 1,
                    data,
                }
            }
        }
    }
}

fn luminance(r: f64, g: f64, b: f64) -> u8 {
    (0.299 * r + 0.587 * g + 0.114 * b).round().clamp(0.0, 255.0) as u8
}

/// Per-pixel boolean mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::Input(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                width as usize * height as usize
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    /// Sets every pixel of the rectangle to true. The rectangle must lie inside the mask.
    pub fn fill_rect(&mut self, x: u32, y: u32, w: u32, h: u32) {
        let stride = self.width as usize;
        for row in y..y + h {
            let start = row as usize * stride + x as usize;
            self.bits[start..start + w as usize].fill(true);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Grayscale PNG with set pixels at 255.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let data = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = GrayImage::from_raw(self.width, self.height, data)
            .expect("mask buffer matches its dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(out.into_inner())
    }
}
