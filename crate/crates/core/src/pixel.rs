//! Fixed-size RGB pixel grids with channel values in [0,1].
//!
//! Images are stored interleaved (row-major, RGB) as `f32`. PNG is the
//! canonical on-disk format: 8-bit per channel, lossless, so corruption
//! experiments always start from exact pixels.

use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An H×W×3 pixel grid with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(height: usize, width: usize) -> Self {
        ImageBuf {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut img = ImageBuf::new(height, width);
        for y in 0..height {
            for x in 0..width {
                img.put(y, x, f(y, x));
            }
        }
        img
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * CHANNELS);
        ImageBuf {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, y: usize, x: usize, px: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i] = px[0];
        self.data[i + 1] = px[1];
        self.data[i + 2] = px[2];
    }

    /// Clamp every channel into [0,1].
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v) && v.is_finite())
    }

    /// Rec.601 luma plane.
    pub fn luminance(&self) -> Vec<f32> {
        self.data
            .chunks_exact(CHANNELS)
            .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
            .collect()
    }

    /// Bilinear resample to a new size. Deterministic; used for foreground
    /// fitting and the resize/crop corruptions.
    pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> ImageBuf {
        assert!(new_h > 0 && new_w > 0);
        if new_h == self.height && new_w == self.width {
            return self.clone();
        }
        let mut out = ImageBuf::new(new_h, new_w);
        let sy = self.height as f32 / new_h as f32;
        let sx = self.width as f32 / new_w as f32;
        for y in 0..new_h {
            // align sample points to pixel centers
            let fy = ((y as f32 + 0.5) * sy - 0.5).max(0.0);
            let y0 = (fy as usize).min(self.height - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f32;
            for x in 0..new_w {
                let fx = ((x as f32 + 0.5) * sx - 0.5).max(0.0);
                let x0 = (fx as usize).min(self.width - 1);
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f32;
                let p00 = self.get(y0, x0);
                let p01 = self.get(y0, x1);
                let p10 = self.get(y1, x0);
                let p11 = self.get(y1, x1);
                let mut px = [0.0f32; 3];
                for c in 0..CHANNELS {
                    let top = p00[c] * (1.0 - wx) + p01[c] * wx;
                    let bot = p10[c] * (1.0 - wx) + p11[c] * wx;
                    px[c] = top * (1.0 - wy) + bot * wy;
                }
                out.put(y, x, px);
            }
        }
        out
    }

    /// Extract the axis-aligned sub-rectangle (top, left, h, w).
    pub fn crop_rect(&self, top: usize, left: usize, h: usize, w: usize) -> ImageBuf {
        assert!(top + h <= self.height && left + w <= self.width);
        let mut out = ImageBuf::new(h, w);
        for y in 0..h {
            for x in 0..w {
                out.put(y, x, self.get(top + y, left + x));
            }
        }
        out
    }

    /// Quantize to 8 bits per channel, the storage precision of PNG.
    pub fn quantize_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), height * width * CHANNELS);
        let data = bytes.iter().map(|b| *b as f32 / 255.0).collect();
        ImageBuf {
            height,
            width,
            data,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.quantize_u8();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::image(path, e.to_string()))
    }

    pub fn load_png(path: &Path) -> Result<ImageBuf> {
        let img = image::open(path).map_err(|e| Error::image(path, e.to_string()))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(ImageBuf::from_u8(h as usize, w as usize, rgb.as_raw()))
    }

    /// Round-trip through an in-memory JPEG at the given quality.
    pub fn jpeg_roundtrip(&self, quality: u8) -> ImageBuf {
        let bytes = self.quantize_u8();
        let mut encoded = Vec::new();
        {
            let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut encoded, quality);
            enc.encode(
                &bytes,
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::Rgb8,
            )
            .expect("jpeg encode of valid buffer");
        }
        let decoded = image::load_from_memory_with_format(&encoded, image::ImageFormat::Jpeg)
            .expect("jpeg decode of own encoding")
            .to_rgb8();
        ImageBuf::from_u8(self.height, self.width, decoded.as_raw())
    }
}

/// Root-mean-square distance per channel sample between two equally sized
/// grids; the unit every epsilon/c tolerance in this crate is stated in.
pub fn rms_distance(a: &ImageBuf, b: &ImageBuf) -> f32 {
    assert_eq!(a.size(), b.size());
    let n = a.data.len();
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum();
    ((sum / n as f64) as f32).sqrt()
}

/// Peak signal-to-noise ratio in dB against a reference grid.
pub fn psnr(reference: &ImageBuf, candidate: &ImageBuf) -> f32 {
    let rms = rms_distance(reference, candidate).max(1e-12);
    20.0 * (1.0 / rms).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity() {
        let img = ImageBuf::from_fn(8, 6, |y, x| [(y as f32) / 8.0, (x as f32) / 6.0, 0.5]);
        assert_eq!(img.resize_bilinear(8, 6), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageBuf::from_fn(16, 16, |_, _| [0.25, 0.5, 0.75]);
        let up = img.resize_bilinear(31, 9);
        for y in 0..31 {
            for x in 0..9 {
                let px = up.get(y, x);
                assert!((px[0] - 0.25).abs() < 1e-6);
                assert!((px[1] - 0.5).abs() < 1e-6);
                assert!((px[2] - 0.75).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rms_of_identical_is_zero() {
        let img = ImageBuf::from_fn(4, 4, |y, x| [y as f32 / 4.0, x as f32 / 4.0, 0.0]);
        assert_eq!(rms_distance(&img, &img), 0.0);
    }

    #[test]
    fn jpeg_roundtrip_close_at_high_quality() {
        let img = ImageBuf::from_fn(32, 32, |y, x| {
            [
                0.5 + 0.3 * ((x as f32) / 32.0),
                0.5 - 0.3 * ((y as f32) / 32.0),
                0.5,
            ]
        });
        let rt = img.jpeg_roundtrip(95);
        assert_eq!(rt.size(), img.size());
        assert!(rt.is_unit_range());
        assert!(rms_distance(&img, &rt) < 0.05, "jpeg95 should be mild");
    }

    #[test]
    fn png_roundtrip_is_lossless_at_u8() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = ImageBuf::from_fn(16, 16, |y, x| {
            [
                ((y * 16 + x) % 256) as f32 / 255.0,
                ((y * 7 + x * 3) % 256) as f32 / 255.0,
                ((x * 11) % 256) as f32 / 255.0,
            ]
        });
        img.save_png(&path).unwrap();
        let back = ImageBuf::load_png(&path).unwrap();
        // exact: the source was already on the u8 lattice
        assert_eq!(back, img);
    }
}
