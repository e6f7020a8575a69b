//! Grayscale images with intensities in `[0, 1]` (0 = black ink, 1 = white paper).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png decode error on {path}: {message}")]
    Decode { path: String, message: String },
    #[error("png encode error on {path}: {message}")]
    Encode { path: String, message: String },
    #[error("unsupported png layout {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        Self { width, height, data: vec![fill; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "pixel buffer does not match dimensions");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Mean intensity over the half-open rectangle `[x0, x1) × [y0, y1)`, clipped to the image.
    pub fn region_mean(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f32 {
        let (x1, y1) = (x1.min(self.width), y1.min(self.height));
        if x0 >= x1 || y0 >= y1 {
            return f32::NAN;
        }
        let mut sum = 0.0f64;
        for y in y0..y1 {
            sum += self.data[y * self.width + x0..y * self.width + x1]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        (sum / ((x1 - x0) * (y1 - y0)) as f64) as f32
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at integer + 0.5).
    /// Points outside the image blend toward `fill`.
    pub fn sample_bilinear(&self, x: f32, y: f32, fill: f32) -> f32 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let px = |xi: isize, yi: isize| -> f32 {
            if xi < 0 || yi < 0 || xi >= self.width as isize || yi >= self.height as isize {
                fill
            } else {
                self.data[yi as usize * self.width + xi as usize]
            }
        };
        let top = px(x0, y0) * (1.0 - tx) + px(x0 + 1, y0) * tx;
        let bottom = px(x0, y0 + 1) * (1.0 - tx) + px(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Separable bilinear (triangle filter) resize. When shrinking, the filter support
    /// widens with the scale factor so every source pixel contributes.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let wx = filter_weights(self.width, width);
        let wy = filter_weights(self.height, height);

        let mut horizontal = vec![0.0f32; width * self.height];
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            let out = &mut horizontal[y * width..(y + 1) * width];
            for (o, taps) in out.iter_mut().zip(&wx) {
                *o = taps.weights.iter().enumerate().map(|(i, w)| row[taps.start + i] * w).sum();
            }
        }
        let mut data = vec![0.0f32; width * height];
        for (oy, taps) in wy.iter().enumerate() {
            let out = &mut data[oy * width..(oy + 1) * width];
            for (i, w) in taps.weights.iter().enumerate() {
                let src = &horizontal[(taps.start + i) * width..(taps.start + i + 1) * width];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += s * w;
                }
            }
        }
        GrayImage { width, height, data }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Self {
        Self::from_vec(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Writes an 8-bit single-channel PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let file = File::create(path).map_err(|source| io_err(path, source))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let encode = |e: png::EncodingError| ImageError::Encode {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut writer = encoder.write_header().map_err(encode)?;
        writer.write_image_data(&self.to_u8()).map_err(encode)?;
        writer.finish().map_err(encode)
    }

    /// Reads a PNG; color images are converted to luma.
    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let file = File::open(path).map_err(|source| io_err(path, source))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let decode = |e: png::DecodingError| ImageError::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut reader = decoder.read_info().map_err(decode)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| ImageError::Unsupported("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(decode)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let luma: Vec<u8> = match info.color_type {
            png::ColorType::Grayscale => bytes.to_vec(),
            png::ColorType::GrayscaleAlpha => bytes.chunks_exact(2).map(|p| p[0]).collect(),
            png::ColorType::Rgb => bytes.chunks_exact(3).map(rgb_luma).collect(),
            png::ColorType::Rgba => bytes.chunks_exact(4).map(rgb_luma).collect(),
            other => return Err(ImageError::Unsupported(format!("{other:?}"))),
        };
        Ok(Self::from_u8(w, h, &luma))
    }
}

fn rgb_luma(p: &[u8]) -> u8 {
    (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32).round() as u8
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io { path: path.display().to_string(), source }
}

struct Taps {
    start: usize,
    weights: Vec<f32>,
}

fn filter_weights(src: usize, dst: usize) -> Vec<Taps> {
    let scale = src as f64 / dst as f64;
    let support = scale.max(1.0);
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(src);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|i| {
                    let d = ((i as f64 + 0.5 - center) / support).abs();
                    (1.0 - d).max(0.0)
                })
                .collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            Taps { start: lo, weights: weights.into_iter().map(|w| w as f32).collect() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_keeps_constants() {
        let img = GrayImage::new(320, 320, 0.7);
        let small = img.resize_bilinear(128, 128);
        assert_eq!((small.width(), small.height()), (128, 128));
        assert!(small.pixels().iter().all(|&v| (v - 0.7).abs() < 1e-5));
        let odd = GrayImage::new(37, 53, 0.7).resize_bilinear(128, 128);
        assert!(odd.pixels().iter().all(|&v| (v - 0.7).abs() < 1e-5));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = GrayImage::from_fn(16, 16, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0);
        assert_eq!(img.resize_bilinear(16, 16), img);
    }

    #[test]
    fn bilinear_sample_at_pixel_center() {
        let img = GrayImage::from_fn(4, 4, |x, y| (x + 4 * y) as f32 / 15.0);
        assert!((img.sample_bilinear(2.5, 1.5, 1.0) - img.get(2, 1)).abs() < 1e-6);
        assert_eq!(img.sample_bilinear(-10.0, -10.0, 1.0), 1.0);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = GrayImage::from_fn(9, 5, |x, y| ((x * 31 + y * 17) % 256) as f32 / 255.0);
        img.save_png(&path).unwrap();
        let back = GrayImage::load_png(&path).unwrap();
        assert_eq!(back.to_u8(), img.to_u8());
    }
}
