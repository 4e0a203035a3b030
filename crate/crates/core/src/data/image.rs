use std::io::Cursor;
use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb, Rgb32FImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major (`[c][y][x]`) floating point image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageArray {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageArray {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.values[(c * self.height + y) * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

/// Per-channel `(v - mean) / std` applied to `[0, 1]` pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    /// Statistics used by the tiny reference backbone.
    pub const HALF: Normalization = Normalization {
        mean: [0.5; 3],
        std: [0.5; 3],
    };

    pub fn apply(&self, channel: usize, unit: f64) -> f64 {
        (unit - self.mean[channel]) / self.std[channel]
    }

    pub fn invert(&self, channel: usize, value: f64) -> f64 {
        value * self.std[channel] + self.mean[channel]
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self::HALF
    }
}

fn decode(bytes: &[u8]) -> std::result::Result<DynamicImage, image::ImageError> {
    image::load_from_memory(bytes)
}

/// Decodes, resizes the short side to `resolution` (bicubic), center-crops
/// to a square and normalizes.
pub fn preprocess(bytes: &[u8], resolution: usize, norm: &Normalization) -> Result<ImageArray> {
    let img = decode(bytes).map_err(|e| Error::Decode {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    Ok(preprocess_image(&img, resolution, norm))
}

pub fn preprocess_file(path: &Path, resolution: usize, norm: &Normalization) -> Result<ImageArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let img = decode(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(preprocess_image(&img, resolution, norm))
}

pub fn preprocess_image(img: &DynamicImage, resolution: usize, norm: &Normalization) -> ImageArray {
    let rgb: Rgb32FImage = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let short = w.min(h);
    let resized = if short == resolution {
        rgb
    } else {
        let scale = resolution as f64 / short as f64;
        let nw = ((w as f64 * scale).round() as usize).max(resolution);
        let nh = ((h as f64 * scale).round() as usize).max(resolution);
        image::imageops::resize(&rgb, nw as u32, nh as u32, FilterType::CatmullRom)
    };
    let (rw, rh) = (resized.width() as usize, resized.height() as usize);
    let left = (rw - resolution) / 2;
    let top = (rh - resolution) / 2;
    let mut out = ImageArray::zeros(3, resolution, resolution);
    for y in 0..resolution {
        for x in 0..resolution {
            let px = resized.get_pixel((left + x) as u32, (top + y) as u32);
            for c in 0..3 {
                out.set(c, y, x, norm.apply(c, px[c] as f64));
            }
        }
    }
    out
}

/// Inverse of normalization, quantized to 8-bit RGB.
pub fn to_rgb8(array: &ImageArray, norm: &Normalization) -> RgbImage {
    let (_, h, w) = array.shape();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let mut px = [0u8; 3];
        for (c, p) in px.iter_mut().enumerate() {
            let unit = norm.invert(c, array.at(c, y as usize, x as usize));
            *p = (unit.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        Rgb(px)
    })
}

pub fn from_rgb8(img: &RgbImage, norm: &Normalization) -> ImageArray {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageArray::zeros(3, h, w);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(c, y as usize, x as usize, norm.apply(c, px[c] as f64 / 255.0));
        }
    }
    out
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png(img: RgbImage) -> Vec<u8> {
        encode_png(&img).unwrap()
    }

    #[test]
    fn square_at_target_keeps_geometry() {
        let img = RgbImage::from_fn(8, 8, |x, y| Rgb([(x * 30) as u8, (y * 30) as u8, 7]));
        let out = preprocess(&png(img.clone()), 8, &Normalization::HALF).unwrap();
        assert_eq!(out.shape(), (3, 8, 8));
        for y in 0..8 {
            for x in 0..8 {
                let want = (img.get_pixel(x, y)[0] as f64 / 255.0 - 0.5) / 0.5;
                assert!((out.at(0, y as usize, x as usize) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_gray_normalizes_by_hand() {
        // gray level 51 -> 0.2 in unit range -> (0.2 - 0.5) / 0.5 = -0.6
        let img = RgbImage::from_pixel(40, 24, Rgb([51, 51, 51]));
        let out = preprocess(&png(img), 16, &Normalization::HALF).unwrap();
        assert_eq!(out.shape(), (3, 16, 16));
        for &v in out.values() {
            assert!((v - (-0.6)).abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn landscape_crop_is_centered() {
        // 2:1 image whose left half is black and right half white.
        let img = RgbImage::from_fn(
            32,
            16,
            |x, _| {
                if x < 16 {
                    Rgb([0, 0, 0])
                } else {
                    Rgb([255, 255, 255])
                }
            },
        );
        let out = preprocess(&png(img), 16, &Normalization::HALF).unwrap();
        assert_eq!(out.shape(), (3, 16, 16));
        // Equal margins removed: columns mirror each other around the center.
        for y in 0..16 {
            for x in 0..8 {
                let l = out.at(0, y, x);
                let r = out.at(0, y, 15 - x);
                assert!((l + r).abs() < 1e-5, "x={x}: {l} vs {r}");
            }
        }
    }

    #[test]
    fn undecodable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.png");
        std::fs::write(&path, b"not an image").unwrap();
        match preprocess_file(&path, 8, &Normalization::HALF) {
            Err(Error::Decode { path: p, .. }) => assert_eq!(p, path),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rgb8_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 40, y as u8 * 90, 200]));
        let arr = from_rgb8(&img, &Normalization::HALF);
        assert_eq!(to_rgb8(&arr, &Normalization::HALF), img);
    }
}
