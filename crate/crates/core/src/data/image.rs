use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An input image with pixels in `[0, 1]`, laid out `(height, width, channels)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub id: String,
    pub pixels: Array3<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl Image {
    pub fn new(id: impl Into<String>, pixels: Array3<f64>) -> Self {
        Image {
            id: id.into(),
            pixels,
            label: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }

    /// Loads a PNG or JPEG and normalizes it to `[0, 1]` RGB.
    pub fn load(id: impl Into<String>, path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let decoded = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Image::new(id, rgb_to_array(&decoded.to_rgb8())))
    }

    /// Saves as 8-bit PNG. Values are clamped to `[0, 1]` and rounded.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = encode_png(&self.pixels)?;
        crate::fsutil::write_atomic(path, &bytes)
    }
}

pub(crate) fn rgb_to_array(rgb: &image::RgbImage) -> Array3<f64> {
    let (w, h) = rgb.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Converts an `(H, W, C)` array with 1 or 3 channels to an 8-bit RGB buffer.
pub fn array_to_rgb(pixels: &Array3<f64>) -> image::RgbImage {
    let (h, w, c) = pixels.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if c >= 3 {
            image::Rgb([
                to_u8(pixels[[y, x, 0]]),
                to_u8(pixels[[y, x, 1]]),
                to_u8(pixels[[y, x, 2]]),
            ])
        } else {
            let v = to_u8(pixels[[y, x, 0]]);
            image::Rgb([v, v, v])
        }
    })
}

/// PNG bytes for an `(H, W, C)` array.
pub fn encode_png(pixels: &Array3<f64>) -> Result<Vec<u8>> {
    let rgb = array_to_rgb(pixels);
    let mut out = std::io::Cursor::new(Vec::new());
    rgb.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(out.into_inner())
}

/// Bilinear resize of an `(H, W, C)` array through the `image` crate.
pub fn resize(pixels: &Array3<f64>, height: usize, width: usize) -> Array3<f64> {
    let (h, w, c) = pixels.dim();
    if (h, w) == (height, width) {
        return pixels.clone();
    }
    let mut out = Array3::zeros((height, width, c));
    for ch in 0..c {
        let plane: image::ImageBuffer<image::Luma<f32>, Vec<f32>> =
            image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([pixels[[y as usize, x as usize, ch]] as f32])
            });
        let scaled = image::imageops::resize(
            &plane,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        for (x, y, p) in scaled.enumerate_pixels() {
            out[[y as usize, x as usize, ch]] = p[0] as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let pixels = Array3::from_shape_fn((5, 7, 3), |(y, x, c)| ((y * 31 + x * 7 + c * 50) % 256) as f64 / 255.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        Image::new("a", pixels.clone()).save_png(&path).unwrap();
        let back = Image::load("a", &path).unwrap();
        assert_eq!(back.pixels, pixels);
    }

    #[test]
    fn missing_file_is_named() {
        let err = Image::load("x", Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }

    #[test]
    fn resize_identity_and_shape() {
        let pixels = Array3::from_elem((4, 4, 3), 0.25);
        assert_eq!(resize(&pixels, 4, 4), pixels);
        let r = resize(&pixels, 8, 6);
        assert_eq!(r.dim(), (8, 6, 3));
        assert!(r.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }
}
