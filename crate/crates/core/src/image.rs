//! Planar RGB images on the 0–255 real scale.

use std::path::Path;

use camnoise_tensor::Tensor;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An `H×W×3` image stored channel-planar (`[c][y][x]`), values on the
/// 0–255 scale. Also used for noise fields, which may be negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), CHANNELS * height * width, "image buffer size");
        Image { height, width, data }
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Image::new(height, width, vec![v; CHANNELS * height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image::new(height, width, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert_eq!(self.dims(), other.dims(), "image shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Image::new(self.height, self.width, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::new(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop out of bounds");
        Image::from_fn(h, w, |c, y, x| self.get(c, y0 + y, x0 + x))
    }

    /// Clamps to [0, 255] and rounds (half up) to the nearest integer level.
    pub fn quantized(&self) -> Image {
        self.map(|v| (v.clamp(0.0, 255.0) + 0.5).floor())
    }

    /// Stacks images of equal shape into an `[N, 3, H, W]` constant tensor.
    pub fn batch(images: &[&Image]) -> Tensor {
        assert!(!images.is_empty());
        let (h, w) = images[0].dims();
        let mut data = Vec::with_capacity(images.len() * CHANNELS * h * w);
        for im in images {
            assert_eq!(im.dims(), (h, w), "batch images must share a shape");
            data.extend_from_slice(&im.data);
        }
        Tensor::from_vec(data, &[images.len(), CHANNELS, h, w])
    }

    /// Splits an `[N, 3, H, W]` tensor back into images.
    pub fn unbatch(t: &Tensor) -> Vec<Image> {
        let (n, c, h, w) = t.dims4();
        assert_eq!(c, CHANNELS);
        let per = c * h * w;
        (0..n)
            .map(|i| Image::new(h, w, t.data()[i * per..(i + 1) * per].to_vec()))
            .collect()
    }

    /// Reads an 8-bit RGB PNG. Any other channel layout or bit depth is a
    /// [`Error::Format`].
    pub fn load_png(path: &Path) -> Result<Image> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let dynimg = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let rgb = match dynimg {
            image::DynamicImage::ImageRgb8(rgb) => rgb,
            other => {
                return Err(Error::Format(format!(
                    "{}: expected 8-bit RGB, found {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let raw = rgb.as_raw();
        Ok(Image::from_fn(h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f64))
    }

    /// Writes the image as an 8-bit RGB PNG after clamping and rounding.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = self.dims();
        let mut raw = vec![0u8; h * w * 3];
        for c in 0..CHANNELS {
            for (i, v) in self.plane(c).iter().enumerate() {
                raw[i * 3 + c] = (v.clamp(0.0, 255.0) + 0.5).floor() as u8;
            }
        }
        image::save_buffer_with_format(path, &raw, w as u32, h as u32, image::ColorType::Rgb8, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Format(format!("{}: {other}", path.display())),
            })
    }

    // Dihedral transforms, used by augmentation.

    pub fn flip_horizontal(&self) -> Image {
        let w = self.width;
        Image::from_fn(self.height, w, |c, y, x| self.get(c, y, w - 1 - x))
    }

    /// Rotates a square image by 90° counter-clockwise.
    pub fn rotate90(&self) -> Image {
        assert_eq!(self.height, self.width, "rotate90 needs a square image");
        let n = self.width;
        Image::from_fn(n, n, |c, y, x| self.get(c, x, n - 1 - y))
    }
}
