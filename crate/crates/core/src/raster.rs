//! Colour rasters and single-channel 8-bit label planes.

use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::autograd::{kernels, Tensor};
use crate::error::{Error, Result};

/// An `H x W x 3` colour image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    /// Interleaved RGB, row-major.
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(format!("image must be non-empty, got {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "expected {} values for a {width}x{height} RGB image, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite pixel value {v}")));
        }
        Ok(RasterImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RasterImage { width, height, data }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        RasterImage {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self.data.iter().map(|&v| to_u8(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer sized from dimensions")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel mean per pixel, row-major.
    pub fn intensity(&self) -> Vec<f64> {
        self.data.chunks(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect()
    }

    fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// Bilinear resample (half-pixel centres).
    pub fn resize(&self, width: usize, height: usize) -> RasterImage {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let planes: Vec<Vec<f64>> = (0..3)
            .map(|c| kernels::resize_plane(&self.channel_plane(c), self.height, self.width, height, width))
            .collect();
        let mut data = Vec::with_capacity(width * height * 3);
        for i in 0..width * height {
            data.extend(planes.iter().map(|p| p[i]));
        }
        RasterImage { width, height, data }
    }

    /// `[1, 3, H, W]` tensor after per-channel normalisation.
    pub fn to_tensor(&self, norm: &Normalization) -> Tensor {
        Tensor::from_fn([1, 3, self.height, self.width], |[_, c, y, x]| {
            (self.data[(y * self.width + x) * 3 + c] - norm.mean[c]) / norm.std[c]
        })
    }

    /// Rotates by `quarter_turns * 90` degrees clockwise.
    pub fn rotate90(&self, quarter_turns: u8) -> RasterImage {
        let (w, h, data) = rotate_interleaved(&self.data, self.width, self.height, 3, quarter_turns);
        RasterImage { width: w, height: h, data }
    }

    pub fn flip_horizontal(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            data: flip_interleaved(&self.data, self.width, self.height, 3),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<RasterImage> {
        check_crop(self.width, self.height, x0, y0, w, h)?;
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(RasterImage { width: w, height: h, data })
    }
}

/// Per-channel normalisation applied before the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    /// Statistics of the corpus the stock encoders were pretrained on.
    fn default() -> Self {
        Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// A single-channel 8-bit plane (label codes or grey levels).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPlane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl LabelPlane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "expected {} labels for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(LabelPlane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        LabelPlane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        Ok(LabelPlane {
            width: w as usize,
            height: h as usize,
            data: g.into_raw(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_gray8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer sized from dimensions")
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn rotate90(&self, quarter_turns: u8) -> LabelPlane {
        let (width, height, data) = rotate_interleaved(&self.data, self.width, self.height, 1, quarter_turns);
        LabelPlane { width, height, data }
    }

    pub fn flip_horizontal(&self) -> LabelPlane {
        LabelPlane {
            width: self.width,
            height: self.height,
            data: flip_interleaved(&self.data, self.width, self.height, 1),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<LabelPlane> {
        check_crop(self.width, self.height, x0, y0, w, h)?;
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(LabelPlane { width: w, height: h, data })
    }

    /// Nearest-neighbour resample; never produces values absent from the input.
    pub fn resize_nearest(&self, width: usize, height: usize) -> LabelPlane {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let xs = nearest_index(self.width, width);
        let ys = nearest_index(self.height, height);
        let mut data = Vec::with_capacity(width * height);
        for &sy in &ys {
            for &sx in &xs {
                data.push(self.data[sy * self.width + sx]);
            }
        }
        LabelPlane { width, height, data }
    }
}

/// An `H x W` real-valued map in `[0, 1]` (predictions or ground truth).
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("map value {v} outside [0, 1]")));
        }
        Ok(SaliencyMap { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        SaliencyMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Grey levels scaled to `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let plane = LabelPlane::load(path)?;
        Ok(SaliencyMap {
            width: plane.width,
            height: plane.height,
            data: plane.data.iter().map(|&v| v as f64 / 255.0).collect(),
        })
    }

    /// Ground-truth mask: grey level >= 128 is foreground.
    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let plane = LabelPlane::load(path)?;
        Ok(SaliencyMap {
            width: plane.width,
            height: plane.height,
            data: plane.data.iter().map(|&v| if v >= 128 { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_plane().save(path)
    }

    pub fn to_plane(&self) -> LabelPlane {
        LabelPlane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| to_u8(v)).collect(),
        }
    }

    /// Bilinear resample, clamped to `[0, 1]`.
    pub fn resize(&self, width: usize, height: usize) -> SaliencyMap {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let data = kernels::resize_plane(&self.data, self.height, self.width, height, width)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        SaliencyMap { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn nearest_index(input: usize, output: usize) -> Vec<usize> {
    (0..output)
        .map(|o| (((o as f64 + 0.5) * input as f64 / output as f64).floor() as usize).min(input - 1))
        .collect()
}

fn check_crop(width: usize, height: usize, x0: usize, y0: usize, w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 || x0 + w > width || y0 + h > height {
        return Err(Error::parameter(format!(
            "crop {w}x{h} at ({x0},{y0}) does not fit in {width}x{height}"
        )));
    }
    Ok(())
}

/// Clockwise rotation of an interleaved buffer with `ch` values per pixel.
fn rotate_interleaved<T: Copy>(
    src: &[T],
    width: usize,
    height: usize,
    ch: usize,
    quarter_turns: u8,
) -> (usize, usize, Vec<T>) {
    let turns = quarter_turns % 4;
    let (ow, oh) = if turns % 2 == 1 { (height, width) } else { (width, height) };
    let mut out = Vec::with_capacity(src.len());
    for oy in 0..oh {
        for ox in 0..ow {
            let (sx, sy) = match turns {
                0 => (ox, oy),
                1 => (oy, height - 1 - ox),
                2 => (width - 1 - ox, height - 1 - oy),
                _ => (width - 1 - oy, ox),
            };
            let i = (sy * width + sx) * ch;
            out.extend_from_slice(&src[i..i + ch]);
        }
    }
    (ow, oh, out)
}

fn flip_interleaved<T: Copy>(src: &[T], width: usize, height: usize, ch: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for y in 0..height {
        for x in (0..width).rev() {
            let i = (y * width + x) * ch;
            out.extend_from_slice(&src[i..i + ch]);
        }
    }
    out
}
