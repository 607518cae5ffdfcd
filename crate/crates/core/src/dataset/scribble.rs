use std::collections::BTreeSet;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::raster::LabelPlane;

/// Per-pixel scribble code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ScribbleLabel {
    Unlabeled = 0,
    Foreground = 1,
    Background = 2,
}

impl ScribbleLabel {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScribbleLabel::Unlabeled),
            1 => Some(ScribbleLabel::Foreground),
            2 => Some(ScribbleLabel::Background),
            _ => None,
        }
    }

    pub fn color(self) -> [u8; 3] {
        match self {
            ScribbleLabel::Unlabeled => [0, 0, 0],
            ScribbleLabel::Foreground => [255, 0, 0],
            ScribbleLabel::Background => [0, 255, 0],
        }
    }
}

/// Per-channel slack allowed when matching palette colours.
pub const PALETTE_TOLERANCE: u8 = 10;

/// Sparse tri-state supervision: codes 0 (unlabeled), 1 (foreground),
/// 2 (background).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScribbleMask {
    width: usize,
    height: usize,
    codes: Vec<u8>,
}

impl ScribbleMask {
    pub fn new(width: usize, height: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != width * height {
            return Err(Error::shape(format!(
                "scribble mask {width}x{height} needs {} codes, got {}",
                width * height,
                codes.len()
            )));
        }
        if let Some(bad) = codes.iter().find(|&&c| c > 2) {
            return Err(Error::validation(format!("scribble code {bad} outside {{0,1,2}}")));
        }
        Ok(ScribbleMask { width, height, codes })
    }

    pub fn unlabeled(width: usize, height: usize) -> Self {
        ScribbleMask {
            width,
            height,
            codes: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn get(&self, x: usize, y: usize) -> ScribbleLabel {
        ScribbleLabel::from_code(self.codes[y * self.width + x]).expect("validated codes")
    }

    pub fn set(&mut self, x: usize, y: usize, label: ScribbleLabel) {
        self.codes[y * self.width + x] = label as u8;
    }

    pub fn count(&self, label: ScribbleLabel) -> usize {
        self.codes.iter().filter(|&&c| c == label as u8).count()
    }

    pub fn labeled_count(&self) -> usize {
        self.codes.iter().filter(|&&c| c != 0).count()
    }

    /// Fraction of pixels carrying a foreground or background code.
    pub fn labeled_fraction(&self) -> f64 {
        self.labeled_count() as f64 / self.codes.len() as f64
    }

    pub fn to_plane(&self) -> LabelPlane {
        LabelPlane {
            width: self.width,
            height: self.height,
            data: self.codes.clone(),
        }
    }

    pub fn from_plane(plane: LabelPlane) -> Result<Self> {
        Self::new(plane.width, plane.height, plane.data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_scribble_mask(&bytes).map_err(|e| match e {
            Error::Decode(msg) => Error::Decode(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, encode_scribble_mask(self)).map_err(|e| Error::io(path, e))
    }
}

fn classify(px: [u8; 3]) -> Option<ScribbleLabel> {
    let near = |a: u8, b: u8| a.abs_diff(b) <= PALETTE_TOLERANCE;
    [ScribbleLabel::Unlabeled, ScribbleLabel::Foreground, ScribbleLabel::Background]
        .into_iter()
        .find(|l| {
            let c = l.color();
            near(px[0], c[0]) && near(px[1], c[1]) && near(px[2], c[2])
        })
}

/// Decodes a palette raster: red marks foreground, green background, black
/// unlabeled. Any other colour is rejected.
pub fn decode_scribble_mask(bytes: &[u8]) -> Result<ScribbleMask> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::Decode(format!("not a readable raster: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut codes = Vec::with_capacity((w * h) as usize);
    let mut bad: BTreeSet<[u8; 3]> = BTreeSet::new();
    for px in img.pixels() {
        match classify(px.0) {
            Some(l) => codes.push(l as u8),
            None => {
                bad.insert(px.0);
                codes.push(0);
            }
        }
    }
    if !bad.is_empty() {
        let listed: Vec<String> = bad
            .iter()
            .take(8)
            .map(|c| format!("({},{},{})", c[0], c[1], c[2]))
            .collect();
        let more = if bad.len() > 8 {
            format!(" and {} more", bad.len() - 8)
        } else {
            String::new()
        };
        return Err(Error::Decode(format!(
            "unrecognised scribble colours {}{more}",
            listed.join(", ")
        )));
    }
    ScribbleMask::new(w as usize, h as usize, codes)
}

/// Encodes a mask as an RGB PNG in the scribble palette.
pub fn encode_scribble_mask(mask: &ScribbleMask) -> Vec<u8> {
    let img = RgbImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Rgb(mask.get(x as usize, y as usize).color())
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}
