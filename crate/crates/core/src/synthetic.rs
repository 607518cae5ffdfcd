//! Procedural shape images with dense masks, scribbles and tags, for demos
//! and tests.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ManifestFile, SampleEntry, ScribbleLabel, ScribbleMask, Split};
use crate::error::{Error, Result};
use crate::raster::{RasterImage, SaliencyMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Disk,
}

impl Shape {
    pub const ALL: [Shape; 2] = [Shape::Square, Shape::Disk];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Disk => "disk",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub shape: Shape,
    pub image: RasterImage,
    pub gt: SaliencyMap,
    pub scribble: ScribbleMask,
}

/// One `size x size` image: a bright shape on a dim noisy background, with
/// a cross-shaped foreground stroke through its centre and background
/// strokes near the top and bottom edges.
pub fn synthetic_sample(size: usize, shape: Shape, seed: u64) -> SyntheticSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let radius = rng.gen_range(0.18..0.28) * s;
    let cx = rng.gen_range(radius + 2.0..s - radius - 2.0);
    let cy = rng.gen_range(radius + 2.0..s - radius - 2.0);
    let fg: [f64; 3] = [rng.gen_range(0.7..0.95), rng.gen_range(0.5..0.9), rng.gen_range(0.1..0.4)];
    let bg: [f64; 3] = [rng.gen_range(0.05..0.3), rng.gen_range(0.1..0.35), rng.gen_range(0.3..0.5)];
    let inside = |x: usize, y: usize| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        match shape {
            Shape::Square => dx.abs() <= radius && dy.abs() <= radius,
            Shape::Disk => dx * dx + dy * dy <= radius * radius,
        }
    };
    let mut gt = Vec::with_capacity(size * size);
    let image = RasterImage::from_fn(size, size, |x, y| {
        let on = inside(x, y);
        gt.push(if on { 1.0 } else { 0.0 });
        let base = if on { fg } else { bg };
        let n: f64 = rng.gen_range(-0.02..0.02);
        [(base[0] + n).clamp(0.0, 1.0), (base[1] + n).clamp(0.0, 1.0), (base[2] + n).clamp(0.0, 1.0)]
    });
    let mut scribble = ScribbleMask::unlabeled(size, size);
    let half = (radius * 0.85) as usize;
    let (icx, icy) = (cx as usize, cy as usize);
    for d in 0..=2 * half {
        let (x, y) = ((icx + d).saturating_sub(half).min(size - 1), (icy + d).saturating_sub(half).min(size - 1));
        if inside(x, icy) {
            scribble.set(x, icy, ScribbleLabel::Foreground);
        }
        if inside(icx, y) {
            scribble.set(icx, y, ScribbleLabel::Foreground);
        }
    }
    let m = 1.max(size / 16);
    for x in m..size - m {
        for y in [m, size - 1 - m] {
            if !inside(x, y) {
                scribble.set(x, y, ScribbleLabel::Background);
            }
        }
    }
    SyntheticSample {
        shape,
        image,
        gt: SaliencyMap {
            width: size,
            height: size,
            data: gt,
        },
        scribble,
    }
}

/// Writes `n_train` + `n_test` samples (alternating shapes) under `dir` with
/// `images/`, `scribbles/`, `gt/` and `manifest.json`; returns the manifest
/// path.
pub fn write_synthetic_dataset(dir: &Path, n_train: usize, n_test: usize, size: usize, seed: u64) -> Result<PathBuf> {
    for sub in ["images", "scribbles", "gt"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut samples = Vec::new();
    for i in 0..n_train + n_test {
        let shape = Shape::ALL[i % 2];
        let s = synthetic_sample(size, shape, seed.wrapping_add(i as u64 * 7919));
        let id = format!("{}_{i:03}", shape.name());
        let split = if i < n_train { Split::Train } else { Split::Test };
        s.image.save(dir.join(format!("images/{id}.png")))?;
        s.gt.save(dir.join(format!("gt/{id}.png")))?;
        let scribble = (split == Split::Train).then(|| format!("scribbles/{id}.png"));
        if let Some(p) = &scribble {
            s.scribble.save(dir.join(p))?;
        }
        samples.push(SampleEntry {
            id: id.clone(),
            image: format!("images/{id}.png"),
            scribble,
            tags: Some(vec![shape.name().to_string()]),
            split,
        });
    }
    let manifest = ManifestFile {
        name: "synthetic-shapes".into(),
        root: ".".into(),
        categories: Shape::ALL.iter().map(|s| s.name().to_string()).collect(),
        samples,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
