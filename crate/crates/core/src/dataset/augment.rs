use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScribbleMask;
use crate::error::{Error, Result};
use crate::raster::{LabelPlane, RasterImage};

/// Which geometric augmentations to draw and the output training size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub size: usize,
    pub rotate: bool,
    pub flip: bool,
    pub crop: bool,
    /// Lower bound of the per-side crop fraction; the upper bound is 1.
    pub crop_min_scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            size: 352,
            rotate: true,
            flip: true,
            crop: true,
            crop_min_scale: 0.75,
        }
    }
}

impl AugmentConfig {
    /// Resize only.
    pub fn none(size: usize) -> Self {
        AugmentConfig {
            size,
            rotate: false,
            flip: false,
            crop: false,
            crop_min_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::parameter("augmentation size must be positive"));
        }
        if !(self.crop_min_scale > 0.0 && self.crop_min_scale <= 1.0) {
            return Err(Error::parameter(format!(
                "crop_min_scale must lie in (0, 1], got {}",
                self.crop_min_scale
            )));
        }
        Ok(())
    }
}

/// A concrete transform: rotate clockwise, then flip, then crop, then resize.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    pub quarter_turns: u8,
    pub hflip: bool,
    /// `(x0, y0, w, h)` in the rotated frame.
    pub crop: (usize, usize, usize, usize),
    pub out_size: (usize, usize),
}

impl Transform {
    pub fn identity(width: usize, height: usize, size: usize) -> Self {
        Transform {
            quarter_turns: 0,
            hflip: false,
            crop: (0, 0, width, height),
            out_size: (size, size),
        }
    }

    /// Draws a transform for a `width x height` input.
    pub fn draw(cfg: &AugmentConfig, width: usize, height: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let quarter_turns = if cfg.rotate { rng.gen_range(0..4u8) } else { 0 };
        let hflip = cfg.flip && rng.gen_bool(0.5);
        let (rw, rh) = if quarter_turns % 2 == 1 { (height, width) } else { (width, height) };
        let crop = if cfg.crop && cfg.crop_min_scale < 1.0 {
            let sw = rng.gen_range(cfg.crop_min_scale..=1.0);
            let sh = rng.gen_range(cfg.crop_min_scale..=1.0);
            let cw = ((rw as f64 * sw).round() as usize).clamp(1, rw);
            let ch = ((rh as f64 * sh).round() as usize).clamp(1, rh);
            let x0 = rng.gen_range(0..=rw - cw);
            let y0 = rng.gen_range(0..=rh - ch);
            (x0, y0, cw, ch)
        } else {
            (0, 0, rw, rh)
        };
        Transform {
            quarter_turns,
            hflip,
            crop,
            out_size: (cfg.size, cfg.size),
        }
    }

    pub fn apply_image(&self, img: &RasterImage) -> Result<RasterImage> {
        let mut out = img.rotate90(self.quarter_turns);
        if self.hflip {
            out = out.flip_horizontal();
        }
        let (x0, y0, w, h) = self.crop;
        out = out.crop(x0, y0, w, h)?;
        Ok(out.resize(self.out_size.0, self.out_size.1))
    }

    /// Label planes use nearest-neighbour resampling so codes survive.
    pub fn apply_plane(&self, plane: &LabelPlane) -> Result<LabelPlane> {
        let mut out = plane.rotate90(self.quarter_turns);
        if self.hflip {
            out = out.flip_horizontal();
        }
        let (x0, y0, w, h) = self.crop;
        out = out.crop(x0, y0, w, h)?;
        Ok(out.resize_nearest(self.out_size.0, self.out_size.1))
    }

    pub fn apply_mask(&self, mask: &ScribbleMask) -> Result<ScribbleMask> {
        ScribbleMask::from_plane(self.apply_plane(&mask.to_plane())?)
    }
}

/// Applies one seeded random transform to an image and its scribble mask.
pub fn augment_sample(
    image: &RasterImage,
    mask: &ScribbleMask,
    seed: u64,
    cfg: &AugmentConfig,
) -> Result<(RasterImage, ScribbleMask)> {
    cfg.validate()?;
    if (image.width(), image.height()) != (mask.width(), mask.height()) {
        return Err(Error::shape(format!(
            "image is {}x{} but mask is {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    let t = Transform::draw(cfg, image.width(), image.height(), seed);
    Ok((t.apply_image(image)?, t.apply_mask(mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(w: usize, h: usize) -> (RasterImage, ScribbleMask) {
        let img = RasterImage::from_fn(w, h, |x, y| [x as f64 / w as f64, y as f64 / h as f64, 0.5]);
        let codes = (0..w * h).map(|i| ((i * 7 + i / w) % 11 % 3) as u8).collect();
        (img, ScribbleMask::new(w, h, codes).unwrap())
    }

    #[test]
    fn no_op_draw_only_resizes() {
        let (img, mask) = sample(20, 12);
        let (oi, om) = augment_sample(&img, &mask, 3, &AugmentConfig::none(352)).unwrap();
        assert_eq!((oi.width(), oi.height()), (352, 352));
        assert_eq!(oi, img.resize(352, 352));
        assert_eq!(om.to_plane(), mask.to_plane().resize_nearest(352, 352));
    }

    #[test]
    fn flip_maps_column_c_to_w_minus_1_minus_c() {
        let mut mask = ScribbleMask::unlabeled(9, 4);
        mask.set(2, 1, super::super::ScribbleLabel::Foreground);
        let t = Transform {
            hflip: true,
            ..Transform::identity(9, 4, 0)
        };
        let t = Transform { out_size: (9, 4), ..t };
        let out = t.apply_mask(&mask).unwrap();
        assert_eq!(out.codes()[9 + 6], 1);
        assert_eq!(out.labeled_count(), 1);
    }

    #[test]
    fn oversized_crop_is_parameter_error() {
        let (img, _) = sample(8, 8);
        let t = Transform {
            crop: (0, 0, 9, 8),
            ..Transform::identity(8, 8, 8)
        };
        assert!(matches!(t.apply_image(&img), Err(Error::Parameter(_))));
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let (img, _) = sample(8, 8);
        let mask = ScribbleMask::unlabeled(8, 7);
        assert!(augment_sample(&img, &mask, 0, &AugmentConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn exact_transforms_move_labeled_pixels_consistently(
            w in 2usize..16, h in 2usize..16, turns in 0u8..4, flip in any::<bool>()
        ) {
            let (_, mask) = sample(w, h);
            let (rw, rh) = if turns % 2 == 1 { (h, w) } else { (w, h) };
            let t = Transform { quarter_turns: turns, hflip: flip, crop: (0, 0, rw, rh), out_size: (rw, rh) };
            let out = t.apply_mask(&mask).unwrap();
            prop_assert_eq!(out.labeled_count(), mask.labeled_count());
            for y in 0..h {
                for x in 0..w {
                    // Forward map of a clockwise quarter turn: (x, y) -> (H-1-y, x).
                    let (mut px, mut py, mut cw, mut chh) = (x, y, w, h);
                    for _ in 0..turns {
                        (px, py) = (chh - 1 - py, px);
                        (cw, chh) = (chh, cw);
                    }
                    if flip {
                        px = cw - 1 - px;
                    }
                    prop_assert_eq!(out.get(px, py), mask.get(x, y));
                }
            }
        }

        #[test]
        fn random_augment_keeps_codes_valid(seed in any::<u64>()) {
            let (img, mask) = sample(17, 11);
            let cfg = AugmentConfig { size: 24, ..AugmentConfig::default() };
            let (oi, om) = augment_sample(&img, &mask, seed, &cfg).unwrap();
            prop_assert_eq!((oi.width(), oi.height(), om.width(), om.height()), (24, 24, 24, 24));
            prop_assert!(om.codes().iter().all(|&c| c <= 2));
        }
    }
}
