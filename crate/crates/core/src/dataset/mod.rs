//! Dataset manifests, scribble masks, augmentation and annotation statistics.

mod augment;
mod manifest;
mod scribble;

pub use augment::{augment_sample, AugmentConfig, Transform};
pub use manifest::{load_manifest, CategoryTagSet, DatasetManifest, ManifestFile, SampleEntry, SampleRecord, Split};
pub use scribble::{decode_scribble_mask, encode_scribble_mask, ScribbleLabel, ScribbleMask, PALETTE_TOLERANCE};

use crate::error::{Error, Result};

/// Mean labeled fraction over the manifest's scribbled records.
pub fn annotation_density(manifest: &DatasetManifest) -> Result<f64> {
    let masks = manifest
        .samples
        .iter()
        .filter_map(|s| s.scribble.as_ref())
        .map(ScribbleMask::load)
        .collect::<Result<Vec<_>>>()?;
    density_of(&masks)
}

/// Arithmetic mean of per-mask labeled fractions.
pub fn density_of(masks: &[ScribbleMask]) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::validation("no scribble masks to measure"));
    }
    Ok(masks.iter().map(ScribbleMask::labeled_fraction).sum::<f64>() / masks.len() as f64)
}
