use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attention::{attention_pool, attention_pool_backward, multilabel_bce};
use super::classifier::{Classifier, ClassifierSpec};
use super::labels::{boundary_from_trimap, cam_probabilities, trimap_from_cam, BoundaryConfig, BoundaryLabelMap, TriMap};
use crate::autograd::{sigmoid, Adam, AdamConfig, Graph, ParamStore, Tensor};
use crate::dataset::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::raster::{Normalization, RasterImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlgTrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub hflip: bool,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for BlgTrainConfig {
    fn default() -> Self {
        BlgTrainConfig {
            steps: 2000,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            hflip: true,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

/// One tagged training example, already resized.
#[derive(Clone, Debug)]
pub struct TaggedImage {
    pub image: RasterImage,
    pub tags: BTreeSet<usize>,
}

pub struct TrainedClassifier {
    pub classifier: Classifier,
    pub store: ParamStore,
    /// Mean loss per step.
    pub losses: Vec<f64>,
}

fn load_tagged(manifest: &DatasetManifest, size: usize) -> Result<Vec<TaggedImage>> {
    manifest
        .train()
        .map(|r| {
            let tags = r
                .tags
                .as_ref()
                .filter(|t| !t.tags.is_empty())
                .ok_or_else(|| Error::validation(format!("train record `{}` has no category tags", r.id)))?;
            Ok(TaggedImage {
                image: RasterImage::load(&r.image)?.resize(size, size),
                tags: tags.tags.clone(),
            })
        })
        .collect()
}

/// Trains the classifier on the manifest's tagged train records.
pub fn train_classifier(
    manifest: &DatasetManifest,
    spec: &ClassifierSpec,
    cfg: &BlgTrainConfig,
    norm: &Normalization,
) -> Result<TrainedClassifier> {
    if spec.num_classes != manifest.categories.len() {
        return Err(Error::validation(format!(
            "classifier has {} classes but the manifest declares {} categories",
            spec.num_classes,
            manifest.categories.len()
        )));
    }
    let data = load_tagged(manifest, spec.input_size)?;
    train_on_images(&data, spec, cfg, norm, |_, _| {})
}

/// Training loop over in-memory images; `on_step(step, loss)` is called
/// after every optimiser update.
pub fn train_on_images(
    data: &[TaggedImage],
    spec: &ClassifierSpec,
    cfg: &BlgTrainConfig,
    norm: &Normalization,
    mut on_step: impl FnMut(u64, f64),
) -> Result<TrainedClassifier> {
    if data.is_empty() {
        return Err(Error::validation("no tagged training images"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::validation("batch size must be positive"));
    }
    if let Some(bad) = data.iter().find(|d| d.tags.iter().any(|&t| t >= spec.num_classes)) {
        return Err(Error::validation(format!("tag set {:?} exceeds {} classes", bad.tags, spec.num_classes)));
    }
    let (classifier, mut store) = Classifier::build(spec, cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(data.len()) {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().unwrap());
        }
        let images: Vec<Tensor> = batch
            .iter()
            .map(|&i| {
                let img = &data[i].image;
                let img = if cfg.hflip && rng.gen_bool(0.5) { img.flip_horizontal() } else { img.clone() };
                img.to_tensor(norm)
            })
            .collect();
        let targets: Vec<Vec<f64>> = batch
            .iter()
            .map(|&i| (0..spec.num_classes).map(|c| f64::from(u8::from(data[i].tags.contains(&c)))).collect())
            .collect();
        let (loss, grads, updates) = {
            let mut g = Graph::new(&store, true);
            let x = g.constant(Tensor::stack(&images));
            let m = classifier.forward(&mut g, x)?;
            let maps = g.value(m).clone();
            let pool = attention_pool(&maps);
            let (loss, ds) = multilabel_bce(&pool.scores, &targets);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("classifier loss is {loss}"),
                });
            }
            let dm = attention_pool_backward(&maps, &pool, &ds);
            let root = g.external_scalar(m, loss, dm);
            let grads = g.backward(root).into_params();
            (loss, grads, g.stat_updates().to_vec())
        };
        adam.step(&mut store, &grads);
        store.apply_stat_updates(&updates, cfg.bn_momentum);
        losses.push(loss);
        on_step(step, loss);
    }
    Ok(TrainedClassifier {
        classifier,
        store,
        losses,
    })
}

/// Fraction of (image, category) decisions where `sigmoid(S^c) > 0.5`
/// agrees with the tags.
pub fn tag_accuracy(classifier: &Classifier, store: &ParamStore, data: &[TaggedImage], norm: &Normalization) -> Result<f64> {
    let c = classifier.spec().num_classes;
    let mut correct = 0usize;
    for d in data {
        let maps = classifier.maps(store, &d.image.to_tensor(norm))?;
        let pool = attention_pool(&maps);
        for (k, &s) in pool.scores[0].iter().enumerate() {
            correct += usize::from((sigmoid(s) > 0.5) == d.tags.contains(&k));
        }
    }
    Ok(correct as f64 / (data.len() * c) as f64)
}

/// Trimap and boundary labels for one image at its own resolution.
pub fn boundary_for_image(
    classifier: &Classifier,
    store: &ParamStore,
    image: &RasterImage,
    tags: Option<&BTreeSet<usize>>,
    cfg: &BoundaryConfig,
    norm: &Normalization,
) -> Result<(TriMap, BoundaryLabelMap)> {
    let size = classifier.spec().input_size;
    let x = image.resize(size, size).to_tensor(norm);
    let maps = classifier.maps(store, &x)?;
    let p = cam_probabilities(&maps, image.width(), image.height())?;
    let t = trimap_from_cam(&p, cfg.t_f, cfg.t_b, tags)?;
    let b = boundary_from_trimap(&t, cfg.window, cfg.rho, cfg.tau)?;
    Ok((t, b))
}

/// Writes `<out_dir>/<id>.png` boundary rasters for every train record.
pub fn generate_boundary_labels(
    manifest: &DatasetManifest,
    classifier: &Classifier,
    store: &ParamStore,
    cfg: &BoundaryConfig,
    norm: &Normalization,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let records: Vec<&SampleRecord> = manifest.train().collect();
    generate_for_records(&records, classifier, store, cfg, norm, out_dir)
}

pub fn generate_for_records(
    records: &[&SampleRecord],
    classifier: &Classifier,
    store: &ParamStore,
    cfg: &BoundaryConfig,
    norm: &Normalization,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    records
        .par_iter()
        .map(|r| {
            let image = RasterImage::load(&r.image)?;
            let tags = r.tags.as_ref().map(|t| &t.tags);
            let (_, b) = boundary_for_image(classifier, store, &image, tags, cfg, norm)?;
            let path = out_dir.join(format!("{}.png", r.id));
            b.save(&path)?;
            Ok(path)
        })
        .collect()
}
