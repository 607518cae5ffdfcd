use std::path::{Path, PathBuf};

use super::checkpoint::{load_into, Checkpoint, CheckpointKind};
use super::config::TrainConfig;
use crate::blg::{generate_boundary_labels, train_classifier, BoundaryConfig, Classifier, TrainedClassifier};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, images_by_id, MetricReport};
use crate::network::{NetInput, SbaNet};
use crate::raster::{RasterImage, SaliencyMap};

/// Trains the boundary-label classifier on the manifest's tagged train
/// records. The class count is taken from the manifest.
pub fn blg_train(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<(Checkpoint, TrainedClassifier)> {
    let mut cfg = cfg.clone();
    cfg.blg.classifier.num_classes = manifest.categories.len();
    cfg.blg.classifier.validate()?;
    let trained = train_classifier(manifest, &cfg.blg.classifier, &cfg.blg.train, &cfg.normalization)?;
    let mut ckpt = Checkpoint::new(CheckpointKind::Blg, &cfg, cfg.hash(), trained.store.clone());
    ckpt.meta.run_state.step = trained.losses.len() as u64;
    Ok((ckpt, trained))
}

/// Rebuilds the classifier stored in a BLG checkpoint.
pub fn classifier_from_checkpoint(ckpt: &Checkpoint) -> Result<(TrainConfig, Classifier, crate::autograd::ParamStore)> {
    ckpt.expect_kind(CheckpointKind::Blg)?;
    let cfg: TrainConfig = ckpt.config()?;
    let (classifier, mut store) = Classifier::build(&cfg.blg.classifier, 0)?;
    load_into(&mut store, &ckpt.store, true)?;
    Ok((cfg, classifier, store))
}

/// Writes `<out_dir>/<id>.png` boundary labels for every train record.
pub fn blg_generate(
    manifest: &DatasetManifest,
    ckpt: &Checkpoint,
    boundary: Option<&BoundaryConfig>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (cfg, classifier, store) = classifier_from_checkpoint(ckpt)?;
    if classifier.spec().num_classes != manifest.categories.len() {
        return Err(Error::validation(format!(
            "classifier was trained on {} categories, manifest has {}",
            classifier.spec().num_classes,
            manifest.categories.len()
        )));
    }
    let bcfg = boundary.copied().unwrap_or(cfg.blg.boundary);
    bcfg.validate()?;
    generate_boundary_labels(manifest, &classifier, &store, &bcfg, &cfg.normalization, out_dir)
}

/// A saliency model restored from a checkpoint, ready for inference.
pub struct Predictor {
    pub config: TrainConfig,
    pub net: SbaNet,
    pub store: crate::autograd::ParamStore,
}

impl Predictor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Saliency)?;
        let config: TrainConfig = ckpt.config()?;
        let (net, mut store) = SbaNet::build(&config.network, config.seed)?;
        load_into(&mut store, &ckpt.store, true)?;
        Ok(Predictor { config, net, store })
    }

    /// Saliency at the image's own resolution: predicted at the training
    /// size, then bilinearly resized back.
    pub fn predict(&self, image: &RasterImage) -> Result<SaliencyMap> {
        let s = self.config.input_size;
        let input = NetInput::from_images(&[image.resize(s, s)], &self.config.normalization, &self.config.network.canny)?;
        let (sal, _) = self.net.predict(&self.store, &input)?.remove(0);
        Ok(sal.resize(image.width(), image.height()))
    }
}

#[derive(Debug, Default)]
pub struct InferReport {
    pub written: Vec<PathBuf>,
    /// Inputs that could not be processed, with the reason.
    pub failed: Vec<(PathBuf, String)>,
}

/// Writes one 8-bit `<id>.png` per image in `image_dir`.
pub fn infer(predictor: &Predictor, image_dir: &Path, out_dir: &Path) -> Result<InferReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut report = InferReport::default();
    for (id, path) in images_by_id(image_dir)? {
        let result = RasterImage::load(&path).and_then(|img| predictor.predict(&img)).and_then(|s| {
            let out = out_dir.join(format!("{id}.png"));
            s.save(&out).map(|_| out)
        });
        match result {
            Ok(out) => report.written.push(out),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.failed.push((path, e.to_string()));
            }
        }
    }
    Ok(report)
}

/// Evaluates predictions against ground truth, writing the JSON report and
/// a `curves.csv` next to it.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path, report_path: &Path) -> Result<MetricReport> {
    let report = evaluate_dataset(pred_dir, gt_dir)?;
    if let Some(d) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    report.save_json(report_path)?;
    report.write_curves_csv(&report_path.with_file_name("curves.csv"))?;
    Ok(report)
}

/// Writes `pr_curve.csv` (threshold, precision, recall) and `f_curve.csv`
/// (threshold, f) from a saved report.
pub fn export_curves(report: &MetricReport, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let c = &report.curves;
    let pr = out_dir.join("pr_curve.csv");
    let f = out_dir.join("f_curve.csv");
    let csv_err = |p: &Path, e: csv::Error| Error::Parse {
        location: p.display().to_string(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&pr).map_err(|e| csv_err(&pr, e))?;
    w.write_record(["threshold", "precision", "recall"]).map_err(|e| csv_err(&pr, e))?;
    for k in 0..c.threshold.len() {
        w.write_record([c.threshold[k].to_string(), c.precision[k].to_string(), c.recall[k].to_string()])
            .map_err(|e| csv_err(&pr, e))?;
    }
    w.flush().map_err(|e| Error::io(&pr, e))?;
    let mut w = csv::Writer::from_path(&f).map_err(|e| csv_err(&f, e))?;
    w.write_record(["threshold", "f"]).map_err(|e| csv_err(&f, e))?;
    for k in 0..c.threshold.len() {
        w.write_record([c.threshold[k].to_string(), c.f[k].to_string()]).map_err(|e| csv_err(&f, e))?;
    }
    w.flush().map_err(|e| Error::io(&f, e))?;
    Ok((pr, f))
}
