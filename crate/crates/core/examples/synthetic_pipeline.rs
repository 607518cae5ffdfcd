//! The full two-phase workflow on a generated shapes dataset: train the
//! boundary-label classifier, write boundary pseudo-labels, train the
//! saliency network, predict the test split and score it.
//!
//! ```text
//! cargo run --release --example synthetic_pipeline -- [workdir] [steps]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use scribsal::dataset::load_manifest;
use scribsal::metrics::{evaluate_pairs, EvalPair};
use scribsal::pipeline::{self, Predictor, TrainConfig, TrainOptions};
use scribsal::raster::{RasterImage, SaliencyMap};
use scribsal::synthetic::write_synthetic_dataset;

fn main() -> scribsal::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("scribsal-shapes"));
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let size = 64;

    let manifest_path = write_synthetic_dataset(&dir, 8, 4, size, 11)?;
    let manifest = load_manifest(&manifest_path)?;
    let mut cfg = TrainConfig::demo(size);
    cfg.epochs = steps.div_ceil(4);
    cfg.max_steps = Some(steps);

    let t = Instant::now();
    let (blg_ckpt, trained) = pipeline::blg_train(&manifest, &cfg)?;
    println!("classifier: {} steps, loss {:.4} -> {:.4} ({:.1?})", trained.losses.len(), trained.losses[0], trained.losses.last().unwrap(), t.elapsed());
    let labels = dir.join("boundary");
    pipeline::blg_generate(&manifest, &blg_ckpt, None, &labels)?;

    let t = Instant::now();
    let out = pipeline::train(&manifest, Some(&labels), &cfg, TrainOptions {
        log_path: Some(dir.join("train_log.jsonl")),
        ..Default::default()
    })?;
    let h = &out.state.loss_history;
    println!("saliency: {} steps in {:.1?}", out.state.step, t.elapsed());
    println!("epoch-mean L_total: first {:.4}, last {:.4}", h[0].l_total, h.last().unwrap().l_total);

    let predictor = Predictor { config: cfg.clone(), net: out.net, store: out.store };
    let pairs = manifest
        .samples
        .iter()
        .map(|r| {
            let image = RasterImage::load(&r.image)?;
            let gt = SaliencyMap::load_binary(dir.join("gt").join(format!("{}.png", r.id)))?;
            EvalPair::new(format!("{}:{}", r.split, r.id), predictor.predict(&image)?, gt)
        })
        .collect::<scribsal::Result<Vec<_>>>()?;
    let (train, test): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| p.id.starts_with("train"));
    for (name, set) in [("train", &train), ("test", &test)] {
        let s = evaluate_pairs(set).summary;
        println!("{name}: S {:.3}  E_max {:.3}  F_max {:.3}  MAE {:.3}", s.s_measure, s.e_max, s.f_max, s.mae);
    }
    Ok(())
}
