use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::checkpoint::{load_into, Checkpoint, CheckpointKind, RunState};
use super::config::TrainConfig;
use crate::autograd::{sigmoid, Adam, Graph, ParamStore, Tensor};
use crate::blg::BoundaryLabelMap;
use crate::dataset::{DatasetManifest, ScribbleMask, Transform};
use crate::error::{Error, Result};
use crate::losses::{saliency_gate, total_loss, GateMode, LossBreakdown, LossInputs};
use crate::network::{NetInput, SbaNet};
use crate::raster::{RasterImage, SaliencyMap};

/// One training example at its original resolution.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub id: String,
    pub image: RasterImage,
    pub scribble: ScribbleMask,
    pub boundary: Option<BoundaryLabelMap>,
}

/// Loads the manifest's train records; boundary labels are read from
/// `<boundary_dir>/<id>.png` when given.
pub fn load_training_samples(manifest: &DatasetManifest, boundary_dir: Option<&Path>) -> Result<Vec<TrainSample>> {
    let records: Vec<_> = manifest.train().collect();
    if records.is_empty() {
        return Err(Error::validation("manifest has no train records"));
    }
    if let Some(dir) = boundary_dir {
        let missing: Vec<&str> = records
            .iter()
            .filter(|r| !dir.join(format!("{}.png", r.id)).is_file())
            .map(|r| r.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::validation(format!(
                "missing boundary labels in {} for {} samples: {}",
                dir.display(),
                missing.len(),
                missing.join(", ")
            )));
        }
    }
    records
        .par_iter()
        .map(|r| {
            let image = RasterImage::load(&r.image)?;
            let path = r
                .scribble
                .as_ref()
                .ok_or_else(|| Error::validation(format!("train record `{}` has no scribble", r.id)))?;
            let scribble = ScribbleMask::load(path)?;
            let boundary = boundary_dir
                .map(|d| BoundaryLabelMap::load(d.join(format!("{}.png", r.id))))
                .transpose()?;
            let dims = (image.width(), image.height());
            let mismatch = (scribble.width(), scribble.height()) != dims
                || boundary.as_ref().is_some_and(|b| (b.width, b.height) != dims);
            if mismatch {
                return Err(Error::validation(format!("`{}`: image, scribble and boundary sizes differ", r.id)));
            }
            Ok(TrainSample {
                id: r.id.clone(),
                image,
                scribble,
                boundary,
            })
        })
        .collect()
}

/// Where and how a run persists its progress.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// JSON-lines loss log, one object per step.
    pub log_path: Option<PathBuf>,
    /// Initial weights, e.g. a pretrained encoder.
    pub init: Option<ParamStore>,
    /// Accept `init` stores that cover only part of the model.
    pub partial_init: bool,
    /// Continue a previous run from its checkpoint.
    pub resume: Option<Checkpoint>,
}

pub struct TrainOutcome {
    pub net: SbaNet,
    pub store: ParamStore,
    pub adam: Adam,
    pub state: RunState,
    /// Loss of every step taken in this call.
    pub steps: Vec<LossBreakdown>,
    pub config_hash: String,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut c = Checkpoint::new(CheckpointKind::Saliency, cfg, self.config_hash.clone(), self.store.clone())
            .with_optimizer(&self.adam);
        c.meta.run_state = self.state.clone();
        c
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    step: u64,
    epoch: u64,
    #[serde(flatten)]
    loss: &'a LossBreakdown,
}

fn seed_for(seed: u64, step: u64, slot: usize) -> u64 {
    seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (slot as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x2545_f491_4f6c_dd1d)));
    order
}

struct Prepared {
    image: RasterImage,
    scribble: ScribbleMask,
    boundary: Option<BoundaryLabelMap>,
}

fn prepare(s: &TrainSample, cfg: &TrainConfig, seed: u64) -> Result<Prepared> {
    let t = Transform::draw(&cfg.augment, s.image.width(), s.image.height(), seed);
    let boundary = match &s.boundary {
        Some(b) => Some(BoundaryLabelMap::from_plane(&t.apply_plane(&b.to_plane())?, b.window)?),
        None => None,
    };
    Ok(Prepared {
        image: t.apply_image(&s.image)?,
        scribble: t.apply_mask(&s.scribble)?,
        boundary,
    })
}

fn to_map(t: &Tensor, n: usize) -> SaliencyMap {
    let [_, _, h, w] = t.shape();
    SaliencyMap {
        width: w,
        height: h,
        data: t.plane(n, 0).to_vec(),
    }
}

/// Runs the saliency training schedule over in-memory samples.
///
/// Steps are numbered globally; the batch composition and augmentation of
/// step `s` depend only on the seed and `s`, so a resumed run continues
/// exactly where it stopped. `on_step` sees every step's loss.
pub fn train_samples(
    samples: &[TrainSample],
    cfg: &TrainConfig,
    opts: TrainOptions,
    mut on_step: impl FnMut(u64, &LossBreakdown),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::validation("no training samples"));
    }
    let needs_boundary = cfg.network.ablation.has_boundary();
    if needs_boundary {
        let missing: Vec<&str> = samples.iter().filter(|s| s.boundary.is_none()).map(|s| s.id.as_str()).collect();
        if !missing.is_empty() {
            return Err(Error::validation(format!("missing boundary labels for: {}", missing.join(", "))));
        }
    }
    if cfg.loss.structure.gate == GateMode::InitialSaliency && !cfg.network.ablation.das {
        return Err(Error::validation("the initial-saliency gate needs the aggregation branch (das = true)"));
    }
    let config_hash = cfg.hash();
    let (net, mut store) = SbaNet::build(&cfg.network, cfg.seed)?;
    if let Some(init) = &opts.init {
        let r = load_into(&mut store, init, !opts.partial_init)?;
        log::info!("initialised {} tensors ({} missing, {} ignored)", r.loaded.len(), r.missing.len(), r.unexpected.len());
    }
    let (mut adam, mut state) = match &opts.resume {
        Some(ckpt) => {
            ckpt.expect_kind(CheckpointKind::Saliency)?;
            if !cfg.resumes(&ckpt.config::<TrainConfig>()?) {
                return Err(Error::validation("resume checkpoint was written with a different configuration"));
            }
            load_into(&mut store, &ckpt.store, true)?;
            let adam = ckpt.optimizer().unwrap_or_else(|| Adam::new(cfg.optimizer));
            (adam, ckpt.meta.run_state.clone())
        }
        None => (Adam::new(cfg.optimizer), RunState::default()),
    };
    let mut log = match &opts.log_path {
        Some(p) => {
            if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(opts.resume.is_some())
                .write(true)
                .truncate(opts.resume.is_none())
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            Some((std::io::BufWriter::new(f), p.clone()))
        }
        None => None,
    };
    let save = |store: &ParamStore, adam: &Adam, state: &RunState, name: &str| -> Result<()> {
        if let Some(dir) = &opts.checkpoint_dir {
            let mut c = Checkpoint::new(CheckpointKind::Saliency, cfg, config_hash.clone(), store.clone()).with_optimizer(adam);
            c.meta.run_state = state.clone();
            c.save(&dir.join(name))?;
        }
        Ok(())
    };

    let n = samples.len();
    let per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let mut total_steps = cfg.epochs * per_epoch;
    if let Some(m) = cfg.max_steps {
        total_steps = total_steps.min(m);
    }
    if state.step == 0 {
        save(&store, &adam, &state, "initial.safetensors")?;
    }
    let mut taken = Vec::new();
    let mut epoch_sum = LossBreakdown::default();
    let mut epoch_steps = 0u64;
    let mut order = Vec::new();
    let mut order_epoch = u64::MAX;
    while state.step < total_steps {
        let step = state.step;
        let epoch = step / per_epoch;
        if epoch != order_epoch {
            order = epoch_order(n, cfg.seed, epoch);
            order_epoch = epoch;
        }
        let pos = (step % per_epoch) as usize * cfg.batch_size;
        let batch: Vec<usize> = order[pos..(pos + cfg.batch_size).min(n)].to_vec();
        let prepared = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| prepare(&samples[i], cfg, seed_for(cfg.seed, step, slot)))
            .collect::<Result<Vec<_>>>()?;
        let images: Vec<RasterImage> = prepared.iter().map(|p| p.image.clone()).collect();
        let input = NetInput::from_images(&images, &cfg.normalization, &cfg.network.canny)?;

        let (loss, grads, updates) = {
            let mut g = Graph::new(&store, true);
            let out = net.forward(&mut g, &input)?;
            let sal = g.value(out.saliency).clone();
            let bnd = out.boundary.map(|b| g.value(b).clone());
            let init = out.initial.map(|v| g.value(v).clone());
            let bs = prepared.len();
            let scale = 1.0 / bs as f64;
            let mut gs = Tensor::zeros(sal.shape());
            let mut gb = bnd.as_ref().map(|b| Tensor::zeros(b.shape()));
            let mut sum = LossBreakdown::default();
            for (k, p) in prepared.iter().enumerate() {
                let s_map = to_map(&sal, k);
                let b_map = bnd.as_ref().map(|b| to_map(b, k));
                let intensity = p.image.intensity();
                let gate = match (cfg.loss.structure.gate, &init) {
                    (GateMode::InitialSaliency, Some(f)) => {
                        let m = to_map(&f.map(sigmoid), k).resize(s_map.width, s_map.height);
                        Some(saliency_gate(&m, cfg.loss.structure.gate_dilation))
                    }
                    _ => None,
                };
                let boundary = match (&b_map, &p.boundary) {
                    (Some(m), Some(l)) => Some((m, l)),
                    _ => None,
                };
                let t = total_loss(
                    &LossInputs {
                        saliency: &s_map,
                        boundary,
                        scribble: &p.scribble,
                        intensity: &intensity,
                        gate: gate.as_deref(),
                        boundary_weights: None,
                    },
                    &cfg.loss,
                )?;
                sum.add(&t.breakdown);
                let plane = s_map.width * s_map.height;
                for (d, v) in gs.data_mut()[k * plane..(k + 1) * plane].iter_mut().zip(&t.grad_saliency) {
                    *d = v * scale;
                }
                if let (Some(gb), Some(v)) = (gb.as_mut(), &t.grad_boundary) {
                    for (d, v) in gb.data_mut()[k * plane..(k + 1) * plane].iter_mut().zip(v) {
                        *d = v * scale;
                    }
                }
            }
            let loss = LossBreakdown {
                l_b: sum.l_b * scale,
                l_gs: sum.l_gs * scale,
                l_pce: sum.l_pce * scale,
                l_total: sum.l_total * scale,
            };
            if !loss.l_total.is_finite() || !gs.is_finite() || gb.as_ref().is_some_and(|t| !t.is_finite()) {
                let ids: Vec<&str> = batch.iter().map(|&i| samples[i].id.as_str()).collect();
                return Err(Error::Diverged {
                    step,
                    detail: format!(
                        "L_b={} L_gs={} L_pce={} L_total={} on batch [{}]",
                        loss.l_b,
                        loss.l_gs,
                        loss.l_pce,
                        loss.l_total,
                        ids.join(", ")
                    ),
                });
            }
            let mut roots = vec![g.external_scalar(out.saliency, loss.l_gs + loss.l_pce, gs)];
            if let (Some(b), Some(gb)) = (out.boundary, gb) {
                roots.push(g.external_scalar(b, loss.l_b, gb));
            }
            let root = g.sum_scalars(&roots);
            let grads = g.backward(root).into_params();
            (loss, grads, g.stat_updates().to_vec())
        };
        let grads = clip(grads, cfg.grad_clip);
        if cfg.warmup_steps > 0 {
            let f = ((step + 1) as f64 / cfg.warmup_steps as f64).min(1.0);
            adam.set_lr(cfg.optimizer.lr * f);
        }
        adam.step(&mut store, &grads);
        store.apply_stat_updates(&updates, cfg.bn_momentum);

        state.step += 1;
        epoch_sum.add(&loss);
        epoch_steps += 1;
        if let Some((w, p)) = log.as_mut() {
            let line = serde_json::to_string(&LogLine { step, epoch, loss: &loss }).expect("log line serialises");
            writeln!(w, "{line}").map_err(|e| Error::io(p.as_path(), e))?;
        }
        on_step(step, &loss);
        taken.push(loss);

        let epoch_done = state.step % per_epoch == 0 || state.step == total_steps;
        if epoch_done {
            let k = 1.0 / epoch_steps as f64;
            state.loss_history.push(LossBreakdown {
                l_b: epoch_sum.l_b * k,
                l_gs: epoch_sum.l_gs * k,
                l_pce: epoch_sum.l_pce * k,
                l_total: epoch_sum.l_total * k,
            });
            state.epoch = epoch + 1;
            epoch_sum = LossBreakdown::default();
            epoch_steps = 0;
            if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
                save(&store, &adam, &state, &format!("epoch_{:04}.safetensors", state.epoch))?;
            }
        }
    }
    if let Some((w, p)) = log.as_mut() {
        w.flush().map_err(|e| Error::io(p.as_path(), e))?;
    }
    save(&store, &adam, &state, "last.safetensors")?;
    Ok(TrainOutcome {
        net,
        store,
        adam,
        state,
        steps: taken,
        config_hash,
    })
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
fn clip(mut grads: BTreeMap<String, Tensor>, max_norm: Option<f64>) -> BTreeMap<String, Tensor> {
    let Some(max) = max_norm else { return grads };
    let norm = grads.values().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max {
        let k = max / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    grads
}

/// Loads samples from a manifest and trains.
pub fn train(
    manifest: &DatasetManifest,
    boundary_dir: Option<&Path>,
    cfg: &TrainConfig,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    let dir = if cfg.network.ablation.has_boundary() {
        Some(boundary_dir.ok_or_else(|| {
            Error::validation("this configuration uses boundary supervision; pass a boundary-label directory")
        })?)
    } else {
        None
    };
    let samples = load_training_samples(manifest, dir)?;
    train_samples(&samples, cfg, opts, |step, l| {
        log::debug!("step {step}: L_total={:.5}", l.l_total);
    })
}
