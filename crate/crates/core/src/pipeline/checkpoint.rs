//! Parameter checkpoints in the safetensors format.
//!
//! Tensors are stored as `f64` under `param/<key>`, `buffer/<key>`,
//! `adam.m/<key>` and `adam.v/<key>`. A single metadata entry `scribsal`
//! holds a JSON [`CheckpointMeta`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, AdamConfig, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

pub const FORMAT_VERSION: u32 = 1;
const META_KEY: &str = "scribsal";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Saliency,
    Blg,
}

/// Progress of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub step: u64,
    pub epoch: u64,
    /// Best evaluation score seen so far, if the run evaluates.
    pub best_metric: Option<f64>,
    /// Mean loss per completed epoch.
    pub loss_history: Vec<LossBreakdown>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: CheckpointKind,
    /// The full run configuration as JSON.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub run_state: RunState,
    pub optimizer: Option<OptimizerMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub config: AdamConfig,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub store: ParamStore,
    pub adam_m: BTreeMap<String, Tensor>,
    pub adam_v: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: &impl Serialize, config_hash: String, store: ParamStore) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                kind,
                config: serde_json::to_value(config).expect("config serialises"),
                config_hash,
                run_state: RunState::default(),
                optimizer: None,
            },
            store,
            adam_m: BTreeMap::new(),
            adam_v: BTreeMap::new(),
        }
    }

    pub fn with_optimizer(mut self, adam: &Adam) -> Self {
        let (m, v) = adam.moments();
        self.adam_m = m.clone();
        self.adam_v = v.clone();
        self.meta.optimizer = Some(OptimizerMeta {
            config: *adam.config(),
            steps: adam.steps(),
        });
        self
    }

    pub fn optimizer(&self) -> Option<Adam> {
        self.meta
            .optimizer
            .as_ref()
            .map(|o| Adam::restore(o.config, o.steps, self.adam_m.clone(), self.adam_v.clone()))
    }

    pub fn config<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.meta.config.clone())
            .map_err(|e| Error::Checkpoint(format!("embedded configuration does not parse: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let groups: [(&str, &BTreeMap<String, Tensor>); 4] = [
            ("param", self.store.params()),
            ("buffer", self.store.buffers()),
            ("adam.m", &self.adam_m),
            ("adam.v", &self.adam_v),
        ];
        let mut raw: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (prefix, map) in groups {
            for (k, t) in map {
                let bytes = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                raw.push((format!("{prefix}/{k}"), t.shape().to_vec(), bytes));
            }
        }
        let views: Vec<(String, TensorView)> = raw
            .iter()
            .map(|(name, shape, bytes)| {
                let view = TensorView::new(Dtype::F64, shape.clone(), bytes).expect("shape matches byte length");
                (name.clone(), view)
            })
            .collect();
        let meta = HashMap::from([(
            META_KEY.to_string(),
            serde_json::to_string(&self.meta).expect("metadata serialises"),
        )]);
        safetensors::serialize(views, &Some(meta)).expect("safetensors serialisation")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, md) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let text = md
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::Checkpoint("missing scribsal metadata".into()))?;
        let meta: CheckpointMeta =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                meta.format_version
            )));
        }
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut store = ParamStore::new();
        let (mut adam_m, mut adam_v) = (BTreeMap::new(), BTreeMap::new());
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F64 || view.shape().len() != 4 {
                return Err(Error::Checkpoint(format!("tensor `{name}` is not a 4-d f64 tensor")));
            }
            let s = view.shape();
            let data = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::from_vec([s[0], s[1], s[2], s[3]], data);
            let (prefix, key) = name
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor name `{name}`")))?;
            match prefix {
                "param" => store.insert(key, t),
                "buffer" => store.insert_buffer(key, t),
                "adam.m" => {
                    adam_m.insert(key.to_string(), t);
                }
                "adam.v" => {
                    adam_v.insert(key.to_string(), t);
                }
                _ => return Err(Error::Checkpoint(format!("unexpected tensor name `{name}`"))),
            }
        }
        Ok(Checkpoint { meta, store, adam_m, adam_v })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.meta.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.meta.kind
            )));
        }
        Ok(())
    }
}

/// Outcome of copying checkpoint tensors into a model's store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Model keys the checkpoint lacks.
    pub missing: Vec<String>,
    /// Checkpoint keys the model lacks, or with a different shape.
    pub unexpected: Vec<String>,
}

/// Copies matching parameters and buffers from `source` into `target`.
///
/// In strict mode any missing, unexpected or mis-shaped key is an error and
/// `target` is left untouched.
pub fn load_into(target: &mut ParamStore, source: &ParamStore, strict: bool) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let want: BTreeSet<(&String, bool)> = target
        .params()
        .keys()
        .map(|k| (k, true))
        .chain(target.buffers().keys().map(|k| (k, false)))
        .collect();
    let lookup = |store: &ParamStore, k: &str, param: bool| {
        if param {
            store.get(k).map(Tensor::shape)
        } else {
            store.buffer(k).map(Tensor::shape)
        }
    };
    for &(k, param) in &want {
        match lookup(source, k, param) {
            Some(s) if Some(s) == lookup(target, k, param) => report.loaded.push(k.clone()),
            Some(_) => report.unexpected.push(k.clone()),
            None => report.missing.push(k.clone()),
        }
    }
    for k in source.params().keys().chain(source.buffers().keys()) {
        if !want.contains(&(k, true)) && !want.contains(&(k, false)) {
            report.unexpected.push(k.clone());
        }
    }
    report.unexpected.sort();
    if strict && (!report.missing.is_empty() || !report.unexpected.is_empty()) {
        let show = |v: &[String]| v.iter().take(8).cloned().collect::<Vec<_>>().join(", ");
        return Err(Error::Checkpoint(format!(
            "strict load failed: {} missing [{}], {} unexpected or mis-shaped [{}]",
            report.missing.len(),
            show(&report.missing),
            report.unexpected.len(),
            show(&report.unexpected)
        )));
    }
    for k in &report.loaded {
        if let Some(t) = source.get(k) {
            *target.get_mut(k).expect("key checked") = t.clone();
        } else if let Some(t) = source.buffer(k) {
            *target.buffer_mut(k).expect("key checked") = t.clone();
        }
    }
    Ok(report)
}
