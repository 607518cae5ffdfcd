use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// Named trainable parameters plus non-trainable buffers (batch-norm running
/// statistics). Keys are dotted module paths such as `encoder.stage1.conv0.weight`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Tensor) {
        let key = key.into();
        assert!(!self.buffers.contains_key(&key), "`{key}` already registered as a buffer");
        self.params.insert(key, value);
    }

    pub fn insert_buffer(&mut self, key: impl Into<String>, value: Tensor) {
        let key = key.into();
        assert!(!self.params.contains_key(&key), "`{key}` already registered as a parameter");
        self.buffers.insert(key, value);
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.params.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor> {
        self.params.get_mut(key)
    }

    pub fn buffer(&self, key: &str) -> Option<&Tensor> {
        self.buffers.get(key)
    }

    pub fn buffer_mut(&mut self, key: &str) -> Option<&mut Tensor> {
        self.buffers.get_mut(key)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    /// Total number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Applies queued batch-norm running-statistic updates.
    pub fn apply_stat_updates(&mut self, updates: &[super::StatUpdate], momentum: f64) {
        for u in updates {
            for (key, batch) in [(&u.mean_key, &u.batch_mean), (&u.var_key, &u.batch_var_unbiased)] {
                let buf = self
                    .buffers
                    .get_mut(key)
                    .unwrap_or_else(|| panic!("missing buffer `{key}`"));
                for (r, b) in buf.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
            }
        }
    }
}

/// He-normal initialisation for a weight with the given fan-in.
pub fn kaiming_normal(shape: [usize; 4], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| std * standard_normal(rng))
}

/// Box-Muller standard normal draw.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
