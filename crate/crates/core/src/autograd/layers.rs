//! Parameterised building blocks. Each layer registers its tensors in a
//! [`ParamStore`] at construction and only keeps their keys.

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::kernels::ConvSpec;
use super::params::{kaiming_normal, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: String,
    bias: Option<String>,
    spec: ConvSpec,
    in_channels: usize,
    out_channels: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        spec: ConvSpec,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel.0, kernel.1];
        let weight = format!("{path}.weight");
        store.insert(&weight, kaiming_normal(shape, in_channels * kernel.0 * kernel.1, rng));
        let bias = bias.then(|| {
            let key = format!("{path}.bias");
            store.insert(&key, Tensor::zeros([1, out_channels, 1, 1]));
            key
        });
        Conv2d {
            weight,
            bias,
            spec,
            in_channels,
            out_channels,
        }
    }

    /// Square kernel, stride 1, "same" padding, with bias.
    pub fn same(
        store: &mut ParamStore,
        path: &str,
        in_channels: usize,
        out_channels: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::new(store, path, in_channels, out_channels, (k, k), ConvSpec::same(k, k), true, rng)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(&self.weight);
        let b = self.bias.as_deref().map(|k| g.param(k));
        g.conv2d(x, w, b, self.spec)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weight_key(&self) -> &str {
        &self.weight
    }

    pub fn bias_key(&self) -> Option<&str> {
        self.bias.as_deref()
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    gamma: String,
    beta: String,
    running_mean: String,
    running_var: String,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, path: &str, channels: usize) -> Self {
        let gamma = format!("{path}.weight");
        let beta = format!("{path}.bias");
        let running_mean = format!("{path}.running_mean");
        let running_var = format!("{path}.running_var");
        store.insert(&gamma, Tensor::full([1, channels, 1, 1], 1.0));
        store.insert(&beta, Tensor::zeros([1, channels, 1, 1]));
        store.insert_buffer(&running_mean, Tensor::zeros([1, channels, 1, 1]));
        store.insert_buffer(&running_var, Tensor::full([1, channels, 1, 1], 1.0));
        BatchNorm2d {
            gamma,
            beta,
            running_mean,
            running_var,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.batch_norm(x, gamma, beta, &self.running_mean, &self.running_var, self.eps)
    }
}
