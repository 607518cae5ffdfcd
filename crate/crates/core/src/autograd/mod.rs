//! A small reverse-mode automatic differentiation engine over NCHW `f64`
//! tensors, sufficient for the convolutional models in this crate.

mod graph;
pub mod kernels;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{sigmoid, Gradients, Graph, StatUpdate, Var};
pub use kernels::ConvSpec;
pub use layers::{BatchNorm2d, Conv2d};
pub use optim::{Adam, AdamConfig};
pub use params::{kaiming_normal, standard_normal, ParamStore};
pub use tensor::Tensor;

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}
