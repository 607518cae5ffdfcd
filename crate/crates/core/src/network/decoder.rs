use rand_chacha::ChaCha8Rng;

use super::encoder::FeaturePyramid;
use crate::autograd::{Conv2d, Graph, ParamStore, Var};

/// Top-down path from `F_5` with skip connections and per-stage guidance.
#[derive(Clone, Debug)]
pub struct Decoder {
    stages: Vec<Conv2d>,
    head: Conv2d,
    guidance: usize,
}

impl Decoder {
    /// `guidance` is the number of one-channel maps concatenated per stage.
    pub fn new(
        store: &mut ParamStore,
        encoder_widths: [usize; 5],
        widths: [usize; 4],
        guidance: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut prev = encoder_widths[4];
        let stages = (0..4)
            .map(|i| {
                let skip = encoder_widths[3 - i];
                let conv = Conv2d::same(store, &format!("decoder.stage{}", i + 1), prev + skip + guidance, widths[i], 3, rng);
                prev = widths[i];
                conv
            })
            .collect();
        let head = Conv2d::same(store, "decoder.head", prev, 1, 3, rng);
        Decoder { stages, head, guidance }
    }

    /// Returns the `[N, 1, H, W]` saliency probabilities.
    pub fn forward(&self, g: &mut Graph, pyramid: &FeaturePyramid, guidance: &[Var]) -> Var {
        assert_eq!(guidance.len(), self.guidance, "decoder guidance count");
        let mut x = pyramid.f[4];
        for (i, conv) in self.stages.iter().enumerate() {
            let skip = pyramid.f[3 - i];
            let [_, _, h, w] = g.shape(skip);
            let up = g.resize(x, h, w);
            let mut parts = vec![up, skip];
            for &m in guidance {
                let r = if g.shape(m)[2..] == [h, w] { m } else { g.resize(m, h, w) };
                parts.push(r);
            }
            let cat = g.concat(&parts);
            let y = conv.forward(g, cat);
            x = g.relu(y);
        }
        let logits = self.head.forward(g, x);
        g.sigmoid(logits)
    }
}
