use rand_chacha::ChaCha8Rng;

use crate::autograd::{Conv2d, Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Five feature maps at strides 1, 2, 4, 8, 16.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub f: [Var; 5],
}

/// Plain 3x3 conv + ReLU stages separated by 2x2 max pooling.
#[derive(Clone, Debug)]
pub struct Encoder {
    stages: Vec<Vec<Conv2d>>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        widths: [usize; 5],
        depths: [usize; 5],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut in_ch = 3;
        let stages = (0..5)
            .map(|s| {
                (0..depths[s])
                    .map(|l| {
                        let conv = Conv2d::same(
                            store,
                            &format!("encoder.stage{}.conv{}", s + 1, l + 1),
                            in_ch,
                            widths[s],
                            3,
                            rng,
                        );
                        in_ch = widths[s];
                        conv
                    })
                    .collect()
            })
            .collect();
        Encoder { stages }
    }

    pub fn widths(&self) -> [usize; 5] {
        std::array::from_fn(|s| self.stages[s].last().unwrap().out_channels())
    }

    pub fn forward(&self, g: &mut Graph, image: Var) -> Result<FeaturePyramid> {
        let [_, c, h, w] = g.shape(image);
        if c != 3 {
            return Err(Error::shape(format!("encoder expects 3 input channels, got {c}")));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("input size {w}x{h} is not a positive multiple of 16")));
        }
        let mut x = image;
        let mut f = [image; 5];
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                x = g.max_pool(x, 2, 2, 0);
            }
            for conv in stage {
                let y = conv.forward(g, x);
                x = g.relu(y);
            }
            f[s] = x;
        }
        Ok(FeaturePyramid { f })
    }
}
