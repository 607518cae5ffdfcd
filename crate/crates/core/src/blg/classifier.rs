use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{BatchNorm2d, Conv2d, ConvSpec, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Bottleneck residual classifier with a 1x1 conv head producing one map per
/// category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    pub stem_width: usize,
    /// Bottleneck blocks per stage.
    pub blocks: [usize; 4],
    /// Inner widths per stage; outputs are `expansion` times wider.
    pub widths: [usize; 4],
    pub expansion: usize,
    pub num_classes: usize,
    /// Keep the last stage at stride 1 with dilation 2 (output stride 16
    /// instead of 32).
    pub dilate_last: bool,
    pub input_size: usize,
}

impl Default for ClassifierSpec {
    /// 50-layer configuration.
    fn default() -> Self {
        ClassifierSpec {
            stem_width: 64,
            blocks: [3, 4, 6, 3],
            widths: [64, 128, 256, 512],
            expansion: 4,
            num_classes: 1,
            dilate_last: true,
            input_size: 352,
        }
    }
}

impl ClassifierSpec {
    pub fn tiny(num_classes: usize, input_size: usize) -> Self {
        ClassifierSpec {
            stem_width: 8,
            blocks: [1, 1, 1, 1],
            widths: [4, 8, 8, 8],
            expansion: 2,
            num_classes,
            input_size,
            ..ClassifierSpec::default()
        }
    }

    pub fn output_stride(&self) -> usize {
        if self.dilate_last {
            16
        } else {
            32
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::validation("classifier needs at least one category"));
        }
        if self.blocks.contains(&0) || self.widths.contains(&0) || self.stem_width == 0 || self.expansion == 0 {
            return Err(Error::validation("classifier widths, blocks and expansion must be positive"));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(self.output_stride()) {
            return Err(Error::shape(format!(
                "classifier input size {} is not a positive multiple of the output stride {}",
                self.input_size,
                self.output_stride()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Bottleneck {
    c1: Conv2d,
    b1: BatchNorm2d,
    c2: Conv2d,
    b2: BatchNorm2d,
    c3: Conv2d,
    b3: BatchNorm2d,
    down: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        path: &str,
        in_ch: usize,
        width: usize,
        out_ch: usize,
        stride: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let conv = |store: &mut ParamStore, name: &str, i, o, k: usize, spec, rng: &mut ChaCha8Rng| {
            Conv2d::new(store, &format!("{path}.{name}"), i, o, (k, k), spec, false, rng)
        };
        let one = ConvSpec { stride: 1, pad: (0, 0), dilation: 1 };
        let c1 = conv(store, "conv1", in_ch, width, 1, one, rng);
        let b1 = BatchNorm2d::new(store, &format!("{path}.bn1"), width);
        let mid = ConvSpec {
            stride,
            pad: (dilation, dilation),
            dilation,
        };
        let c2 = conv(store, "conv2", width, width, 3, mid, rng);
        let b2 = BatchNorm2d::new(store, &format!("{path}.bn2"), width);
        let c3 = conv(store, "conv3", width, out_ch, 1, one, rng);
        let b3 = BatchNorm2d::new(store, &format!("{path}.bn3"), out_ch);
        let down = (stride != 1 || in_ch != out_ch).then(|| {
            let spec = ConvSpec { stride, pad: (0, 0), dilation: 1 };
            (
                conv(store, "downsample.conv", in_ch, out_ch, 1, spec, rng),
                BatchNorm2d::new(store, &format!("{path}.downsample.bn"), out_ch),
            )
        });
        Bottleneck {
            c1,
            b1,
            c2,
            b2,
            c3,
            b3,
            down,
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.c1.forward(g, x);
        let h = self.b1.forward(g, h);
        let h = g.relu(h);
        let h = self.c2.forward(g, h);
        let h = self.b2.forward(g, h);
        let h = g.relu(h);
        let h = self.c3.forward(g, h);
        let h = self.b3.forward(g, h);
        let skip = match &self.down {
            Some((c, b)) => {
                let s = c.forward(g, x);
                b.forward(g, s)
            }
            None => x,
        };
        let y = g.add(h, skip);
        g.relu(y)
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    spec: ClassifierSpec,
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    stages: Vec<Vec<Bottleneck>>,
    head: Conv2d,
}

impl Classifier {
    pub fn new(spec: &ClassifierSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let stem_spec = ConvSpec { stride: 2, pad: (3, 3), dilation: 1 };
        let stem = Conv2d::new(store, "blg.stem.conv", 3, spec.stem_width, (7, 7), stem_spec, false, rng);
        let stem_bn = BatchNorm2d::new(store, "blg.stem.bn", spec.stem_width);
        let mut in_ch = spec.stem_width;
        let mut stages = Vec::new();
        for s in 0..4 {
            let out_ch = spec.widths[s] * spec.expansion;
            let (stride, dilation) = match s {
                0 => (1, 1),
                3 if spec.dilate_last => (1, 2),
                _ => (2, 1),
            };
            let blocks = (0..spec.blocks[s])
                .map(|b| {
                    let block = Bottleneck::new(
                        store,
                        &format!("blg.layer{}.{b}", s + 1),
                        in_ch,
                        spec.widths[s],
                        out_ch,
                        if b == 0 { stride } else { 1 },
                        dilation,
                        rng,
                    );
                    in_ch = out_ch;
                    block
                })
                .collect();
            stages.push(blocks);
        }
        let head = Conv2d::same(store, "blg.head", in_ch, spec.num_classes, 1, rng);
        Ok(Classifier {
            spec: spec.clone(),
            stem,
            stem_bn,
            stages,
            head,
        })
    }

    pub fn build(spec: &ClassifierSpec, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Self::new(spec, &mut store, &mut rng)?;
        Ok((c, store))
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn head_keys(&self) -> (&str, Option<&str>) {
        (self.head.weight_key(), self.head.bias_key())
    }

    /// Class localisation maps `[N, C, H/s, W/s]`.
    pub fn forward(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let [_, c, h, w] = g.shape(image);
        let s = self.spec.output_stride();
        if c != 3 || h % s != 0 || w % s != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "classifier expects [N, 3, H, W] with H, W multiples of {s}, got {:?}",
                g.shape(image)
            )));
        }
        let x = self.stem.forward(g, image);
        let x = self.stem_bn.forward(g, x);
        let x = g.relu(x);
        let mut x = g.max_pool(x, 3, 2, 1);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(g, x);
            }
        }
        Ok(self.head.forward(g, x))
    }

    /// Inference-mode maps for a batch of normalised images.
    pub fn maps(&self, store: &ParamStore, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(store, false);
        let x = g.constant(images.clone());
        let m = self.forward(&mut g, x)?;
        Ok(g.value(m).clone())
    }
}
