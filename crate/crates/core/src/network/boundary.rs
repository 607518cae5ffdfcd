use rand_chacha::ChaCha8Rng;

use super::config::JauMode;
use crate::autograd::{BatchNorm2d, Conv2d, ConvSpec, Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Intermediate values of one attention unit.
#[derive(Clone, Copy, Debug)]
pub struct JauParts {
    /// Output of conv -> ReLU -> BN.
    pub refined: Var,
    /// `[N, C, 1, 1]` channel gate.
    pub channel: Option<Var>,
    /// `[N, 1, H, W]` spatial gate.
    pub spatial: Option<Var>,
    pub out: Var,
}

/// Joint attention unit over one lateral feature map.
#[derive(Clone, Debug)]
pub struct Jau {
    mode: JauMode,
    conv: Conv2d,
    bn: BatchNorm2d,
    mlp: Option<(Conv2d, Conv2d)>,
    spatial: Option<Conv2d>,
}

impl Jau {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        in_ch: usize,
        width: usize,
        reduction: usize,
        mode: JauMode,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(mode != JauMode::Off, "an attention unit needs an active mode");
        let conv = Conv2d::same(store, &format!("{path}.crb.conv"), in_ch, width, 3, rng);
        let bn = BatchNorm2d::new(store, &format!("{path}.crb.bn"), width);
        let mlp = matches!(mode, JauMode::Jau | JauMode::Ca).then(|| {
            let hidden = (width / reduction).max(1);
            (
                Conv2d::same(store, &format!("{path}.cab.fc1"), width, hidden, 1, rng),
                Conv2d::same(store, &format!("{path}.cab.fc2"), hidden, width, 1, rng),
            )
        });
        let spatial = (mode == JauMode::Jau).then(|| Conv2d::same(store, &format!("{path}.sab.conv"), 2, 1, 7, rng));
        Jau {
            mode,
            conv,
            bn,
            mlp,
            spatial,
        }
    }

    pub fn mode(&self) -> JauMode {
        self.mode
    }

    pub fn channel_gate_keys(&self) -> Option<[&str; 2]> {
        self.mlp.as_ref().map(|(a, b)| [a.bias_key().unwrap(), b.bias_key().unwrap()])
    }

    pub fn spatial_gate_key(&self) -> Option<&str> {
        self.spatial.as_ref().and_then(|c| c.bias_key())
    }

    pub fn forward_parts(&self, g: &mut Graph, x: Var) -> Result<JauParts> {
        let in_ch = g.shape(x)[1];
        if in_ch != self.conv.in_channels() {
            return Err(Error::shape(format!(
                "attention unit built for {} channels, got {in_ch}",
                self.conv.in_channels()
            )));
        }
        let y = self.conv.forward(g, x);
        let y = g.relu(y);
        let refined = self.bn.forward(g, y);
        let channel = self.mlp.as_ref().map(|(fc1, fc2)| {
            let branch = |g: &mut Graph, pooled: Var| {
                let h = fc1.forward(g, pooled);
                let h = g.relu(h);
                fc2.forward(g, h)
            };
            let mx = g.global_max_pool(refined);
            let av = g.global_avg_pool(refined);
            let a = branch(g, mx);
            let b = branch(g, av);
            let s = g.add(a, b);
            g.sigmoid(s)
        });
        let spatial = self.spatial.as_ref().map(|conv| {
            let mx = g.channel_max(refined);
            let av = g.channel_mean(refined);
            let both = g.concat(&[mx, av]);
            let s = conv.forward(g, both);
            g.sigmoid(s)
        });
        let out = match (channel, spatial) {
            (Some(c), Some(s)) => {
                let a = g.mul(refined, c);
                let b = g.mul(refined, s);
                g.add(a, b)
            }
            (Some(c), None) => g.mul(refined, c),
            _ => refined,
        };
        Ok(JauParts {
            refined,
            channel,
            spatial,
            out,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(self.forward_parts(g, x)?.out)
    }
}

/// Edge auxiliary unit: directional 7x1 / 1x7 conv blocks on the image plus
/// a fixed edge-detector channel, fused by a 1x1 conv.
#[derive(Clone, Debug)]
pub struct Eau {
    vertical: Conv2d,
    horizontal: Conv2d,
    fuse: Conv2d,
}

impl Eau {
    pub fn new(store: &mut ParamStore, path: &str, filters: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv = |store: &mut ParamStore, name: &str, k: (usize, usize), rng: &mut ChaCha8Rng| {
            Conv2d::new(store, &format!("{path}.{name}"), 3, filters, k, ConvSpec::same(k.0, k.1), true, rng)
        };
        let vertical = conv(store, "vertical", (7, 1), rng);
        let horizontal = conv(store, "horizontal", (1, 7), rng);
        let fuse = Conv2d::same(store, &format!("{path}.fuse"), 2 * filters + 1, width, 1, rng);
        Eau {
            vertical,
            horizontal,
            fuse,
        }
    }

    /// `image` is the normalised input, `edges` the `[N, 1, H, W]` edge map.
    pub fn forward(&self, g: &mut Graph, image: Var, edges: Var) -> Var {
        let v = self.vertical.forward(g, image);
        let v = g.relu(v);
        let h = self.horizontal.forward(g, image);
        let h = g.relu(h);
        let cat = g.concat(&[v, h, edges]);
        self.fuse.forward(g, cat)
    }
}

/// Boundary-aware module producing the one-channel boundary map `F_b`.
#[derive(Clone, Debug)]
pub struct Bam {
    jau1: Jau,
    jau2: Jau,
    eau: Option<Eau>,
    out: Conv2d,
}

#[derive(Clone, Copy, Debug)]
pub struct BamParts {
    pub ja1: Var,
    pub ja2_up: Var,
    pub edge: Option<Var>,
    pub boundary: Var,
}

impl Bam {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        f1_ch: usize,
        f2_ch: usize,
        width: usize,
        reduction: usize,
        mode: JauMode,
        eau_filters: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let jau1 = Jau::new(store, "bam.jau1", f1_ch, width, reduction, mode, rng);
        let jau2 = Jau::new(store, "bam.jau2", f2_ch, width, reduction, mode, rng);
        let eau = eau_filters.map(|f| Eau::new(store, "bam.eau", f, width, rng));
        let in_ch = width * if eau.is_some() { 3 } else { 2 };
        let out = Conv2d::same(store, "bam.out", in_ch, 1, 3, rng);
        Bam { jau1, jau2, eau, out }
    }

    pub fn jau1(&self) -> &Jau {
        &self.jau1
    }

    pub fn jau2(&self) -> &Jau {
        &self.jau2
    }

    pub fn eau(&self) -> Option<&Eau> {
        self.eau.as_ref()
    }

    pub fn forward_parts(&self, g: &mut Graph, f1: Var, f2: Var, image: Var, edges: Var) -> Result<BamParts> {
        let ja1 = self.jau1.forward(g, f1)?;
        let ja2 = self.jau2.forward(g, f2)?;
        let ja2_up = g.upsample(ja2, 2);
        if g.shape(ja2_up)[2..] != g.shape(ja1)[2..] {
            return Err(Error::shape(format!(
                "upsampled F_2 branch {:?} does not align with F_1 branch {:?}",
                g.shape(ja2_up),
                g.shape(ja1)
            )));
        }
        let edge = self.eau.as_ref().map(|e| e.forward(g, image, edges));
        let mut parts = vec![ja1, ja2_up];
        parts.extend(edge);
        let cat = g.concat(&parts);
        let logits = self.out.forward(g, cat);
        let boundary = g.sigmoid(logits);
        Ok(BamParts {
            ja1,
            ja2_up,
            edge,
            boundary,
        })
    }
}
