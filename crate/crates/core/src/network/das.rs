use rand_chacha::ChaCha8Rng;

use crate::autograd::{Conv2d, Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Dense aggregation of `F_3`, `F_4`, `F_5` into a stride-4 initial map.
///
/// The three inputs are first projected to a common width by 1x1 convs so
/// the elementwise products are defined.
#[derive(Clone, Debug)]
pub struct Das {
    proj: [Conv2d; 3],
    c: [Conv2d; 7],
}

#[derive(Clone, Copy, Debug)]
pub struct DasParts {
    pub x3: Var,
    pub x4: Var,
    pub x5: Var,
    pub f1: Var,
    pub f2: Var,
    pub f3: Var,
    pub initial: Var,
}

impl Das {
    pub fn new(store: &mut ParamStore, in_ch: [usize; 3], width: usize, rng: &mut ChaCha8Rng) -> Self {
        let proj = std::array::from_fn(|i| Conv2d::same(store, &format!("das.proj{}", i + 3), in_ch[i], width, 1, rng));
        let io = [(1, 1), (1, 1), (2, 1), (1, 1), (1, 1), (1, 1), (2, 0)];
        let c = std::array::from_fn(|i| {
            let (a, b) = io[i];
            let out = if b == 0 { 1 } else { width * b };
            Conv2d::same(store, &format!("das.conv{}", i + 1), width * a, out, 3, rng)
        });
        Das { proj, c }
    }

    pub fn forward_parts(&self, g: &mut Graph, f3: Var, f4: Var, f5: Var) -> Result<DasParts> {
        let (s3, s4, s5) = (g.shape(f3), g.shape(f4), g.shape(f5));
        if s3[2] != 2 * s4[2] || s3[3] != 2 * s4[3] || s4[2] != 2 * s5[2] || s4[3] != 2 * s5[3] {
            return Err(Error::shape(format!(
                "aggregation inputs must halve in size: {s3:?}, {s4:?}, {s5:?}"
            )));
        }
        let x3 = self.proj[0].forward(g, f3);
        let x4 = self.proj[1].forward(g, f4);
        let x5 = self.proj[2].forward(g, f5);
        let c = &self.c;

        let x5_up2 = g.upsample(x5, 2);
        let a = c[0].forward(g, x5_up2);
        let f1 = g.mul(a, x4);

        let b = c[1].forward(g, x5_up2);
        let cat = g.concat(&[f1, b]);
        let f2 = c[2].forward(g, cat);

        let x5_up4 = g.upsample(x5, 4);
        let p = c[3].forward(g, x5_up4);
        let x4_up2 = g.upsample(x4, 2);
        let q = c[4].forward(g, x4_up2);
        let pq = g.mul(p, q);
        let f3 = g.mul(pq, x3);

        let f2_up = g.upsample(f2, 2);
        let r = c[5].forward(g, f2_up);
        let cat = g.concat(&[f3, r]);
        let initial = c[6].forward(g, cat);
        Ok(DasParts {
            x3,
            x4,
            x5,
            f1,
            f2,
            f3,
            initial,
        })
    }
}
