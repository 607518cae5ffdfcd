use crate::autograd::{sigmoid, Tensor};

/// Per-sample, per-class scores and the spatial attention that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPool {
    /// `scores[n][c]`.
    pub scores: Vec<Vec<f64>>,
    /// `[N, C, h, w]`, each map summing to one.
    pub attention: Tensor,
}

/// Spatial softmax attention `A^c` per map and score `S^c = sum_i M_i A_i`.
pub fn attention_pool(maps: &Tensor) -> AttentionPool {
    let [n, c, h, w] = maps.shape();
    let mut attention = Tensor::zeros([n, c, h, w]);
    let mut scores = vec![vec![0.0; c]; n];
    for s in 0..n {
        for ch in 0..c {
            let m = maps.plane(s, ch);
            let mx = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = m.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            let off = attention.offset(s, ch, 0, 0);
            let a = &mut attention.data_mut()[off..off + h * w];
            let mut score = 0.0;
            for i in 0..h * w {
                a[i] = e[i] / z;
                score += m[i] * a[i];
            }
            scores[s][ch] = score;
        }
    }
    AttentionPool { scores, attention }
}

/// Backpropagates `dL/dS` through [`attention_pool`]:
/// `dS/dM_i = A_i (1 + M_i - S)`.
pub fn attention_pool_backward(maps: &Tensor, pool: &AttentionPool, d_scores: &[Vec<f64>]) -> Tensor {
    let [n, c, h, w] = maps.shape();
    Tensor::from_fn([n, c, h, w], |[s, ch, y, x]| {
        let a = pool.attention.at(s, ch, y, x);
        d_scores[s][ch] * a * (1.0 + maps.at(s, ch, y, x) - pool.scores[s][ch])
    })
}

/// Mean multi-label sigmoid cross-entropy of scores against 0/1 targets,
/// with its gradient w.r.t. the scores.
pub fn multilabel_bce(scores: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let count = scores.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    let mut loss = 0.0;
    let grads = scores
        .iter()
        .zip(targets)
        .map(|(s, t)| {
            s.iter()
                .zip(t)
                .map(|(&z, &y)| {
                    // softplus(z) - y z, stable for large |z|
                    loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
                    (sigmoid(z) - y) / count
                })
                .collect()
        })
        .collect();
    (loss / count, grads)
}
