//! Training objectives with analytic gradients w.r.t. the predicted maps.

use serde::{Deserialize, Serialize};

use crate::blg::{BoundaryCode, BoundaryLabelMap};
use crate::dataset::ScribbleMask;
use crate::error::{Error, Result};
use crate::raster::SaliencyMap;

/// Probability clamp used inside logarithms.
pub const PROB_EPS: f64 = 1e-7;
/// Offset inside the smooth absolute value of the structure loss.
pub const PSI_EPS: f64 = 1e-6;

/// A scalar loss and its gradient w.r.t. the map it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryLossConfig {
    /// Constant weight on boundary pixels, used when no weight raster is given.
    pub weight: f64,
}

impl Default for BoundaryLossConfig {
    fn default() -> Self {
        BoundaryLossConfig { weight: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// `G = 1` everywhere.
    None,
    /// `G` = initial saliency thresholded at 0.5 and dilated.
    InitialSaliency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatedStructureLossConfig {
    pub alpha: f64,
    pub gate: GateMode,
    /// Dilation radius in pixels for [`GateMode::InitialSaliency`].
    pub gate_dilation: usize,
}

impl Default for GatedStructureLossConfig {
    fn default() -> Self {
        GatedStructureLossConfig {
            alpha: 10.0,
            gate: GateMode::None,
            gate_dilation: 5,
        }
    }
}

fn check_size(what: &str, w: usize, h: usize, ow: usize, oh: usize) -> Result<()> {
    if (w, h) != (ow, oh) {
        return Err(Error::shape(format!("{what} is {ow}x{oh}, prediction is {w}x{h}")));
    }
    Ok(())
}

/// Weighted log-loss on boundary pixels plus half the mean log-loss of
/// non-boundary pixels; `Ignore` pixels are excluded and an empty set
/// contributes 0.
pub fn boundary_loss(
    p: &SaliencyMap,
    labels: &BoundaryLabelMap,
    cfg: &BoundaryLossConfig,
    weights: Option<&[f64]>,
) -> Result<LossValue> {
    check_size("boundary label map", p.width, p.height, labels.width, labels.height)?;
    if let Some(w) = weights {
        if w.len() != p.data.len() {
            return Err(Error::shape("boundary weight raster size differs from prediction"));
        }
        if w.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::validation("boundary weights must be >= 0"));
        }
    }
    let n_bry = labels.count(BoundaryCode::Boundary);
    let n_fb = labels.count(BoundaryCode::Foreground) + labels.count(BoundaryCode::Background);
    let mut value = 0.0;
    let mut grad = vec![0.0; p.data.len()];
    for (i, (&pi, &code)) in p.data.iter().zip(&labels.codes).enumerate() {
        let clamped = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let live = (PROB_EPS..=1.0 - PROB_EPS).contains(&pi);
        match code {
            BoundaryCode::Boundary => {
                let w = weights.map_or(cfg.weight, |w| w[i]);
                let k = w / n_bry as f64;
                value -= k * clamped.ln();
                if live {
                    grad[i] = -k / clamped;
                }
            }
            BoundaryCode::Foreground | BoundaryCode::Background => {
                let k = 0.5 / n_fb as f64;
                value -= k * (1.0 - clamped).ln();
                if live {
                    grad[i] = k / (1.0 - clamped);
                }
            }
            BoundaryCode::Ignore => {}
        }
    }
    Ok(LossValue { value, grad })
}

/// Forward difference along x (`axis = 0`) or y; zero on the last column/row.
fn forward_diff(v: &[f64], w: usize, h: usize, axis: usize, i: usize) -> f64 {
    let (x, y) = (i % w, i / w);
    match axis {
        0 if x + 1 < w => v[i + 1] - v[i],
        1 if y + 1 < h => v[i + w] - v[i],
        _ => 0.0,
    }
}

/// Binary gate from an initial saliency probability map: `p > 0.5`, dilated
/// by a square of the given radius.
pub fn saliency_gate(initial: &SaliencyMap, radius: usize) -> Vec<f64> {
    let (w, h) = (initial.width, initial.height);
    let on: Vec<bool> = initial.data.iter().map(|&v| v > 0.5).collect();
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = (x.saturating_sub(radius)..(x + radius + 1).min(w)).any(|xx| on[y * w + xx]);
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if (y.saturating_sub(radius)..(y + radius + 1).min(h)).any(|yy| rows[yy * w + x]) {
                out[y * w + x] = 1.0;
            }
        }
    }
    out
}

/// Edge-aware smoothness: `sum_i sum_d Psi(|d S_i| exp(-alpha |d (G I)_i|))`
/// with `Psi(t) = sqrt(t^2 + 1e-6)`.
///
/// `intensity` is the channel-mean image; `gate` defaults to all ones.
pub fn gated_structure_loss(
    s: &SaliencyMap,
    intensity: &[f64],
    gate: Option<&[f64]>,
    cfg: &GatedStructureLossConfig,
) -> Result<LossValue> {
    let (w, h) = (s.width, s.height);
    if intensity.len() != w * h {
        return Err(Error::shape("intensity image size differs from saliency map"));
    }
    if !(cfg.alpha > 0.0) {
        return Err(Error::parameter(format!("alpha must be > 0, got {}", cfg.alpha)));
    }
    let gated: Vec<f64> = match gate {
        Some(g) if g.len() != w * h => return Err(Error::shape("gate size differs from saliency map")),
        Some(g) => g.iter().zip(intensity).map(|(a, b)| a * b).collect(),
        None => intensity.to_vec(),
    };
    let mut value = 0.0;
    let mut grad = vec![0.0; w * h];
    for i in 0..w * h {
        for axis in 0..2 {
            let ds = forward_diff(&s.data, w, h, axis, i);
            let wt = (-cfg.alpha * forward_diff(&gated, w, h, axis, i).abs()).exp();
            let psi = (ds * ds * wt * wt + PSI_EPS).sqrt();
            value += psi;
            let d = ds * wt * wt / psi;
            let j = if axis == 0 { i + 1 } else { i + w };
            if d != 0.0 {
                grad[j] += d;
                grad[i] -= d;
            }
        }
    }
    Ok(LossValue { value, grad })
}

/// Cross-entropy summed over scribbled pixels only (foreground target 1,
/// background target 0).
pub fn partial_cross_entropy(s: &SaliencyMap, scribble: &ScribbleMask) -> Result<LossValue> {
    check_size("scribble mask", s.width, s.height, scribble.width(), scribble.height())?;
    if scribble.labeled_count() == 0 {
        log::warn!("partial cross-entropy on an empty scribble mask; contributing 0");
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; s.data.len()];
    for (i, (&si, &code)) in s.data.iter().zip(scribble.codes()).enumerate() {
        let c = si.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let live = (PROB_EPS..=1.0 - PROB_EPS).contains(&si);
        match code {
            1 => {
                value -= c.ln();
                if live {
                    grad[i] = -1.0 / c;
                }
            }
            2 => {
                value -= (1.0 - c).ln();
                if live {
                    grad[i] = 1.0 / (1.0 - c);
                }
            }
            _ => {}
        }
    }
    Ok(LossValue { value, grad })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_b")]
    pub l_b: f64,
    #[serde(rename = "L_gs")]
    pub l_gs: f64,
    #[serde(rename = "L_pce")]
    pub l_pce: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, o: &LossBreakdown) {
        self.l_b += o.l_b;
        self.l_gs += o.l_gs;
        self.l_pce += o.l_pce;
        self.l_total += o.l_total;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub boundary: BoundaryLossConfig,
    pub structure: GatedStructureLossConfig,
}

/// Unweighted sum of the three terms with gradients w.r.t. the saliency map
/// and (when present) the boundary map.
pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    pub grad_saliency: Vec<f64>,
    pub grad_boundary: Option<Vec<f64>>,
}

pub struct LossInputs<'a> {
    pub saliency: &'a SaliencyMap,
    pub boundary: Option<(&'a SaliencyMap, &'a BoundaryLabelMap)>,
    pub scribble: &'a ScribbleMask,
    pub intensity: &'a [f64],
    pub gate: Option<&'a [f64]>,
    pub boundary_weights: Option<&'a [f64]>,
}

pub fn total_loss(inputs: &LossInputs, cfg: &LossConfig) -> Result<TotalLoss> {
    let gs = gated_structure_loss(inputs.saliency, inputs.intensity, inputs.gate, &cfg.structure)?;
    let pce = partial_cross_entropy(inputs.saliency, inputs.scribble)?;
    let b = match inputs.boundary {
        Some((p, labels)) => Some(boundary_loss(p, labels, &cfg.boundary, inputs.boundary_weights)?),
        None => None,
    };
    let l_b = b.as_ref().map_or(0.0, |b| b.value);
    let grad_saliency = gs.grad.iter().zip(&pce.grad).map(|(a, b)| a + b).collect();
    Ok(TotalLoss {
        breakdown: LossBreakdown {
            l_b,
            l_gs: gs.value,
            l_pce: pce.value,
            l_total: l_b + gs.value + pce.value,
        },
        grad_saliency,
        grad_boundary: b.map(|b| b.grad),
    })
}
