//! Salient-object-detection metrics: MAE, precision/recall/F-measure curves,
//! E-measure and S-measure, plus dataset aggregation and report I/O.
//!
//! Binarisation uses the 256 thresholds `t_k = k/256`; a pixel is positive
//! at `t_k` iff `P > t_k`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::SaliencyMap;

pub const NUM_THRESHOLDS: usize = 256;
pub const BETA2: f64 = 0.3;
pub const S_ALPHA: f64 = 0.5;

pub fn thresholds() -> Vec<f64> {
    (0..NUM_THRESHOLDS).map(|k| k as f64 / NUM_THRESHOLDS as f64).collect()
}

/// A prediction and a binary ground truth of equal size.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub id: String,
    pub prediction: SaliencyMap,
    pub groundtruth: SaliencyMap,
}

impl EvalPair {
    pub fn new(id: impl Into<String>, prediction: SaliencyMap, groundtruth: SaliencyMap) -> Result<Self> {
        let id = id.into();
        if (prediction.width, prediction.height) != (groundtruth.width, groundtruth.height) {
            return Err(Error::validation(format!(
                "`{id}`: prediction is {}x{}, ground truth is {}x{}",
                prediction.width, prediction.height, groundtruth.width, groundtruth.height
            )));
        }
        if prediction.data.is_empty() {
            return Err(Error::validation(format!("`{id}`: empty image")));
        }
        if prediction.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(format!("`{id}`: prediction values outside [0,1]")));
        }
        if groundtruth.data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::validation(format!("`{id}`: ground truth is not binary")));
        }
        Ok(EvalPair { id, prediction, groundtruth })
    }

    fn len(&self) -> usize {
        self.groundtruth.data.len()
    }

    fn gt_count(&self) -> usize {
        self.groundtruth.data.iter().filter(|&&g| g == 1.0).count()
    }
}

pub fn mae(pair: &EvalPair) -> f64 {
    let sum: f64 = pair.prediction.data.iter().zip(&pair.groundtruth.data).map(|(p, g)| (p - g).abs()).sum();
    sum / pair.len() as f64
}

/// Largest `k` with `p > k/256`, or -1.
fn bin(p: f64) -> i64 {
    if p <= 0.0 {
        -1
    } else {
        ((p * NUM_THRESHOLDS as f64).ceil() as i64 - 1).min(NUM_THRESHOLDS as i64 - 1)
    }
}

/// Per-threshold counts of positive predictions inside and outside the GT.
struct Counts {
    tp: Vec<usize>,
    fp: Vec<usize>,
    gt: usize,
    n: usize,
}

fn counts(pair: &EvalPair) -> Counts {
    let mut hist_fg = [0usize; NUM_THRESHOLDS];
    let mut hist_bg = [0usize; NUM_THRESHOLDS];
    for (&p, &g) in pair.prediction.data.iter().zip(&pair.groundtruth.data) {
        let b = bin(p);
        if b >= 0 {
            if g == 1.0 {
                hist_fg[b as usize] += 1;
            } else {
                hist_bg[b as usize] += 1;
            }
        }
    }
    let (mut tp, mut fp) = (vec![0; NUM_THRESHOLDS], vec![0; NUM_THRESHOLDS]);
    let (mut a, mut b) = (0, 0);
    for k in (0..NUM_THRESHOLDS).rev() {
        a += hist_fg[k];
        b += hist_bg[k];
        tp[k] = a;
        fp[k] = b;
    }
    Counts { tp, fp, gt: pair.gt_count(), n: pair.len() }
}

pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let den = BETA2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * precision * recall / den
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
}

/// Precision, recall and F-measure at each threshold. An all-zero GT gives
/// an all-zero curve.
pub fn prf_curve(pair: &EvalPair) -> PrfCurve {
    prf_from_counts(&counts(pair))
}

fn prf_from_counts(c: &Counts) -> PrfCurve {
    let mut curve = PrfCurve {
        precision: vec![0.0; NUM_THRESHOLDS],
        recall: vec![0.0; NUM_THRESHOLDS],
        f: vec![0.0; NUM_THRESHOLDS],
    };
    if c.gt == 0 {
        return curve;
    }
    for k in 0..NUM_THRESHOLDS {
        let pos = c.tp[k] + c.fp[k];
        let p = if pos == 0 { 0.0 } else { c.tp[k] as f64 / pos as f64 };
        let r = c.tp[k] as f64 / c.gt as f64;
        curve.precision[k] = p;
        curve.recall[k] = r;
        curve.f[k] = f_beta(p, r);
    }
    curve
}

/// `(mean, max)` over thresholds of the per-threshold mean across images.
pub fn curve_stats(curves: &[&[f64]]) -> (f64, f64) {
    let mean = mean_curve(curves);
    let avg = mean.iter().sum::<f64>() / mean.len() as f64;
    let max = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (avg, max)
}

fn mean_curve(curves: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; NUM_THRESHOLDS];
    for c in curves {
        for (o, v) in out.iter_mut().zip(c.iter()) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= curves.len().max(1) as f64;
    }
    out
}

/// `(F_avg, F_max)` over a dataset.
pub fn f_stats(curves: &[PrfCurve]) -> (f64, f64) {
    curve_stats(&curves.iter().map(|c| c.f.as_slice()).collect::<Vec<_>>())
}

fn theta(a: f64, b: f64) -> f64 {
    let align = 2.0 * a * b / (a * a + b * b);
    (align + 1.0) * (align + 1.0) / 4.0
}

/// Enhanced-alignment score at each threshold.
///
/// All-background GT scores the fraction of predicted-negative pixels;
/// all-foreground GT the fraction of predicted-positive pixels.
pub fn e_curve(pair: &EvalPair) -> Vec<f64> {
    e_from_counts(&counts(pair))
}

fn e_from_counts(c: &Counts) -> Vec<f64> {
    let n = c.n as f64;
    let g = c.gt as f64 / n;
    (0..NUM_THRESHOLDS)
        .map(|k| {
            let (tp, fp) = (c.tp[k], c.fp[k]);
            let pos = tp + fp;
            if c.gt == 0 {
                return (c.n - pos) as f64 / n;
            }
            if c.gt == c.n {
                return pos as f64 / n;
            }
            let fn_ = c.gt - tp;
            let tn = c.n - c.gt - fp;
            let f = pos as f64 / n;
            let sum = tp as f64 * theta(1.0 - g, 1.0 - f)
                + fn_ as f64 * theta(1.0 - g, -f)
                + fp as f64 * theta(-g, 1.0 - f)
                + tn as f64 * theta(-g, -f);
            sum / n
        })
        .collect()
}

/// `(E_avg, E_max)` for one image.
pub fn e_measure(pair: &EvalPair) -> (f64, f64) {
    let c = e_curve(pair);
    curve_stats(&[&c])
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.clone() {
        s += v;
        n += 1;
    }
    let mean = s / n as f64;
    let var: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    // Sample standard deviation; a single value has zero spread.
    let std = if n > 1 { (var / (n - 1) as f64).sqrt() } else { 0.0 };
    (mean, std, n)
}

fn s_object(pred: &[f64], mask: impl Fn(usize) -> bool) -> f64 {
    let (x, sigma, _) = mean_std((0..pred.len()).filter(|&i| mask(i)).map(|i| pred[i]));
    2.0 * x / (x * x + 1.0 + sigma)
}

/// SSIM-style similarity of one rectangle; a region with neither variance
/// nor covariance scores 1.
fn region_ssim(pred: &[f64], gt: &[f64], w: usize, xs: std::ops::Range<usize>, ys: std::ops::Range<usize>) -> f64 {
    let n = (xs.len() * ys.len()) as f64;
    let idx = || ys.clone().flat_map(|y| xs.clone().map(move |x| y * w + x));
    let x = idx().map(|i| pred[i]).sum::<f64>() / n;
    let y = idx().map(|i| gt[i]).sum::<f64>() / n;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for i in idx() {
        let (a, b) = (pred[i] - x, gt[i] - y);
        sx += a * a;
        sy += b * b;
        sxy += a * b;
    }
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure `alpha * S_o + (1 - alpha) * S_r`, clamped at 0.
///
/// All-background GT gives `1 - mean(P)`, all-foreground GT `mean(P)`. The
/// region split is at the GT centroid rounded half-to-even, plus one.
pub fn s_measure(pair: &EvalPair, alpha: f64) -> f64 {
    let (w, h) = (pair.groundtruth.width, pair.groundtruth.height);
    let (p, g) = (&pair.prediction.data, &pair.groundtruth.data);
    let n = p.len() as f64;
    let gt_count = pair.gt_count();
    let mean_p = p.iter().sum::<f64>() / n;
    if gt_count == 0 {
        return 1.0 - mean_p;
    }
    if gt_count == p.len() {
        return mean_p;
    }
    let u = gt_count as f64 / n;
    let fg: Vec<f64> = p.iter().zip(g).map(|(a, b)| a * b).collect();
    let bg: Vec<f64> = p.iter().zip(g).map(|(a, b)| (1.0 - a) * (1.0 - b)).collect();
    let object = u * s_object(&fg, |i| g[i] == 1.0) + (1.0 - u) * s_object(&bg, |i| g[i] == 0.0);

    let (mut cx, mut cy) = (0.0, 0.0);
    for (i, _) in g.iter().enumerate().filter(|(_, &v)| v == 1.0) {
        cx += (i % w) as f64;
        cy += (i / w) as f64;
    }
    let x = (cx / gt_count as f64).round_ties_even() as usize + 1;
    let y = (cy / gt_count as f64).round_ties_even() as usize + 1;
    let parts = [(0..x, 0..y), (x..w, 0..y), (0..x, y..h), (x..w, y..h)];
    let mut region = 0.0;
    for (xs, ys) in parts {
        let area = xs.len() * ys.len();
        if area > 0 {
            region += area as f64 * region_ssim(p, g, w, xs, ys);
        }
    }
    region /= n;
    (alpha * object + (1.0 - alpha) * region).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub s_measure: f64,
    pub e_avg: f64,
    pub e_max: f64,
    pub f_avg: f64,
    pub f_max: f64,
    pub mae: f64,
    /// Ground truth has no foreground; precision/recall/F are defined 0.
    pub empty_gt: bool,
}

/// The six dataset-level scalars.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub s_measure: f64,
    pub e_avg: f64,
    pub e_max: f64,
    pub f_avg: f64,
    pub f_max: f64,
    pub mae: f64,
}

/// Dataset-mean curves over the threshold grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub threshold: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
    pub e: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub summary: MetricSummary,
    pub images: Vec<ImageMetrics>,
    pub curves: Curves,
    /// Ids present in only one of the prediction / ground-truth sets.
    #[serde(default)]
    pub unmatched: Vec<String>,
}

struct PerImage {
    metrics: ImageMetrics,
    prf: PrfCurve,
    e: Vec<f64>,
}

fn per_image(pair: &EvalPair) -> PerImage {
    let c = counts(pair);
    let prf = prf_from_counts(&c);
    let e = e_from_counts(&c);
    let (f_avg, f_max) = curve_stats(&[&prf.f]);
    let (e_avg, e_max) = curve_stats(&[&e]);
    PerImage {
        metrics: ImageMetrics {
            id: pair.id.clone(),
            s_measure: s_measure(pair, S_ALPHA),
            e_avg,
            e_max,
            f_avg,
            f_max,
            mae: mae(pair),
            empty_gt: c.gt == 0,
        },
        prf,
        e,
    }
}

/// Metrics for every pair (in the given order) and dataset aggregates.
pub fn evaluate_pairs(pairs: &[EvalPair]) -> MetricReport {
    let per: Vec<PerImage> = pairs.par_iter().map(per_image).collect();
    if per.is_empty() {
        return MetricReport {
            curves: Curves {
                threshold: thresholds(),
                ..Default::default()
            },
            ..Default::default()
        };
    }
    let n = per.len() as f64;
    let col = |f: fn(&PerImage) -> &[f64]| mean_curve(&per.iter().map(f).collect::<Vec<_>>());
    let curves = Curves {
        threshold: thresholds(),
        precision: col(|p| &p.prf.precision),
        recall: col(|p| &p.prf.recall),
        f: col(|p| &p.prf.f),
        e: col(|p| &p.e),
    };
    let (f_avg, f_max) = curve_stats(&[&curves.f]);
    let (e_avg, e_max) = curve_stats(&[&curves.e]);
    let summary = MetricSummary {
        s_measure: per.iter().map(|p| p.metrics.s_measure).sum::<f64>() / n,
        e_avg,
        e_max,
        f_avg,
        f_max,
        mae: per.iter().map(|p| p.metrics.mae).sum::<f64>() / n,
    };
    MetricReport {
        summary,
        images: per.into_iter().map(|p| p.metrics).collect(),
        curves,
        unmatched: Vec::new(),
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image files in `dir` keyed by file stem.
pub fn images_by_id(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Pairs predictions with ground truths by file stem. Unmatched ids are
/// logged and recorded in [`MetricReport::unmatched`].
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path) -> Result<MetricReport> {
    let preds = images_by_id(pred_dir)?;
    let gts = images_by_id(gt_dir)?;
    let mut unmatched: Vec<String> = preds.keys().filter(|k| !gts.contains_key(*k)).cloned().collect();
    unmatched.extend(gts.keys().filter(|k| !preds.contains_key(*k)).cloned());
    unmatched.sort();
    if !unmatched.is_empty() {
        log::warn!("{} unmatched ids excluded: {}", unmatched.len(), unmatched.join(", "));
    }
    let pairs = preds
        .iter()
        .filter_map(|(id, p)| gts.get(id).map(|g| (id, p, g)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(id, p, g)| EvalPair::new(id.as_str(), SaliencyMap::load(p)?, SaliencyMap::load_binary(g)?))
        .collect::<Result<Vec<_>>>()?;
    let mut report = evaluate_pairs(&pairs);
    report.unmatched = unmatched;
    Ok(report)
}

#[derive(Serialize, Deserialize)]
struct CurveRow {
    threshold: f64,
    precision: f64,
    recall: f64,
    f: f64,
}

impl MetricReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialises");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            reason: e.to_string(),
        })
    }

    /// `threshold,precision,recall,f` rows, one per threshold.
    pub fn write_curves_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let c = &self.curves;
        for k in 0..c.threshold.len() {
            w.serialize(CurveRow {
                threshold: c.threshold[k],
                precision: c.precision.get(k).copied().unwrap_or(0.0),
                recall: c.recall.get(k).copied().unwrap_or(0.0),
                f: c.f.get(k).copied().unwrap_or(0.0),
            })
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        location: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Reads a curve table written by [`MetricReport::write_curves_csv`].
pub fn read_curves_csv(path: &Path) -> Result<Curves> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut c = Curves::default();
    for row in r.deserialize() {
        let row: CurveRow = row.map_err(|e| csv_error(path, e))?;
        c.threshold.push(row.threshold);
        c.precision.push(row.precision);
        c.recall.push(row.recall);
        c.f.push(row.f);
    }
    Ok(c)
}

#[cfg(test)]
mod tests;
