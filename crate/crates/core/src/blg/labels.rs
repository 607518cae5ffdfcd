use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{kernels, Tensor};
use crate::error::{Error, Result};
use crate::raster::LabelPlane;

/// Per-class probability maps in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMaps {
    pub width: usize,
    pub height: usize,
    /// `maps[c]` is row-major `height x width`.
    pub maps: Vec<Vec<f64>>,
}

/// Min-max normalises each class map of a single-sample `[1, C, h, w]`
/// stack (constant maps become zero), then resamples bilinearly to
/// `width x height`.
pub fn cam_probabilities(maps: &Tensor, width: usize, height: usize) -> Result<ProbabilityMaps> {
    let [n, c, h, w] = maps.shape();
    if n != 1 {
        return Err(Error::shape(format!("expected one sample, got {n}")));
    }
    let out = (0..c)
        .map(|ch| {
            let m = maps.plane(0, ch);
            let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let norm: Vec<f64> = if hi > lo {
                m.iter().map(|v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; h * w]
            };
            kernels::resize_plane(&norm, h, w, height, width)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    Ok(ProbabilityMaps { width, height, maps: out })
}

pub const TRIMAP_BACKGROUND: u8 = 0;
pub const TRIMAP_UNCERTAIN: u8 = 255;

/// Per-pixel code: 0 background, `1..=C` foreground category `c - 1`,
/// 255 uncertain.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMap {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u8>,
    pub t_f: f64,
    pub t_b: f64,
}

impl TriMap {
    pub fn is_foreground(code: u8) -> bool {
        code != TRIMAP_BACKGROUND && code != TRIMAP_UNCERTAIN
    }
}

/// Double-threshold classification of the per-pixel maximum probability.
///
/// When `classes` is given only those categories compete for the maximum.
pub fn trimap_from_cam(p: &ProbabilityMaps, t_f: f64, t_b: f64, classes: Option<&BTreeSet<usize>>) -> Result<TriMap> {
    check_trimap_thresholds(t_f, t_b)?;
    if p.maps.len() > 254 {
        return Err(Error::parameter("at most 254 categories fit in a trimap"));
    }
    let candidates: Vec<usize> = match classes {
        Some(set) if !set.is_empty() => {
            if let Some(bad) = set.iter().find(|&&c| c >= p.maps.len()) {
                return Err(Error::parameter(format!("category {bad} out of range")));
            }
            set.iter().copied().collect()
        }
        _ => (0..p.maps.len()).collect(),
    };
    let codes = (0..p.width * p.height)
        .map(|i| {
            let (best, v) = candidates
                .iter()
                .map(|&c| (c, p.maps[c][i]))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            if v > t_f {
                best as u8 + 1
            } else if v < t_b {
                TRIMAP_BACKGROUND
            } else {
                TRIMAP_UNCERTAIN
            }
        })
        .collect();
    Ok(TriMap {
        width: p.width,
        height: p.height,
        codes,
        t_f,
        t_b,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum BoundaryCode {
    Background = 0,
    Ignore = 64,
    Foreground = 128,
    Boundary = 255,
}

impl BoundaryCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(BoundaryCode::Background),
            64 => Some(BoundaryCode::Ignore),
            128 => Some(BoundaryCode::Foreground),
            255 => Some(BoundaryCode::Boundary),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryLabelMap {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<BoundaryCode>,
    pub window: usize,
}

impl BoundaryLabelMap {
    pub fn count(&self, code: BoundaryCode) -> usize {
        self.codes.iter().filter(|&&c| c == code).count()
    }

    pub fn to_plane(&self) -> LabelPlane {
        LabelPlane {
            width: self.width,
            height: self.height,
            data: self.codes.iter().map(|&c| c as u8).collect(),
        }
    }

    pub fn from_plane(plane: &LabelPlane, window: usize) -> Result<Self> {
        let codes = plane
            .data
            .iter()
            .map(|&v| BoundaryCode::from_u8(v).ok_or_else(|| Error::Decode(format!("boundary label value {v} not in palette"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundaryLabelMap {
            width: plane.width,
            height: plane.height,
            codes,
            window,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_plane().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_plane(&LabelPlane::load(path)?, 0).map_err(|e| match e {
            Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Sliding-window boundary thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub t_f: f64,
    pub t_b: f64,
    pub window: usize,
    pub rho: f64,
    pub tau: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            t_f: 0.30,
            t_b: 0.07,
            window: 13,
            rho: 0.3,
            tau: 0.5,
        }
    }
}

impl BoundaryConfig {
    pub fn validate(&self) -> Result<()> {
        check_trimap_thresholds(self.t_f, self.t_b)?;
        check_window(self.window, self.rho, self.tau)
    }
}

fn check_trimap_thresholds(t_f: f64, t_b: f64) -> Result<()> {
    if !(0.0 <= t_b && t_b < t_f && t_f <= 1.0) {
        return Err(Error::parameter(format!("trimap thresholds need 0 <= T_b < T_f <= 1, got T_b={t_b} T_f={t_f}")));
    }
    Ok(())
}

fn check_window(k: usize, rho: f64, tau: f64) -> Result<()> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::parameter(format!("window size must be odd and >= 3, got {k}")));
    }
    if !(rho > 0.0 && rho <= 0.5) {
        return Err(Error::parameter(format!("rho must lie in (0, 0.5], got {rho}")));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::parameter(format!("tau must lie in (0, 1], got {tau}")));
    }
    Ok(())
}

/// The boundary predicate on clipped-window counts.
#[inline]
pub fn is_boundary(n_f: usize, n_b: usize, area: usize, rho: f64, tau: f64) -> bool {
    let labeled = n_f + n_b;
    labeled > 0 && labeled as f64 >= tau * area as f64 && n_f.min(n_b) as f64 / labeled as f64 >= rho
}

/// Marks pixels whose clipped `k x k` window holds enough, and balanced
/// enough, foreground and background trimap pixels. Other pixels take their
/// own trimap class, uncertain ones becoming `Ignore`.
pub fn boundary_from_trimap(t: &TriMap, k: usize, rho: f64, tau: f64) -> Result<BoundaryLabelMap> {
    check_window(k, rho, tau)?;
    let (w, h) = (t.width, t.height);
    // Summed-area tables with a zero first row and column.
    let mut sf = vec![0usize; (w + 1) * (h + 1)];
    let mut sb = vec![0usize; (w + 1) * (h + 1)];
    for y in 0..h {
        let (mut rf, mut rb) = (0, 0);
        for x in 0..w {
            let code = t.codes[y * w + x];
            rf += usize::from(TriMap::is_foreground(code));
            rb += usize::from(code == TRIMAP_BACKGROUND);
            sf[(y + 1) * (w + 1) + x + 1] = sf[y * (w + 1) + x + 1] + rf;
            sb[(y + 1) * (w + 1) + x + 1] = sb[y * (w + 1) + x + 1] + rb;
        }
    }
    let rect = |s: &[usize], x0: usize, y0: usize, x1: usize, y1: usize| {
        s[y1 * (w + 1) + x1] + s[y0 * (w + 1) + x0] - s[y0 * (w + 1) + x1] - s[y1 * (w + 1) + x0]
    };
    let r = k / 2;
    let mut codes = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let n_f = rect(&sf, x0, y0, x1, y1);
            let n_b = rect(&sb, x0, y0, x1, y1);
            let area = (x1 - x0) * (y1 - y0);
            let code = t.codes[y * w + x];
            codes.push(if is_boundary(n_f, n_b, area, rho, tau) {
                BoundaryCode::Boundary
            } else if code == TRIMAP_UNCERTAIN {
                BoundaryCode::Ignore
            } else if code == TRIMAP_BACKGROUND {
                BoundaryCode::Background
            } else {
                BoundaryCode::Foreground
            });
        }
    }
    Ok(BoundaryLabelMap {
        width: w,
        height: h,
        codes,
        window: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(t: &TriMap, k: usize, rho: f64, tau: f64) -> Vec<BoundaryCode> {
        let r = (k / 2) as i64;
        let mut out = Vec::new();
        for y in 0..t.height as i64 {
            for x in 0..t.width as i64 {
                let (mut nf, mut nb, mut area) = (0, 0, 0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy < 0 || xx < 0 || yy >= t.height as i64 || xx >= t.width as i64 {
                            continue;
                        }
                        area += 1;
                        match t.codes[yy as usize * t.width + xx as usize] {
                            0 => nb += 1,
                            255 => {}
                            _ => nf += 1,
                        }
                    }
                }
                let own = t.codes[y as usize * t.width + x as usize];
                out.push(if nf + nb > 0 && (nf + nb) as f64 >= tau * area as f64 && nf.min(nb) as f64 / (nf + nb) as f64 >= rho {
                    BoundaryCode::Boundary
                } else {
                    match own {
                        255 => BoundaryCode::Ignore,
                        0 => BoundaryCode::Background,
                        _ => BoundaryCode::Foreground,
                    }
                });
            }
        }
        out
    }

    fn trimap(w: usize, h: usize, codes: Vec<u8>) -> TriMap {
        TriMap { width: w, height: h, codes, t_f: 0.3, t_b: 0.07 }
    }

    #[test]
    fn seam_between_columns() {
        let codes = (0..25).map(|i| if i % 5 < 2 { 1 } else { 0 }).collect();
        let t = trimap(5, 5, codes);
        let b = boundary_from_trimap(&t, 3, 0.3, 0.5).unwrap();
        assert_eq!(b.codes, naive(&t, 3, 0.3, 0.5));
        for y in 0..5 {
            for x in 0..5 {
                let on = b.codes[y * 5 + x] == BoundaryCode::Boundary;
                assert_eq!(on, x == 1 || x == 2, "({x},{y})");
            }
        }
    }

    #[test]
    fn uniform_trimaps() {
        let fg = boundary_from_trimap(&trimap(6, 4, vec![2; 24]), 3, 0.3, 0.5).unwrap();
        assert_eq!(fg.count(BoundaryCode::Foreground), 24);
        let unk = boundary_from_trimap(&trimap(6, 4, vec![255; 24]), 13, 0.3, 0.5).unwrap();
        assert_eq!(unk.count(BoundaryCode::Ignore), 24);
    }

    #[test]
    fn parameter_checks() {
        let t = trimap(2, 2, vec![0; 4]);
        assert!(matches!(boundary_from_trimap(&t, 4, 0.3, 0.5), Err(Error::Parameter(_))));
        assert!(matches!(boundary_from_trimap(&t, 3, 0.6, 0.5), Err(Error::Parameter(_))));
        let p = ProbabilityMaps { width: 1, height: 1, maps: vec![vec![0.5]] };
        assert!(matches!(trimap_from_cam(&p, 0.07, 0.3, None), Err(Error::Parameter(_))));
    }

    #[test]
    fn trimap_examples() {
        let p = ProbabilityMaps {
            width: 3,
            height: 1,
            maps: vec![vec![0.1, 0.05, 0.2], vec![0.5, 0.01, 0.0]],
        };
        let t = trimap_from_cam(&p, 0.30, 0.07, None).unwrap();
        assert_eq!(t.codes, vec![2, 0, 255]);
        let only0: BTreeSet<usize> = [0].into();
        assert_eq!(trimap_from_cam(&p, 0.30, 0.07, Some(&only0)).unwrap().codes, vec![255, 0, 255]);
    }

    #[test]
    fn trimap_branches_partition_a_dense_sweep() {
        let vals: Vec<f64> = (0..=10_000).map(|i| i as f64 / 10_000.0).collect();
        let p = ProbabilityMaps { width: vals.len(), height: 1, maps: vec![vals.clone()] };
        let t = trimap_from_cam(&p, 0.30, 0.07, None).unwrap();
        for (v, c) in vals.iter().zip(&t.codes) {
            let branches = [*v > 0.30, *v < 0.07, (0.07..=0.30).contains(v)];
            assert_eq!(branches.iter().filter(|b| **b).count(), 1);
            let want = if branches[0] { 1 } else if branches[1] { 0 } else { 255 };
            assert_eq!(*c, want, "p={v}");
        }
    }

    #[test]
    fn cam_normalisation() {
        let m = Tensor::from_vec([1, 2, 1, 3], vec![0.0, 4.0, 2.0, 5.0, 5.0, 5.0]);
        let p = cam_probabilities(&m, 3, 1).unwrap();
        assert_eq!(p.maps[0], vec![0.0, 1.0, 0.5]);
        assert_eq!(p.maps[1], vec![0.0; 3]);
        let r = Tensor::from_fn([1, 1, 4, 4], |[_, _, y, x]| ((y * 4 + x) as f64 * 1.7).cos());
        let lo = r.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let p = cam_probabilities(&r, 4, 4).unwrap();
        for (a, v) in p.maps[0].iter().zip(r.data()) {
            assert!((a - (v - lo) / (hi - lo)).abs() < 1e-15);
        }
    }

    #[test]
    fn palette_round_trip() {
        let t = trimap(4, 1, vec![0, 1, 255, 1]);
        let b = boundary_from_trimap(&t, 3, 0.3, 0.5).unwrap();
        let back = BoundaryLabelMap::from_plane(&b.to_plane(), 3).unwrap();
        assert_eq!(back, b);
        assert!(BoundaryLabelMap::from_plane(&LabelPlane::filled(1, 1, 7), 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn integral_counts_match_naive(w in 1usize..=64, h in 1usize..=64, seed in any::<u64>(), big in any::<bool>()) {
            let mut s = seed;
            let codes = (0..w * h).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                [0u8, 1, 2, 255][(s >> 62) as usize]
            }).collect();
            let t = trimap(w, h, codes);
            let k = if big { 13 } else { 3 };
            prop_assert_eq!(boundary_from_trimap(&t, k, 0.3, 0.5).unwrap().codes, naive(&t, k, 0.3, 0.5));
        }

        #[test]
        fn raising_rho_never_adds_boundary(seed in any::<u64>(), r1 in 0.01f64..0.5, r2 in 0.01f64..0.5) {
            let mut s = seed;
            let codes = (0..24 * 24).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                [0u8, 1, 255][(s >> 33) as usize % 3]
            }).collect();
            let t = trimap(24, 24, codes);
            let (lo, hi) = (r1.min(r2), r1.max(r2));
            let a = boundary_from_trimap(&t, 5, lo, 0.5).unwrap();
            let b = boundary_from_trimap(&t, 5, hi, 0.5).unwrap();
            for (x, y) in a.codes.iter().zip(&b.codes) {
                prop_assert!(!(*y == BoundaryCode::Boundary && *x != BoundaryCode::Boundary));
            }
        }
    }
}
