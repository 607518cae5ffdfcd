use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smap(w: usize, h: usize, data: Vec<f64>) -> SaliencyMap {
    SaliencyMap { width: w, height: h, data }
}

fn pair(w: usize, h: usize, p: Vec<f64>, g: Vec<f64>) -> EvalPair {
    EvalPair::new("x", smap(w, h, p), smap(w, h, g)).unwrap()
}

/// Random prediction with some exact grid values, and a random blob GT.
pub(crate) fn random_pair(seed: u64, size: usize) -> EvalPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size * size;
    let p: Vec<f64> = (0..n)
        .map(|_| match rng.gen_range(0..6) {
            0 => 0.0,
            1 => 1.0,
            2 => rng.gen_range(0..256) as f64 / 256.0,
            _ => rng.gen(),
        })
        .collect();
    let (cx, cy, r) = (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64), rng.gen_range(1.0..size as f64 / 2.0));
    let noise = rng.gen_range(0.0..0.2);
    let g: Vec<f64> = (0..n)
        .map(|i| {
            let (x, y) = ((i % size) as f64, (i / size) as f64);
            let inside = (x - cx).powi(2) + (y - cy).powi(2) <= r * r;
            f64::from(u8::from(inside != rng.gen_bool(noise)))
        })
        .collect();
    pair(size, size, p, g)
}

// Naive oracles: direct loops over pixels at every threshold.

struct Naive<'a> {
    w: usize,
    h: usize,
    p: &'a [f64],
    g: &'a [f64],
}

impl<'a> Naive<'a> {
    fn of(pair: &'a EvalPair) -> Self {
        Naive { w: pair.groundtruth.width, h: pair.groundtruth.height, p: &pair.prediction.data, g: &pair.groundtruth.data }
    }

    fn at(&self, v: &[f64], x: usize, y: usize) -> f64 {
        v[y * self.w + x]
    }

    fn mae(&self) -> f64 {
        let mut s = 0.0;
        for y in 0..self.h {
            for x in 0..self.w {
                s += (self.at(self.p, x, y) - self.at(self.g, x, y)).abs();
            }
        }
        s / (self.w * self.h) as f64
    }

    fn binarize(&self, t: f64) -> Vec<f64> {
        self.p.iter().map(|&v| if v > t { 1.0 } else { 0.0 }).collect()
    }

    fn prf(&self, t: f64) -> (f64, f64, f64) {
        let b = self.binarize(t);
        let (mut tp, mut pos, mut gt) = (0.0, 0.0, 0.0);
        for y in 0..self.h {
            for x in 0..self.w {
                let (pb, gv) = (self.at(&b, x, y), self.at(self.g, x, y));
                tp += pb * gv;
                pos += pb;
                gt += gv;
            }
        }
        if gt == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let prec = if pos == 0.0 { 0.0 } else { tp / pos };
        let rec = tp / gt;
        let f = if prec + rec == 0.0 { 0.0 } else { 1.3 * prec * rec / (0.3 * prec + rec) };
        (prec, rec, f)
    }

    fn e(&self, t: f64) -> f64 {
        let fm = self.binarize(t);
        let n = (self.w * self.h) as f64;
        let mg = self.g.iter().sum::<f64>() / n;
        let mf = fm.iter().sum::<f64>() / n;
        let mut s = 0.0;
        for y in 0..self.h {
            for x in 0..self.w {
                let (fv, gv) = (self.at(&fm, x, y), self.at(self.g, x, y));
                s += if mg == 0.0 {
                    1.0 - fv
                } else if mg == 1.0 {
                    fv
                } else {
                    let (a, b) = (gv - mg, fv - mf);
                    let al = 2.0 * a * b / (a * a + b * b);
                    (al + 1.0).powi(2) / 4.0
                };
            }
        }
        s / n
    }

    fn ssim(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> f64 {
        let n = ((x1 - x0) * (y1 - y0)) as f64;
        let (mut mp, mut mg) = (0.0, 0.0);
        for y in y0..y1 {
            for x in x0..x1 {
                mp += self.at(self.p, x, y);
                mg += self.at(self.g, x, y);
            }
        }
        mp /= n;
        mg /= n;
        let (mut vp, mut vg, mut cov) = (0.0, 0.0, 0.0);
        for y in y0..y1 {
            for x in x0..x1 {
                let a = self.at(self.p, x, y) - mp;
                let b = self.at(self.g, x, y) - mg;
                vp += a * a / (n - 1.0);
                vg += b * b / (n - 1.0);
                cov += a * b / (n - 1.0);
            }
        }
        let num = 4.0 * mp * mg * cov;
        let den = (mp * mp + mg * mg) * (vp + vg);
        if num != 0.0 {
            num / den
        } else if den == 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn s(&self) -> f64 {
        let n = (self.w * self.h) as f64;
        let mg = self.g.iter().sum::<f64>() / n;
        let mp = self.p.iter().sum::<f64>() / n;
        if mg == 0.0 {
            return 1.0 - mp;
        }
        if mg == 1.0 {
            return mp;
        }
        let obj = |want: f64| {
            let vals: Vec<f64> = (0..self.p.len())
                .filter(|&i| self.g[i] == want)
                .map(|i| if want == 1.0 { self.p[i] } else { 1.0 - self.p[i] })
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = if vals.len() > 1 {
                (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            2.0 * m / (m * m + 1.0 + sd)
        };
        let so = mg * obj(1.0) + (1.0 - mg) * obj(0.0);
        let (mut sx, mut sy, mut c) = (0.0, 0.0, 0.0);
        for y in 0..self.h {
            for x in 0..self.w {
                if self.at(self.g, x, y) == 1.0 {
                    sx += x as f64;
                    sy += y as f64;
                    c += 1.0;
                }
            }
        }
        let round = |v: f64| {
            let f = v.floor();
            if v - f == 0.5 {
                if f % 2.0 == 0.0 { f } else { f + 1.0 }
            } else {
                v.round()
            }
        };
        let cx = round(sx / c) as usize + 1;
        let cy = round(sy / c) as usize + 1;
        let (w, h) = (self.w, self.h);
        let mut sr = 0.0;
        for (x0, x1, y0, y1) in [(0, cx, 0, cy), (cx, w, 0, cy), (0, cx, cy, h), (cx, w, cy, h)] {
            let area = ((x1 - x0) * (y1 - y0)) as f64;
            if area > 0.0 {
                sr += area / n * self.ssim(x0, x1, y0, y1);
            }
        }
        (0.5 * so + 0.5 * sr).max(0.0)
    }
}

#[test]
fn mae_examples() {
    let p = pair(2, 2, vec![1.0, 0.5, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(mae(&p), 0.125);
    assert_eq!(mae(&pair(2, 1, vec![1.0; 2], vec![0.0; 2])), 1.0);
}

#[test]
fn f_beta_examples() {
    assert!((f_beta(0.8, 0.5) - 1.3 * 0.4 / (0.3 * 0.8 + 0.5)).abs() < 1e-15);
    assert!((f_beta(0.8, 0.5) - 0.7027).abs() < 1e-4);
    for x in [0.1, 0.37, 0.9] {
        assert!((f_beta(x, x) - x).abs() < 1e-15);
    }
    assert_eq!(f_beta(0.0, 0.0), 0.0);
}

#[test]
fn zero_threshold_recalls_everything() {
    let p = pair(2, 2, vec![0.01, 0.2, 0.5, 0.9], vec![0.0, 1.0, 1.0, 0.0]);
    let c = prf_curve(&p);
    assert_eq!(c.recall[0], 1.0);
    assert_eq!(c.precision[0], 0.5);
    assert_eq!(c.precision[255], 0.0);
}

#[test]
fn binning_is_strict_on_grid_values() {
    let p = pair(4, 1, vec![0.0, 1.0 / 256.0, 128.0 / 256.0, 1.0], vec![1.0; 4]);
    let c = prf_curve(&p);
    assert_eq!(c.recall[0], 0.75);
    assert_eq!(c.recall[1], 0.5);
    assert_eq!(c.recall[127], 0.5);
    assert_eq!(c.recall[128], 0.25);
    assert_eq!(c.recall[255], 0.25);
}

#[test]
fn oracle_equivalence_on_random_pairs() {
    let ts = thresholds();
    for seed in 0..100 {
        let pr = random_pair(seed, 16);
        let nv = Naive::of(&pr);
        assert!((mae(&pr) - nv.mae()).abs() < 1e-6);
        let c = prf_curve(&pr);
        let e = e_curve(&pr);
        for (k, &t) in ts.iter().enumerate() {
            let (p, r, f) = nv.prf(t);
            assert!((c.precision[k] - p).abs() < 1e-6, "seed {seed} k {k}");
            assert!((c.recall[k] - r).abs() < 1e-6);
            assert!((c.f[k] - f).abs() < 1e-6);
            assert!((e[k] - nv.e(t)).abs() < 1e-6, "seed {seed} k {k}: {} vs {}", e[k], nv.e(t));
            assert!((0.0..=1.0).contains(&e[k]));
        }
        let s = s_measure(&pr, S_ALPHA);
        assert!((s - nv.s()).abs() < 1e-6, "seed {seed}: {s} vs {}", nv.s());
        assert!((0.0..=1.0).contains(&s));
    }
}

#[test]
fn perfect_and_inverted_anchors() {
    for seed in 0..20 {
        let base = random_pair(seed, 16);
        let g = base.groundtruth.data.clone();
        let perfect = pair(16, 16, g.clone(), g.clone());
        let r = evaluate_pairs(std::slice::from_ref(&perfect));
        assert_eq!(
            r.summary,
            MetricSummary { s_measure: 1.0, e_avg: 1.0, e_max: 1.0, f_avg: 1.0, f_max: 1.0, mae: 0.0 }
        );
        assert!(r.curves.precision.iter().chain(&r.curves.recall).all(|&v| v == 1.0));
        let inv = pair(16, 16, g.iter().map(|v| 1.0 - v).collect(), g.clone());
        assert_eq!(mae(&inv), 1.0);
        if g.contains(&1.0) && g.contains(&0.0) {
            assert!(e_measure(&inv).1 < 1e-12);
        }
    }
}

#[test]
fn complement_two_by_two_has_zero_alignment() {
    let p = pair(2, 2, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
    assert_eq!(e_curve(&p).iter().copied().fold(0.0, f64::max), 0.0);
}

#[test]
fn degenerate_ground_truth() {
    let empty = pair(2, 2, vec![0.0, 0.0, 0.5, 1.0], vec![0.0; 4]);
    let r = evaluate_pairs(std::slice::from_ref(&empty));
    assert!(r.images[0].empty_gt);
    assert_eq!(r.images[0].f_max, 0.0);
    assert_eq!(s_measure(&empty, 0.5), 1.0 - 1.5 / 4.0);
    assert_eq!(e_curve(&empty)[0], 0.5);
    let full = pair(2, 2, vec![0.0, 0.0, 0.5, 1.0], vec![1.0; 4]);
    assert_eq!(s_measure(&full, 0.5), 1.5 / 4.0);
    assert_eq!(e_curve(&full)[0], 0.5);
}

#[test]
fn mismatched_or_non_binary_pairs_are_rejected() {
    assert!(EvalPair::new("a", smap(2, 1, vec![0.0; 2]), smap(1, 2, vec![0.0; 2])).is_err());
    assert!(EvalPair::new("a", smap(2, 1, vec![0.0; 2]), smap(2, 1, vec![0.5, 1.0])).is_err());
}

#[test]
fn aggregation_averages_curves_before_stats() {
    let a = random_pair(1, 16);
    let b = random_pair(2, 16);
    let r = evaluate_pairs(&[a.clone(), b.clone()]);
    let (fa, fb) = (prf_curve(&a).f, prf_curve(&b).f);
    let mean: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| (x + y) / 2.0).collect();
    assert!((r.summary.f_max - mean.iter().copied().fold(0.0, f64::max)).abs() < 1e-15);
    assert!((r.summary.f_avg - mean.iter().sum::<f64>() / 256.0).abs() < 1e-15);
    assert!(r.summary.f_max >= r.summary.f_avg && r.summary.e_max >= r.summary.e_avg);
    let swapped = evaluate_pairs(&[b, a]);
    assert!((swapped.summary.s_measure - r.summary.s_measure).abs() < 1e-15);
    assert!((swapped.summary.mae - r.summary.mae).abs() < 1e-15);
}

#[test]
fn dataset_files_and_curves_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (pd, gd) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pd).unwrap();
    std::fs::create_dir_all(&gd).unwrap();
    for seed in 0..3 {
        let p = random_pair(seed, 16);
        p.groundtruth.save(gd.join(format!("img{seed}.png"))).unwrap();
        p.groundtruth.save(pd.join(format!("img{seed}.png"))).unwrap();
    }
    random_pair(9, 16).groundtruth.save(gd.join("only_gt.png")).unwrap();
    let r = evaluate_dataset(&pd, &gd).unwrap();
    assert_eq!(r.images.len(), 3);
    assert_eq!(r.unmatched, vec!["only_gt"]);
    assert_eq!(r.summary.mae, 0.0);
    assert_eq!(r.summary.f_max, 1.0);

    let json = dir.path().join("report.json");
    r.save_json(&json).unwrap();
    assert_eq!(MetricReport::load_json(&json).unwrap(), r);
    let csv = dir.path().join("curves.csv");
    r.write_curves_csv(&csv).unwrap();
    let back = read_curves_csv(&csv).unwrap();
    assert_eq!(back.threshold.len(), 256);
    assert_eq!(back.precision, r.curves.precision);
    assert_eq!(back.recall, r.curves.recall);
    assert_eq!(back.f, r.curves.f);
    assert_eq!(back.threshold, r.curves.threshold);
}

proptest::proptest! {
    #[test]
    fn recall_non_increasing_in_threshold(seed in 0u64..10_000) {
        let c = prf_curve(&random_pair(seed, 12));
        for k in 1..NUM_THRESHOLDS {
            proptest::prop_assert!(c.recall[k] <= c.recall[k - 1]);
        }
    }

    #[test]
    fn measures_lie_in_unit_interval(seed in 0u64..10_000) {
        let r = evaluate_pairs(&[random_pair(seed, 10)]);
        let s = r.summary;
        for v in [s.s_measure, s.e_avg, s.e_max, s.f_avg, s.f_max, s.mae] {
            proptest::prop_assert!((0.0..=1.0).contains(&v));
        }
        proptest::prop_assert!(s.f_max >= s.f_avg && s.e_max >= s.e_avg);
    }
}
