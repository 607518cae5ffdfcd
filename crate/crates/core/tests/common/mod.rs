//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scribsal::autograd::{standard_normal, ParamStore, Tensor};
use scribsal::metrics::EvalPair;
use scribsal::network::JauMode;
use scribsal::raster::{RasterImage, SaliencyMap};

pub fn smap(w: usize, h: usize, data: Vec<f64>) -> SaliencyMap {
    SaliencyMap { width: w, height: h, data }
}

/// Random prediction (with exact 0, 1 and grid values mixed in) against a
/// noisy disk ground truth.
pub fn random_pair(seed: u64, size: usize) -> EvalPair {
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
    EvalPair::new(format!("p{seed}"), smap(size, size, p), smap(size, size, g)).unwrap()
}

/// Metric oracle: direct loops over pixels, re-binarising at every threshold.
pub struct NaiveMetrics<'a> {
    w: usize,
    h: usize,
    p: &'a [f64],
    g: &'a [f64],
}

impl<'a> NaiveMetrics<'a> {
    pub fn of(pair: &'a EvalPair) -> Self {
        NaiveMetrics {
            w: pair.groundtruth.width,
            h: pair.groundtruth.height,
            p: &pair.prediction.data,
            g: &pair.groundtruth.data,
        }
    }

    fn at(&self, v: &[f64], x: usize, y: usize) -> f64 {
        v[y * self.w + x]
    }

    pub fn mae(&self) -> f64 {
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

    pub fn prf(&self, t: f64) -> (f64, f64, f64) {
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

    pub fn e(&self, t: f64) -> f64 {
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

    pub fn s(&self) -> f64 {
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
                if f % 2.0 == 0.0 {
                    f
                } else {
                    f + 1.0
                }
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

/// One sample's `C x H x W` feature map, for loop-based recomputation.
#[derive(Clone, Debug)]
pub struct Fm {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl Fm {
    pub fn of(t: &Tensor, n: usize) -> Fm {
        let [_, c, h, w] = t.shape();
        Fm {
            c,
            h,
            w,
            d: t.data()[n * c * h * w..(n + 1) * c * h * w].to_vec(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.d[(c * self.h + y) * self.w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Fm {
        Fm {
            d: self.d.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Elementwise with broadcasting of size-1 channel/spatial axes of `o`.
    pub fn zip(&self, o: &Fm, f: impl Fn(f64, f64) -> f64) -> Fm {
        let mut out = self.clone();
        for c in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    let b = o.at(c.min(o.c - 1), y.min(o.h - 1), x.min(o.w - 1));
                    out.d[(c * self.h + y) * self.w + x] = f(self.at(c, y, x), b);
                }
            }
        }
        out
    }

    pub fn max_diff(&self, t: &Tensor, n: usize) -> f64 {
        let o = Fm::of(t, n);
        assert_eq!((o.c, o.h, o.w), (self.c, self.h, self.w));
        self.d.iter().zip(&o.d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Same-padded stride-1 convolution read straight from the store.
pub fn conv(x: &Fm, store: &ParamStore, key: &str) -> Fm {
    let w = store.get(&format!("{key}.weight")).unwrap();
    let b = store.get(&format!("{key}.bias"));
    let [o, i, kh, kw] = w.shape();
    assert_eq!(i, x.c);
    let (ph, pw) = (kh as i64 / 2, kw as i64 / 2);
    let mut d = vec![0.0; o * x.h * x.w];
    for oc in 0..o {
        for y in 0..x.h as i64 {
            for xx in 0..x.w as i64 {
                let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                for ic in 0..i {
                    for ky in 0..kh as i64 {
                        for kx in 0..kw as i64 {
                            let (sy, sx) = (y + ky - ph, xx + kx - pw);
                            if sy >= 0 && sx >= 0 && sy < x.h as i64 && sx < x.w as i64 {
                                acc += w.at(oc, ic, ky as usize, kx as usize) * x.at(ic, sy as usize, sx as usize);
                            }
                        }
                    }
                }
                d[(oc * x.h + y as usize) * x.w + xx as usize] = acc;
            }
        }
    }
    Fm { c: o, h: x.h, w: x.w, d }
}

pub fn bn_eval(x: &Fm, store: &ParamStore, key: &str) -> Fm {
    let g = store.get(&format!("{key}.weight")).unwrap().data();
    let b = store.get(&format!("{key}.bias")).unwrap().data();
    let m = store.buffer(&format!("{key}.running_mean")).unwrap().data();
    let v = store.buffer(&format!("{key}.running_var")).unwrap().data();
    let mut out = x.clone();
    for c in 0..x.c {
        for i in 0..x.h * x.w {
            let j = c * x.h * x.w + i;
            out.d[j] = g[c] * (x.d[j] - m[c]) / (v[c] + 1e-5).sqrt() + b[c];
        }
    }
    out
}

pub fn cat(parts: &[&Fm]) -> Fm {
    let mut d = Vec::new();
    for p in parts {
        d.extend_from_slice(&p.d);
    }
    Fm {
        c: parts.iter().map(|p| p.c).sum(),
        h: parts[0].h,
        w: parts[0].w,
        d,
    }
}

/// Bilinear, half-pixel centres, edge clamped.
pub fn resize(x: &Fm, oh: usize, ow: usize) -> Fm {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let lo = (s.floor() as usize).min(n_in - 1);
        (lo, (lo + 1).min(n_in - 1), s - lo as f64)
    };
    let mut d = vec![0.0; x.c * oh * ow];
    for c in 0..x.c {
        for y in 0..oh {
            let (y0, y1, fy) = coord(y, x.h, oh);
            for xx in 0..ow {
                let (x0, x1, fx) = coord(xx, x.w, ow);
                d[(c * oh + y) * ow + xx] = (1.0 - fy) * ((1.0 - fx) * x.at(c, y0, x0) + fx * x.at(c, y0, x1))
                    + fy * ((1.0 - fx) * x.at(c, y1, x0) + fx * x.at(c, y1, x1));
            }
        }
    }
    Fm { c: x.c, h: oh, w: ow, d }
}

fn pooled(x: &Fm, max: bool) -> Fm {
    let n = x.h * x.w;
    let d = (0..x.c)
        .map(|c| {
            let s = &x.d[c * n..(c + 1) * n];
            if max {
                s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            } else {
                s.iter().sum::<f64>() / n as f64
            }
        })
        .collect();
    Fm { c: x.c, h: 1, w: 1, d }
}

fn channel_stat(x: &Fm, max: bool) -> Fm {
    let d = (0..x.h * x.w)
        .map(|i| {
            let vals = (0..x.c).map(|c| x.d[c * x.h * x.w + i]);
            if max {
                vals.fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.sum::<f64>() / x.c as f64
            }
        })
        .collect();
    Fm { c: 1, h: x.h, w: x.w, d }
}

/// Joint attention reference: CRB, channel gate, spatial gate.
pub fn jau_ref(x: &Fm, store: &ParamStore, path: &str, mode: JauMode) -> Fm {
    let f = bn_eval(&conv(x, store, &format!("{path}.crb.conv")).map(|v| v.max(0.0)), store, &format!("{path}.crb.bn"));
    if mode == JauMode::Sc {
        return f;
    }
    let mlp = |p: &Fm| {
        let h = conv(p, store, &format!("{path}.cab.fc1")).map(|v| v.max(0.0));
        conv(&h, store, &format!("{path}.cab.fc2"))
    };
    let cab = mlp(&pooled(&f, true)).zip(&mlp(&pooled(&f, false)), |a, b| sig(a + b));
    let fc = f.zip(&cab, |a, b| a * b);
    if mode == JauMode::Ca {
        return fc;
    }
    let sab = conv(&cat(&[&channel_stat(&f, true), &channel_stat(&f, false)]), store, &format!("{path}.sab.conv")).map(sig);
    fc.zip(&f.zip(&sab, |a, b| a * b), |a, b| a + b)
}

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| standard_normal(&mut rng))
}

/// Random biases and batch-norm statistics so every term is exercised.
pub fn perturb(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<String> = store.params().keys().filter(|k| k.ends_with(".bias")).cloned().collect();
    for k in keys {
        for v in store.get_mut(&k).unwrap().data_mut() {
            *v = 0.1 * standard_normal(&mut rng);
        }
    }
    let keys: Vec<String> = store.buffers().keys().cloned().collect();
    for k in keys {
        let var = k.ends_with("running_var");
        for v in store.buffer_mut(&k).unwrap().data_mut() {
            let r = standard_normal(&mut rng);
            *v = if var { 0.5 + r.abs() } else { 0.3 * r };
        }
    }
}

/// Checkerboard-ish RGB image with mild noise.
pub fn random_image(w: usize, h: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RasterImage::from_fn(w, h, |x, y| {
        let base = if (x / 4 + y / 5) % 2 == 0 { 0.2 } else { 0.8 };
        let mut c = || (base + 0.05 * standard_normal(&mut rng)).clamp(0.0, 1.0);
        [c(), c(), c()]
    })
}

/// Relative error `|g - g_fd| / |g_fd|` of an analytic gradient against
/// central differences with step `h`.
pub fn fd_relative_error(x: &[f64], grad: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let (mut diff, mut norm) = (0.0, 0.0);
    for i in 0..x.len() {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        let num = (f(&a) - f(&b)) / (2.0 * h);
        diff += (num - grad[i]).powi(2);
        norm += num * num;
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}
