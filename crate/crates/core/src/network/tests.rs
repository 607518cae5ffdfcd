//! Step-by-step recomputation of each block with plain loops, compared to
//! the graph implementation under frozen parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::{standard_normal, ParamStore, Tensor};

/// One sample's `C x H x W` feature map.
#[derive(Clone, Debug)]
struct Fm {
    c: usize,
    h: usize,
    w: usize,
    d: Vec<f64>,
}

impl Fm {
    fn of(t: &Tensor, n: usize) -> Fm {
        let [_, c, h, w] = t.shape();
        Fm {
            c,
            h,
            w,
            d: t.data()[n * c * h * w..(n + 1) * c * h * w].to_vec(),
        }
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.d[(c * self.h + y) * self.w + x]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Fm {
        Fm {
            d: self.d.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    fn zip(&self, o: &Fm, f: impl Fn(f64, f64) -> f64) -> Fm {
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

    fn max_diff(&self, t: &Tensor, n: usize) -> f64 {
        let o = Fm::of(t, n);
        assert_eq!((o.c, o.h, o.w), (self.c, self.h, self.w));
        self.d.iter().zip(&o.d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn conv(x: &Fm, store: &ParamStore, key: &str) -> Fm {
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

fn bn_eval(x: &Fm, store: &ParamStore, key: &str) -> Fm {
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

fn cat(parts: &[&Fm]) -> Fm {
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
fn resize(x: &Fm, oh: usize, ow: usize) -> Fm {
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

fn jau_ref(x: &Fm, store: &ParamStore, path: &str, mode: JauMode) -> Fm {
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

fn random(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| standard_normal(&mut rng))
}

/// Gives batch-norm layers non-trivial running statistics and every bias a
/// random value so the oracles exercise all terms.
fn perturb(store: &mut ParamStore, seed: u64) {
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

fn random_image(w: usize, h: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RasterImage::from_fn(w, h, |x, y| {
        let base = if (x / 4 + y / 5) % 2 == 0 { 0.2 } else { 0.8 };
        let mut c = || (base + 0.05 * standard_normal(&mut rng)).clamp(0.0, 1.0);
        [c(), c(), c()]
    })
}

#[test]
fn jau_matches_stepwise_reference() {
    for mode in [JauMode::Jau, JauMode::Ca, JauMode::Sc] {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let jau = Jau::new(&mut store, "j", 16, 16, 16, mode, &mut rng);
        perturb(&mut store, 4);
        let x = random([2, 16, 8, 8], 5);
        let mut g = Graph::new(&store, false);
        let xv = g.constant(x.clone());
        let parts = jau.forward_parts(&mut g, xv).unwrap();
        assert_eq!(g.shape(parts.out), [2, 16, 8, 8]);
        for n in 0..2 {
            let want = jau_ref(&Fm::of(&x, n), &store, "j", mode);
            assert!(want.max_diff(g.value(parts.out), n) < 1e-6, "{mode}");
        }
        for gate in [parts.channel, parts.spatial].into_iter().flatten() {
            assert!(g.value(gate).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn saturated_gates_double_the_refined_features() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let jau = Jau::new(&mut store, "j", 3, 8, 16, JauMode::Jau, &mut rng);
    let [_, fc2] = jau.channel_gate_keys().unwrap();
    let (fc2, sab) = (fc2.to_string(), jau.spatial_gate_key().unwrap().to_string());
    store.get_mut(&fc2).unwrap().data_mut().fill(1e3);
    store.get_mut(&sab).unwrap().data_mut().fill(1e3);
    let mut g = Graph::new(&store, false);
    let x = g.constant(random([1, 3, 8, 8], 1));
    let p = jau.forward_parts(&mut g, x).unwrap();
    let twice = g.value(p.refined).map(|v| 2.0 * v);
    assert!(twice.max_abs_diff(g.value(p.out)) < 1e-12);
}

#[test]
fn bam_matches_stepwise_reference() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bam = Bam::new(&mut store, 5, 7, 6, 16, JauMode::Jau, Some(3), &mut rng);
    perturb(&mut store, 12);
    let f1 = random([1, 5, 16, 16], 13);
    let f2 = random([1, 7, 8, 8], 14);
    let img = random([1, 3, 16, 16], 15);
    let edges = Tensor::from_fn([1, 1, 16, 16], |[_, _, y, x]| ((x + y) % 5 == 0) as u8 as f64);
    let mut g = Graph::new(&store, false);
    let (a, b, c, d) = (g.constant(f1.clone()), g.constant(f2.clone()), g.constant(img.clone()), g.constant(edges.clone()));
    let parts = bam.forward_parts(&mut g, a, b, c, d).unwrap();

    let ja1 = jau_ref(&Fm::of(&f1, 0), &store, "bam.jau1", JauMode::Jau);
    let ja2 = jau_ref(&Fm::of(&f2, 0), &store, "bam.jau2", JauMode::Jau);
    let ja2_up = resize(&ja2, 16, 16);
    let im = Fm::of(&img, 0);
    let v = conv(&im, &store, "bam.eau.vertical").map(|v| v.max(0.0));
    let h = conv(&im, &store, "bam.eau.horizontal").map(|v| v.max(0.0));
    let fa = conv(&cat(&[&v, &h, &Fm::of(&edges, 0)]), &store, "bam.eau.fuse");
    let fb = conv(&cat(&[&ja1, &ja2_up, &fa]), &store, "bam.out").map(sig);
    assert!(fb.max_diff(g.value(parts.boundary), 0) < 1e-6);
    assert!(fa.max_diff(g.value(parts.edge.unwrap()), 0) < 1e-6);
    assert!(g.value(parts.boundary).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn das_matches_stepwise_reference() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let das = Das::new(&mut store, [5, 6, 7], 4, &mut rng);
    perturb(&mut store, 22);
    let f3 = random([1, 5, 16, 16], 23);
    let f4 = random([1, 6, 8, 8], 24);
    let f5 = random([1, 7, 4, 4], 25);
    let mut g = Graph::new(&store, false);
    let (a, b, c) = (g.constant(f3.clone()), g.constant(f4.clone()), g.constant(f5.clone()));
    let parts = das.forward_parts(&mut g, a, b, c).unwrap();
    assert_eq!(g.shape(parts.initial), [1, 1, 16, 16]);

    let x3 = conv(&Fm::of(&f3, 0), &store, "das.proj3");
    let x4 = conv(&Fm::of(&f4, 0), &store, "das.proj4");
    let x5 = conv(&Fm::of(&f5, 0), &store, "das.proj5");
    let c = |i: usize, x: &Fm| conv(x, &store, &format!("das.conv{i}"));
    let x5u = resize(&x5, 8, 8);
    let f1 = c(1, &x5u).zip(&x4, |a, b| a * b);
    let f2 = c(3, &cat(&[&f1, &c(2, &x5u)]));
    let f3r = c(4, &resize(&x5, 16, 16)).zip(&c(5, &resize(&x4, 16, 16)), |a, b| a * b).zip(&x3, |a, b| a * b);
    let fs = c(7, &cat(&[&f3r, &c(6, &resize(&f2, 16, 16))]));
    assert!(f1.max_diff(g.value(parts.f1), 0) < 1e-6);
    assert!(f2.max_diff(g.value(parts.f2), 0) < 1e-6);
    assert!(fs.max_diff(g.value(parts.initial), 0) < 1e-6);
}

#[test]
fn zero_top_feature_gates_first_aggregate_to_zero() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let das = Das::new(&mut store, [3, 3, 3], 4, &mut rng);
    let mut g = Graph::new(&store, false);
    let a = g.constant(random([1, 3, 8, 8], 1));
    let b = g.constant(random([1, 3, 4, 4], 2));
    let c = g.constant(Tensor::zeros([1, 3, 2, 2]));
    let parts = das.forward_parts(&mut g, a, b, c).unwrap();
    assert!(g.value(parts.f1).data().iter().all(|&v| v == 0.0));
}

#[test]
fn shape_contract_holds_across_sizes() {
    let (net, store) = SbaNet::build(&NetworkConfig::tiny(), 0).unwrap();
    for size in [64usize, 128, 352] {
        let img = random_image(size, size, 1);
        let input = NetInput::from_images(&[img], &Normalization::default(), &CannyConfig::default()).unwrap();
        let mut g = Graph::new(&store, false);
        let out = net.forward(&mut g, &input).unwrap();
        for (s, f) in out.pyramid.f.iter().enumerate() {
            let side = size >> s;
            assert_eq!(g.shape(*f)[2..], [side, side]);
            assert!(g.value(*f).is_finite());
        }
        assert_eq!(g.shape(out.initial.unwrap()), [1, 1, size / 4, size / 4]);
        assert_eq!(g.shape(out.boundary.unwrap()), [1, 1, size, size]);
        assert_eq!(g.shape(out.saliency), [1, 1, size, size]);
        assert!(g.value(out.saliency).data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(g.value(out.boundary.unwrap()).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn size_not_multiple_of_16_is_shape_error() {
    let (net, store) = SbaNet::build(&NetworkConfig::tiny(), 0).unwrap();
    let input = NetInput::from_images(&[random_image(40, 48, 0)], &Normalization::default(), &CannyConfig::default()).unwrap();
    let mut g = Graph::new(&store, false);
    assert!(matches!(net.forward(&mut g, &input), Err(Error::Shape(_))));
}

#[test]
fn zero_image_with_zero_biases_gives_zero_pyramid() {
    let (net, store) = SbaNet::build(&NetworkConfig::tiny(), 5).unwrap();
    let mut g = Graph::new(&store, false);
    let x = g.constant(Tensor::zeros([1, 3, 32, 32]));
    let p = net.encoder().forward(&mut g, x).unwrap();
    for f in p.f {
        assert!(g.value(f).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn inference_is_deterministic() {
    let (net, store) = SbaNet::build(&NetworkConfig::tiny(), 9).unwrap();
    let input = NetInput::from_images(&[random_image(32, 32, 3)], &Normalization::default(), &CannyConfig::default()).unwrap();
    assert_eq!(net.predict(&store, &input).unwrap(), net.predict(&store, &input).unwrap());
}

#[test]
fn edge_channel_of_constant_image_is_zero() {
    let img = RasterImage::from_fn(32, 32, |_, _| [0.4, 0.5, 0.6]);
    let input = NetInput::from_images(&[img], &Normalization::default(), &CannyConfig::default()).unwrap();
    assert!(input.edges.data().iter().all(|&v| v == 0.0));
}

#[test]
fn edge_features_keep_full_resolution() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eau = Eau::new(&mut store, "e", 2, 3, &mut rng);
    let mut g = Graph::new(&store, false);
    let x = g.constant(random([1, 3, 352, 352], 0));
    let e = g.constant(Tensor::zeros([1, 1, 352, 352]));
    let fa = eau.forward(&mut g, x, e);
    assert_eq!(g.shape(fa), [1, 3, 352, 352]);
}

#[test]
fn ablation_rows_have_distinct_parameter_counts() {
    let counts: Vec<usize> = Ablation::lattice()
        .iter()
        .map(|(_, ab)| SbaNet::build(&NetworkConfig::default().with_ablation(*ab), 0).unwrap().1.num_params())
        .collect();
    for i in 0..counts.len() {
        for j in i + 1..counts.len() {
            assert_ne!(counts[i], counts[j], "rows {i} and {j}");
        }
    }
    let full = counts[5];
    let no_eau = counts[4];
    let sc = counts[2];
    assert!(full > no_eau && no_eau > sc, "{counts:?}");
}

#[test]
fn eau_without_boundary_branch_rejected() {
    let cfg = NetworkConfig::tiny().with_ablation(Ablation {
        das: true,
        jau_mode: JauMode::Off,
        eau: true,
    });
    assert!(matches!(SbaNet::build(&cfg, 0), Err(Error::Validation(_))));
}

/// Sampled parameter gradients of a fixed linear functional of both heads
/// agree with central differences.
#[test]
fn full_model_gradients_match_finite_differences() {
    let (net, store) = SbaNet::build(&NetworkConfig::tiny(), 17).unwrap();
    assert!(store.num_params() <= 10_000, "{}", store.num_params());
    let input = NetInput::from_images(
        &[random_image(32, 32, 1), random_image(32, 32, 2)],
        &Normalization::default(),
        &CannyConfig::default(),
    )
    .unwrap();
    let r1 = random([2, 1, 32, 32], 31);
    let r2 = random([2, 1, 32, 32], 32);
    let loss = |store: &ParamStore, want: bool| -> (f64, Option<std::collections::BTreeMap<String, Tensor>>) {
        let mut g = Graph::new(store, true);
        let out = net.forward(&mut g, &input).unwrap();
        let dot = |t: &Tensor, r: &Tensor| t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
        let s = dot(g.value(out.saliency), &r1);
        let b = dot(g.value(out.boundary.unwrap()), &r2);
        let ls = g.external_scalar(out.saliency, s, r1.clone());
        let lb = g.external_scalar(out.boundary.unwrap(), b, r2.clone());
        let total = g.sum_scalars(&[ls, lb]);
        let grads = want.then(|| g.backward(total).into_params());
        (s + b, grads)
    };
    let analytic = loss(&store, true).1.unwrap();
    assert_eq!(analytic.len(), store.params().len());
    let mut probe = store.clone();
    let h = 1e-6;
    for (key, value) in store.params() {
        let n = value.numel();
        let picks: Vec<usize> = (0..8.min(n)).map(|i| i * n / 8.min(n)).collect();
        for i in picks {
            let orig = value.data()[i];
            probe.get_mut(key).unwrap().data_mut()[i] = orig + h;
            let up = loss(&probe, false).0;
            probe.get_mut(key).unwrap().data_mut()[i] = orig - h;
            let down = loss(&probe, false).0;
            probe.get_mut(key).unwrap().data_mut()[i] = orig;
            let (a, num) = (analytic[key].data()[i], (up - down) / (2.0 * h));
            assert!((a - num).abs() <= 1e-3 * a.abs().max(num.abs()) + 1e-6, "{key}[{i}]: analytic {a} vs numeric {num}");
        }
    }
}
