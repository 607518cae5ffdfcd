//! Raw forward/backward kernels used by the graph.
//!
//! Convolution lowers each sample to an im2col matrix, processed in bands of
//! output rows so the column buffer stays bounded for large inputs.

use rayon::prelude::*;

use super::tensor::Tensor;

/// Column buffer budget in elements (32 MiB of `f64`).
const COL_BUDGET: usize = 4 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: (usize, usize),
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride 1, no dilation, "same" padding for the kernel size.
    pub fn same(kh: usize, kw: usize) -> Self {
        ConvSpec {
            stride: 1,
            pad: (kh / 2, kw / 2),
            dilation: 1,
        }
    }

    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        let eff_h = self.dilation * (kh - 1) + 1;
        let eff_w = self.dilation * (kw - 1) + 1;
        assert!(
            h + 2 * self.pad.0 >= eff_h && w + 2 * self.pad.1 >= eff_w,
            "convolution kernel larger than padded input"
        );
        (
            (h + 2 * self.pad.0 - eff_h) / self.stride + 1,
            (w + 2 * self.pad.1 - eff_w) / self.stride + 1,
        )
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl ConvGeom {
    fn new(x: [usize; 4], wt: [usize; 4], spec: ConvSpec) -> Self {
        assert_eq!(
            x[1], wt[1],
            "conv input has {} channels but weight expects {}",
            x[1], wt[1]
        );
        let (oh, ow) = spec.output_size(x[2], x[3], wt[2], wt[3]);
        ConvGeom {
            cin: x[1],
            h: x[2],
            w: x[3],
            kh: wt[2],
            kw: wt[3],
            oh,
            ow,
            spec,
        }
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.k() * self.ow).max(1)).clamp(1, self.oh)
    }

    /// Source coordinate for output `o` and kernel tap `k` along one axis.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, dil: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k * dil) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    fn im2col(&self, x: &[f64], oy0: usize, rows: usize, cols: &mut [f64]) {
        let p = rows * self.ow;
        let s = self.spec;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for r in 0..rows {
                        let oy = oy0 + r;
                        let line = &mut dst[r * self.ow..(r + 1) * self.ow];
                        match Self::src(oy, ky, s.stride, s.dilation, s.pad.0, self.h) {
                            None => line.fill(0.0),
                            Some(iy) => {
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match Self::src(ox, kx, s.stride, s.dilation, s.pad.1, self.w) {
                                        Some(ix) => plane[iy * self.w + ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], oy0: usize, rows: usize, dx: &mut [f64]) {
        let p = rows * self.ow;
        let s = self.spec;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for r in 0..rows {
                        let Some(iy) = Self::src(oy0 + r, ky, s.stride, s.dilation, s.pad.0, self.h)
                        else {
                            continue;
                        };
                        for ox in 0..self.ow {
                            if let Some(ix) = Self::src(ox, kx, s.stride, s.dilation, s.pad.1, self.w) {
                                plane[iy * self.w + ix] += src[r * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m,n] = beta*c + a[m,k] * b[k,n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa || k == 0);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the slices cover every index addressed by the given dimensions
    // and strides (checked above), and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Tensor {
    let [n, _, _, _] = x.shape();
    let cout = weight.shape()[0];
    let g = ConvGeom::new(x.shape(), weight.shape(), spec);
    let k = g.k();
    let in_per = x.numel() / n.max(1);
    let out_per = cout * g.oh * g.ow;
    let mut out = Tensor::zeros([n, cout, g.oh, g.ow]);
    let band = g.band_rows();
    out.data_mut()
        .par_chunks_mut(out_per.max(1))
        .enumerate()
        .for_each(|(s, out_s)| {
            let xs = &x.data()[s * in_per..(s + 1) * in_per];
            let mut cols = vec![0.0; k * band * g.ow];
            let mut oy0 = 0;
            while oy0 < g.oh {
                let rows = band.min(g.oh - oy0);
                let p = rows * g.ow;
                g.im2col(xs, oy0, rows, &mut cols[..k * p]);
                gemm(
                    cout,
                    k,
                    p,
                    weight.data(),
                    k,
                    1,
                    &cols[..k * p],
                    p,
                    1,
                    0.0,
                    &mut out_s[oy0 * g.ow..],
                    g.oh * g.ow,
                );
                oy0 += rows;
            }
            if let Some(b) = bias {
                for (o, plane) in out_s.chunks_mut(g.oh * g.ow).enumerate() {
                    let bv = b.data()[o];
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    out
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    dy: &Tensor,
    spec: ConvSpec,
    need_dx: bool,
) -> ConvGrads {
    let [n, _, _, _] = x.shape();
    let cout = weight.shape()[0];
    let g = ConvGeom::new(x.shape(), weight.shape(), spec);
    let k = g.k();
    let in_per = x.numel() / n.max(1);
    let out_per = cout * g.oh * g.ow;
    let band = g.band_rows();

    let per_sample: Vec<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let xs = &x.data()[s * in_per..(s + 1) * in_per];
            let dys = &dy.data()[s * out_per..(s + 1) * out_per];
            let mut dw = vec![0.0; cout * k];
            let mut dx = need_dx.then(|| vec![0.0; in_per]);
            let mut cols = vec![0.0; k * band * g.ow];
            let mut dcols = if need_dx { vec![0.0; k * band * g.ow] } else { Vec::new() };
            let mut oy0 = 0;
            while oy0 < g.oh {
                let rows = band.min(g.oh - oy0);
                let p = rows * g.ow;
                g.im2col(xs, oy0, rows, &mut cols[..k * p]);
                let dy_band = &dys[oy0 * g.ow..];
                // dW[O,K] += dY[O,P] * cols[K,P]^T
                gemm(cout, p, k, dy_band, g.oh * g.ow, 1, &cols[..k * p], 1, p, 1.0, &mut dw, k);
                if let Some(dx) = dx.as_mut() {
                    // dcols[K,P] = W^T[K,O] * dY[O,P]
                    gemm(
                        k,
                        cout,
                        p,
                        weight.data(),
                        1,
                        k,
                        dy_band,
                        g.oh * g.ow,
                        1,
                        0.0,
                        &mut dcols[..k * p],
                        p,
                    );
                    g.col2im_add(&dcols[..k * p], oy0, rows, dx);
                }
                oy0 += rows;
            }
            let db = dys
                .chunks(g.oh * g.ow)
                .map(|plane| plane.iter().sum::<f64>())
                .collect();
            (dw, db, dx)
        })
        .collect();

    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros([1, cout, 1, 1]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for (s, (dws, dbs, dxs)) in per_sample.into_iter().enumerate() {
        for (a, b) in dw.data_mut().iter_mut().zip(&dws) {
            *a += b;
        }
        for (a, b) in db.data_mut().iter_mut().zip(&dbs) {
            *a += b;
        }
        if let (Some(dx), Some(dxs)) = (dx.as_mut(), dxs) {
            dx.data_mut()[s * in_per..(s + 1) * in_per].copy_from_slice(&dxs);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Interpolation taps along one axis for half-pixel-centred bilinear
/// resampling (the `align_corners = false` convention).
#[derive(Clone, Copy, Debug)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

pub fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let w1 = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - w1,
                w1,
            }
        })
        .collect()
}

/// Bilinear resample of a single `h x w` plane.
pub fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0; oh * ow];
    for (oy, a) in ty.iter().enumerate() {
        let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
        let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
        for (ox, b) in tx.iter().enumerate() {
            let top = b.w0 * r0[b.i0] + b.w1 * r0[b.i1];
            let bot = b.w0 * r1[b.i0] + b.w1 * r1[b.i1];
            out[oy * ow + ox] = a.w0 * top + a.w1 * bot;
        }
    }
    out
}

pub fn resize_forward(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let mut data = Vec::with_capacity(n * c * oh * ow);
    for s in 0..n {
        for ch in 0..c {
            data.extend(resize_plane(x.plane(s, ch), h, w, oh, ow));
        }
    }
    Tensor::from_vec([n, c, oh, ow], data)
}

pub fn resize_backward(dy: &Tensor, in_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = in_shape;
    let [_, _, oh, ow] = dy.shape();
    if (h, w) == (oh, ow) {
        return dy.clone();
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut dx = Tensor::zeros(in_shape);
    for s in 0..n {
        for ch in 0..c {
            let g = dy.plane(s, ch);
            let base = dx.offset(s, ch, 0, 0);
            let plane = &mut dx.data_mut()[base..base + h * w];
            for (oy, a) in ty.iter().enumerate() {
                for (ox, b) in tx.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    plane[a.i0 * w + b.i0] += a.w0 * b.w0 * v;
                    plane[a.i0 * w + b.i1] += a.w0 * b.w1 * v;
                    plane[a.i1 * w + b.i0] += a.w1 * b.w0 * v;
                    plane[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
                }
            }
        }
    }
    dx
}

/// Max pooling; returns the output and, per output element, the flat index
/// of the winning input element.
pub fn max_pool_forward(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = x.shape();
    assert!(h + 2 * pad >= kernel && w + 2 * pad >= kernel, "pool window larger than input");
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    let mut o = 0;
    for s in 0..n {
        for ch in 0..c {
            let base = x.offset(s, ch, 0, 0);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let i = base + iy as usize * w + ix as usize;
                            if x.data()[i] > best {
                                best = x.data()[i];
                                best_i = i;
                            }
                        }
                    }
                    out.data_mut()[o] = best;
                    arg[o] = best_i;
                    o += 1;
                }
            }
        }
    }
    (out, arg)
}

/// Per-channel batch statistics over `(n, h, w)`: mean and biased variance.
pub fn channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = x.shape();
    let count = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for s in 0..n {
            acc += x.plane(s, ch).iter().sum::<f64>();
        }
        let m = acc / count;
        let mut sq = 0.0;
        for s in 0..n {
            sq += x.plane(s, ch).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    (mean, var)
}
