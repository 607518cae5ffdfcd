use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CannyConfig {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        CannyConfig {
            sigma: 1.4,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl CannyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.low >= 0.0 && self.low < self.high) {
            return Err(Error::parameter(format!(
                "canny thresholds need 0 <= low < high, got low={} high={}",
                self.low, self.high
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::parameter(format!("canny sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Binary edge map (values 0 or 1, row-major) of an image's channel-mean
/// intensity.
pub fn canny_edges(image: &RasterImage, low: f64, high: f64, sigma: f64) -> Result<Vec<f64>> {
    let cfg = CannyConfig { sigma, low, high };
    cfg.validate()?;
    Ok(canny_plane(&image.intensity(), image.width(), image.height(), &cfg))
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

#[inline]
fn clampi(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

fn smooth(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * src[y * w + clampi(x as i64 + j as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clampi(y as i64 + j as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Unnormalised Sobel gradients (a unit ramp gives 8), replicate borders.
fn sobel(src: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: i64, y: i64| src[clampi(y, h) * w + clampi(x, w)];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Neighbour offsets along the quantised gradient direction (y grows down).
pub(crate) fn nms_offsets(gx: f64, gy: f64) -> (i64, i64) {
    let mut deg = gy.atan2(gx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        (1, 0)
    } else if deg < 67.5 {
        (1, 1)
    } else if deg < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

pub(crate) fn canny_plane(gray: &[f64], w: usize, h: usize, cfg: &CannyConfig) -> Vec<f64> {
    let smoothed = smooth(gray, w, h, cfg.sigma);
    let (gx, gy) = sobel(&smoothed, w, h);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let m = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let v = mag[i];
            if v <= 0.0 {
                continue;
            }
            let (dx, dy) = nms_offsets(gx[i], gy[i]);
            let (xi, yi) = (x as i64, y as i64);
            if v >= m(xi + dx, yi + dy) && v >= m(xi - dx, yi - dy) {
                thin[i] = v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] >= cfg.high).collect();
    for &i in &stack {
        out[i] = 1.0;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && thin[j] >= cfg.low {
                    out[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    out
}
