//! Synthetic degradations. Each is a pure function of the clean image, its parameters and a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    /// Additive white Gaussian noise; `sigma` on the 0-255 scale.
    GaussianNoise { sigma: f64 },
    /// Box downsample by `scale`, then bicubic upsample back to the original size.
    BicubicRefine { scale: usize },
    /// Gaussian defocus blur plus opposite horizontal shifts for the left and right views.
    DualPixelBlur { sigma: f64, shift: f64 },
    /// `clip(gain * x^gamma + noise)`, noise sigma on the 0-255 scale.
    LowLight { gain: f64, gamma: f64, sigma: f64 },
}

impl Degradation {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config { key: "data.synth".into(), msg: m });
        match *self {
            Degradation::GaussianNoise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad(format!("sigma {sigma} must be non-negative"))
            }
            Degradation::BicubicRefine { scale } if scale == 0 => bad("scale must be at least 1".into()),
            Degradation::DualPixelBlur { sigma, shift } if !(sigma >= 0.0 && shift.is_finite()) => {
                bad(format!("sigma {sigma} / shift {shift} invalid"))
            }
            Degradation::LowLight { gain, gamma, sigma } if !(gain > 0.0 && gamma > 0.0 && sigma >= 0.0) => {
                bad(format!("gain {gain}, gamma {gamma}, sigma {sigma} must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Degradations that act independently per pixel can be applied to crops.
    pub fn is_pointwise(&self) -> bool {
        matches!(self, Degradation::GaussianNoise { .. } | Degradation::LowLight { .. })
    }

    /// Output channels for a 3-channel input.
    pub fn out_channels(&self) -> usize {
        match self {
            Degradation::DualPixelBlur { .. } => 6,
            _ => 3,
        }
    }

    pub fn apply(&self, clean: &Tensor, seed: u64) -> Result<Tensor> {
        match *self {
            Degradation::GaussianNoise { sigma } => add_gaussian_noise(clean, sigma, seed),
            Degradation::BicubicRefine { scale } => bicubic_down_up(clean, scale),
            Degradation::DualPixelBlur { sigma, shift } => {
                let (l, r) = dual_pixel_views(clean, sigma, shift)?;
                super::dual_pixel_concat(&l, &r)
            }
            Degradation::LowLight { gain, gamma, sigma } => low_light(clean, gain, gamma, sigma, seed),
        }
    }
}

/// `n` i.i.d. samples of N(0, (sigma/255)^2).
pub fn gaussian_noise_field(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma / 255.0).expect("finite sigma");
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

pub fn add_gaussian_noise(clean: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::Invalid(format!("noise sigma {sigma} must be non-negative")));
    }
    if sigma == 0.0 {
        return Ok(clean.clone());
    }
    let noise = gaussian_noise_field(clean.numel(), sigma, seed);
    let v: Vec<f64> = clean
        .to_f64_vec()
        .iter()
        .zip(&noise)
        .map(|(x, n)| (x + n).clamp(0.0, 1.0))
        .collect();
    Tensor::from_f64(clean.shape(), &v, clean.dtype())
}

pub fn low_light(clean: &Tensor, gain: f64, gamma: f64, sigma: f64, seed: u64) -> Result<Tensor> {
    let noise = gaussian_noise_field(clean.numel(), sigma, seed);
    let v: Vec<f64> = clean
        .to_f64_vec()
        .iter()
        .zip(&noise)
        .map(|(x, n)| (gain * x.max(0.0).powf(gamma) + n).clamp(0.0, 1.0))
        .collect();
    Tensor::from_f64(clean.shape(), &v, clean.dtype())
}

/// Keys cubic kernel, `a = -0.5`.
fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

fn resample_axis_cubic(src: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let pos = (i as f64 + 0.5) * scale - 0.5;
            let base = pos.floor() as isize;
            (-1..=2)
                .map(|k| {
                    let j = (base + k).clamp(0, n_in as isize - 1) as usize;
                    cubic(pos - (base + k) as f64) * src[j]
                })
                .sum()
        })
        .collect()
}

pub fn bicubic_down_up(clean: &Tensor, scale: usize) -> Result<Tensor> {
    let [n, c, h, w] = clean.dims4()?;
    if scale == 0 {
        return Err(Error::Invalid("scale must be at least 1".into()));
    }
    let (lh, lw) = ((h / scale).max(1), (w / scale).max(1));
    let v = clean.to_f64_vec();
    let mut out = Vec::with_capacity(v.len());
    for plane in v.chunks(h * w) {
        let mut low = vec![0.0; lh * lw];
        for i in 0..lh {
            for j in 0..lw {
                let (r0, r1) = (i * h / lh, ((i + 1) * h / lh).max(i * h / lh + 1));
                let (c0, c1) = (j * w / lw, ((j + 1) * w / lw).max(j * w / lw + 1));
                let mut s = 0.0;
                for r in r0..r1 {
                    s += plane[r * w + c0..r * w + c1].iter().sum::<f64>();
                }
                low[i * lw + j] = s / ((r1 - r0) * (c1 - c0)) as f64;
            }
        }
        let rows: Vec<Vec<f64>> = low.chunks(lw).map(|r| resample_axis_cubic(r, lw, w)).collect();
        let mut up = vec![0.0; h * w];
        for j in 0..w {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            for (i, v) in resample_axis_cubic(&col, lh, h).into_iter().enumerate() {
                up[i * w + j] = v.clamp(0.0, 1.0);
            }
        }
        out.extend(up);
    }
    Tensor::from_f64([n, c, h, w], &out, clean.dtype())
}

/// Separable Gaussian blur with edge clamping, followed by a horizontal sub-pixel shift.
fn blur_shift(plane: &[f64], h: usize, w: usize, sigma: f64, shift: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = if sigma > 0.0 {
        let t: Vec<f64> = (-radius..=radius)
            .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = t.iter().sum();
        t.into_iter().map(|v| v / s).collect()
    } else {
        vec![1.0]
    };
    let r = (taps.len() / 2) as isize;
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let pos = x as f64 - shift;
            let x0 = pos.floor();
            let f = pos - x0;
            let sample = |xi: isize| -> f64 {
                taps.iter()
                    .enumerate()
                    .map(|(k, t)| t * plane[y * w + clampi(xi + k as isize - r, w)])
                    .sum()
            };
            let a = sample(x0 as isize);
            let b = sample(x0 as isize + 1);
            tmp[y * w + x] = a + f * (b - a);
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[clampi(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Fabricated dual-pixel views: both defocused by `sigma`, shifted by `+shift` and `-shift`.
pub fn dual_pixel_views(clean: &Tensor, sigma: f64, shift: f64) -> Result<(Tensor, Tensor)> {
    let [_, _, h, w] = clean.dims4()?;
    let v = clean.to_f64_vec();
    let make = |s: f64| -> Result<Tensor> {
        let out: Vec<f64> = v.chunks(h * w).flat_map(|p| blur_shift(p, h, w, sigma, s)).collect();
        Tensor::from_f64(clean.shape(), &out, clean.dtype())
    };
    Ok((make(shift)?, make(-shift)?))
}

/// A smooth synthetic RGB scene: a colour gradient with random rectangles, discs and stripes.
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut colour = || [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let (c0, c1) = (colour(), colour());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let hw = height * width;
    let mut img = vec![0.0; 3 * hw];
    for y in 0..height {
        for x in 0..width {
            let u = 0.5 + 0.5 * (dx * (x as f64 / width as f64 - 0.5) + dy * (y as f64 / height as f64 - 0.5)) * 1.4;
            let u = u.clamp(0.0, 1.0);
            for c in 0..3 {
                img[c * hw + y * width + x] = c0[c] * (1.0 - u) + c1[c] * u;
            }
        }
    }
    let shapes = rng.random_range(3..8);
    for _ in 0..shapes {
        let col = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ry = rng.random_range(2.0..(height as f64 / 3.0).max(3.0));
        let rx = rng.random_range(2.0..(width as f64 / 3.0).max(3.0));
        let kind = rng.random_range(0..3);
        let period = rng.random_range(3.0..8.0);
        for y in 0..height {
            for x in 0..width {
                let (py, px) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = match kind {
                    0 => py.abs() <= 1.0 && px.abs() <= 1.0,
                    1 => py * py + px * px <= 1.0,
                    _ => py.abs() <= 1.0 && px.abs() <= 1.0 && ((x as f64 / period).floor() as i64) % 2 == 0,
                };
                if inside {
                    for c in 0..3 {
                        img[c * hw + y * width + x] = col[c];
                    }
                }
            }
        }
    }
    Tensor::from_f64([1, 3, height, width], &img, DType::F32).expect("valid shape")
}
