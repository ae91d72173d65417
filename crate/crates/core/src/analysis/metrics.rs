//! Full-reference image quality metrics on `[N, C, H, W]` tensors.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

fn check_pair(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    if a.numel() == 0 {
        return shape_err(op, "empty input".to_string());
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b, "mse")?;
    let (x, y) = (a.to_f64_vec(), b.to_f64_vec());
    Ok(x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64)
}

/// `10 log10(peak^2 / MSE)` over all elements jointly; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Invalid(format!("psnr peak {peak} must be positive")));
    }
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / m).log10()
    })
}

pub fn mae(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b, "mae")?;
    let (x, y) = (a.to_f64_vec(), b.to_f64_vec());
    Ok(x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64)
}

/// Planes of `[N, C, H, W]` as `(planes, h, w)`, RGB reduced by `weights` plus `offset`.
fn to_planes(t: &Tensor, weights: [f64; 3], offset: f64) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let [n, c, h, w] = t.dims4()?;
    let v = t.to_f64_vec();
    let hw = h * w;
    let planes = if c == 3 {
        (0..n)
            .map(|b| {
                let base = b * 3 * hw;
                (0..hw)
                    .map(|i| {
                        offset
                            + weights[0] * v[base + i]
                            + weights[1] * v[base + hw + i]
                            + weights[2] * v[base + 2 * hw + i]
                    })
                    .collect()
            })
            .collect()
    } else {
        v.chunks(hw).map(<[f64]>::to_vec).collect()
    };
    Ok((planes, h, w))
}

const LUMA_601: [f64; 3] = [0.299, 0.587, 0.114];

/// PSNR on the Y channel of YCbCr (studio swing, inputs in `[0, 1]`), peak 1.
pub fn psnr_y(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b, "psnr_y")?;
    if a.dims4()?[1] != 3 {
        return shape_err("psnr_y", format!("needs RGB input, got {:?}", a.shape()));
    }
    let w = [65.481 / 255.0, 128.553 / 255.0, 24.966 / 255.0];
    let (pa, h, wd) = to_planes(a, w, 16.0 / 255.0)?;
    let (pb, _, _) = to_planes(b, w, 16.0 / 255.0)?;
    let ya = Tensor::from_f64([pa.len(), 1, h, wd], &pa.concat(), crate::tensor::DType::F64)?;
    let yb = Tensor::from_f64([pb.len(), 1, h, wd], &pb.concat(), crate::tensor::DType::F64)?;
    psnr(&ya, &yb, 1.0)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Valid-mode separable Gaussian filter.
fn filter(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = g.iter().enumerate().map(|(k, &t)| t * x[y * w + xo + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = g.iter().enumerate().map(|(k, &t)| t * rows[(yo + k) * ow + xo]).sum();
        }
    }
    out
}

fn ssim_map_value(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let (c1, c2) = ((K1 * K1), (K2 * K2));
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

fn ssim_inputs(a: &Tensor, b: &Tensor) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, usize, usize)> {
    check_pair(a, b, "ssim")?;
    let (pa, h, w) = to_planes(a, LUMA_601, 0.0)?;
    let (pb, _, _) = to_planes(b, LUMA_601, 0.0)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return shape_err("ssim", format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"));
    }
    Ok((pa, pb, h, w))
}

/// Mean single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic
/// range 1. RGB inputs are reduced to BT.601 luma first; other channel counts are scored per
/// plane. Only windows lying fully inside the image are averaged.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (pa, pb, h, w) = ssim_inputs(a, b)?;
    let g = gaussian_taps();
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter(x, h, w, &g), filter(y, h, w, &g));
        let (fxx, fyy, fxy) = (filter(&xx, h, w, &g), filter(&yy, h, w, &g), filter(&xy, h, w, &g));
        for i in 0..mx.len() {
            total += ssim_map_value(
                mx[i],
                my[i],
                fxx[i] - mx[i] * mx[i],
                fyy[i] - my[i] * my[i],
                fxy[i] - mx[i] * my[i],
            );
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// Direct-loop SSIM with the full 2-D window at every position. Slow; a cross-check for
/// [`ssim`].
pub fn ssim_direct(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (pa, pb, h, w) = ssim_inputs(a, b)?;
    let g = gaussian_taps();
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        for i in 0..=h - SSIM_WINDOW {
            for j in 0..=w - SSIM_WINDOW {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for u in 0..SSIM_WINDOW {
                    for v in 0..SSIM_WINDOW {
                        let wt = g[u] * g[v];
                        let p = x[(i + u) * w + j + v];
                        let q = y[(i + u) * w + j + v];
                        mx += wt * p;
                        my += wt * q;
                        sxx += wt * p * p;
                        syy += wt * q * q;
                        sxy += wt * p * q;
                    }
                }
                total += ssim_map_value(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn img(shape: [usize; 4], f: impl Fn(usize) -> f64) -> Tensor {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(f).collect();
        Tensor::from_f64(shape, &v, DType::F64).unwrap()
    }

    #[test]
    fn psnr_closed_form() {
        let a = img([1, 3, 4, 4], |i| (i % 200) as f64);
        let b = a.map(|v| v + 10.0);
        let p = psnr(&a, &b, 255.0).unwrap();
        assert!((p - 20.0 * (255.0f64 / 10.0).log10()).abs() < 1e-12);
        assert!((p - 28.1308).abs() < 1e-3);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn mae_offset_and_symmetry() {
        let a = img([1, 3, 4, 4], |i| (i as f64 * 0.01) % 0.9);
        let b = a.map(|v| v + 0.049);
        assert!((mae(&a, &b).unwrap() - 0.049).abs() < 1e-12);
        assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ssim_self_is_one_and_inverse_is_low() {
        let a = img([1, 3, 16, 16], |i| if (i / 4) % 2 == 0 { 0.95 } else { 0.05 });
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.5);
    }

    #[test]
    fn ssim_implementations_agree() {
        let a = img([1, 1, 20, 17], |i| ((i * 7919) % 97) as f64 / 97.0);
        let b = img([1, 1, 20, 17], |i| ((i * 104729) % 89) as f64 / 89.0);
        assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = img([1, 3, 8, 8], |_| 0.5);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn psnr_y_identity() {
        let a = img([1, 3, 4, 4], |i| (i % 10) as f64 / 10.0);
        assert_eq!(psnr_y(&a, &a).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        // a uniform RGB offset d moves Y by d * (65.481 + 128.553 + 24.966) / 255
        let dy: f64 = 0.1 * 219.0 / 255.0;
        assert!((psnr_y(&a, &b).unwrap() - (-20.0 * dy.log10())).abs() < 1e-9);
    }
}
