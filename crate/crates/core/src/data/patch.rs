//! Geometry on `[N, C, H, W]` tensors: cropping, reflection padding, flips, stacking.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::tensor::{with_dtype, Tensor};

/// A degraded input and its clean reference, both `[1, C, H, W]` with equal `H, W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub degraded: Tensor,
    pub clean: Tensor,
}

impl ImagePair {
    pub fn new(degraded: Tensor, clean: Tensor) -> Result<Self> {
        let (d, c) = (degraded.dims4()?, clean.dims4()?);
        if d[0] != 1 || c[0] != 1 || d[2..] != c[2..] {
            return shape_err("image pair", format!("{:?} vs {:?}", degraded.shape(), clean.shape()));
        }
        Ok(ImagePair { degraded, clean })
    }

    pub fn height(&self) -> usize {
        self.clean.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.clean.shape()[3]
    }
}

/// Gather `out[n, c, i, j] = x[n, c, rows[i], cols[j]]`.
fn gather(x: &Tensor, rows: &[usize], cols: &[usize]) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    with_dtype!(x.dtype(), T => {
        let src = x.data::<T>()?;
        let mut out = Vec::with_capacity(n * c * rows.len() * cols.len());
        for plane in 0..n * c {
            let base = plane * h * w;
            for &r in rows {
                out.extend(cols.iter().map(|&cc| src[base + r * w + cc]));
            }
        }
        Tensor::new([n, c, rows.len(), cols.len()], out)
    })
}

pub fn crop(x: &Tensor, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
    let [_, _, h, w] = x.dims4()?;
    if top + height > h || left + width > w || height == 0 || width == 0 {
        return shape_err("crop", format!("{height}x{width} at ({top}, {left}) outside {h}x{w}"));
    }
    let rows: Vec<usize> = (top..top + height).collect();
    let cols: Vec<usize> = (left..left + width).collect();
    gather(x, &rows, &cols)
}

/// Mirror index without repeating the edge sample (`..., 2, 1, [0, 1, 2, ...], ...`).
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflect-pad on the bottom and right up to `height x width`.
pub fn pad_reflect(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [_, _, h, w] = x.dims4()?;
    if height < h || width < w {
        return shape_err("pad", format!("cannot pad {h}x{w} down to {height}x{width}"));
    }
    let rows: Vec<usize> = (0..height).map(|i| reflect_index(i, h)).collect();
    let cols: Vec<usize> = (0..width).map(|j| reflect_index(j, w)).collect();
    gather(x, &rows, &cols)
}

/// Reflect-pad bottom/right so both extents are multiples of `m`; returns the original extents.
pub fn pad_to_multiple(x: &Tensor, m: usize) -> Result<(Tensor, (usize, usize))> {
    let [_, _, h, w] = x.dims4()?;
    let m = m.max(1);
    let up = |v: usize| v.div_ceil(m) * m;
    if up(h) == h && up(w) == w {
        return Ok((x.clone(), (h, w)));
    }
    Ok((pad_reflect(x, up(h), up(w))?, (h, w)))
}

pub fn flip_horizontal(x: &Tensor) -> Result<Tensor> {
    let [_, _, h, w] = x.dims4()?;
    let rows: Vec<usize> = (0..h).collect();
    let cols: Vec<usize> = (0..w).rev().collect();
    gather(x, &rows, &cols)
}

pub fn flip_vertical(x: &Tensor) -> Result<Tensor> {
    let [_, _, h, w] = x.dims4()?;
    let rows: Vec<usize> = (0..h).rev().collect();
    let cols: Vec<usize> = (0..w).collect();
    gather(x, &rows, &cols)
}

/// Random `ps x ps` window, the same for both members. Images smaller than `ps` are
/// reflect-padded first.
pub fn sample_patch(pair: &ImagePair, ps: usize, rng: &mut impl Rng) -> Result<ImagePair> {
    let (h, w) = (pair.height(), pair.width());
    let (deg, clean) = if h < ps || w < ps {
        let (th, tw) = (h.max(ps), w.max(ps));
        (pad_reflect(&pair.degraded, th, tw)?, pad_reflect(&pair.clean, th, tw)?)
    } else {
        (pair.degraded.clone(), pair.clean.clone())
    };
    let (h, w) = (clean.shape()[2], clean.shape()[3]);
    let top = rng.random_range(0..=h - ps);
    let left = rng.random_range(0..=w - ps);
    Ok(ImagePair {
        degraded: crop(&deg, top, left, ps, ps)?,
        clean: crop(&clean, top, left, ps, ps)?,
    })
}

/// Horizontal and vertical flips, each with probability 1/2, applied identically to both.
pub fn flip_augment(pair: ImagePair, rng: &mut impl Rng) -> Result<ImagePair> {
    let (fh, fv) = (rng.random_bool(0.5), rng.random_bool(0.5));
    let mut p = pair;
    if fh {
        p = ImagePair {
            degraded: flip_horizontal(&p.degraded)?,
            clean: flip_horizontal(&p.clean)?,
        };
    }
    if fv {
        p = ImagePair {
            degraded: flip_vertical(&p.degraded)?,
            clean: flip_vertical(&p.clean)?,
        };
    }
    Ok(p)
}

/// Left and right views concatenated along channels, left first.
pub fn dual_pixel_concat(left: &Tensor, right: &Tensor) -> Result<Tensor> {
    if left.shape() != right.shape() {
        return shape_err("dual pixel", format!("{:?} vs {:?}", left.shape(), right.shape()));
    }
    crate::tensor::ops::concat(&[left, right], 1)
}

/// Stack `[1, C, H, W]` tensors into `[N, C, H, W]`.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = items.iter().collect();
    crate::tensor::ops::concat(&refs, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        let v: Vec<f64> = (0..c * h * w).map(|i| i as f64).collect();
        Tensor::from_f64([1, c, h, w], &v, DType::F64).unwrap()
    }

    #[test]
    fn reflection_fixture() {
        let x = Tensor::from_f64([1, 1, 2, 2], &[1., 2., 3., 4.], DType::F64).unwrap();
        let p = pad_reflect(&x, 3, 4).unwrap();
        assert_eq!(
            p.to_f64_vec(),
            vec![1., 2., 1., 2., 3., 4., 3., 4., 1., 2., 1., 2.]
        );
        assert_eq!((0..7).map(|i| reflect_index(i, 3)).collect::<Vec<_>>(), vec![0, 1, 2, 1, 0, 1, 2]);
    }

    #[test]
    fn pad_to_multiple_round_trip() {
        let x = ramp(3, 5, 5);
        let (p, (h, w)) = pad_to_multiple(&x, 4).unwrap();
        assert_eq!(p.shape(), &[1, 3, 8, 8]);
        assert!(crop(&p, 0, 0, h, w).unwrap().bitwise_eq(&x));
        let y = ramp(1, 8, 4);
        assert!(pad_to_multiple(&y, 4).unwrap().0.bitwise_eq(&y));
    }

    #[test]
    fn flips_are_involutions() {
        let x = ramp(2, 3, 5);
        assert!(flip_horizontal(&flip_horizontal(&x).unwrap()).unwrap().bitwise_eq(&x));
        assert!(flip_vertical(&flip_vertical(&x).unwrap()).unwrap().bitwise_eq(&x));
        assert_eq!(flip_horizontal(&x).unwrap().at(&[0, 0, 0, 0]), 4.0);
    }

    #[test]
    fn full_size_patch_is_whole_image() {
        let pair = ImagePair::new(ramp(3, 8, 8), ramp(3, 8, 8).map(|v| v + 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_patch(&pair, 8, &mut rng).unwrap(), pair);
        let small = sample_patch(&pair, 12, &mut rng).unwrap();
        assert_eq!(small.clean.shape(), &[1, 3, 12, 12]);
    }

    #[test]
    fn dual_pixel_channel_order() {
        let l = Tensor::full([1, 3, 2, 2], 0.25, DType::F32).unwrap();
        let r = Tensor::full([1, 3, 2, 2], 0.75, DType::F32).unwrap();
        let x = dual_pixel_concat(&l, &r).unwrap();
        assert_eq!(x.shape(), &[1, 6, 2, 2]);
        assert_eq!(x.at(&[0, 2, 1, 1]), 0.25);
        assert_eq!(x.at(&[0, 3, 0, 0]), 0.75);
        assert!(dual_pixel_concat(&l, &ramp(3, 2, 3)).is_err());
    }
}
