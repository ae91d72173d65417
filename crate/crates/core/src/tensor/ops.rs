//! Untracked tensor kernels and the gradient kernels the tape calls into.

use num_traits::{Float, Zero};

use super::{with_dtype, Element, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

fn binary_kernel<T: Element>(a: &[T], b: &[T], op: BinaryOp) -> Vec<T> {
    let it = a.iter().zip(b);
    match op {
        BinaryOp::Add => it.map(|(&x, &y)| x + y).collect(),
        BinaryOp::Sub => it.map(|(&x, &y)| x - y).collect(),
        BinaryOp::Mul => it.map(|(&x, &y)| x * y).collect(),
    }
}

/// Elementwise op over identically shaped tensors.
pub fn binary(a: &Tensor, b: &Tensor, op: BinaryOp) -> Result<Tensor> {
    a.same_dtype(b, "elementwise")?;
    if a.shape() != b.shape() {
        return shape_err(
            "elementwise",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        );
    }
    with_dtype!(a.dtype(), T => Tensor::new(a.shape(), binary_kernel(a.data::<T>()?, b.data::<T>()?, op)))
}

/// Check that `b` is `[N, C, 1, 1]` against `a` of `[N, C, H, W]`; returns `(N*C, H*W)`.
pub(crate) fn broadcast_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let [n, c, h, w] = a.dims4()?;
    if b.shape() != [n, c, 1, 1] {
        return shape_err(
            "broadcast",
            format!("{:?} is not broadcastable against {:?}", b.shape(), a.shape()),
        );
    }
    Ok((n * c, h * w))
}

/// `a[n,c,:,:] (op) b[n,c,0,0]` for `op` in {add, mul}.
pub fn broadcast(a: &Tensor, b: &Tensor, op: BinaryOp) -> Result<Tensor> {
    a.same_dtype(b, "broadcast")?;
    let (planes, hw) = broadcast_dims(a, b)?;
    with_dtype!(a.dtype(), T => {
        let x = a.data::<T>()?;
        let s = b.data::<T>()?;
        let mut out = Vec::with_capacity(x.len());
        for p in 0..planes {
            let v = s[p];
            let row = &x[p * hw..(p + 1) * hw];
            match op {
                BinaryOp::Add => out.extend(row.iter().map(|&e| e + v)),
                BinaryOp::Sub => out.extend(row.iter().map(|&e| e - v)),
                BinaryOp::Mul => out.extend(row.iter().map(|&e| e * v)),
            }
        }
        Tensor::new(a.shape(), out)
    })
}

/// Sum each `H x W` plane of `g` into a `[N, C, 1, 1]` tensor (optionally weighted by `w`).
pub(crate) fn plane_sums(g: &Tensor, weight: Option<&Tensor>) -> Result<Tensor> {
    let [n, c, h, w] = g.dims4()?;
    let hw = h * w;
    with_dtype!(g.dtype(), T => {
        let gd = g.data::<T>()?;
        let wd = match weight {
            Some(t) => Some(t.data::<T>()?),
            None => None,
        };
        let out: Vec<T> = (0..n * c)
            .map(|p| {
                let gr = &gd[p * hw..(p + 1) * hw];
                match wd {
                    Some(wd) => gr
                        .iter()
                        .zip(&wd[p * hw..(p + 1) * hw])
                        .fold(T::zero(), |acc, (&a, &b)| acc + a * b),
                    None => gr.iter().fold(T::zero(), |acc, &a| acc + a),
                }
            })
            .collect();
        Tensor::new([n, c, 1, 1], out)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Scale(f64),
    AddScalar(f64),
    Sqrt,
    Relu,
    LeakyRelu(f64),
}

pub fn unary(a: &Tensor, op: UnaryOp) -> Result<Tensor> {
    with_dtype!(a.dtype(), T => {
        let x = a.data::<T>()?;
        let out: Vec<T> = match op {
            UnaryOp::Scale(s) => {
                let s = T::of(s);
                x.iter().map(|&v| v * s).collect()
            }
            UnaryOp::AddScalar(s) => {
                let s = T::of(s);
                x.iter().map(|&v| v + s).collect()
            }
            UnaryOp::Sqrt => x.iter().map(|&v| v.sqrt()).collect(),
            UnaryOp::Relu => x
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect(),
            UnaryOp::LeakyRelu(slope) => {
                let s = T::of(slope);
                x.iter().map(|&v| if v > T::zero() { v } else { v * s }).collect()
            }
        };
        Tensor::new(a.shape(), out)
    })
}

/// Gradient of a unary op given its input `x`, output `y` and upstream gradient `g`.
pub(crate) fn unary_backward(op: UnaryOp, x: &Tensor, y: &Tensor, g: &Tensor) -> Result<Tensor> {
    with_dtype!(g.dtype(), T => {
        let gd = g.data::<T>()?;
        let out: Vec<T> = match op {
            UnaryOp::Scale(s) => {
                let s = T::of(s);
                gd.iter().map(|&v| v * s).collect()
            }
            UnaryOp::AddScalar(_) => gd.to_vec(),
            UnaryOp::Sqrt => {
                let two = T::of(2.0);
                gd.iter()
                    .zip(y.data::<T>()?)
                    .map(|(&g, &y)| g / (two * y))
                    .collect()
            }
            UnaryOp::Relu => gd
                .iter()
                .zip(x.data::<T>()?)
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect(),
            UnaryOp::LeakyRelu(slope) => {
                let s = T::of(slope);
                gd.iter()
                    .zip(x.data::<T>()?)
                    .map(|(&g, &x)| if x > T::zero() { g } else { g * s })
                    .collect()
            }
        };
        Tensor::new(g.shape(), out)
    })
}

/// Batch count and `(m, k, n)` for a rank-2 or batched rank-3 product.
fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (ba, m, k) = match a.shape() {
        [m, k] => (1, *m, *k),
        [bt, m, k] => (*bt, *m, *k),
        s => return shape_err("matmul", format!("lhs must be rank 2 or 3, got {s:?}")),
    };
    let (bb, k2, n) = match b.shape() {
        [k, n] => (1, *k, *n),
        [bt, k, n] => (*bt, *k, *n),
        s => return shape_err("matmul", format!("rhs must be rank 2 or 3, got {s:?}")),
    };
    if a.rank() != b.rank() || ba != bb || k != k2 {
        return shape_err(
            "matmul",
            format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
        );
    }
    Ok((ba, m, k, n))
}

/// `c[m,n] += a[m,k] * b[k,n]`, with optional transposes of the stored operands.
fn gemm<T: Element>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if trans_a { a[p * m + i] } else { a[i * k + p] };
            if trans_b {
                for (j, cv) in crow.iter_mut().enumerate() {
                    *cv = *cv + av * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = *cv + av * bv;
                }
            }
        }
    }
}

/// Matrix product of `[m,k] x [k,n]`, or batched `[B,m,k] x [B,k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_dtype(b, "matmul")?;
    let (bt, m, k, n) = matmul_dims(a, b)?;
    let out_shape: Vec<usize> = if a.rank() == 2 { vec![m, n] } else { vec![bt, m, n] };
    with_dtype!(a.dtype(), T => {
        let ad = a.data::<T>()?;
        let bd = b.data::<T>()?;
        let mut c = vec![T::zero(); bt * m * n];
        for i in 0..bt {
            gemm(&ad[i * m * k..][..m * k], &bd[i * k * n..][..k * n], &mut c[i * m * n..][..m * n], m, k, n, false, false);
        }
        Tensor::new(out_shape, c)
    })
}

/// Returns `(dA, dB) = (dC * B^T, A^T * dC)`.
pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (bt, m, k, n) = matmul_dims(a, b)?;
    with_dtype!(a.dtype(), T => {
        let ad = a.data::<T>()?;
        let bd = b.data::<T>()?;
        let gd = g.data::<T>()?;
        let mut da = vec![T::zero(); bt * m * k];
        let mut db = vec![T::zero(); bt * k * n];
        for i in 0..bt {
            let gs = &gd[i * m * n..][..m * n];
            gemm(gs, &bd[i * k * n..][..k * n], &mut da[i * m * k..][..m * k], m, n, k, false, true);
            gemm(&ad[i * m * k..][..m * k], gs, &mut db[i * k * n..][..k * n], k, m, n, true, false);
        }
        Ok((Tensor::new(a.shape(), da)?, Tensor::new(b.shape(), db)?))
    })
}

/// `(outer, len, inner)` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return shape_err(op, format!("axis {axis} out of range for {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Max-stabilised softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if !x.all_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let (outer, len, inner) = split_axis(x.shape(), axis, "softmax")?;
    with_dtype!(x.dtype(), T => {
        let xd = x.data::<T>()?;
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(xd[idx(j)]);
                }
                let mut total = T::zero();
                for j in 0..len {
                    let e = (xd[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    total = total + e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / total;
                }
            }
        }
        Tensor::new(x.shape(), out)
    })
}

/// `dx = y * (g - sum(g * y))` along `axis`.
pub(crate) fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = split_axis(y.shape(), axis, "softmax")?;
    with_dtype!(y.dtype(), T => {
        let yd = y.data::<T>()?;
        let gd = g.data::<T>()?;
        let mut out = vec![T::zero(); yd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut dot = T::zero();
                for j in 0..len {
                    dot = dot + gd[idx(j)] * yd[idx(j)];
                }
                for j in 0..len {
                    out[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                }
            }
        }
        Tensor::new(y.shape(), out)
    })
}

/// Mean over each spatial plane: `[N,C,H,W] -> [N,C,1,1]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [_, _, h, w] = x.dims4()?;
    let sums = plane_sums(x, None)?;
    unary(&sums, UnaryOp::Scale(1.0 / (h * w) as f64))
}

/// Spread `g[N,C,1,1] / (H*W)` back over `[N,C,H,W]`.
pub(crate) fn global_avg_pool_backward(x_shape: &[usize], g: &Tensor) -> Result<Tensor> {
    let hw = x_shape[2] * x_shape[3];
    with_dtype!(g.dtype(), T => {
        let gd = g.data::<T>()?;
        let scale = T::of(1.0 / hw as f64);
        let mut out = Vec::with_capacity(gd.len() * hw);
        for &v in gd {
            out.extend(std::iter::repeat(v * scale).take(hw));
        }
        Tensor::new(x_shape, out)
    })
}

/// Sum of all elements as a `[1]` tensor.
pub fn sum_all(x: &Tensor) -> Tensor {
    with_dtype!(x.dtype(), T => {
        let s = x.data::<T>().expect("dtype").iter().fold(T::zero(), |a, &b| a + b);
        Tensor::new([1], vec![s]).expect("scalar")
    })
}

pub(crate) fn fill_like(shape: &[usize], g: &Tensor, scale: f64) -> Result<Tensor> {
    let v = g.item()? * scale;
    with_dtype!(g.dtype(), T => {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![T::of(v); n])
    })
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = match parts.first() {
        Some(t) => *t,
        None => return shape_err("concat", "no inputs"),
    };
    let mut shape = first.shape().to_vec();
    if axis >= shape.len() {
        return shape_err("concat", format!("axis {axis} out of range for {shape:?}"));
    }
    let mut total = 0;
    for p in parts {
        first.same_dtype(p, "concat")?;
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return shape_err(
                "concat",
                format!("{:?} incompatible with {:?}", p.shape(), first.shape()),
            );
        }
        total += p.shape()[axis];
    }
    shape[axis] = total;
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    with_dtype!(first.dtype(), T => {
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data::<T>()?[o * block..(o + 1) * block]);
            }
        }
        Tensor::new(shape, out)
    })
}

/// Slice `len` entries starting at `start` along `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let (outer, full, inner) = split_axis(x.shape(), axis, "narrow")?;
    if len == 0 || start + len > full {
        return shape_err(
            "narrow",
            format!("range {start}..{} out of bounds for extent {full}", start + len),
        );
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    with_dtype!(x.dtype(), T => {
        let xd = x.data::<T>()?;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        Tensor::new(shape, out)
    })
}

/// Scatter `g` back into a zero tensor of `x_shape` at the narrowed window.
pub(crate) fn narrow_backward(
    x_shape: &[usize],
    g: &Tensor,
    axis: usize,
    start: usize,
) -> Result<Tensor> {
    let (outer, full, inner) = split_axis(x_shape, axis, "narrow")?;
    let len = g.shape()[axis];
    with_dtype!(g.dtype(), T => {
        let gd = g.data::<T>()?;
        let mut out = vec![T::zero(); outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
        }
        Tensor::new(x_shape, out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_f64(shape, v, DType::F64).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let m = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[5., 6.]);
        assert_eq!(matmul(&a, &b).unwrap().to_f64_vec(), vec![17., 39.]);
    }

    #[test]
    fn matmul_rejects_bad_shapes_and_dtypes() {
        let a = t(&[2, 3], &[0.; 6]);
        assert!(matmul(&a, &a).is_err());
        let b32 = Tensor::zeros([3, 2], DType::F32).unwrap();
        assert!(matches!(matmul(&a, &b32), Err(Error::DType { .. })));
    }

    #[test]
    fn softmax_cases() {
        let y = softmax(&t(&[4], &[2.; 4]), 0).unwrap();
        assert!(y.to_f64_vec().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let y = softmax(&t(&[2], &[0., 3f64.ln()]), 0).unwrap().to_f64_vec();
        assert!((y[0] - 0.25).abs() < 1e-12 && (y[1] - 0.75).abs() < 1e-12);
        assert!(softmax(&t(&[2], &[0., f64::NAN]), 0).is_err());
        assert!(softmax(&t(&[2], &[0., 1.]), 1).is_err());
    }

    #[test]
    fn softmax_along_middle_axis() {
        let x = t(&[1, 2, 3], &[1., 2., 3., 4., 5., 6.]);
        let y = softmax(&x, 1).unwrap();
        for i in 0..3 {
            let s = y.at(&[0, 0, i]) + y.at(&[0, 1, i]);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_hand_case() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        assert_eq!(global_avg_pool(&x).unwrap().to_f64_vec(), vec![2.5]);
    }

    #[test]
    fn broadcast_mul_halves() {
        let x = t(&[1, 2, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let s = t(&[1, 2, 1, 1], &[0.5, 0.5]);
        let y = broadcast(&x, &s, BinaryOp::Mul).unwrap();
        assert_eq!(y.to_f64_vec(), vec![0.5, 1., 1.5, 2., 2.5, 3., 3.5, 4.]);
        let bad = t(&[1, 3, 1, 1], &[0.; 3]);
        assert!(broadcast(&x, &bad, BinaryOp::Add).is_err());
    }

    #[test]
    fn concat_narrow_inverse() {
        let a = t(&[1, 2, 1, 2], &[1., 2., 3., 4.]);
        let b = t(&[1, 1, 1, 2], &[5., 6.]);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 3, 1, 2]);
        assert_eq!(narrow(&c, 1, 0, 2).unwrap(), a);
        assert_eq!(narrow(&c, 1, 2, 1).unwrap(), b);
        assert!(narrow(&c, 1, 2, 2).is_err());
    }
}
