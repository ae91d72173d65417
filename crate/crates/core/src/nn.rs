//! Convolution, inter-stream resampling and activation layers.
//!
//! The convolution is a direct loop nest blocked over output planes. Each output plane is
//! produced by one sequential loop whatever the thread count, so grouped convolution equals the
//! per-group convolutions bit for bit.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{shape_err, Error, Result};
use crate::params::{Bound, ParamId, ParamKind, ParamStore};
use crate::parallel::for_each_chunk;
use crate::tensor::ops::UnaryOp;
use crate::tensor::{with_dtype, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    /// Stride 1 with padding that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize, groups: usize) -> Self {
        ConvGeometry {
            stride: 1,
            padding: kernel / 2,
            groups,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl ConvDims {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    /// Output index range along one axis whose input tap `o*stride + k - pad` lies in `[0, len)`.
    fn valid(&self, out_len: usize, in_len: usize, k: usize) -> (usize, usize) {
        let lo = if self.pad > k {
            (self.pad - k).div_ceil(self.stride)
        } else {
            0
        };
        if in_len + self.pad <= k {
            return (0, 0);
        }
        let hi = ((in_len - 1 + self.pad - k) / self.stride + 1).min(out_len);
        (lo.min(hi), hi)
    }
}

fn conv_dims(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: ConvGeometry) -> Result<ConvDims> {
    let [n, cin, h, wd] = x.dims4()?;
    let [cout, cin_g, kh, kw] = w.dims4()?;
    x.same_dtype(w, "conv2d")?;
    if g.groups == 0 || g.stride == 0 {
        return Err(Error::Invalid("conv2d groups and stride must be positive".into()));
    }
    if cin % g.groups != 0 || cout % g.groups != 0 {
        return shape_err(
            "conv2d",
            format!("channels {cin}->{cout} not divisible by groups {}", g.groups),
        );
    }
    if cin_g * g.groups != cin {
        return shape_err(
            "conv2d",
            format!("input has {cin} channels, weight expects {}", cin_g * g.groups),
        );
    }
    if let Some(b) = bias {
        x.same_dtype(b, "conv2d")?;
        if b.shape() != [cout] {
            return shape_err("conv2d", format!("bias shape {:?} for {cout} outputs", b.shape()));
        }
    }
    if h + 2 * g.padding < kh || wd + 2 * g.padding < kw {
        return shape_err(
            "conv2d",
            format!("input {h}x{wd} too small for {kh}x{kw} kernel with padding {}", g.padding),
        );
    }
    Ok(ConvDims {
        n,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        oh: (h + 2 * g.padding - kh) / g.stride + 1,
        ow: (wd + 2 * g.padding - kw) / g.stride + 1,
        stride: g.stride,
        pad: g.padding,
        groups: g.groups,
    })
}

fn conv_forward_kernel<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let plane = d.oh * d.ow;
    let in_plane = d.h * d.w;
    let mut out = vec![T::zero(); d.n * d.cout * plane];
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    for_each_chunk(&mut out, plane, |idx, o| {
        let (n, oc) = (idx / d.cout, idx % d.cout);
        let g = oc / cout_g;
        if let Some(b) = b {
            o.fill(b[oc]);
        }
        for icg in 0..cin_g {
            let ic = g * cin_g + icg;
            let xin = &x[(n * d.cin + ic) * in_plane..][..in_plane];
            for ky in 0..d.kh {
                let (oy0, oy1) = d.valid(d.oh, d.h, ky);
                for kx in 0..d.kw {
                    let wv = w[((oc * cin_g + icg) * d.kh + ky) * d.kw + kx];
                    let (ox0, ox1) = d.valid(d.ow, d.w, kx);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * d.stride + ky - d.pad;
                        let orow = &mut o[oy * d.ow..(oy + 1) * d.ow];
                        let irow = &xin[iy * d.w..(iy + 1) * d.w];
                        if d.stride == 1 {
                            let off = ox0 + kx - d.pad;
                            for (ov, &iv) in orow[ox0..ox1].iter_mut().zip(&irow[off..off + ox1 - ox0]) {
                                *ov = *ov + wv * iv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                orow[ox] = orow[ox] + wv * irow[ox * d.stride + kx - d.pad];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_grad_input<T: Element>(g: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let plane = d.oh * d.ow;
    let in_plane = d.h * d.w;
    let mut gx = vec![T::zero(); d.n * d.cin * in_plane];
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    for_each_chunk(&mut gx, in_plane, |idx, gi| {
        let (n, ic) = (idx / d.cin, idx % d.cin);
        let grp = ic / cin_g;
        let icg = ic % cin_g;
        for ocg in 0..cout_g {
            let oc = grp * cout_g + ocg;
            let go = &g[(n * d.cout + oc) * plane..][..plane];
            for ky in 0..d.kh {
                let (oy0, oy1) = d.valid(d.oh, d.h, ky);
                for kx in 0..d.kw {
                    let wv = w[((oc * cin_g + icg) * d.kh + ky) * d.kw + kx];
                    let (ox0, ox1) = d.valid(d.ow, d.w, kx);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * d.stride + ky - d.pad;
                        let grow = &go[oy * d.ow..(oy + 1) * d.ow];
                        let irow = &mut gi[iy * d.w..(iy + 1) * d.w];
                        if d.stride == 1 {
                            let off = ox0 + kx - d.pad;
                            for (iv, &gv) in irow[off..off + ox1 - ox0].iter_mut().zip(&grow[ox0..ox1]) {
                                *iv = *iv + wv * gv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * d.stride + kx - d.pad;
                                irow[ix] = irow[ix] + wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

fn conv_grad_weight<T: Element>(g: &[T], x: &[T], d: &ConvDims) -> Vec<T> {
    let plane = d.oh * d.ow;
    let in_plane = d.h * d.w;
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    let per_oc = cin_g * d.kh * d.kw;
    let mut gw = vec![T::zero(); d.cout * per_oc];
    for_each_chunk(&mut gw, per_oc, |oc, gwo| {
        let grp = oc / cout_g;
        for icg in 0..cin_g {
            let ic = grp * cin_g + icg;
            for ky in 0..d.kh {
                let (oy0, oy1) = d.valid(d.oh, d.h, ky);
                for kx in 0..d.kw {
                    let (ox0, ox1) = d.valid(d.ow, d.w, kx);
                    let mut acc = T::zero();
                    if ox0 < ox1 {
                        for n in 0..d.n {
                            let go = &g[(n * d.cout + oc) * plane..][..plane];
                            let xin = &x[(n * d.cin + ic) * in_plane..][..in_plane];
                            for oy in oy0..oy1 {
                                let iy = oy * d.stride + ky - d.pad;
                                let grow = &go[oy * d.ow..(oy + 1) * d.ow];
                                let irow = &xin[iy * d.w..(iy + 1) * d.w];
                                if d.stride == 1 {
                                    let off = ox0 + kx - d.pad;
                                    for (&gv, &iv) in grow[ox0..ox1].iter().zip(&irow[off..off + ox1 - ox0]) {
                                        acc = acc + gv * iv;
                                    }
                                } else {
                                    for ox in ox0..ox1 {
                                        acc = acc + grow[ox] * irow[ox * d.stride + kx - d.pad];
                                    }
                                }
                            }
                        }
                    }
                    gwo[(icg * d.kh + ky) * d.kw + kx] = acc;
                }
            }
        }
    });
    gw
}

fn conv_grad_bias<T: Element>(g: &[T], d: &ConvDims) -> Vec<T> {
    let plane = d.oh * d.ow;
    (0..d.cout)
        .map(|oc| {
            (0..d.n).fold(T::zero(), |acc, n| {
                g[(n * d.cout + oc) * plane..][..plane]
                    .iter()
                    .fold(acc, |a, &v| a + v)
            })
        })
        .collect()
}

/// 2-D cross-correlation with zero padding and channel groups.
///
/// `x` is `[N, C_in, H, W]`, `weight` is `[C_out, C_in / groups, k, k]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geom: ConvGeometry) -> Result<Tensor> {
    let d = conv_dims(x, weight, bias, geom)?;
    with_dtype!(x.dtype(), T => {
        let b = match bias {
            Some(b) => Some(b.data::<T>()?),
            None => None,
        };
        let out = conv_forward_kernel(x.data::<T>()?, weight.data::<T>()?, b, &d);
        Tensor::new([d.n, d.cout, d.oh, d.ow], out)
    })
}

pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    g: &Tensor,
    geom: ConvGeometry,
    need_input: bool,
    has_bias: bool,
) -> Result<ConvGrads> {
    let d = conv_dims(x, weight, None, geom)?;
    with_dtype!(x.dtype(), T => {
        let gd = g.data::<T>()?;
        let input = if need_input {
            Some(Tensor::new(x.shape(), conv_grad_input(gd, weight.data::<T>()?, &d))?)
        } else {
            None
        };
        let gw = Tensor::new(weight.shape(), conv_grad_weight(gd, x.data::<T>()?, &d))?;
        let bias = if has_bias {
            Some(Tensor::new([d.cout], conv_grad_bias(gd, &d))?)
        } else {
            None
        };
        Ok(ConvGrads { input, weight: gw, bias })
    })
}

/// 2x2 average pooling with stride 2; spatial extents must be even.
pub fn avg_pool2x(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err("downsample2x", format!("odd spatial extent {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    with_dtype!(x.dtype(), T => {
        let xd = x.data::<T>()?;
        let quarter = T::of(0.25);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for_each_chunk(&mut out, oh * ow, |p, o| {
            let xin = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                let r0 = &xin[2 * oy * w..(2 * oy + 1) * w];
                let r1 = &xin[(2 * oy + 1) * w..(2 * oy + 2) * w];
                for ox in 0..ow {
                    o[oy * ow + ox] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter;
                }
            }
        });
        Tensor::new([n, c, oh, ow], out)
    })
}

pub(crate) fn avg_pool2x_backward(g: &Tensor) -> Result<Tensor> {
    let [n, c, oh, ow] = g.dims4()?;
    let (h, w) = (oh * 2, ow * 2);
    with_dtype!(g.dtype(), T => {
        let gd = g.data::<T>()?;
        let quarter = T::of(0.25);
        let mut out = vec![T::zero(); n * c * h * w];
        for_each_chunk(&mut out, h * w, |p, o| {
            let gp = &gd[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..h {
                for x in 0..w {
                    o[y * w + x] = gp[(y / 2) * ow + x / 2] * quarter;
                }
            }
        });
        Tensor::new([n, c, h, w], out)
    })
}

/// Source taps `(i0, i1, frac)` for each of the `2 * len` outputs of a half-pixel-centred x2
/// bilinear upsample with edge clamping.
fn bilinear_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear x2 upsampling (align-corners false).
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    with_dtype!(x.dtype(), T => {
        let xd = x.data::<T>()?;
        let mut out = vec![T::zero(); n * c * oh * ow];
        for_each_chunk(&mut out, oh * ow, |p, o| {
            let xin = &xd[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::of(fy);
                let r0 = &xin[y0 * w..(y0 + 1) * w];
                let r1 = &xin[y1 * w..(y1 + 1) * w];
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::of(fx);
                    let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                    let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                    o[oy * ow + ox] = top + fy * (bot - top);
                }
            }
        });
        Tensor::new([n, c, oh, ow], out)
    })
}

pub(crate) fn upsample2x_backward(g: &Tensor) -> Result<Tensor> {
    let [n, c, oh, ow] = g.dims4()?;
    let (h, w) = (oh / 2, ow / 2);
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    with_dtype!(g.dtype(), T => {
        let gd = g.data::<T>()?;
        let one = T::one();
        let mut out = vec![T::zero(); n * c * h * w];
        for_each_chunk(&mut out, h * w, |p, o| {
            let gp = &gd[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::of(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::of(fx);
                    let gv = gp[oy * ow + ox];
                    let top = gv * (one - fy);
                    let bot = gv * fy;
                    o[y0 * w + x0] = o[y0 * w + x0] + top * (one - fx);
                    o[y0 * w + x1] = o[y0 * w + x1] + top * fx;
                    o[y1 * w + x0] = o[y1 * w + x0] + bot * (one - fx);
                    o[y1 * w + x1] = o[y1 * w + x1] + bot * fx;
                }
            }
        });
        Tensor::new([n, c, h, w], out)
    })
}

/// Slope of the negative half of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
}

impl Activation {
    pub(crate) fn as_unary(self) -> UnaryOp {
        match self {
            Activation::Relu => UnaryOp::Relu,
            Activation::LeakyRelu => UnaryOp::LeakyRelu(LEAKY_SLOPE),
        }
    }
}

/// Untracked activation.
pub fn activation(x: &Tensor, act: Activation) -> Result<Tensor> {
    crate::tensor::ops::unary(x, act.as_unary())
}

/// A convolution layer whose weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geom: ConvGeometry,
}

impl Conv2d {
    /// Register a stride-1 "same" convolution named `prefix.weight` / `prefix.bias`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Invalid(format!(
                "{prefix}: channels {in_channels}->{out_channels} not divisible by groups {groups}"
            )));
        }
        if kernel != 1 && kernel != 3 {
            return Err(Error::Invalid(format!("{prefix}: kernel {kernel} not in {{1, 3}}")));
        }
        let fan_in = in_channels / groups * kernel * kernel;
        let weight = store.register(
            format!("{prefix}.weight"),
            &[out_channels, in_channels / groups, kernel, kernel],
            ParamKind::Weight,
            fan_in,
        )?;
        let bias = if bias {
            Some(store.register(format!("{prefix}.bias"), &[out_channels], ParamKind::Bias, fan_in)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            geom: ConvGeometry::same(kernel, groups),
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv2d(p.var(self.weight), self.bias.map(|b| p.var(b)), self.geom)
    }

    /// `C_out * (C_in / g) * k^2 (+ C_out)`.
    pub fn num_params(&self) -> usize {
        self.out_channels * (self.in_channels / self.geom.groups) * self.kernel * self.kernel
            + if self.bias.is_some() { self.out_channels } else { 0 }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.weight];
        v.extend(self.bias);
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Down2x,
    Up2x,
}

/// Move features between adjacent resolution streams: a x2 spatial resample plus a bias-free
/// 1x1 channel projection.
#[derive(Clone, Debug)]
pub struct Resample {
    pub direction: Direction,
    pub proj: Conv2d,
}

impl Resample {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        direction: Direction,
        from_channels: usize,
        to_channels: usize,
    ) -> Result<Self> {
        Ok(Resample {
            direction,
            proj: Conv2d::register(store, &format!("{prefix}.proj"), from_channels, to_channels, 1, 1, false)?,
        })
    }

    /// Down: 2x2 average pool then projection. Up: bilinear x2 then projection; the two steps
    /// commute exactly, so the projection runs first at the cheaper source resolution.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        match self.direction {
            Direction::Down2x => self.proj.forward(p, x.avg_pool2x()?),
            Direction::Up2x => self.proj.forward(p, x)?.upsample2x(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::DType;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_f64(shape, v, DType::F64).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = t(&[1, 2, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let w = t(&[2, 2, 1, 1], &[1., 0., 0., 1.]);
        assert_eq!(conv2d(&x, &w, None, ConvGeometry::same(1, 1)).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = t(&[1, 1, 3, 3], &[1.; 9]);
        let w = t(&[1, 1, 3, 3], &[1.; 9]);
        let y = conv2d(&x, &w, None, ConvGeometry::same(3, 1)).unwrap();
        assert_eq!(y.to_f64_vec(), vec![4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn strided_output_size() {
        let x = Tensor::full([1, 1, 5, 5], 1.0, DType::F64).unwrap();
        let w = t(&[1, 1, 3, 3], &[1.; 9]);
        let geom = ConvGeometry { stride: 2, padding: 1, groups: 1 };
        let y = conv2d(&x, &w, None, geom).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_f64_vec(), vec![4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn group_errors() {
        let x = Tensor::zeros([1, 3, 4, 4], DType::F64).unwrap();
        let w = Tensor::zeros([2, 1, 3, 3], DType::F64).unwrap();
        let geom = ConvGeometry::same(3, 2);
        assert!(conv2d(&x, &w, None, geom).is_err());
        let mut store = ParamStore::new(DType::F32);
        assert!(Conv2d::register(&mut store, "c", 3, 4, 3, 2, true).is_err());
        assert!(Conv2d::register(&mut store, "c", 4, 4, 5, 2, true).is_err());
    }

    #[test]
    fn pool_means_blocks() {
        let v: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let y = avg_pool2x(&t(&[1, 1, 4, 4], &v)).unwrap();
        assert_eq!(y.to_f64_vec(), vec![2.5, 4.5, 10.5, 12.5]);
        assert!(avg_pool2x(&Tensor::zeros([1, 1, 3, 4], DType::F64).unwrap()).is_err());
    }

    #[test]
    fn upsample_row_matches_sample_centres() {
        let y = upsample2x(&t(&[1, 1, 1, 2], &[0., 1.])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.to_f64_vec(), vec![0., 0.25, 0.75, 1., 0., 0.25, 0.75, 1.]);
    }

    #[test]
    fn constant_survives_resampling() {
        let x = Tensor::full([1, 2, 4, 6], 0.37, DType::F32).unwrap();
        let up = upsample2x(&x).unwrap();
        assert!(up.to_f64_vec().iter().all(|&v| v == 0.37f32 as f64));
        let back = avg_pool2x(&up).unwrap();
        assert!(back.bitwise_eq(&x));
    }

    #[test]
    fn relu_definition() {
        let y = activation(&t(&[3], &[-1., 0., 2.]), Activation::Relu).unwrap();
        assert_eq!(y.to_f64_vec(), vec![0., 0., 2.]);
        let y = activation(&t(&[2], &[-3., -0.5]), Activation::Relu).unwrap();
        assert_eq!(y.to_f64_vec(), vec![0., 0.]);
    }

    #[test]
    fn resample_layers_round_trip_shape() {
        let mut store = ParamStore::new(DType::F64);
        let down = Resample::register(&mut store, "d", Direction::Down2x, 4, 6).unwrap();
        let up = Resample::register(&mut store, "u", Direction::Up2x, 6, 4).unwrap();
        store.init_uniform(1);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.leaf(Tensor::zeros([2, 4, 8, 6], DType::F64).unwrap(), false);
        let y = up.forward(&p, down.forward(&p, x).unwrap()).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 8, 6]);
    }
}
