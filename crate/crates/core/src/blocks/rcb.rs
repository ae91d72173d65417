//! Residual contextual block: two grouped 3x3 convs, a global-context module, a 1x1 projection
//! and an identity skip.

use crate::autodiff::Var;
use crate::error::{shape_err, Result};
use crate::nn::{Activation, Conv2d};
use crate::params::{Bound, ParamId, ParamStore};

/// Global context attention.
///
/// A 1x1 conv scores every position, a spatial softmax turns the scores into attention, the
/// attention-weighted sum of the features gives a per-channel descriptor, an optional pair of
/// 1x1 convs transforms it, and the result is added back at every position.
#[derive(Clone, Debug)]
pub struct ContextModule {
    pub channels: usize,
    pub mask: Conv2d,
    pub transform: Option<(Conv2d, Conv2d)>,
    pub activation: Activation,
}

impl ContextModule {
    /// Width of the transform bottleneck.
    pub fn hidden_channels(channels: usize) -> usize {
        (channels / 4).max(1)
    }

    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        transform: bool,
        activation: Activation,
    ) -> Result<Self> {
        let mask = Conv2d::register(store, &format!("{prefix}.mask"), channels, 1, 1, 1, false)?;
        let transform = if transform {
            let hidden = Self::hidden_channels(channels);
            Some((
                Conv2d::register(store, &format!("{prefix}.t1"), channels, hidden, 1, 1, false)?,
                Conv2d::register(store, &format!("{prefix}.t2"), hidden, channels, 1, 1, false)?,
            ))
        } else {
            None
        };
        Ok(ContextModule {
            channels,
            mask,
            transform,
            activation,
        })
    }

    pub fn num_params(&self) -> usize {
        self.mask.num_params()
            + self
                .transform
                .as_ref()
                .map_or(0, |(a, b)| a.num_params() + b.num_params())
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, f_b: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_with_attention(p, f_b)?.0)
    }

    /// Output and the spatial attention as `[N, H*W]`.
    pub fn forward_with_attention<'t>(&self, p: &Bound<'t>, f_b: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let shape = f_b.shape();
        let &[n, c, h, w] = &shape[..] else {
            return shape_err("context module", format!("expected 4-D input, got {shape:?}"));
        };
        if c != self.channels {
            return shape_err("context module", format!("{c} channels, expected {}", self.channels));
        }
        let hw = h * w;
        let attention = self.mask.forward(p, f_b)?.reshape([n, hw])?.softmax(1)?;
        let descriptor = f_b
            .reshape([n, c, hw])?
            .matmul(attention.reshape([n, hw, 1])?)?
            .reshape([n, c, 1, 1])?;
        let context = match &self.transform {
            Some((t1, t2)) => t2.forward(p, t1.forward(p, descriptor)?.activation(self.activation)?)?,
            None => descriptor,
        };
        Ok((f_b.broadcast_add(context)?, attention))
    }
}

#[derive(Clone, Debug)]
pub struct Rcb {
    pub channels: usize,
    pub gconv1: Conv2d,
    pub gconv2: Conv2d,
    pub cm: ContextModule,
    pub w_last: Conv2d,
    pub activation: Activation,
}

impl Rcb {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        groups: usize,
        cm_transform: bool,
        activation: Activation,
    ) -> Result<Self> {
        Ok(Rcb {
            channels,
            gconv1: Conv2d::register(store, &format!("{prefix}.gconv1"), channels, channels, 3, groups, true)?,
            gconv2: Conv2d::register(store, &format!("{prefix}.gconv2"), channels, channels, 3, groups, true)?,
            cm: ContextModule::register(store, &format!("{prefix}.cm"), channels, cm_transform, activation)?,
            w_last: {
                let c = Conv2d::register(store, &format!("{prefix}.w_last"), channels, channels, 1, 1, true)?;
                store.mark_branch_output(c.weight);
                c
            },
            activation,
        })
    }

    pub fn num_params(&self) -> usize {
        self.gconv1.num_params() + self.gconv2.num_params() + self.cm.num_params() + self.w_last.num_params()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.gconv1.param_ids();
        ids.extend(self.gconv2.param_ids());
        ids.extend(self.cm.mask.param_ids());
        if let Some((a, b)) = &self.cm.transform {
            ids.extend(a.param_ids());
            ids.extend(b.param_ids());
        }
        ids.extend(self.w_last.param_ids());
        ids
    }

    /// `x + W(CM(F_b))` with `F_b = gconv2(act(gconv1(x)))`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels {
            return shape_err("rcb", format!("input {shape:?} for {} channels", self.channels));
        }
        let f_b = self
            .gconv2
            .forward(p, self.gconv1.forward(p, x)?.activation(self.activation)?)?;
        let ctx = self.cm.forward(p, f_b)?;
        x.add(self.w_last.forward(p, ctx)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::{DType, Tensor};

    fn rcb_store(seed: u64) -> (Rcb, ParamStore) {
        let mut store = ParamStore::new(DType::F64);
        let rcb = Rcb::register(&mut store, "r", 8, 2, true, Activation::Relu).unwrap();
        store.init_uniform(seed);
        (rcb, store)
    }

    fn input(tape: &Tape, seed: u64) -> Var<'_> {
        let v: Vec<f64> = (0..8 * 16).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
        tape.leaf(Tensor::from_f64([1, 8, 4, 4], &v, DType::F64).unwrap(), false)
    }

    #[test]
    fn zero_projection_is_identity() {
        let (rcb, mut store) = rcb_store(5);
        store.set(rcb.w_last.weight, Tensor::zeros([8, 8, 1, 1], DType::F64).unwrap()).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = input(&tape, 1);
        assert!(rcb.forward(&p, x).unwrap().value().bitwise_eq(&x.value()));
    }

    #[test]
    fn zero_input_without_bias_stays_zero() {
        let (rcb, store) = rcb_store(5);
        // biases are zero-initialised
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.leaf(Tensor::zeros([1, 8, 4, 4], DType::F64).unwrap(), false);
        assert!(rcb.forward(&p, x).unwrap().value().to_f64_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_features_give_uniform_attention() {
        let (rcb, store) = rcb_store(9);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let v: Vec<f64> = (0..8).flat_map(|c| std::iter::repeat(c as f64 * 0.3 - 1.0).take(16)).collect();
        let f_b = tape.leaf(Tensor::from_f64([1, 8, 4, 4], &v, DType::F64).unwrap(), false);
        let (_, att) = rcb.cm.forward_with_attention(&p, f_b).unwrap();
        assert!(att.value().to_f64_vec().iter().all(|&a| (a - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn zero_t2_is_identity_fusion() {
        let (rcb, mut store) = rcb_store(2);
        let t2 = rcb.cm.transform.as_ref().unwrap().1.weight;
        let shape = store.tensor(t2).shape().to_vec();
        store.set(t2, Tensor::zeros(shape, DType::F64).unwrap()).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = input(&tape, 4);
        assert!(rcb.cm.forward(&p, x).unwrap().value().bitwise_eq(&x.value()));
    }

    #[test]
    fn removing_transform_reduces_params() {
        let mut s = ParamStore::new(DType::F32);
        let with = Rcb::register(&mut s, "a", 80, 2, true, Activation::Relu).unwrap();
        let without = Rcb::register(&mut s, "b", 80, 2, false, Activation::Relu).unwrap();
        let g1 = Rcb::register(&mut s, "c", 80, 1, true, Activation::Relu).unwrap();
        assert!(without.num_params() < with.num_params());
        assert!(g1.num_params() > with.num_params());
    }
}
