//! Selective-kernel feature fusion and the simpler aggregation baselines.

use crate::autodiff::Var;
use crate::blocks::FusionKind;
use crate::error::{shape_err, Result};
use crate::nn::Conv2d;
use crate::params::{Bound, ParamStore};

/// Attention fusion of `n` same-shape streams.
///
/// Sum the streams, pool to a per-channel descriptor, squeeze to `r` channels, expand back with
/// one 1x1 conv per stream, softmax across streams per channel, and take the weighted sum.
#[derive(Clone, Debug)]
pub struct Skff {
    pub channels: usize,
    pub reduced: usize,
    pub n_inputs: usize,
    pub down: Conv2d,
    pub ups: Vec<Conv2d>,
}

impl Skff {
    /// `r = C / 8`, floored at 4 for narrow streams.
    pub fn reduced_channels(channels: usize) -> usize {
        (channels / 8).max(4)
    }

    pub fn register(store: &mut ParamStore, prefix: &str, channels: usize, n_inputs: usize) -> Result<Self> {
        if n_inputs < 2 {
            return shape_err("skff", format!("needs at least 2 inputs, got {n_inputs}"));
        }
        let reduced = Self::reduced_channels(channels);
        let down = Conv2d::register(store, &format!("{prefix}.down"), channels, reduced, 1, 1, false)?;
        let ups = (0..n_inputs)
            .map(|i| Conv2d::register(store, &format!("{prefix}.up{i}"), reduced, channels, 1, 1, false))
            .collect::<Result<_>>()?;
        Ok(Skff {
            channels,
            reduced,
            n_inputs,
            down,
            ups,
        })
    }

    pub fn num_params(&self) -> usize {
        self.down.num_params() + self.ups.iter().map(Conv2d::num_params).sum::<usize>()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        Ok(self.forward_with_weights(p, inputs)?.0)
    }

    /// Fused output and the stream weights as `[N, n, C]`.
    pub fn forward_with_weights<'t>(&self, p: &Bound<'t>, inputs: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
        if inputs.len() != self.n_inputs {
            return shape_err(
                "skff",
                format!("expected {} inputs, got {}", self.n_inputs, inputs.len()),
            );
        }
        let shape = inputs[0].shape();
        if shape.len() != 4 || shape[1] != self.channels {
            return shape_err("skff", format!("input {shape:?} for {} channels", self.channels));
        }
        if let Some(bad) = inputs.iter().find(|v| v.shape() != shape) {
            return shape_err("skff", format!("{:?} vs {shape:?}", bad.shape()));
        }
        let n = shape[0];
        let mut total = inputs[0];
        for &x in &inputs[1..] {
            total = total.add(x)?;
        }
        let z = self.down.forward(p, total.global_avg_pool()?)?;
        let logits = self
            .ups
            .iter()
            .map(|up| up.forward(p, z))
            .collect::<Result<Vec<_>>>()?;
        let weights = Var::concat(&logits, 1)?
            .reshape([n, self.n_inputs, self.channels])?
            .softmax(1)?;
        let mut out: Option<Var<'t>> = None;
        for (i, &x) in inputs.iter().enumerate() {
            let s = weights.narrow(1, i, 1)?.reshape([n, self.channels, 1, 1])?;
            let term = x.broadcast_mul(s)?;
            out = Some(match out {
                Some(acc) => acc.add(term)?,
                None => term,
            });
        }
        Ok((out.expect("at least two inputs"), weights))
    }
}

/// A multi-stream aggregation operator.
#[derive(Clone, Debug)]
pub enum Fusion {
    Skff(Skff),
    Sum { n_inputs: usize },
    Concat { n_inputs: usize, proj: Conv2d },
}

impl Fusion {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        kind: FusionKind,
        channels: usize,
        n_inputs: usize,
    ) -> Result<Self> {
        Ok(match kind {
            FusionKind::Skff => Fusion::Skff(Skff::register(store, &format!("{prefix}.skff"), channels, n_inputs)?),
            FusionKind::Sum => Fusion::Sum { n_inputs },
            FusionKind::Concat => Fusion::Concat {
                n_inputs,
                proj: Conv2d::register(
                    store,
                    &format!("{prefix}.concat"),
                    n_inputs * channels,
                    channels,
                    1,
                    1,
                    false,
                )?,
            },
        })
    }

    pub fn num_params(&self) -> usize {
        match self {
            Fusion::Skff(s) => s.num_params(),
            Fusion::Sum { .. } => 0,
            Fusion::Concat { proj, .. } => proj.num_params(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            Fusion::Skff(s) => s.n_inputs,
            Fusion::Sum { n_inputs } | Fusion::Concat { n_inputs, .. } => *n_inputs,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        if inputs.len() != self.n_inputs() {
            return shape_err(
                "fusion",
                format!("expected {} inputs, got {}", self.n_inputs(), inputs.len()),
            );
        }
        match self {
            Fusion::Skff(s) => s.forward(p, inputs),
            Fusion::Sum { .. } => {
                let mut acc = inputs[0];
                for &x in &inputs[1..] {
                    acc = acc.add(x)?;
                }
                Ok(acc)
            }
            Fusion::Concat { proj, .. } => proj.forward(p, Var::concat(inputs, 1)?),
        }
    }
}
