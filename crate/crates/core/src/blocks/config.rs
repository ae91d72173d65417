use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

/// How parallel streams are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    /// Selective-kernel attention fusion.
    #[default]
    Skff,
    /// Plain elementwise sum (no parameters).
    Sum,
    /// Channel concatenation followed by a bias-free 1x1 conv back to `C`.
    Concat,
}

/// Architectural hyperparameters of the restoration network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Recursive residual groups.
    pub n_rrg: usize,
    /// Multi-scale residual blocks per group.
    pub n_mrb: usize,
    /// Channels per stream, full resolution first; stream `k` runs at scale `2^-k`.
    pub stream_channels: Vec<usize>,
    /// Residual contextual block columns per stream.
    pub n_cols: usize,
    /// Groups in the RCB 3x3 convolutions.
    pub groups: usize,
    /// 3 for RGB input, 6 for concatenated dual-pixel views.
    pub in_channels: usize,
    pub out_channels: usize,
    /// One RCB parameter set per stream, reused by every column.
    pub share_rcb: bool,
    /// Keep the two 1x1 transform convs inside the context module.
    pub cm_transform: bool,
    pub fusion: FusionKind,
    pub activation: Activation,
    /// Charbonnier epsilon.
    pub eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_rrg: 4,
            n_mrb: 2,
            stream_channels: vec![80, 120, 180],
            n_cols: 2,
            groups: 2,
            in_channels: 3,
            out_channels: 3,
            share_rcb: true,
            cm_transform: true,
            fusion: FusionKind::Skff,
            activation: Activation::Relu,
            eps: 1e-3,
        }
    }
}

impl ModelConfig {
    /// Full-size configuration.
    pub fn full() -> Self {
        Self::default()
    }

    /// One group, one block, streams of 8/12/16 channels: small enough for finite differences.
    pub fn tiny() -> Self {
        ModelConfig {
            n_rrg: 1,
            n_mrb: 1,
            stream_channels: vec![8, 12, 16],
            ..Self::default()
        }
    }

    pub fn n_streams(&self) -> usize {
        self.stream_channels.len()
    }

    pub fn feat_channels(&self) -> usize {
        self.stream_channels[0]
    }

    /// Spatial extents fed to the model must be multiples of this.
    pub fn scale_factor(&self) -> usize {
        1 << (self.n_streams().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| {
            Err(Error::Config {
                key: format!("model.{key}"),
                msg,
            })
        };
        if self.stream_channels.is_empty() {
            return bad("stream_channels", "at least one stream is required".into());
        }
        if self.stream_channels.windows(2).any(|w| w[0] >= w[1]) {
            return bad(
                "stream_channels",
                format!("{:?} must be strictly increasing", self.stream_channels),
            );
        }
        if self.groups == 0 {
            return bad("groups", "must be positive".into());
        }
        if let Some(c) = self.stream_channels.iter().find(|&&c| c % self.groups != 0) {
            return bad("groups", format!("{c} channels not divisible by {} groups", self.groups));
        }
        for (key, v) in [("n_rrg", self.n_rrg), ("n_mrb", self.n_mrb), ("n_cols", self.n_cols)] {
            if v == 0 {
                return bad(key, "must be at least 1".into());
            }
        }
        if self.out_channels == 0
            || (self.in_channels != self.out_channels && self.in_channels != 2 * self.out_channels)
        {
            return bad(
                "in_channels",
                format!(
                    "{} input channels cannot map to {} outputs (expected equal or double)",
                    self.in_channels, self.out_channels
                ),
            );
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps", format!("{} must be positive", self.eps));
        }
        Ok(())
    }

    /// Check that `h x w` is a legal model input size.
    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let m = self.scale_factor();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape {
                op: "model input",
                detail: format!("{h}x{w} is not divisible by {m}"),
            });
        }
        Ok(())
    }
}
