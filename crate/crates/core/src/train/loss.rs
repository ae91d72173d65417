use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{shape_err, Result};

/// How the Charbonnier penalty is reduced over elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CharbonnierMode {
    /// `mean(sqrt(d^2 + eps^2))`.
    #[default]
    PerPixelMean,
    /// `sqrt(||d||^2 + eps^2)`.
    GlobalNorm,
}

/// Smooth L1 penalty between `pred` and `target`; differentiable at zero difference.
pub fn charbonnier<'t>(pred: Var<'t>, target: Var<'t>, eps: f64, mode: CharbonnierMode) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return shape_err("charbonnier", format!("{:?} vs {:?}", pred.shape(), target.shape()));
    }
    let d = pred.sub(target)?;
    let sq = d.mul(d)?;
    match mode {
        CharbonnierMode::PerPixelMean => sq.add_scalar(eps * eps)?.sqrt()?.mean(),
        CharbonnierMode::GlobalNorm => sq.sum()?.add_scalar(eps * eps)?.sqrt(),
    }
}
