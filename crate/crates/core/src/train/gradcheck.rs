//! Finite-difference verification of reverse-mode gradients.

use crate::autodiff::Tape;
use crate::blocks::Model;
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};
use crate::train::{charbonnier, CharbonnierMode};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Scalar parameters compared.
    pub checked: usize,
    pub max_rel: f64,
    pub max_abs: f64,
    /// `name[index]` of the element with the largest relative error.
    pub worst: String,
    /// Per tensor: `(name, |a - n| / max(|a|, |n|))` in Euclidean norm.
    pub tensors: Vec<(String, f64)>,
}

impl GradCheck {
    /// Largest per-tensor norm-relative error and the tensor it belongs to.
    pub fn max_tensor_rel(&self) -> (f64, &str) {
        self.tensors
            .iter()
            .fold((0.0, ""), |acc, (n, r)| if *r > acc.0 { (*r, n.as_str()) } else { acc })
    }
}

fn loss_value(model: &Model, x: &Tensor, target: &Tensor, mode: CharbonnierMode) -> Result<f64> {
    let tape = Tape::new();
    let p = model.store.bind(&tape, false);
    let y = model.forward(&p, tape.leaf(x.clone(), false))?;
    charbonnier(y, tape.leaf(target.clone(), false), model.config().eps, mode)?.value().item()
}

/// Compare analytic Charbonnier-loss gradients with central differences of width `2 * step`
/// for every scalar parameter. Element relative error is `|a - n| / max(|a|, |n|, floor)`;
/// per-tensor errors use Euclidean norms instead.
pub fn check_gradients(
    model: &Model,
    x: &Tensor,
    target: &Tensor,
    mode: CharbonnierMode,
    step: f64,
    floor: f64,
) -> Result<GradCheck> {
    if model.dtype() != DType::F64 {
        return Err(Error::Invalid("gradient checks need a 64-bit model".into()));
    }
    let (x, target) = (x.to_dtype(DType::F64), target.to_dtype(DType::F64));
    let analytic = {
        let tape = Tape::new();
        let p = model.store.bind(&tape, true);
        let y = model.forward(&p, tape.leaf(x.clone(), false))?;
        let loss = charbonnier(y, tape.leaf(target.clone(), false), model.config().eps, mode)?;
        let g = tape.backward(loss)?;
        p.collect_grads(&model.store, &g)?
    };
    let mut probe = model.clone();
    let mut report = GradCheck {
        checked: 0,
        max_rel: 0.0,
        max_abs: 0.0,
        worst: String::new(),
        tensors: Vec::new(),
    };
    for (i, entry) in model.store.entries().iter().enumerate() {
        let id = crate::params::ParamId(i);
        let base = entry.tensor.to_f64_vec();
        let grad = analytic[i].to_f64_vec();
        let mut values = base.clone();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for j in 0..base.len() {
            let mut eval = |v: f64| -> Result<f64> {
                values[j] = v;
                probe.store.set(id, Tensor::from_f64(entry.tensor.shape(), &values, DType::F64)?)?;
                loss_value(&probe, &x, &target, mode)
            };
            let numeric = (eval(base[j] + step)? - eval(base[j] - step)?) / (2.0 * step);
            values[j] = base[j];
            let abs = (grad[j] - numeric).abs();
            diff2 += abs * abs;
            a2 += grad[j] * grad[j];
            n2 += numeric * numeric;
            let rel = abs / grad[j].abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            report.max_abs = report.max_abs.max(abs);
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("{}[{j}]", entry.name);
            }
        }
        probe.store.set(id, entry.tensor.clone())?;
        let scale = a2.max(n2).sqrt();
        let rel = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
        report.tensors.push((entry.name.clone(), rel));
    }
    Ok(report)
}
