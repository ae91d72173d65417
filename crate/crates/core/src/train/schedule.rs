use crate::error::{Error, Result};

/// Cosine annealing from `lr_init` at `t = 0` to `lr_min` at `t = total`.
///
/// Written as a convex combination so both endpoints are exact.
pub fn cosine_lr(t: usize, total: usize, lr_init: f64, lr_min: f64) -> Result<f64> {
    if t > total {
        return Err(Error::Invalid(format!("iteration {t} beyond schedule length {total}")));
    }
    if total == 0 {
        return Ok(lr_init);
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos());
    Ok(lr_init * w + lr_min * (1.0 - w))
}

/// Patch size of the last stage whose start `fraction * total` is at or before `t`.
pub fn progressive_patch(t: usize, total: usize, schedule: &[(f64, usize)]) -> usize {
    schedule
        .iter()
        .take_while(|(f, _)| f * total as f64 <= t as f64)
        .last()
        .or(schedule.first())
        .map(|&(_, p)| p)
        .expect("non-empty schedule")
}
