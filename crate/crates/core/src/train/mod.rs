//! Loss, optimiser, schedules and the training loop.

mod adam;
pub mod gradcheck;
pub mod log;
mod loss;
mod schedule;

use std::sync::mpsc::sync_channel;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use gradcheck::{check_gradients, GradCheck};
pub use log::{parse_log, LogRecord};
pub use loss::{charbonnier, CharbonnierMode};
pub use schedule::{cosine_lr, progressive_patch};

use crate::analysis::metrics::psnr;
use crate::autodiff::Tape;
use crate::blocks::Model;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::parallel::is_sequential;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub betas: [f64; 2],
    pub adam_eps: f64,
    pub batch_size: usize,
    /// `(start_fraction, patch_size)` stages.
    pub patch_schedule: Vec<(f64, usize)>,
    pub charbonnier_mode: CharbonnierMode,
    pub flips: bool,
    /// Validation period in iterations; 0 picks `max(total_iters / 20, 1)`.
    pub val_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 300_000,
            lr_init: 2e-4,
            lr_min: 1e-6,
            betas: [0.9, 0.999],
            adam_eps: 1e-8,
            batch_size: 64,
            patch_schedule: vec![(0.0, 128), (0.25, 144), (0.5, 192), (0.75, 224)],
            charbonnier_mode: CharbonnierMode::PerPixelMean,
            flips: true,
            val_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn val_period(&self) -> usize {
        if self.val_every > 0 {
            self.val_every
        } else {
            (self.total_iters / 20).max(1)
        }
    }

    /// Check the schedule against the model's spatial multiple `scale`.
    pub fn validate(&self, scale: usize) -> Result<()> {
        let bad = |k: &str, m: String| Err(Error::Config { key: format!("train.{k}"), msg: m });
        let s = &self.patch_schedule;
        if s.is_empty() || s[0].0 != 0.0 {
            return bad("patch_schedule", "must be non-empty and start at fraction 0".into());
        }
        if s.windows(2).any(|w| !(w[0].0 < w[1].0 && w[0].1 < w[1].1)) {
            return bad("patch_schedule", "fractions and patch sizes must be strictly increasing".into());
        }
        if let Some(&(f, _)) = s.iter().find(|(f, _)| !(0.0..1.0).contains(f)) {
            return bad("patch_schedule", format!("start fraction {f} outside [0, 1)"));
        }
        if let Some(&(_, p)) = s.iter().find(|(_, p)| *p == 0 || p % scale != 0) {
            return bad("patch_schedule", format!("patch size {p} not a positive multiple of {scale}"));
        }
        if !(self.lr_init > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return bad("lr_init", format!("need 0 < lr_min ({}) <= lr_init ({})", self.lr_min, self.lr_init));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return bad("betas", format!("{:?} must lie in [0, 1)", self.betas));
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        Ok(())
    }
}

/// Everything needed to continue a run: optimiser moments, counters and the data RNG.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed iterations.
    pub iter: usize,
    pub lr: f64,
    pub patch: usize,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &Model, cfg: &TrainConfig) -> Self {
        TrainState {
            iter: 0,
            lr: cfg.lr_init,
            patch: cfg.patch_schedule.first().map_or(0, |s| s.1),
            adam: Adam::new(&model.store, cfg.betas[0], cfg.betas[1], cfg.adam_eps),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<LogRecord>,
    pub state: TrainState,
}

/// Restore full validation images and return the mean PSNR (outputs clipped to `[0, 1]`).
pub fn validate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.val.is_empty() {
        return Err(Error::Invalid("no validation images".into()));
    }
    let mut total = 0.0;
    for pair in &data.val {
        let y = model.restore(&pair.degraded)?;
        total += psnr(&y, &pair.clean.to_dtype(y.dtype()), 1.0)?;
    }
    Ok(total / data.val.len() as f64)
}

/// One optimisation step on a fixed batch; returns the loss before the update.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    degraded: &Tensor,
    clean: &Tensor,
    lr: f64,
    mode: CharbonnierMode,
) -> Result<f64> {
    let dtype = model.dtype();
    let grads = {
        let tape = Tape::new();
        let p = model.store.bind(&tape, true);
        let x = tape.leaf(degraded.to_dtype(dtype), false);
        let target = tape.leaf(clean.to_dtype(dtype), false);
        let y = model.forward(&p, x)?;
        let loss = charbonnier(y, target, model.config().eps, mode)?;
        let value = loss.value().item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss ({value})")));
        }
        let g = tape.backward(loss)?;
        (p.collect_grads(&model.store, &g)?, value)
    };
    adam.step(&mut model.store, &grads.0, lr)?;
    Ok(grads.1)
}

/// Run `cfg.total_iters` iterations (or the remainder after `resume`).
///
/// Batches come from a producer thread unless sequential mode is on; both paths draw from the
/// same RNG in the same order, so results do not depend on the mode.
pub fn train_loop(
    model: &mut Model,
    cfg: &TrainConfig,
    data: &Dataset,
    resume: Option<TrainState>,
    on_record: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    cfg.validate(model.config().scale_factor())?;
    if data.train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if data.in_channels() != model.config().in_channels {
        return Err(Error::Config {
            key: "model.in_channels".into(),
            msg: format!("model takes {} channels, data provides {}", model.config().in_channels, data.in_channels()),
        });
    }
    let mut state = resume.unwrap_or_else(|| TrainState::new(model, cfg));
    let total = cfg.total_iters;
    if state.iter > total {
        return Err(Error::Invalid(format!("resumed at iteration {} beyond {total}", state.iter)));
    }
    let start = state.iter;
    let schedule = |t: usize| -> Result<(f64, usize)> {
        Ok((cosine_lr(t, total, cfg.lr_init, cfg.lr_min)?, progressive_patch(t, total, &cfg.patch_schedule)))
    };
    let mut records = Vec::with_capacity(total - start);
    let val_every = cfg.val_period();

    let mut consume = |t: usize, batch: (Tensor, Tensor), state: &mut TrainState| -> Result<()> {
        let (lr, patch) = schedule(t)?;
        let loss = train_step(model, &mut state.adam, &batch.0, &batch.1, lr, cfg.charbonnier_mode)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at iteration {}", t + 1)),
                other => other,
            })?;
        state.iter = t + 1;
        state.lr = lr;
        state.patch = patch;
        let val_psnr = if (t + 1) % val_every == 0 || t + 1 == total {
            Some(validate(model, data)?)
        } else {
            None
        };
        let rec = LogRecord {
            iter: t + 1,
            lr,
            patch,
            loss,
            val_psnr,
        };
        on_record(&rec);
        records.push(rec);
        Ok(())
    };

    if is_sequential() || total - start <= 1 {
        for t in start..total {
            let (_, patch) = schedule(t)?;
            let batch = data.sample_batch(cfg.batch_size, patch, cfg.flips, &mut state.rng)?;
            consume(t, batch, &mut state)?;
        }
    } else {
        let mut rng = state.rng.clone();
        let (tx, rx) = sync_channel::<Result<(Tensor, Tensor)>>(2);
        let produced = std::thread::scope(|s| -> Result<ChaCha8Rng> {
            let producer = s.spawn(move || {
                for t in start..total {
                    let batch = schedule(t).and_then(|(_, patch)| data.sample_batch(cfg.batch_size, patch, cfg.flips, &mut rng));
                    let failed = batch.is_err();
                    if tx.send(batch).is_err() || failed {
                        break;
                    }
                }
                rng
            });
            let mut outcome = Ok(());
            for t in start..total {
                let batch = rx.recv().map_err(|_| Error::Invalid("batch producer stopped".into()));
                if let Err(e) = batch.and_then(|b| b).and_then(|b| consume(t, b, &mut state)) {
                    outcome = Err(e);
                    break;
                }
            }
            drop(rx);
            let rng = producer.join().expect("batch producer panicked");
            outcome.map(|_| rng)
        })?;
        state.rng = produced;
    }
    Ok(TrainOutcome { records, state })
}
