//! Multi-scale residual block.
//!
//! The block input seeds stream 0; each further stream is a 2x downsample of the previous one.
//! Every column runs each stream through its RCB and then passes context upwards, lowest stream
//! first: stream `k` is fused with an upsampled copy of the already-updated stream `k + 1`.
//! After the last column every lower stream is brought back to full resolution, all streams are
//! fused together, projected by a 1x1 conv and added to the block input.

use crate::autodiff::Var;
use crate::blocks::{Fusion, ModelConfig, Rcb};
use crate::error::{shape_err, Result};
use crate::nn::{Conv2d, Direction, Resample};
use crate::params::{Bound, ParamStore};

#[derive(Clone, Debug)]
pub struct Exchange {
    pub up: Resample,
    pub fusion: Fusion,
}

#[derive(Clone, Debug)]
pub struct Mrb {
    pub channels: Vec<usize>,
    /// `down[k]` maps stream `k` to stream `k + 1`.
    pub down: Vec<Resample>,
    /// `rcbs[col][k]`; with sharing enabled every column holds the same parameter ids.
    pub rcbs: Vec<Vec<Rcb>>,
    /// `exchange[col][k]` feeds stream `k + 1` into stream `k`.
    pub exchange: Vec<Vec<Exchange>>,
    /// `final_up[k - 1]` is the chain that lifts stream `k` to full resolution.
    pub final_up: Vec<Vec<Resample>>,
    pub final_fusion: Option<Fusion>,
    pub conv_out: Conv2d,
}

impl Mrb {
    pub fn register(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let ch = cfg.stream_channels.clone();
        let n = ch.len();
        let down = (0..n.saturating_sub(1))
            .map(|k| Resample::register(store, &format!("{prefix}.down{}", k + 1), Direction::Down2x, ch[k], ch[k + 1]))
            .collect::<Result<Vec<_>>>()?;

        let mut rcbs: Vec<Vec<Rcb>> = Vec::with_capacity(cfg.n_cols);
        for col in 0..cfg.n_cols {
            let mut column = Vec::with_capacity(n);
            for (k, &c) in ch.iter().enumerate() {
                let rcb = if cfg.share_rcb && col > 0 {
                    let shared = rcbs[0][k].clone();
                    for id in shared.param_ids() {
                        let alias = store.name(id).replacen(".rcb.", &format!(".rcb_c{col}."), 1);
                        store.alias(alias, id)?;
                    }
                    shared
                } else {
                    let name = if cfg.share_rcb {
                        format!("{prefix}.s{k}.rcb")
                    } else {
                        format!("{prefix}.s{k}.rcb_c{col}")
                    };
                    Rcb::register(store, &name, c, cfg.groups, cfg.cm_transform, cfg.activation)?
                };
                column.push(rcb);
            }
            rcbs.push(column);
        }

        let mut exchange = Vec::with_capacity(cfg.n_cols);
        for col in 0..cfg.n_cols {
            let mut column = Vec::with_capacity(n.saturating_sub(1));
            for k in 0..n.saturating_sub(1) {
                let p = format!("{prefix}.c{col}.x{k}");
                column.push(Exchange {
                    up: Resample::register(store, &format!("{p}.up"), Direction::Up2x, ch[k + 1], ch[k])?,
                    fusion: Fusion::register(store, &p, cfg.fusion, ch[k], 2)?,
                });
            }
            exchange.push(column);
        }

        let final_up = (1..n)
            .map(|k| {
                (0..k)
                    .map(|j| {
                        let from = k - j;
                        Resample::register(
                            store,
                            &format!("{prefix}.final.up{k}_{j}"),
                            Direction::Up2x,
                            ch[from],
                            ch[from - 1],
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let final_fusion = if n > 1 {
            Some(Fusion::register(store, &format!("{prefix}.final"), cfg.fusion, ch[0], n)?)
        } else {
            None
        };
        let conv_out = Conv2d::register(store, &format!("{prefix}.conv_out"), ch[0], ch[0], 1, 1, false)?;
        store.mark_branch_output(conv_out.weight);
        Ok(Mrb {
            channels: ch,
            down,
            rcbs,
            exchange,
            final_up,
            final_fusion,
            conv_out,
        })
    }

    pub fn n_streams(&self) -> usize {
        self.channels.len()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let m = 1usize << (self.n_streams() - 1);
        if shape.len() != 4 || shape[1] != self.channels[0] || shape[2] % m != 0 || shape[3] % m != 0 {
            return shape_err(
                "mrb",
                format!("input {shape:?} needs {} channels and extents divisible by {m}", self.channels[0]),
            );
        }
        let mut streams = Vec::with_capacity(self.n_streams());
        streams.push(x);
        for d in &self.down {
            let prev = *streams.last().expect("non-empty");
            streams.push(d.forward(p, prev)?);
        }
        for (rcbs, exchange) in self.rcbs.iter().zip(&self.exchange) {
            for (s, rcb) in streams.iter_mut().zip(rcbs) {
                *s = rcb.forward(p, *s)?;
            }
            for k in (0..exchange.len()).rev() {
                let ex = &exchange[k];
                let lifted = ex.up.forward(p, streams[k + 1])?;
                streams[k] = ex.fusion.forward(p, &[streams[k], lifted])?;
            }
        }
        let top = match &self.final_fusion {
            Some(fusion) => {
                let mut full = vec![streams[0]];
                for (k, chain) in self.final_up.iter().enumerate() {
                    let mut s = streams[k + 1];
                    for up in chain {
                        s = up.forward(p, s)?;
                    }
                    full.push(s);
                }
                fusion.forward(p, &full)?
            }
            None => streams[0],
        };
        x.add(self.conv_out.forward(p, top)?)
    }
}
