//! Network building blocks, from stream fusion up to the full restoration model.

mod config;
mod mrb;
mod net;
mod rcb;
mod skff;

pub use config::{FusionKind, ModelConfig};
pub use mrb::{Exchange, Mrb};
pub use net::{init_params, Model, RestorationNet, Rrg};
pub use rcb::{ContextModule, Rcb};
pub use skff::{Fusion, Skff};
