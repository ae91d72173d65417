//! Multi-scale residual image restoration on a small self-contained tensor engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode tape.
//! * [`nn`]: grouped convolution, inter-stream resampling and activations.
//! * [`blocks`]: selective-kernel fusion, residual contextual blocks, multi-scale residual
//!   blocks, residual groups and the full restoration network.
//! * [`train`]: Charbonnier loss, Adam, cosine learning rate, progressive patches, the loop.
//! * [`data`]: image I/O, paired datasets, patch sampling and synthetic degradations.
//! * [`analysis`]: PSNR / SSIM / MAE and parameter / FLOP accounting.
//! * [`config`]: the key-value run configuration shared by the CLI.

pub mod analysis;
pub mod autodiff;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod nn;
pub mod parallel;
pub mod params;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::{DType, Tensor};
