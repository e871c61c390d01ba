//! Neural video codec: cross-scale feature prediction, feature-residual
//! coding, learned entropy models, and a bit-exact range coder, with the
//! multi-stage training schedule that takes the model from additive-noise
//! pretraining to hard-quantized finetuning.

pub mod ablation;
pub mod bdrate;
pub mod bitstream;
pub mod checkpoint;
pub mod config;
pub mod entropy;
pub mod error;
pub mod frame;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;
pub mod viz;
pub mod warp;

pub use config::{CodecConfig, Distortion, NetConfig};
pub use error::{CodecError, Result};
