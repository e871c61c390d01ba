//! Entropy coding: quantized probability tables, a bit-exact range coder,
//! and the learned probability models that feed them.

pub mod gmm;
pub mod models;
pub mod range;
pub mod rate;
pub mod table;

pub use range::{RangeDecoder, RangeEncoder};
pub use table::{LatentTable, PmfTable};

/// Minimum Gaussian scale; smaller predicted scales are clamped up to this.
pub const SIGMA_MIN: f64 = 0.04;

/// Probability floor for rate estimates and coder tables.
pub const P_MIN: f64 = 1.0 / 32768.0;
