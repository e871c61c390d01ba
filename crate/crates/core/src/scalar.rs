use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Element type for tensors and tapes.
///
/// Networks are written once against this trait and instantiated at `f32`
/// (training, inference) or `f64` (gradient checks, entropy-table evaluation).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts a literal; panics only for non-finite inputs, which never
    /// appear in the fixed constants this is used for.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal out of range for scalar type")
    }

    /// Lossy widening to `f64` for logging and table building.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_round_trips() {
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(f64::lit(-3.25), -3.25f64);
        assert_eq!(1.5f32.to_f64_lossy(), 1.5f64);
    }
}
