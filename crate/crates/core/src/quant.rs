//! Quantization helpers: rounding, additive-noise and straight-through
//! surrogates used by the training stages.

use crate::error::CoreError;
use crate::graph::{Graph, VarId};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rounds half away from zero: `0.5 -> 1`, `-0.5 -> -1`, `2.5 -> 3`.
#[inline]
pub fn round_half_away<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    if x >= T::zero() {
        (x + half).floor()
    } else {
        (x - half).ceil()
    }
}

pub fn round_tensor<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(round_half_away)
}

/// Quantization surrogate selected per sub-network and training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive uniform noise in `[-0.5, 0.5)`; gradients pass unchanged.
    Aun,
    /// Hard rounding with no gradient into the input.
    Round,
    /// Hard rounding forward, identity backward.
    RoundSte,
}

impl<T: Scalar> Graph<T> {
    /// Additive uniform noise drawn once at call time; the noise tensor is a
    /// constant on the tape, so the gradient of the output with respect to
    /// `x` is the identity.
    pub fn add_uniform_noise(&mut self, x: VarId, rng: &mut Rng) -> Result<VarId, CoreError> {
        let noise = Tensor::from_fn(self.value(x).shape(), |_| T::lit(rng.uniform() - 0.5));
        let n = self.constant(noise);
        self.add(x, n)
    }

    /// Hard rounding detached from the tape: the result is a constant.
    pub fn round_detached(&mut self, x: VarId) -> VarId {
        let v = round_tensor(self.value(x));
        self.constant(v)
    }

    /// Applies the given quantization surrogate.
    pub fn quantize(&mut self, x: VarId, mode: QuantMode, rng: &mut Rng) -> Result<VarId, CoreError> {
        match mode {
            QuantMode::Aun => self.add_uniform_noise(x, rng),
            QuantMode::Round => Ok(self.round_detached(x)),
            QuantMode::RoundSte => self.round_ste(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_ties_away_from_zero() {
        assert_eq!(round_half_away(0.5f32), 1.0);
        assert_eq!(round_half_away(-0.5f32), -1.0);
        assert_eq!(round_half_away(2.5f64), 3.0);
        assert_eq!(round_half_away(-2.5f64), -3.0);
        assert_eq!(round_half_away(1.4f64), 1.0);
        assert_eq!(round_half_away(-1.6f64), -2.0);
        assert_eq!(round_half_away(0.0f64), 0.0);
    }

    #[test]
    fn aun_stays_within_half_unit() {
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::new(5);
        let x = g.input(Tensor::full(&[1, 1, 8, 8], 2.0));
        let y = g.add_uniform_noise(x, &mut rng).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 2.0).abs() <= 0.5);
        }
    }

    #[test]
    fn aun_gradient_is_identity() {
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::new(6);
        let x = g.input(Tensor::full(&[1, 1, 2, 2], 0.3));
        let y = g.add_uniform_noise(x, &mut rng).unwrap();
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        for &v in g.grad(x).unwrap().data() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn ste_rounds_forward_passes_gradient_back() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(&[3], vec![0.6, -1.2, 2.5]).unwrap());
        let y = g.round_ste(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -1.0, 3.0]);
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn detached_round_blocks_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(&[2], vec![0.6, -1.2]).unwrap());
        let y = g.round_detached(x);
        assert_eq!(g.value(y).data(), &[1.0, -1.0]);
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
    }
}
