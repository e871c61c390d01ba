//! Finite-difference verification of analytic gradients.
//!
//! Builds a fresh tape per evaluation, compares the tape gradient of a scalar
//! function against central differences on a deterministic sample of
//! coordinates, and reports the worst relative error.

use crate::error::CoreError;
use crate::graph::{Graph, VarId};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub struct GradCheck {
    /// Central-difference step.
    pub eps: f64,
    /// Number of coordinates probed (all coordinates if the tensor is
    /// smaller).
    pub max_coords: usize,
    /// Seed for coordinate sampling.
    pub seed: u64,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-5,
            max_coords: 8,
            seed: 0x9d5c,
            floor: 1e-6,
        }
    }
}

impl GradCheck {
    /// Returns the maximum relative error between the analytic gradient and
    /// central finite differences of `f` at `x`. `f` must build a scalar; it
    /// is called once for the analytic pass and twice per probed coordinate.
    pub fn run<F>(&self, x: &Tensor<f64>, mut f: F) -> Result<f64, CoreError>
    where
        F: FnMut(&mut Graph<f64>, VarId) -> Result<VarId, CoreError>,
    {
        let eval = |t: &Tensor<f64>, f: &mut F| -> Result<f64, CoreError> {
            let mut g = Graph::new();
            let xid = g.input(t.clone());
            let y = f(&mut g, xid)?;
            if g.value(y).numel() != 1 {
                return Err(CoreError::shape(
                    "gradcheck",
                    format!("function output must be scalar, got {:?}", g.value(y).shape()),
                ));
            }
            let v = g.value(y).data()[0];
            if !v.is_finite() {
                return Err(CoreError::NonFinite("gradcheck function value"));
            }
            Ok(v)
        };

        // Analytic gradient.
        let mut g = Graph::new();
        let xid = g.input(x.clone());
        let y = f(&mut g, xid)?;
        if g.value(y).numel() != 1 {
            return Err(CoreError::shape(
                "gradcheck",
                format!("function output must be scalar, got {:?}", g.value(y).shape()),
            ));
        }
        if !g.value(y).is_all_finite() {
            return Err(CoreError::NonFinite("gradcheck function value"));
        }
        g.backward(y)?;
        let analytic = g
            .take_grad(xid)
            .unwrap_or_else(|| Tensor::zeros(x.shape()));

        let n = x.numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > self.max_coords {
            let mut rng = Rng::new(self.seed);
            for i in 0..self.max_coords {
                let j = i + rng.below((n - i) as u64) as usize;
                coords.swap(i, j);
            }
            coords.truncate(self.max_coords);
        }

        let mut worst = 0.0f64;
        for &ci in &coords {
            let mut xp = x.clone();
            xp.data_mut()[ci] += self.eps;
            let fp = eval(&xp, &mut f)?;
            let mut xm = x.clone();
            xm.data_mut()[ci] -= self.eps;
            let fm = eval(&xm, &mut f)?;
            let numeric = (fp - fm) / (2.0 * self.eps);
            let a = analytic.data()[ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(self.floor);
            if rel > worst {
                worst = rel;
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks() {
        let x = Tensor::from_vec(&[4], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let err = GradCheck::default()
            .run(&x, |g, xid| {
                let sq = g.mul(xid, xid)?;
                g.sum_all(sq)
            })
            .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn gradient_mismatch_is_detected() {
        // round_ste claims an identity gradient, but the true local slope of
        // the rounded function is zero away from ties; the checker must see
        // a large error rather than report success.
        let x = Tensor::from_vec(&[3], vec![0.3, -1.2, 2.1]).unwrap();
        let err = GradCheck::default()
            .run(&x, |g, xid| {
                let y = g.round_ste(xid)?;
                g.sum_all(y)
            })
            .unwrap();
        assert!(err > 0.5, "expected mismatch, got rel err {err}");
    }

    #[test]
    fn rejects_non_scalar_output() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let r = GradCheck::default().run(&x, |g, xid| g.mul(xid, xid));
        assert!(r.is_err());
    }
}
