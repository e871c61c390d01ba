//! Adam optimizer over a flat list of parameter tensors.

use crate::error::CoreError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction. Moment buffers are keyed by parameter index, so
/// the caller must pass parameters in the same order every step.
#[derive(Debug)]
pub struct Adam<T> {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    skipped: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
            skipped: 0,
        }
    }

    /// Completed update steps (skipped steps do not count).
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Steps rejected because a gradient was non-finite.
    pub fn skipped_steps(&self) -> u64 {
        self.skipped
    }

    /// Applies one update. `grads[i]` pairs with `params[i]`; `None` or
    /// `frozen[i]` leaves the parameter and its moments untouched. If any
    /// applied gradient contains a non-finite value the whole step is skipped
    /// and logged, leaving every parameter unchanged.
    ///
    /// Returns `true` if the step was applied.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Option<Tensor<T>>],
        frozen: &[bool],
    ) -> Result<bool, CoreError> {
        if params.len() != grads.len() || params.len() != frozen.len() {
            return Err(CoreError::InvalidArg(format!(
                "adam: {} params, {} grads, {} freeze flags",
                params.len(),
                grads.len(),
                frozen.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        } else if self.m.len() != params.len() {
            return Err(CoreError::InvalidArg(format!(
                "adam: parameter count changed from {} to {}",
                self.m.len(),
                params.len()
            )));
        }

        for (i, g) in grads.iter().enumerate() {
            if frozen[i] {
                continue;
            }
            if let Some(g) = g {
                if g.shape() != params[i].shape() {
                    return Err(CoreError::shape(
                        "adam",
                        format!(
                            "grad {i} has shape {:?}, param has {:?}",
                            g.shape(),
                            params[i].shape()
                        ),
                    ));
                }
                if !g.is_all_finite() {
                    self.skipped += 1;
                    log::warn!("adam: non-finite gradient for parameter {i}; step skipped");
                    return Ok(false);
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (ob1, ob2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let lr = T::lit(self.lr / bc1);
        let sq_bc2 = T::lit(bc2.sqrt());
        let eps = T::lit(self.eps);

        for i in 0..params.len() {
            if frozen[i] {
                continue;
            }
            let Some(g) = &grads[i] else { continue };
            let pd = params[i].data_mut();
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            let gd = g.data();
            for j in 0..pd.len() {
                md[j] = b1 * md[j] + ob1 * gd[j];
                vd[j] = b2 * vd[j] + ob2 * gd[j] * gd[j];
                // v-hat enters through sqrt(v / bc2) = sqrt(v) / sqrt(bc2).
                pd[j] = pd[j] - lr * md[j] / (vd[j].sqrt() / sq_bc2 + eps);
            }
        }
        Ok(true)
    }
}
