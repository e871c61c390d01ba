//! Differentiable rate terms: −Σ log₂ p(v) under each entropy model,
//! assembled on the tape so gradients reach both the latents (through soft
//! quantization surrogates) and the model parameters.

use envc_core::ops::factorized::FcdfParamIds;
use envc_core::{CoreError, Graph, Scalar, VarId};

use crate::entropy::{P_MIN, SIGMA_MIN};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Shared tail: clamps probabilities at the coder floor and sums code
/// lengths. `p` holds per-element bin probabilities.
fn bits_from_probs<T: Scalar>(g: &mut Graph<T>, p: VarId) -> Result<VarId, CoreError> {
    let p = g.clamp_min(p, T::lit(P_MIN))?;
    let lg = g.log2(p)?;
    let s = g.sum_all(lg)?;
    g.mul_scalar(s, T::lit(-1.0))
}

/// Unit-bin probabilities of `v` under N(mu, sigma^2) with
/// `sigma = SIGMA_MIN + softplus(raw_sigma)`. All three tensors share one
/// shape.
fn gaussian_probs_node<T: Scalar>(
    g: &mut Graph<T>,
    v: VarId,
    mu: VarId,
    raw_sigma: VarId,
) -> Result<VarId, CoreError> {
    let sp = g.softplus(raw_sigma)?;
    let sigma = g.add_scalar(sp, T::lit(SIGMA_MIN))?;
    let denom = g.mul_scalar(sigma, T::lit(SQRT2))?;
    let d = g.sub(v, mu)?;
    let hi = g.add_scalar(d, T::lit(0.5))?;
    let lo = g.add_scalar(d, T::lit(-0.5))?;
    let zhi = g.div(hi, denom)?;
    let zlo = g.div(lo, denom)?;
    let ehi = g.erf(zhi)?;
    let elo = g.erf(zlo)?;
    let diff = g.sub(ehi, elo)?;
    g.mul_scalar(diff, T::lit(0.5))
}

/// Rate in bits of `v` under the Gaussian model (hyperprior output).
pub fn gaussian_rate_bits<T: Scalar>(
    g: &mut Graph<T>,
    v: VarId,
    mu: VarId,
    raw_sigma: VarId,
) -> Result<VarId, CoreError> {
    let p = gaussian_probs_node(g, v, mu, raw_sigma)?;
    bits_from_probs(g, p)
}

/// Rate in bits of `v` under a per-channel factorized density.
pub fn factorized_rate_bits<T: Scalar>(
    g: &mut Graph<T>,
    v: VarId,
    params: FcdfParamIds,
) -> Result<VarId, CoreError> {
    let hi = g.add_scalar(v, T::lit(0.5))?;
    let lo = g.add_scalar(v, T::lit(-0.5))?;
    let chi = g.factorized_cdf(hi, params)?;
    let clo = g.factorized_cdf(lo, params)?;
    let p = g.sub(chi, clo)?;
    bits_from_probs(g, p)
}

/// Rate in bits of `v` (shape `[B,C,H,W]`) under a K-component Gaussian
/// mixture. Parameter tensors are `[B, K*C, H, W]` with component-major
/// channel layout (channel `k*C + c` belongs to component `k` of latent
/// channel `c`); mixture logits are normalized here with a softmax over K.
pub fn gmm_rate_bits<T: Scalar>(
    g: &mut Graph<T>,
    v: VarId,
    pi_logits: VarId,
    mus: VarId,
    raw_sigmas: VarId,
    k: usize,
) -> Result<VarId, CoreError> {
    let (b, c, h, w) = g.value(v).dims4()?;
    let kc = g.value(pi_logits).shape()[1];
    if kc != k * c {
        return Err(CoreError::shape(
            "gmm_rate_bits",
            format!("expected {k}*{c} mixture channels, got {kc}"),
        ));
    }
    let grouped = g.reshape(pi_logits, &[b, k, c, h, w])?;
    let pis = g.softmax(grouped, 1)?;
    let pis = g.reshape(pis, &[b, k * c, h, w])?;

    let mut p_total: Option<VarId> = None;
    for i in 0..k {
        let mu_i = g.slice_channels(mus, i * c, (i + 1) * c)?;
        let sig_i = g.slice_channels(raw_sigmas, i * c, (i + 1) * c)?;
        let pi_i = g.slice_channels(pis, i * c, (i + 1) * c)?;
        let p_i = gaussian_probs_node(g, v, mu_i, sig_i)?;
        let term = g.mul(pi_i, p_i)?;
        p_total = Some(match p_total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    bits_from_probs(g, p_total.expect("k >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::models;
    use envc_core::math::softplus_inv;
    use envc_core::ops::factorized::param_shapes;
    use envc_core::{Rng, Tensor};

    #[test]
    fn gaussian_rate_matches_scalar_oracle() {
        let mut rng = Rng::new(0x11);
        let shape = [2usize, 3, 4, 4];
        let v = Tensor::<f64>::from_fn(&shape, |_| rng.below(9) as f64 - 4.0);
        let mu = Tensor::<f64>::rand_uniform(&shape, -3.0, 3.0, &mut rng);
        let raw = Tensor::<f64>::rand_uniform(&shape, -2.0, 2.0, &mut rng);

        let mut oracle = 0.0;
        for i in 0..v.numel() {
            let sigma = models::sigma_from_raw(raw.data()[i]);
            let p = models::gaussian_bin(v.data()[i], mu.data()[i], sigma).max(P_MIN);
            oracle -= p.log2();
        }

        let mut g = Graph::<f64>::new();
        let vv = g.constant(v);
        let mv = g.constant(mu);
        let sv = g.constant(raw);
        let bits = gaussian_rate_bits(&mut g, vv, mv, sv).unwrap();
        let got = g.value(bits).data()[0];
        assert!((got - oracle).abs() < 1e-9, "got {got}, oracle {oracle}");
    }

    #[test]
    fn half_probability_symbol_costs_one_bit() {
        // sigma chosen so the unit bin around 0 holds probability 1/2:
        // Phi(0.5/sigma) = 0.75.
        let z = 0.674_489_750_196_081_7;
        let sigma = 0.5 / z;
        let raw = softplus_inv(sigma - SIGMA_MIN);

        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let mu = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let rs = g.constant(Tensor::full(&[1, 1, 1, 1], raw));
        let bits = gaussian_rate_bits(&mut g, v, mu, rs).unwrap();
        assert!((g.value(bits).data()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iid_symbols_cost_one_bit_each() {
        // Twelve independent elements whose bins each hold probability 1/2
        // must cost exactly twelve bits.
        let z = 0.674_489_750_196_081_7;
        let sigma = 0.5 / z;
        let raw = softplus_inv(sigma - SIGMA_MIN);
        let n = 12usize;
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::zeros(&[1, 1, 3, 4]));
        let mu = g.constant(Tensor::zeros(&[1, 1, 3, 4]));
        let rs = g.constant(Tensor::full(&[1, 1, 3, 4], raw));
        let bits = gaussian_rate_bits(&mut g, v, mu, rs).unwrap();
        assert!((g.value(bits).data()[0] - n as f64).abs() < 1e-5);
    }

    #[test]
    fn single_component_gmm_equals_gaussian_rate() {
        let mut rng = Rng::new(0x33);
        let shape = [1usize, 4, 3, 3];
        let v = Tensor::<f64>::from_fn(&shape, |_| rng.below(7) as f64 - 3.0);
        let mu = Tensor::<f64>::rand_uniform(&shape, -2.0, 2.0, &mut rng);
        let raw = Tensor::<f64>::rand_uniform(&shape, -1.0, 2.0, &mut rng);
        let logits = Tensor::<f64>::rand_uniform(&shape, -2.0, 2.0, &mut rng);

        let mut g = Graph::<f64>::new();
        let vv = g.constant(v);
        let mv = g.constant(mu);
        let sv = g.constant(raw);
        let lv = g.constant(logits);
        let a = gaussian_rate_bits(&mut g, vv, mv, sv).unwrap();
        let b = gmm_rate_bits(&mut g, vv, lv, mv, sv, 1).unwrap();
        assert!((g.value(a).data()[0] - g.value(b).data()[0]).abs() < 1e-12);
    }

    #[test]
    fn gmm_rate_matches_scalar_oracle() {
        let mut rng = Rng::new(0x55);
        let (bsz, c, h, w, k) = (1usize, 2usize, 3usize, 3usize, 3usize);
        let v = Tensor::<f64>::from_fn(&[bsz, c, h, w], |_| rng.below(9) as f64 - 4.0);
        let logits = Tensor::<f64>::rand_uniform(&[bsz, k * c, h, w], -2.0, 2.0, &mut rng);
        let mus = Tensor::<f64>::rand_uniform(&[bsz, k * c, h, w], -3.0, 3.0, &mut rng);
        let raws = Tensor::<f64>::rand_uniform(&[bsz, k * c, h, w], -1.5, 1.5, &mut rng);

        let mut oracle = 0.0;
        for b in 0..bsz {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let pl: Vec<f64> = (0..k).map(|i| logits.at4(b, i * c + ch, y, x)).collect();
                        let mu: Vec<f64> = (0..k).map(|i| mus.at4(b, i * c + ch, y, x)).collect();
                        let rs: Vec<f64> = (0..k).map(|i| raws.at4(b, i * c + ch, y, x)).collect();
                        let probs = models::gmm_probs(&pl, &mu, &rs);
                        let val = v.at4(b, ch, y, x);
                        let idx = (val - crate::entropy::table::SUPPORT_LO as f64) as usize;
                        oracle -= probs[idx].max(P_MIN).log2();
                    }
                }
            }
        }

        let mut g = Graph::<f64>::new();
        let vv = g.constant(v);
        let lv = g.constant(logits);
        let mv = g.constant(mus);
        let sv = g.constant(raws);
        let bits = gmm_rate_bits(&mut g, vv, lv, mv, sv, k).unwrap();
        let got = g.value(bits).data()[0];
        assert!((got - oracle).abs() < 1e-9, "got {got}, oracle {oracle}");
    }

    #[test]
    fn factorized_rate_matches_channel_cdf_oracle() {
        let mut rng = Rng::new(0x77);
        let c = 3usize;
        let shapes = param_shapes(c);
        let params: Vec<Tensor<f64>> =
            shapes.iter().map(|s| Tensor::rand_uniform(s, -1.0, 1.0, &mut rng)).collect();
        let v = Tensor::<f64>::from_fn(&[1, c, 4, 4], |_| rng.below(11) as f64 - 5.0);

        let refs: [&Tensor<f64>; 8] = std::array::from_fn(|i| &params[i]);
        let mut oracle = 0.0;
        for ch in 0..c {
            let cdf = envc_core::ops::factorized::ChannelCdf::from_params(&refs, ch);
            for y in 0..4 {
                for x in 0..4 {
                    let val = v.at4(0, ch, y, x);
                    let p = (cdf.eval(val + 0.5) - cdf.eval(val - 0.5)).max(P_MIN);
                    oracle -= p.log2();
                }
            }
        }

        let mut g = Graph::<f64>::new();
        let ids = FcdfParamIds(std::array::from_fn(|i| g.constant(params[i].clone())));
        let vv = g.constant(v);
        let bits = factorized_rate_bits(&mut g, vv, ids).unwrap();
        let got = g.value(bits).data()[0];
        assert!((got - oracle).abs() < 1e-9, "got {got}, oracle {oracle}");
    }

    #[test]
    fn mismatch_in_mixture_channels_is_rejected() {
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let p = g.constant(Tensor::zeros(&[1, 4, 2, 2]));
        let m = g.constant(Tensor::zeros(&[1, 4, 2, 2]));
        let s = g.constant(Tensor::zeros(&[1, 4, 2, 2]));
        assert!(gmm_rate_bits(&mut g, v, p, m, s, 3).is_err());
    }
}
