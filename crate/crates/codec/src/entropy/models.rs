//! Coder-side probability evaluation: turns model outputs into discrete
//! bin probabilities over the latent support and then into range-coder
//! tables. Everything here runs in f64 on plain values (no graph), so the
//! encoder and decoder — which both call these functions — derive
//! bit-identical tables.

use envc_core::math::normal_cdf;
use envc_core::ops::factorized::ChannelCdf;

use crate::entropy::table::{LatentTable, SUPPORT_HI, SUPPORT_LO, SUPPORT_LEN};
use crate::entropy::SIGMA_MIN;
use crate::error::Result;

/// Maps a raw (unconstrained) scale prediction to a valid Gaussian scale.
pub fn sigma_from_raw(raw: f64) -> f64 {
    SIGMA_MIN + envc_core::math::softplus(raw)
}

/// Probability of the integer bin `v` under N(mu, sigma^2) discretized with
/// half-open unit bins.
pub fn gaussian_bin(v: f64, mu: f64, sigma: f64) -> f64 {
    let hi = normal_cdf((v + 0.5 - mu) / sigma);
    let lo = normal_cdf((v - 0.5 - mu) / sigma);
    (hi - lo).max(0.0)
}

/// Bin probabilities over the coder support for one Gaussian.
pub fn gaussian_probs(mu: f64, raw_sigma: f64) -> Vec<f64> {
    let sigma = sigma_from_raw(raw_sigma);
    (SUPPORT_LO..=SUPPORT_HI).map(|v| gaussian_bin(v as f64, mu, sigma)).collect()
}

pub fn gaussian_table(mu: f64, raw_sigma: f64) -> Result<LatentTable> {
    LatentTable::from_probs(&gaussian_probs(mu, raw_sigma))
}

/// Bin probabilities for a K-component Gaussian mixture. `pi_logits` are
/// unnormalized; they are softmaxed here.
pub fn gmm_probs(pi_logits: &[f64], mus: &[f64], raw_sigmas: &[f64]) -> Vec<f64> {
    let k = pi_logits.len();
    assert!(k > 0 && mus.len() == k && raw_sigmas.len() == k);
    let max = pi_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = pi_logits.iter().map(|&l| (l - max).exp()).collect();
    let norm: f64 = exps.iter().sum();
    let pis: Vec<f64> = exps.iter().map(|e| e / norm).collect();
    let sigmas: Vec<f64> = raw_sigmas.iter().map(|&r| sigma_from_raw(r)).collect();

    (SUPPORT_LO..=SUPPORT_HI)
        .map(|v| {
            let mut p = 0.0;
            for i in 0..k {
                p += pis[i] * gaussian_bin(v as f64, mus[i], sigmas[i]);
            }
            p
        })
        .collect()
}

pub fn gmm_table(pi_logits: &[f64], mus: &[f64], raw_sigmas: &[f64]) -> Result<LatentTable> {
    LatentTable::from_probs(&gmm_probs(pi_logits, mus, raw_sigmas))
}

/// Bin probabilities over the support for one channel of a factorized
/// density.
pub fn factorized_probs(cdf: &ChannelCdf) -> Vec<f64> {
    let mut out = Vec::with_capacity(SUPPORT_LEN);
    let mut lo = cdf.eval(SUPPORT_LO as f64 - 0.5);
    for v in SUPPORT_LO..=SUPPORT_HI {
        let hi = cdf.eval(v as f64 + 0.5);
        out.push((hi - lo).max(0.0));
        lo = hi;
    }
    out
}

pub fn factorized_table(cdf: &ChannelCdf) -> Result<LatentTable> {
    LatentTable::from_probs(&factorized_probs(cdf))
}
