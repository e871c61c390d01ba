//! Quantized cumulative-frequency tables for the range coder.
//!
//! A [`PmfTable`] maps real-valued weights to integer frequency units with a
//! fixed total of 2^16, every symbol getting at least 2 units. Construction
//! is deterministic (largest-remainder rounding with index tiebreaks), so
//! encoder and decoder always derive bit-identical tables from the same
//! model outputs.
//!
//! A [`LatentTable`] lays a signed integer support [-64, 63] onto a
//! `PmfTable` and appends an escape symbol; out-of-support values are coded
//! as escape plus 32 raw bits.

use crate::error::{CodecError, Result};
use crate::entropy::range::{RangeDecoder, RangeEncoder};

/// log2 of the frequency total.
pub const TOTAL_BITS: u32 = 16;
/// All tables sum to exactly this many frequency units.
pub const TOTAL: u32 = 1 << TOTAL_BITS;
/// Every symbol keeps at least this many units (probability floor 2^-15).
pub const MIN_UNITS: u32 = 2;

/// Inclusive signed support of latent tables.
pub const SUPPORT_LO: i32 = -64;
pub const SUPPORT_HI: i32 = 63;
/// Number of in-support symbols.
pub const SUPPORT_LEN: usize = (SUPPORT_HI - SUPPORT_LO + 1) as usize;
/// Raw bits following an escape symbol.
pub const RAW_VALUE_BITS: u32 = 32;

/// Cumulative frequency table over `n` symbols, total exactly [`TOTAL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PmfTable {
    cum: Vec<u32>,
}

impl PmfTable {
    /// Builds a table from nonnegative weights (any positive scale). Weights
    /// are normalized to [`TOTAL`] units with largest-remainder rounding
    /// (ties broken toward the lower index), then symbols below
    /// [`MIN_UNITS`] are topped up by taking units from the largest symbols.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(CodecError::config("pmf table needs at least one symbol".to_string()));
        }
        if n as u64 * MIN_UNITS as u64 > TOTAL as u64 {
            return Err(CodecError::config(format!(
                "pmf table with {n} symbols cannot give each {MIN_UNITS}/{TOTAL} units"
            )));
        }
        let mut sum = 0.0f64;
        for &w in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(CodecError::config(format!("invalid pmf weight {w}")));
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(CodecError::config("pmf weights sum to zero".to_string()));
        }

        let scale = TOTAL as f64 / sum;
        let mut units = vec![0u32; n];
        let mut rems = vec![0.0f64; n];
        let mut used: u64 = 0;
        for i in 0..n {
            let t = weights[i] * scale;
            let u = t.floor();
            units[i] = u as u32;
            rems[i] = t - u;
            used += units[i] as u64;
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rems[b].partial_cmp(&rems[a]).unwrap().then(a.cmp(&b)));
        let leftover = TOTAL as u64 - used;
        for k in 0..leftover {
            units[order[k as usize % n]] += 1;
        }

        let mut deficit: u64 = 0;
        for u in units.iter_mut() {
            if *u < MIN_UNITS {
                deficit += (MIN_UNITS - *u) as u64;
                *u = MIN_UNITS;
            }
        }
        while deficit > 0 {
            let mut best = 0usize;
            for i in 1..n {
                if units[i] > units[best] {
                    best = i;
                }
            }
            debug_assert!(units[best] > MIN_UNITS);
            let take = deficit.min((units[best] - MIN_UNITS) as u64) as u32;
            units[best] -= take;
            deficit -= take as u64;
        }

        let mut cum = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &u in &units {
            acc += u;
            cum.push(acc);
        }
        debug_assert_eq!(acc, TOTAL);
        Ok(PmfTable { cum })
    }

    pub fn n_symbols(&self) -> usize {
        self.cum.len() - 1
    }

    /// Cumulative bounds `[lo, hi)` of symbol `s` in frequency units.
    pub fn bounds(&self, s: usize) -> (u32, u32) {
        (self.cum[s], self.cum[s + 1])
    }

    pub fn units(&self, s: usize) -> u32 {
        self.cum[s + 1] - self.cum[s]
    }

    /// Ideal code length of symbol `s` under the quantized table.
    pub fn bits(&self, s: usize) -> f64 {
        TOTAL_BITS as f64 - (self.units(s) as f64).log2()
    }

    /// Symbol whose cumulative interval contains `freq` (< [`TOTAL`]).
    pub fn find(&self, freq: u32) -> usize {
        // Largest s with cum[s] <= freq; cum is strictly increasing.
        let mut lo = 0usize;
        let mut hi = self.cum.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] <= freq {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Coder-side view of one latent element's distribution: the in-support
/// probabilities plus an escape symbol for everything else.
#[derive(Debug, Clone)]
pub struct LatentTable {
    pmf: PmfTable,
}

const ESCAPE: usize = SUPPORT_LEN;

impl LatentTable {
    /// `probs[i]` is the model probability of value `SUPPORT_LO + i`. The
    /// escape symbol receives the leftover mass (floored at 1e-6).
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.len() != SUPPORT_LEN {
            return Err(CodecError::config(format!(
                "latent table needs {SUPPORT_LEN} probabilities, got {}",
                probs.len()
            )));
        }
        let sum: f64 = probs.iter().sum();
        let mut weights = probs.to_vec();
        weights.push((1.0 - sum).max(1e-6));
        Ok(LatentTable { pmf: PmfTable::from_weights(&weights)? })
    }

    /// Code length of `v` under this table, including escape overhead.
    pub fn bits_for(&self, v: i32) -> f64 {
        if (SUPPORT_LO..=SUPPORT_HI).contains(&v) {
            self.pmf.bits((v - SUPPORT_LO) as usize)
        } else {
            self.pmf.bits(ESCAPE) + RAW_VALUE_BITS as f64
        }
    }

    pub fn encode(&self, enc: &mut RangeEncoder, v: i32) {
        if (SUPPORT_LO..=SUPPORT_HI).contains(&v) {
            let (lo, hi) = self.pmf.bounds((v - SUPPORT_LO) as usize);
            enc.encode(lo, hi);
        } else {
            let (lo, hi) = self.pmf.bounds(ESCAPE);
            enc.encode(lo, hi);
            enc.encode_raw(v as u32, RAW_VALUE_BITS);
        }
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<i32> {
        let s = self.pmf.find(dec.decode_freq());
        let (lo, hi) = self.pmf.bounds(s);
        dec.decode_update(lo, hi)?;
        if s == ESCAPE {
            Ok(dec.decode_raw(RAW_VALUE_BITS)? as i32)
        } else {
            Ok(SUPPORT_LO + s as i32)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use envc_core::Rng;

    #[test]
    fn uniform_weights_quantize_evenly() {
        let t = PmfTable::from_weights(&[1.0; 256]).unwrap();
        for s in 0..256 {
            assert_eq!(t.units(s), 256);
            assert!((t.bits(s) - 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn totals_are_exact_for_random_weights() {
        let mut rng = Rng::new(0x7AB1E);
        for _ in 0..200 {
            let n = 1 + rng.below(400) as usize;
            let w: Vec<f64> = (0..n).map(|_| rng.uniform().powi(3)).collect();
            let t = PmfTable::from_weights(&w).unwrap();
            let total: u64 = (0..n).map(|s| t.units(s) as u64).sum();
            assert_eq!(total, TOTAL as u64);
            assert!((0..n).all(|s| t.units(s) >= MIN_UNITS));
        }
    }

    #[test]
    fn tiny_weights_get_probability_floor() {
        let t = PmfTable::from_weights(&[1.0, 1e-300, 0.0]).unwrap();
        assert_eq!(t.units(1), MIN_UNITS);
        assert_eq!(t.units(2), MIN_UNITS);
        assert_eq!(t.units(0), TOTAL - 2 * MIN_UNITS);
    }

    #[test]
    fn construction_is_deterministic() {
        let mut rng = Rng::new(99);
        let w: Vec<f64> = (0..129).map(|_| rng.uniform() + 1e-9).collect();
        assert_eq!(PmfTable::from_weights(&w).unwrap(), PmfTable::from_weights(&w).unwrap());
    }

    #[test]
    fn find_inverts_bounds() {
        let mut rng = Rng::new(5);
        let w: Vec<f64> = (0..37).map(|_| rng.uniform() + 0.01).collect();
        let t = PmfTable::from_weights(&w).unwrap();
        for s in 0..t.n_symbols() {
            let (lo, hi) = t.bounds(s);
            assert_eq!(t.find(lo), s);
            assert_eq!(t.find(hi - 1), s);
        }
        assert_eq!(t.find(TOTAL - 1), t.n_symbols() - 1);
    }

    #[test]
    fn bad_weights_rejected() {
        assert!(PmfTable::from_weights(&[]).is_err());
        assert!(PmfTable::from_weights(&[0.0, 0.0]).is_err());
        assert!(PmfTable::from_weights(&[1.0, -0.5]).is_err());
        assert!(PmfTable::from_weights(&[1.0, f64::NAN]).is_err());
        assert!(PmfTable::from_weights(&vec![1.0; 40000]).is_err());
    }

    #[test]
    fn rounding_follows_largest_remainder() {
        // Weights 1, 2, 1 over total 2^16: exact shares 16384, 32768, 16384.
        let t = PmfTable::from_weights(&[1.0, 2.0, 1.0]).unwrap();
        assert_eq!(t.units(0), 16384);
        assert_eq!(t.units(1), 32768);
        assert_eq!(t.units(2), 16384);
    }

    #[test]
    fn latent_table_escape_bits() {
        let probs = vec![1.0 / SUPPORT_LEN as f64; SUPPORT_LEN];
        let t = LatentTable::from_probs(&probs).unwrap();
        assert!(t.bits_for(0) < 8.0);
        assert!(t.bits_for(1000) > RAW_VALUE_BITS as f64);
    }
}
