//! Carry-less range coder with a 64-bit state and 16-bit frequency totals.
//!
//! Subbotin-style renormalization: when the top byte of `low` is settled it
//! is emitted; when the range gets too small without the top byte settling,
//! the range is clipped so it becomes settled (trading a fraction of a bit
//! for never having to propagate carries). Encoder and decoder run the same
//! renormalization branch-for-branch, which is what makes decoding bit-exact.
//!
//! Streams end with a 16-bit guard value coded as raw bits followed by the
//! 8-byte state flush; the decoder verifies the guard and that the stream is
//! consumed exactly, so corruption and truncation fail deterministically
//! instead of yielding silent garbage.

use crate::error::{CodecError, Result};

/// Renormalization threshold: top byte of `low` is settled once
/// `low ^ (low + range)` is below this.
const TOP: u64 = 1 << 56;
/// Minimum range kept without clipping.
const BOT: u64 = 1 << 48;
/// log2 of the frequency total of all tables fed to the coder.
const TOTAL_BITS: u32 = super::table::TOTAL_BITS;

/// Value coded as raw bits at the end of every stream.
const GUARD: u32 = 0xE5C5;
const GUARD_BITS: u32 = 16;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u64::MAX, out: Vec::new() }
    }

    /// Codes one symbol occupying cumulative frequency `[cum_lo, cum_hi)`
    /// out of a total of exactly 2^16.
    pub fn encode(&mut self, cum_lo: u32, cum_hi: u32) {
        debug_assert!(cum_lo < cum_hi && cum_hi <= 1 << TOTAL_BITS);
        let r = self.range >> TOTAL_BITS;
        self.low = self.low.wrapping_add(r * cum_lo as u64);
        self.range = r * (cum_hi - cum_lo) as u64;
        self.normalize();
    }

    /// Codes `bits` raw bits of `value`, most significant first.
    pub fn encode_raw(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= 32);
        for i in (0..bits).rev() {
            self.range >>= 1;
            if (value >> i) & 1 == 1 {
                self.low = self.low.wrapping_add(self.range);
            }
            self.normalize();
        }
    }

    fn normalize(&mut self) {
        loop {
            if self.low ^ self.low.wrapping_add(self.range) < TOP {
                // Top byte of low can no longer change: emit it.
            } else if self.range < BOT {
                // Top byte unsettled but range too small: clip the range to
                // the largest span that settles it. The clip value is the
                // distance from low up to the next BOT boundary, which is
                // nonzero exactly when this branch is reached.
                self.range = self.low.wrapping_neg() & (BOT - 1);
            } else {
                break;
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Appends the guard and flushes the state; returns the coded bytes.
    pub fn finish(mut self) -> Vec<u8> {
        self.encode_raw(GUARD, GUARD_BITS);
        for _ in 0..8 {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    buf: &'a [u8],
    pos: usize,
    low: u64,
    range: u64,
    code: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(buf: &'a [u8]) -> Result<Self> {
        if buf.len() < 8 {
            return Err(CodecError::stream(format!(
                "range-coded chunk too short: {} bytes",
                buf.len()
            )));
        }
        let mut code = 0u64;
        for &b in &buf[..8] {
            code = code << 8 | b as u64;
        }
        Ok(RangeDecoder { buf, pos: 8, low: 0, range: u64::MAX, code })
    }

    /// Frequency offset of the next symbol within the current total.
    /// Always below 2^16; a corrupt stream yields an in-range value whose
    /// damage is caught by the final guard check.
    pub fn decode_freq(&mut self) -> u32 {
        let r = self.range >> TOTAL_BITS;
        let dv = self.code.wrapping_sub(self.low) / r;
        dv.min((1 << TOTAL_BITS) - 1) as u32
    }

    /// Consumes the symbol whose cumulative bounds were reported by the
    /// table for the frequency returned by [`Self::decode_freq`].
    pub fn decode_update(&mut self, cum_lo: u32, cum_hi: u32) -> Result<()> {
        let r = self.range >> TOTAL_BITS;
        self.low = self.low.wrapping_add(r * cum_lo as u64);
        self.range = r * (cum_hi - cum_lo) as u64;
        self.normalize()
    }

    pub fn decode_raw(&mut self, bits: u32) -> Result<u32> {
        debug_assert!(bits <= 32);
        let mut value = 0u32;
        for _ in 0..bits {
            self.range >>= 1;
            let one = self.code.wrapping_sub(self.low) >= self.range;
            if one {
                self.low = self.low.wrapping_add(self.range);
            }
            value = value << 1 | one as u32;
            self.normalize()?;
        }
        Ok(value)
    }

    fn normalize(&mut self) -> Result<()> {
        loop {
            if self.low ^ self.low.wrapping_add(self.range) < TOP {
            } else if self.range < BOT {
                self.range = self.low.wrapping_neg() & (BOT - 1);
            } else {
                return Ok(());
            }
            let byte = *self.buf.get(self.pos).ok_or_else(|| {
                CodecError::stream(format!(
                    "range-coded chunk truncated at byte {} of {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
            self.pos += 1;
            self.low <<= 8;
            self.range <<= 8;
            self.code = self.code << 8 | byte as u64;
        }
    }

    /// Verifies the end-of-stream guard and exact consumption.
    pub fn finish(mut self) -> Result<()> {
        let guard = self.decode_raw(GUARD_BITS)?;
        if guard != GUARD {
            return Err(CodecError::stream(format!(
                "integrity guard mismatch at byte {}: got {guard:#06x}, want {GUARD:#06x}",
                self.pos
            )));
        }
        if self.pos != self.buf.len() {
            return Err(CodecError::stream(format!(
                "range-coded chunk has {} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::table::{LatentTable, PmfTable, SUPPORT_HI, SUPPORT_LO};
    use envc_core::Rng;

    fn random_table(rng: &mut Rng, n: usize) -> PmfTable {
        let w: Vec<f64> = (0..n).map(|_| rng.uniform().powi(2) + 1e-9).collect();
        PmfTable::from_weights(&w).unwrap()
    }

    #[test]
    fn empty_stream_is_flush_only() {
        let bytes = RangeEncoder::new().finish();
        assert!(bytes.len() <= 11);
        RangeDecoder::new(&bytes).unwrap().finish().unwrap();
    }

    #[test]
    fn round_trip_random_symbols() {
        let mut rng = Rng::new(0xC0DE);
        for case in 0..30 {
            let n = 2 + rng.below(500) as usize;
            let table = random_table(&mut rng, n);
            let count = rng.below(3000) as usize;
            let symbols: Vec<usize> = (0..count).map(|_| rng.below(n as u64) as usize).collect();

            let mut enc = RangeEncoder::new();
            for &s in &symbols {
                let (lo, hi) = table.bounds(s);
                enc.encode(lo, hi);
            }
            let bytes = enc.finish();

            let mut dec = RangeDecoder::new(&bytes).unwrap();
            for (i, &s) in symbols.iter().enumerate() {
                let got = table.find(dec.decode_freq());
                assert_eq!(got, s, "case {case}, symbol {i}");
                let (lo, hi) = table.bounds(got);
                dec.decode_update(lo, hi).unwrap();
            }
            dec.finish().unwrap();
        }
    }

    #[test]
    fn round_trip_skewed_table() {
        // One symbol hogging all but the floor units stresses the clipping
        // renormalization path.
        let mut w = vec![1e-12; 300];
        w[7] = 1.0;
        let table = PmfTable::from_weights(&w).unwrap();
        let mut rng = Rng::new(1);
        let symbols: Vec<usize> =
            (0..5000).map(|_| if rng.uniform() < 0.97 { 7 } else { rng.below(300) as usize }).collect();

        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            let (lo, hi) = table.bounds(s);
            enc.encode(lo, hi);
        }
        let bytes = enc.finish();

        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &symbols {
            let got = table.find(dec.decode_freq());
            assert_eq!(got, s);
            let (lo, hi) = table.bounds(got);
            dec.decode_update(lo, hi).unwrap();
        }
        dec.finish().unwrap();
    }

    #[test]
    fn raw_bits_round_trip() {
        let mut rng = Rng::new(42);
        let values: Vec<(u32, u32)> = (0..500)
            .map(|_| {
                let bits = 1 + rng.below(32) as u32;
                let v = (rng.next_u64() as u32) & (((1u64 << bits) - 1) as u32);
                (v, bits)
            })
            .collect();
        let mut enc = RangeEncoder::new();
        for &(v, bits) in &values {
            enc.encode_raw(v, bits);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &(v, bits) in &values {
            assert_eq!(dec.decode_raw(bits).unwrap(), v);
        }
        dec.finish().unwrap();
    }

    #[test]
    fn mixed_symbols_and_raw_bits() {
        let mut rng = Rng::new(7);
        let table = random_table(&mut rng, 64);
        let mut enc = RangeEncoder::new();
        let script: Vec<(bool, u32)> = (0..2000)
            .map(|_| {
                if rng.uniform() < 0.5 {
                    (true, rng.below(64) as u32)
                } else {
                    (false, rng.next_u64() as u32)
                }
            })
            .collect();
        for &(is_sym, v) in &script {
            if is_sym {
                let (lo, hi) = table.bounds(v as usize);
                enc.encode(lo, hi);
            } else {
                enc.encode_raw(v, 32);
            }
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &(is_sym, v) in &script {
            if is_sym {
                let s = table.find(dec.decode_freq());
                assert_eq!(s, v as usize);
                let (lo, hi) = table.bounds(s);
                dec.decode_update(lo, hi).unwrap();
            } else {
                assert_eq!(dec.decode_raw(32).unwrap(), v);
            }
        }
        dec.finish().unwrap();
    }

    #[test]
    fn length_tracks_entropy_on_uniform_alphabet() {
        // 10^4 symbols over a uniform 256-symbol alphabet: ideal 10^4 bytes.
        let table = PmfTable::from_weights(&[1.0; 256]).unwrap();
        let mut rng = Rng::new(3);
        let mut enc = RangeEncoder::new();
        for _ in 0..10_000 {
            let (lo, hi) = table.bounds(rng.below(256) as usize);
            enc.encode(lo, hi);
        }
        let bytes = enc.finish();
        assert!(bytes.len() <= 10_000 + 16, "coded {} bytes", bytes.len());
        assert!(bytes.len() >= 10_000);
    }

    #[test]
    fn estimated_bits_bound_actual_length() {
        let mut rng = Rng::new(0xBEEF);
        for _ in 0..10 {
            let table = random_table(&mut rng, 128);
            let count = 20_000;
            let mut est_bits = 0.0f64;
            let mut enc = RangeEncoder::new();
            for _ in 0..count {
                let s = rng.below(128) as usize;
                est_bits += table.bits(s);
                let (lo, hi) = table.bounds(s);
                enc.encode(lo, hi);
            }
            let bytes = enc.finish();
            let actual = bytes.len() as f64 * 8.0;
            assert!(
                actual <= est_bits * 1.002 + 256.0,
                "actual {actual} vs estimate {est_bits}"
            );
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut rng = Rng::new(11);
        let table = random_table(&mut rng, 50);
        let symbols: Vec<usize> = (0..400).map(|_| rng.below(50) as usize).collect();
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            let (lo, hi) = table.bounds(s);
            enc.encode(lo, hi);
        }
        let clean = enc.finish();

        // Flip one byte somewhere in the middle; either some symbol decodes
        // differently or the guard check fails — never a silent pass.
        let mut dirty = clean.clone();
        let mid = dirty.len() / 2;
        dirty[mid] ^= 0x41;
        let mut dec = RangeDecoder::new(&dirty).unwrap();
        let mut mismatch = false;
        for &s in &symbols {
            let got = table.find(dec.decode_freq());
            if got != s {
                mismatch = true;
                break;
            }
            let (lo, hi) = table.bounds(got);
            if dec.decode_update(lo, hi).is_err() {
                mismatch = true;
                break;
            }
        }
        assert!(mismatch || dec.finish().is_err());
    }

    #[test]
    fn truncation_is_detected() {
        let mut rng = Rng::new(13);
        let table = random_table(&mut rng, 50);
        let mut enc = RangeEncoder::new();
        for _ in 0..400 {
            let (lo, hi) = table.bounds(rng.below(50) as usize);
            enc.encode(lo, hi);
        }
        let clean = enc.finish();
        let cut = &clean[..clean.len() - 6];

        let mut dec = RangeDecoder::new(cut).unwrap();
        let mut failed = false;
        for _ in 0..400 {
            let s = table.find(dec.decode_freq());
            let (lo, hi) = table.bounds(s);
            if dec.decode_update(lo, hi).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed || dec.finish().is_err());
        assert!(RangeDecoder::new(&clean[..5]).is_err());
    }

    #[test]
    fn guard_is_sixteen_bits() {
        // Locks the trailer size the bitstream format documents.
        assert_eq!(GUARD_BITS, 16);
        assert!(GUARD < 1 << GUARD_BITS);
    }

    #[test]
    fn latent_table_round_trip_with_escapes() {
        let mut rng = Rng::new(21);
        // A narrow Gaussian-ish pmf over the support.
        let probs: Vec<f64> = (SUPPORT_LO..=SUPPORT_HI)
            .map(|v| (-(v as f64 / 3.0).powi(2)).exp())
            .collect();
        let sum: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / sum * 0.999).collect();
        let table = LatentTable::from_probs(&probs).unwrap();

        let values: Vec<i32> = (0..3000)
            .map(|_| {
                if rng.uniform() < 0.01 {
                    (rng.next_u64() as i32) % 100_000
                } else {
                    (rng.normal() * 4.0).round() as i32
                }
            })
            .collect();
        let mut enc = RangeEncoder::new();
        for &v in &values {
            table.encode(&mut enc, v);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &v in &values {
            assert_eq!(table.decode(&mut dec).unwrap(), v);
        }
        dec.finish().unwrap();
    }
}
