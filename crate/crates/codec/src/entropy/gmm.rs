//! Masked-convolution context model emitting Gaussian-mixture parameters
//! for autoregressive coding of motion latents.
//!
//! The 5x5 context kernel is masked so an output at (y, x) only reads
//! latent positions strictly earlier in raster order; the two 1x1 layers
//! that follow mix channels per position and cannot break causality. The
//! decoder therefore reproduces the encoder's context bit-exactly by
//! rerunning the same convolution on the partially decoded latent: masked
//! taps multiply by an exact 0.0 weight, so not-yet-decoded positions never
//! influence the sums.

use envc_core::ops::conv::conv2d_fwd;
use envc_core::Tensor;

use crate::entropy::models::gmm_table;
use crate::entropy::range::{RangeDecoder, RangeEncoder};
use crate::error::{CodecError, Result};
use crate::layers::LRELU_SLOPE;

/// Context kernel size (5x5, padding 2).
pub const CONTEXT_KERNEL: usize = 5;

/// Spatial mask keeping taps strictly before the center in raster order:
/// full rows above, the left half of the center row, nothing else.
pub fn causal_mask(cout: usize, cin: usize, k: usize) -> Tensor<f32> {
    let mid = k / 2;
    Tensor::from_fn(&[cout, cin, k, k], |i| {
        let kw = i % k;
        let kh = (i / k) % k;
        if kh < mid || (kh == mid && kw < mid) {
            1.0
        } else {
            0.0
        }
    })
}

/// Plain-tensor evaluator of the context network, used on both coder sides.
#[derive(Debug, Clone)]
pub struct GmmContext {
    w0: Tensor<f32>,
    b0: Tensor<f32>,
    w1: Tensor<f32>,
    b1: Tensor<f32>,
    w2: Tensor<f32>,
    b2: Tensor<f32>,
    pub components: usize,
}

fn lrelu(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| if v > 0.0 { v } else { LRELU_SLOPE as f32 * v })
}

impl GmmContext {
    /// `w0` is the raw 5x5 context weight `[hidden, c, 5, 5]`; the causal
    /// mask is applied here. `w1`/`w2` are 1x1 weights; `w2` emits
    /// `3 * components * c` channels.
    pub fn new(
        w0: &Tensor<f32>,
        b0: &Tensor<f32>,
        w1: &Tensor<f32>,
        b1: &Tensor<f32>,
        w2: &Tensor<f32>,
        b2: &Tensor<f32>,
        components: usize,
    ) -> Result<Self> {
        let s0 = w0.shape();
        if s0.len() != 4 || s0[2] != CONTEXT_KERNEL || s0[3] != CONTEXT_KERNEL {
            return Err(CodecError::config(format!(
                "context weight must be [hidden, c, {CONTEXT_KERNEL}, {CONTEXT_KERNEL}], got {s0:?}"
            )));
        }
        let c = s0[1];
        if w2.shape()[0] != 3 * components * c {
            return Err(CodecError::config(format!(
                "context output weight emits {} channels, want {}",
                w2.shape()[0],
                3 * components * c
            )));
        }
        let mask = causal_mask(s0[0], c, CONTEXT_KERNEL);
        let masked = w0.zip_map(&mask, |w, m| w * m).expect("mask shape matches");
        Ok(GmmContext {
            w0: masked,
            b0: b0.clone(),
            w1: w1.clone(),
            b1: b1.clone(),
            w2: w2.clone(),
            b2: b2.clone(),
            components,
        })
    }

    /// Latent channel count this context reads.
    pub fn channels(&self) -> usize {
        self.w0.shape()[1]
    }

    /// Raw mixture parameters `[B, 3*K*C, H, W]` for every position of
    /// `latent` (`[B, C, H, W]`). Channel layout: K*C mixture logits, then
    /// K*C means, then K*C raw scales; component-major within each block.
    pub fn raw_params(&self, latent: &Tensor<f32>) -> Result<Tensor<f32>> {
        let h = conv2d_fwd(latent, &self.w0, Some(&self.b0), 1, CONTEXT_KERNEL / 2)?;
        let h = lrelu(&h);
        let h = conv2d_fwd(&h, &self.w1, Some(&self.b1), 1, 0)?;
        let h = lrelu(&h);
        Ok(conv2d_fwd(&h, &self.w2, Some(&self.b2), 1, 0)?)
    }

    /// Mixture parameters of latent channel `c` at `(b, y, x)`:
    /// per-component (logit, mean, raw scale) triples.
    pub fn params_at(
        &self,
        raw: &Tensor<f32>,
        b: usize,
        c: usize,
        y: usize,
        x: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let ch = self.channels();
        let k = self.components;
        let block = k * ch;
        let get = |block_idx: usize, i: usize| {
            raw.at4(b, block_idx * block + i * ch + c, y, x) as f64
        };
        let logits = (0..k).map(|i| get(0, i)).collect();
        let mus = (0..k).map(|i| get(1, i)).collect();
        let raws = (0..k).map(|i| get(2, i)).collect();
        (logits, mus, raws)
    }
}

/// Encodes an integer-valued latent autoregressively. Returns the
/// table-ideal bit count. Symbol order: batch, row, column, channel —
/// channels share one context per position.
pub fn encode_ar(
    enc: &mut RangeEncoder,
    ctx: &GmmContext,
    latent: &Tensor<f32>,
) -> Result<f64> {
    let (bs, c, h, w) = latent.dims4().map_err(CodecError::from)?;
    let raw = ctx.raw_params(latent)?;
    let mut bits = 0.0;
    for b in 0..bs {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let (pl, mu, rs) = ctx.params_at(&raw, b, ch, y, x);
                    let table = gmm_table(&pl, &mu, &rs)?;
                    let v = latent.at4(b, ch, y, x) as i32;
                    bits += table.bits_for(v);
                    table.encode(enc, v);
                }
            }
        }
    }
    Ok(bits)
}

/// Decodes an integer-valued latent autoregressively, reconstructing the
/// encoder's contexts position by position.
pub fn decode_ar(
    dec: &mut RangeDecoder<'_>,
    ctx: &GmmContext,
    shape: (usize, usize, usize, usize),
) -> Result<Tensor<f32>> {
    let (bs, c, h, w) = shape;
    let mut latent = Tensor::<f32>::zeros(&[bs, c, h, w]);
    for b in 0..bs {
        for y in 0..h {
            for x in 0..w {
                let raw = ctx.raw_params(&latent)?;
                for ch in 0..c {
                    let (pl, mu, rs) = ctx.params_at(&raw, b, ch, y, x);
                    let table = gmm_table(&pl, &mu, &rs)?;
                    let v = table.decode(dec)?;
                    *latent.at4_mut(b, ch, y, x) = v as f32;
                }
            }
        }
    }
    Ok(latent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use envc_core::Rng;

    #[test]
    fn mask_pattern_is_strictly_causal() {
        let m = causal_mask(1, 1, 5);
        let expect = [
            [1.0, 1.0, 1.0, 1.0, 1.0],
            [1.0, 1.0, 1.0, 1.0, 1.0],
            [1.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(m.at4(0, 0, y, x), expect[y][x], "at ({y},{x})");
            }
        }
    }

    fn random_context(rng: &mut Rng, c: usize, hidden: usize, k: usize) -> GmmContext {
        let w0 = Tensor::rand_uniform(&[hidden, c, 5, 5], -0.4, 0.4, rng);
        let b0 = Tensor::rand_uniform(&[hidden], -0.1, 0.1, rng);
        let w1 = Tensor::rand_uniform(&[hidden, hidden, 1, 1], -0.4, 0.4, rng);
        let b1 = Tensor::rand_uniform(&[hidden], -0.1, 0.1, rng);
        let w2 = Tensor::rand_uniform(&[3 * k * c, hidden, 1, 1], -0.4, 0.4, rng);
        let b2 = Tensor::rand_uniform(&[3 * k * c], -0.1, 0.1, rng);
        GmmContext::new(&w0, &b0, &w1, &b1, &w2, &b2, k).unwrap()
    }

    #[test]
    fn future_positions_cannot_influence_context() {
        let mut rng = Rng::new(0xA5);
        let ctx = random_context(&mut rng, 3, 8, 2);
        let latent = Tensor::from_fn(&[1, 3, 6, 7], |_| rng.below(9) as f32 - 4.0);
        let base = ctx.raw_params(&latent).unwrap();

        // Perturb position (2, 3); outputs at raster positions <= (2, 3)
        // must be bit-identical.
        let mut changed = latent.clone();
        for c in 0..3 {
            *changed.at4_mut(0, c, 2, 3) += 17.0;
        }
        let after = ctx.raw_params(&changed).unwrap();
        for ch in 0..after.shape()[1] {
            for y in 0..6 {
                for x in 0..7 {
                    if (y, x) <= (2, 3) {
                        assert_eq!(
                            base.at4(0, ch, y, x).to_bits(),
                            after.at4(0, ch, y, x).to_bits(),
                            "context leaked at ch {ch} ({y},{x})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn partial_latent_reproduces_encoder_context() {
        // The decoder's invariant: with all positions at/after (y, x) still
        // zero, the context at (y, x) equals the full-latent context.
        let mut rng = Rng::new(0xB7);
        let ctx = random_context(&mut rng, 2, 6, 3);
        let latent = Tensor::from_fn(&[1, 2, 5, 5], |_| rng.below(7) as f32 - 3.0);
        let full = ctx.raw_params(&latent).unwrap();

        let mut partial = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        for y in 0..5 {
            for x in 0..5 {
                let raw = ctx.raw_params(&partial).unwrap();
                for ch in 0..full.shape()[1] {
                    assert_eq!(
                        raw.at4(0, ch, y, x).to_bits(),
                        full.at4(0, ch, y, x).to_bits(),
                        "mismatch at ({y},{x}) ch {ch}"
                    );
                }
                for c in 0..2 {
                    *partial.at4_mut(0, c, y, x) = latent.at4(0, c, y, x);
                }
            }
        }
    }

    #[test]
    fn ar_round_trip_is_exact() {
        let mut rng = Rng::new(0xC9);
        for case in 0..4 {
            let ctx = random_context(&mut rng, 3, 8, 3);
            let latent = Tensor::from_fn(&[1, 3, 4, 6], |_| (rng.normal() * 3.0).round() as f32);
            let mut enc = RangeEncoder::new();
            let bits = encode_ar(&mut enc, &ctx, &latent).unwrap();
            let bytes = enc.finish();
            assert!(bits > 0.0);
            assert!(bytes.len() as f64 * 8.0 <= bits * 1.002 + 256.0);

            let mut dec = RangeDecoder::new(&bytes).unwrap();
            let decoded = decode_ar(&mut dec, &ctx, (1, 3, 4, 6)).unwrap();
            dec.finish().unwrap();
            assert_eq!(latent.max_abs_diff(&decoded), 0.0, "case {case}");
        }
    }

    #[test]
    fn shape_validation() {
        let mut rng = Rng::new(1);
        let w0 = Tensor::rand_uniform(&[4, 2, 3, 3], -0.1, 0.1, &mut rng);
        let b0 = Tensor::zeros(&[4]);
        let w1 = Tensor::rand_uniform(&[4, 4, 1, 1], -0.1, 0.1, &mut rng);
        let b1 = Tensor::zeros(&[4]);
        let w2 = Tensor::rand_uniform(&[12, 4, 1, 1], -0.1, 0.1, &mut rng);
        let b2 = Tensor::zeros(&[12]);
        // 3x3 kernel rejected: context kernel is fixed at 5x5.
        assert!(GmmContext::new(&w0, &b0, &w1, &b1, &w2, &b2, 2).is_err());
    }
}
