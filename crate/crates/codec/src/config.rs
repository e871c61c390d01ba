//! Codec configuration: channel presets, rate-distortion operating points,
//! and the plain-text key=value config format used by the CLI.

use crate::error::{CodecError, Result};

/// Number of pyramid scales used by cross-scale prediction (fixed).
pub const SCALES: usize = 3;

/// Lambda operating points for MSE-optimized models (distortion is MSE on
/// [0,1]-scaled RGB).
pub const LAMBDA_MSE: [f64; 5] = [512.0, 1024.0, 2048.0, 3072.0, 4096.0];

/// Lambda operating points for MS-SSIM-optimized models (distortion is
/// 1 − MS-SSIM).
pub const LAMBDA_MSSSIM: [f64; 5] = [6.0, 14.0, 24.0, 36.0, 50.0];

/// Distortion measure the rate-distortion loss optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distortion {
    /// Mean squared error on [0,1]-scaled RGB.
    Mse,
    /// 1 − MS-SSIM on [0,1]-scaled RGB.
    MsSsim,
}

impl Distortion {
    /// Lambda value for `index` into this metric's operating-point table.
    pub fn lambda(self, index: usize) -> Result<f64> {
        let table = match self {
            Distortion::Mse => &LAMBDA_MSE,
            Distortion::MsSsim => &LAMBDA_MSSSIM,
        };
        table.get(index).copied().ok_or_else(|| {
            CodecError::config(format!(
                "lambda_index {index} out of range (table has {} entries)",
                table.len()
            ))
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Distortion::Mse => "mse",
            Distortion::MsSsim => "msssim",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Distortion::Mse),
            "msssim" => Ok(Distortion::MsSsim),
            other => Err(CodecError::config(format!("unknown distortion '{other}'"))),
        }
    }
}

/// Channel widths and prediction-module geometry.
///
/// `*_n` / `*_m` are the internal / latent channel counts of the three
/// autoencoders. `feature_channels` is the width of the half-resolution
/// frame feature (and of the reference pyramid built from it);
/// `samples_per_scale` is how many (flow, weight) samples each head
/// transmits per pyramid scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub iframe_n: usize,
    pub iframe_m: usize,
    pub motion_n: usize,
    pub motion_m: usize,
    pub residual_n: usize,
    pub residual_m: usize,
    pub feature_channels: usize,
    pub heads: usize,
    pub samples_per_scale: usize,
    pub gmm_components: usize,
}

impl NetConfig {
    /// Small preset that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        NetConfig {
            iframe_n: 32,
            iframe_m: 48,
            motion_n: 16,
            motion_m: 24,
            residual_n: 32,
            residual_m: 48,
            feature_channels: 16,
            heads: 4,
            samples_per_scale: 4,
            gmm_components: 3,
        }
    }

    /// Full-capacity preset (not trainable in reasonable time on a CPU).
    pub fn paper() -> Self {
        NetConfig {
            iframe_n: 128,
            iframe_m: 160,
            motion_n: 64,
            motion_m: 80,
            residual_n: 128,
            residual_m: 160,
            feature_channels: 64,
            heads: 4,
            samples_per_scale: 4,
            gmm_components: 3,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(NetConfig::desk()),
            "paper" => Ok(NetConfig::paper()),
            other => Err(CodecError::config(format!("unknown preset '{other}'"))),
        }
    }

    /// Channels of the decoded motion information tensor M_t.
    pub fn motion_info_channels(&self) -> usize {
        self.motion_n
    }

    /// Channels of the sampling-field projection: per head, 2 flow channels
    /// plus 1 logit channel for each of `samples_per_scale` samples at each
    /// of the three scales.
    pub fn sampling_field_channels(&self) -> usize {
        self.heads * 3 * SCALES * self.samples_per_scale
    }

    /// Pyramid channels per head group.
    pub fn head_group_channels(&self) -> usize {
        self.feature_channels / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("iframe", self.iframe_n, self.iframe_m),
            ("motion", self.motion_n, self.motion_m),
            ("residual", self.residual_n, self.residual_m),
        ];
        for (name, n, m) in pairs {
            if n == 0 || m <= n {
                return Err(CodecError::config(format!(
                    "{name} channels must satisfy m > n > 0, got n={n} m={m}"
                )));
            }
        }
        if self.heads == 0 || self.samples_per_scale == 0 || self.gmm_components == 0 {
            return Err(CodecError::config(
                "heads, samples_per_scale and gmm_components must be >= 1".to_string(),
            ));
        }
        if self.feature_channels == 0 || self.feature_channels % self.heads != 0 {
            return Err(CodecError::config(format!(
                "feature_channels ({}) must be a positive multiple of heads ({})",
                self.feature_channels, self.heads
            )));
        }
        Ok(())
    }
}

/// Everything the encode/decode pipeline needs besides the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    pub net: NetConfig,
    pub gop_size: usize,
    pub ar_enabled: bool,
    pub lambda_index: usize,
    pub pad_multiple: usize,
    pub distortion: Distortion,
}

impl CodecConfig {
    pub fn desk() -> Self {
        CodecConfig {
            net: NetConfig::desk(),
            gop_size: 12,
            ar_enabled: false,
            lambda_index: 1,
            pad_multiple: 64,
            distortion: Distortion::Mse,
        }
    }

    pub fn lambda(&self) -> Result<f64> {
        self.distortion.lambda(self.lambda_index)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.gop_size == 0 {
            return Err(CodecError::config("gop_size must be >= 1".to_string()));
        }
        self.lambda()?;
        if self.pad_multiple < 64 || self.pad_multiple % 64 != 0 {
            return Err(CodecError::config(format!(
                "pad_multiple must be a positive multiple of 64, got {}",
                self.pad_multiple
            )));
        }
        Ok(())
    }
}

/// Parses the plain-text `key=value` config format: one pair per line,
/// `#` starts a comment, blank lines ignored. Later keys override earlier
/// ones; unknown keys are the caller's to reject.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CodecError::config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        NetConfig::desk().validate().unwrap();
        NetConfig::paper().validate().unwrap();
        CodecConfig::desk().validate().unwrap();
    }

    #[test]
    fn sampling_field_channel_count() {
        let cfg = NetConfig::desk();
        // 4 heads x 9 channels x 4 samples = 144.
        assert_eq!(cfg.sampling_field_channels(), 144);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = NetConfig::desk();
        cfg.iframe_m = cfg.iframe_n;
        assert!(cfg.validate().is_err());

        let mut cfg = NetConfig::desk();
        cfg.feature_channels = 18;
        assert!(cfg.validate().is_err());

        let mut cc = CodecConfig::desk();
        cc.lambda_index = 9;
        assert!(cc.validate().is_err());

        let mut cc = CodecConfig::desk();
        cc.pad_multiple = 32;
        assert!(cc.validate().is_err());
    }

    #[test]
    fn lambda_tables() {
        assert_eq!(Distortion::Mse.lambda(1).unwrap(), 1024.0);
        assert_eq!(Distortion::MsSsim.lambda(4).unwrap(), 50.0);
        assert!(Distortion::Mse.lambda(5).is_err());
    }

    #[test]
    fn kv_parser() {
        let pairs = parse_kv("a = 1\n# comment\n\nb=two # trailing\n").unwrap();
        assert_eq!(
            pairs,
            vec![("a".to_string(), "1".to_string()), ("b".to_string(), "two".to_string())]
        );
        assert!(parse_kv("nonsense line").is_err());
    }
}
