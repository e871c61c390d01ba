//! Checkpoint serialization: model kind, network configuration, training
//! metadata, and every parameter tensor keyed by `group/name`, sealed with
//! an FNV-1a digest. The digest doubles as the checkpoint id embedded in
//! encoded streams, so a decoder can refuse a stream produced by different
//! weights.

use std::fs;
use std::path::Path;

use envc_core::Tensor;

use crate::config::{Distortion, NetConfig};
use crate::error::{CodecError, Result};
use crate::model::{build_model, Model, ModelKind};

pub const CKPT_MAGIC: [u8; 8] = *b"ENVCKPT1";

/// Training progress tags as stored in checkpoints: 0 = freshly
/// initialized, 1..=5 = finished that schedule stage, 6 = finished the
/// motion hard-quantization stage, 7 = finished the residual-decoder stage.
pub const STAGE_INIT: u8 = 0;
pub const STAGE_FINAL: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub stage: u8,
    pub distortion: Distortion,
    pub lambda_index: usize,
    pub ar: bool,
    pub seed: u64,
    pub digest: u64,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    let b = s.as_bytes();
    out.extend_from_slice(&(b.len() as u16).to_le_bytes());
    out.extend_from_slice(b);
}

fn net_fields(cfg: &NetConfig) -> [usize; 10] {
    [
        cfg.iframe_n,
        cfg.iframe_m,
        cfg.motion_n,
        cfg.motion_m,
        cfg.residual_n,
        cfg.residual_m,
        cfg.feature_channels,
        cfg.heads,
        cfg.samples_per_scale,
        cfg.gmm_components,
    ]
}

fn net_from_fields(f: &[u32; 10]) -> NetConfig {
    NetConfig {
        iframe_n: f[0] as usize,
        iframe_m: f[1] as usize,
        motion_n: f[2] as usize,
        motion_m: f[3] as usize,
        residual_n: f[4] as usize,
        residual_m: f[5] as usize,
        feature_channels: f[6] as usize,
        heads: f[7] as usize,
        samples_per_scale: f[8] as usize,
        gmm_components: f[9] as usize,
    }
}

/// Serializes the model and metadata; returns the digest / checkpoint id.
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    stage: u8,
    distortion: Distortion,
    lambda_index: usize,
    ar: bool,
    seed: u64,
) -> Result<u64> {
    let mut out = Vec::new();
    out.extend_from_slice(&CKPT_MAGIC);
    out.push(match model.kind {
        ModelKind::CrossScale => 0,
        ModelKind::PixelLevel => 1,
    });
    out.push(stage);
    out.push(match distortion {
        Distortion::Mse => 0,
        Distortion::MsSsim => 1,
    });
    out.push(lambda_index as u8);
    out.push(ar as u8);
    out.extend_from_slice(&seed.to_le_bytes());
    for v in net_fields(&model.cfg) {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, info, value) in model.params.iter() {
        push_str(&mut out, &info.group);
        push_str(&mut out, &info.name);
        let shape = value.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = fnv1a(&out);
    out.extend_from_slice(&digest.to_le_bytes());
    fs::write(path, &out)?;
    Ok(digest)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CodecError::format(format!(
                "checkpoint truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| CodecError::format("checkpoint contains a non-UTF8 name"))
    }
}

/// Loads and verifies a checkpoint, rebuilding the model around its
/// parameters.
pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let buf = fs::read(path)?;
    if buf.len() < CKPT_MAGIC.len() + 8 {
        return Err(CodecError::format("checkpoint too short"));
    }
    let (body, tail) = buf.split_at(buf.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let digest = fnv1a(body);
    if digest != stored {
        return Err(CodecError::format(format!(
            "checkpoint digest mismatch: stored {stored:#018x}, computed {digest:#018x}"
        )));
    }

    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(CKPT_MAGIC.len())? != CKPT_MAGIC {
        return Err(CodecError::format("bad magic, not an ENVC checkpoint"));
    }
    let kind = match c.u8()? {
        0 => ModelKind::CrossScale,
        1 => ModelKind::PixelLevel,
        k => return Err(CodecError::format(format!("unknown model kind {k}"))),
    };
    let stage = c.u8()?;
    if stage > STAGE_FINAL {
        return Err(CodecError::format(format!("unknown stage tag {stage}")));
    }
    let distortion = match c.u8()? {
        0 => Distortion::Mse,
        1 => Distortion::MsSsim,
        d => return Err(CodecError::format(format!("unknown distortion id {d}"))),
    };
    let lambda_index = c.u8()? as usize;
    let ar = match c.u8()? {
        0 => false,
        1 => true,
        v => return Err(CodecError::format(format!("bad ar flag {v}"))),
    };
    let seed = c.u64()?;
    let mut fields = [0u32; 10];
    for f in &mut fields {
        *f = c.u32()?;
    }
    let cfg = net_from_fields(&fields);

    let mut model = build_model(kind, &cfg, seed)?;
    let count = c.u32()? as usize;
    if count != model.params.len() {
        return Err(CodecError::format(format!(
            "checkpoint holds {count} parameters, model defines {}",
            model.params.len()
        )));
    }
    let ids: Vec<_> = model.params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let group = c.str()?;
        let name = c.str()?;
        let info = model.params.info(id);
        if info.group != group || info.name != name {
            return Err(CodecError::format(format!(
                "checkpoint parameter {group}/{name} does not match model parameter {}/{}",
                info.group, info.name
            )));
        }
        let rank = c.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        if shape != model.params.value(id).shape() {
            return Err(CodecError::format(format!(
                "checkpoint parameter {group}/{name} has shape {shape:?}, model expects {:?}",
                model.params.value(id).shape()
            )));
        }
        let n: usize = shape.iter().product();
        let raw = c.take(4 * n)?;
        let data: Vec<f32> =
            raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        *model.params.value_mut(id) = Tensor::from_vec(&shape, data)
            .map_err(|e| CodecError::format(format!("checkpoint tensor: {e}")))?;
    }
    if c.pos != body.len() {
        return Err(CodecError::format(format!(
            "{} trailing bytes inside checkpoint body",
            body.len() - c.pos
        )));
    }

    let meta = CheckpointMeta { kind, stage, distortion, lambda_index, ar, seed, digest };
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            iframe_n: 3,
            iframe_m: 4,
            motion_n: 3,
            motion_m: 4,
            residual_n: 3,
            residual_m: 4,
            feature_channels: 4,
            heads: 2,
            samples_per_scale: 1,
            gmm_components: 2,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = build_model(ModelKind::CrossScale, &tiny_cfg(), 42).unwrap();
        let digest =
            save_checkpoint(&path, &model, 3, Distortion::Mse, 2, true, 42).unwrap();

        let (loaded, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.digest, digest);
        assert_eq!(meta.stage, 3);
        assert_eq!(meta.kind, ModelKind::CrossScale);
        assert_eq!(meta.distortion, Distortion::Mse);
        assert_eq!(meta.lambda_index, 2);
        assert!(meta.ar);
        assert_eq!(meta.seed, 42);
        assert_eq!(loaded.params.len(), model.params.len());
        for ((_, ia, va), (_, ib, vb)) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(ia.group, ib.group);
            assert_eq!(ia.name, ib.name);
            assert_eq!(va.max_abs_diff(vb), 0.0);
        }
    }

    #[test]
    fn digest_tracks_parameter_values() {
        let dir = tempdir().unwrap();
        let a = build_model(ModelKind::CrossScale, &tiny_cfg(), 1).unwrap();
        let b = build_model(ModelKind::CrossScale, &tiny_cfg(), 2).unwrap();
        let da =
            save_checkpoint(&dir.path().join("a.ckpt"), &a, 0, Distortion::Mse, 0, false, 1)
                .unwrap();
        let db =
            save_checkpoint(&dir.path().join("b.ckpt"), &b, 0, Distortion::Mse, 0, false, 2)
                .unwrap();
        assert_ne!(da, db);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = build_model(ModelKind::PixelLevel, &tiny_cfg(), 7).unwrap();
        save_checkpoint(&path, &model, 1, Distortion::MsSsim, 0, false, 7).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("digest"), "{err}");

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn pixel_model_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let model = build_model(ModelKind::PixelLevel, &tiny_cfg(), 9).unwrap();
        save_checkpoint(&path, &model, 7, Distortion::Mse, 4, false, 9).unwrap();
        let (loaded, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.kind, ModelKind::PixelLevel);
        assert_eq!(meta.stage, 7);
        assert!(loaded.cross.is_none());
    }
}
