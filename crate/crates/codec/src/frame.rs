//! 8-bit planar RGB frames, the RVF raw-video container, and the
//! pad/crop helpers the pipeline uses to make arbitrary frame sizes
//! network-friendly.
//!
//! RVF is a deliberately primitive format: an ASCII header line
//! `RVF1 <width> <height> <frames>\n` followed by the frames, each stored
//! as three full planes (R, then G, then B) of `width * height` bytes.

use std::path::Path;

use envc_core::quant::round_half_away;
use envc_core::{Scalar, Tensor};

use crate::error::{CodecError, Result};

/// One 8-bit sRGB frame, planar layout (R plane, G plane, B plane).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    planes: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CodecError::dimension(format!("empty frame {width}x{height}")));
        }
        Ok(Frame { width, height, planes: vec![0; 3 * width * height] })
    }

    pub fn from_planes(width: usize, height: usize, planes: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CodecError::dimension(format!("empty frame {width}x{height}")));
        }
        if planes.len() != 3 * width * height {
            return Err(CodecError::dimension(format!(
                "frame {width}x{height} needs {} samples, got {}",
                3 * width * height,
                planes.len()
            )));
        }
        Ok(Frame { width, height, planes })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn planes(&self) -> &[u8] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [u8] {
        &mut self.planes
    }

    pub fn sample(&self, c: usize, y: usize, x: usize) -> u8 {
        self.planes[(c * self.height + y) * self.width + x]
    }

    pub fn sample_mut(&mut self, c: usize, y: usize, x: usize) -> &mut u8 {
        &mut self.planes[(c * self.height + y) * self.width + x]
    }

    /// `[1, 3, H, W]` tensor scaled to [0, 1].
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, 3, self.height, self.width], |i| {
            T::lit(self.planes[i] as f64 / 255.0)
        })
    }

    /// Quantizes a `[1, 3, H, W]` tensor in [0, 1] back to 8-bit samples
    /// (clamped, ties away from zero).
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (b, c, h, w) = t.dims4().map_err(CodecError::from)?;
        if b != 1 || c != 3 {
            return Err(CodecError::dimension(format!(
                "frame tensor must be [1,3,H,W], got {:?}",
                t.shape()
            )));
        }
        let planes = t
            .data()
            .iter()
            .map(|&v| {
                let s = round_half_away(v.to_f64_lossy() * 255.0);
                s.clamp(0.0, 255.0) as u8
            })
            .collect();
        Frame::from_planes(w, h, planes)
    }
}

/// Serializes frames as RVF. All frames must share one size.
pub fn encode_rvf(frames: &[Frame]) -> Result<Vec<u8>> {
    let (w, h) = match frames.first() {
        Some(f) => (f.width, f.height),
        None => return Err(CodecError::dimension("cannot write empty RVF".to_string())),
    };
    for (i, f) in frames.iter().enumerate() {
        if (f.width, f.height) != (w, h) {
            return Err(CodecError::dimension(format!(
                "frame {i} is {}x{}, first frame is {w}x{h}",
                f.width, f.height
            )));
        }
    }
    let mut out = format!("RVF1 {w} {h} {}\n", frames.len()).into_bytes();
    for f in frames {
        out.extend_from_slice(&f.planes);
    }
    Ok(out)
}

/// Parses an RVF byte stream.
pub fn parse_rvf(bytes: &[u8]) -> Result<Vec<Frame>> {
    let nl = bytes
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| CodecError::format("RVF header line missing".to_string()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| CodecError::format("RVF header is not ASCII".to_string()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "RVF1" {
        return Err(CodecError::format(format!("bad RVF header '{header}'")));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| CodecError::format(format!("bad RVF {what} '{s}'")))
    };
    let w = parse(fields[1], "width")?;
    let h = parse(fields[2], "height")?;
    let t = parse(fields[3], "frame count")?;
    if w == 0 || h == 0 {
        return Err(CodecError::dimension(format!("empty RVF frames {w}x{h}")));
    }
    let frame_bytes = 3usize
        .checked_mul(w)
        .and_then(|v| v.checked_mul(h))
        .ok_or_else(|| CodecError::format("RVF dimensions overflow".to_string()))?;
    let payload = &bytes[nl + 1..];
    let expected = frame_bytes
        .checked_mul(t)
        .ok_or_else(|| CodecError::format("RVF dimensions overflow".to_string()))?;
    if payload.len() != expected {
        return Err(CodecError::format(format!(
            "RVF payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    (0..t)
        .map(|i| {
            Frame::from_planes(w, h, payload[i * frame_bytes..(i + 1) * frame_bytes].to_vec())
        })
        .collect()
}

pub fn read_rvf(path: impl AsRef<Path>) -> Result<Vec<Frame>> {
    parse_rvf(&std::fs::read(path)?)
}

pub fn write_rvf(path: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    Ok(std::fs::write(path, encode_rvf(frames)?)?)
}

/// Pads `[B, C, H, W]` to the next multiples of `multiple` by replicating
/// the right and bottom edges. Returns the input unchanged when already
/// aligned.
pub fn pad_to_multiple<T: Scalar>(t: &Tensor<T>, multiple: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = t.dims4().map_err(CodecError::from)?;
    let hp = h.div_ceil(multiple) * multiple;
    let wp = w.div_ceil(multiple) * multiple;
    if hp == h && wp == w {
        return Ok(t.clone());
    }
    let mut out = Tensor::zeros(&[b, c, hp, wp]);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..hp {
                let sy = y.min(h - 1);
                for x in 0..wp {
                    let sx = x.min(w - 1);
                    *out.at4_mut(bi, ci, y, x) = t.at4(bi, ci, sy, sx);
                }
            }
        }
    }
    Ok(out)
}

/// Crops `[B, C, H, W]` to the top-left `h x w` region.
pub fn crop_spatial<T: Scalar>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (b, c, th, tw) = t.dims4().map_err(CodecError::from)?;
    if h > th || w > tw {
        return Err(CodecError::dimension(format!(
            "crop {h}x{w} exceeds tensor {th}x{tw}"
        )));
    }
    let mut out = Tensor::zeros(&[b, c, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    *out.at4_mut(bi, ci, y, x) = t.at4(bi, ci, y, x);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use envc_core::Rng;

    fn random_frame(rng: &mut Rng, w: usize, h: usize) -> Frame {
        Frame::from_planes(w, h, (0..3 * w * h).map(|_| rng.below(256) as u8).collect()).unwrap()
    }

    #[test]
    fn rvf_round_trip_is_byte_identical() {
        let mut rng = Rng::new(100);
        let frames: Vec<Frame> = (0..4).map(|_| random_frame(&mut rng, 7, 5)).collect();
        let bytes = encode_rvf(&frames).unwrap();
        assert!(bytes.starts_with(b"RVF1 7 5 4\n"));
        let back = parse_rvf(&bytes).unwrap();
        assert_eq!(frames, back);
        assert_eq!(encode_rvf(&back).unwrap(), bytes);
    }

    #[test]
    fn rvf_rejects_malformed_input() {
        assert!(parse_rvf(b"").is_err());
        assert!(parse_rvf(b"RVF2 2 2 1\n----").is_err());
        assert!(parse_rvf(b"RVF1 2 2\n").is_err());
        assert!(parse_rvf(b"RVF1 0 2 1\n").is_err());
        assert!(parse_rvf(b"RVF1 x 2 1\n").is_err());
        // Payload one byte short.
        let mut bytes = encode_rvf(&[Frame::new(2, 2).unwrap()]).unwrap();
        bytes.pop();
        assert!(parse_rvf(&bytes).is_err());
    }

    #[test]
    fn tensor_conversion_is_exact_for_all_levels() {
        let planes: Vec<u8> = (0..=255).collect();
        let mut padded = planes.clone();
        padded.resize(3 * 16 * 16, 7);
        let f = Frame::from_planes(16, 16, padded).unwrap();
        let t = f.to_tensor::<f32>();
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let back = Frame::from_tensor(&t).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn from_tensor_clamps_out_of_range() {
        let t = Tensor::<f32>::from_vec(&[1, 3, 1, 1], vec![-0.3, 0.5, 1.7]).unwrap();
        let f = Frame::from_tensor(&t).unwrap();
        assert_eq!(f.planes(), &[0, 128, 255]);
    }

    #[test]
    fn padding_replicates_edges_and_crop_inverts() {
        let mut rng = Rng::new(5);
        let t = Tensor::<f32>::rand_uniform(&[1, 2, 5, 6], 0.0, 1.0, &mut rng);
        let p = pad_to_multiple(&t, 4).unwrap();
        assert_eq!(p.shape(), &[1, 2, 8, 8]);
        // Replicated column and row.
        for y in 0..5 {
            assert_eq!(p.at4(0, 1, y, 7), t.at4(0, 1, y, 5));
        }
        for x in 0..6 {
            assert_eq!(p.at4(0, 0, 7, x), t.at4(0, 0, 4, x));
        }
        assert_eq!(p.at4(0, 0, 7, 7), t.at4(0, 0, 4, 5));
        let c = crop_spatial(&p, 5, 6).unwrap();
        assert_eq!(c.max_abs_diff(&t), 0.0);

        let aligned = pad_to_multiple(&p, 4).unwrap();
        assert_eq!(aligned.shape(), p.shape());
        assert!(crop_spatial(&t, 6, 6).is_err());
    }

    #[test]
    fn mismatched_frame_sizes_rejected() {
        let a = Frame::new(4, 4).unwrap();
        let b = Frame::new(5, 4).unwrap();
        assert!(encode_rvf(&[a, b]).is_err());
    }
}
