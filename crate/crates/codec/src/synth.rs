//! Deterministic synthetic clip generator: textured frames under global
//! translation, fast translation, or a moving occluder that reveals
//! background (disocclusion). The occluder generator also emits
//! ground-truth disocclusion masks, letting tests audit which pixels have
//! no source in the previous frame.

use envc_core::Rng;

use crate::error::Result;
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Translate,
    FastTranslate,
    Occluder,
}

impl SynthKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "translate" => Some(SynthKind::Translate),
            "fast_translate" => Some(SynthKind::FastTranslate),
            "occluder" => Some(SynthKind::Occluder),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Translate => "translate",
            SynthKind::FastTranslate => "fast_translate",
            SynthKind::Occluder => "occluder",
        }
    }

    /// Default per-frame motion in pixels (x, y).
    pub fn default_magnitude(self) -> (f64, f64) {
        match self {
            SynthKind::Translate => (1.0, 0.0),
            SynthKind::FastTranslate => (4.0, 2.0),
            SynthKind::Occluder => (2.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub kind: SynthKind,
    /// Per-frame displacement in pixels: scene content for the translate
    /// kinds, the occluding rectangle for `Occluder`.
    pub magnitude: (f64, f64),
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: SynthKind, width: usize, height: usize, frames: usize, seed: u64) -> Self {
        SyntheticSpec { kind, magnitude: kind.default_magnitude(), width, height, frames, seed }
    }
}

/// Generated clip plus per-frame disocclusion masks (1 = revealed this
/// frame). Masks are all-zero for the translate kinds and for frame 0.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub frames: Vec<Frame>,
    pub disocclusion: Vec<Vec<u8>>,
}

/// One channel of the textured background, values in [30, 220].
struct BaseChannel {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl BaseChannel {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    /// Clamp-to-edge bilinear lookup at real coordinates.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.w - 1) as f64);
        let yc = y.clamp(0.0, (self.h - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let top = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x1) * fx;
        let bot = self.at(y1, x0) * (1.0 - fx) + self.at(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// Bilinearly upsampled random grid (value noise), amplitude [0, 1].
fn value_noise(rng: &mut Rng, w: usize, h: usize, cells: usize) -> Vec<f64> {
    let gw = cells.max(2);
    let gh = cells.max(2);
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.uniform()).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let gy = y as f64 / h as f64 * (gh - 1) as f64;
        let y0 = gy.floor() as usize;
        let y1 = (y0 + 1).min(gh - 1);
        let fy = gy - y0 as f64;
        for x in 0..w {
            let gx = x as f64 / w as f64 * (gw - 1) as f64;
            let x0 = gx.floor() as usize;
            let x1 = (x0 + 1).min(gw - 1);
            let fx = gx - x0 as f64;
            let top = grid[y0 * gw + x0] * (1.0 - fx) + grid[y0 * gw + x1] * fx;
            let bot = grid[y1 * gw + x0] * (1.0 - fx) + grid[y1 * gw + x1] * fx;
            out[y * w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

fn base_channel(rng: &mut Rng, w: usize, h: usize) -> BaseChannel {
    let coarse = value_noise(rng, w, h, (w.min(h) / 8).max(2));
    let fine = value_noise(rng, w, h, (w.min(h) / 3).max(3));
    let angle = rng.range(0.0, std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let diag = ((w * w + h * h) as f64).sqrt();
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let grad = 0.5 + (gx * x as f64 + gy * y as f64) / diag;
            let v = 0.45 * coarse[y * w + x] + 0.25 * fine[y * w + x] + 0.3 * grad.clamp(0.0, 1.0);
            data[y * w + x] = 30.0 + 190.0 * v.clamp(0.0, 1.0);
        }
    }
    BaseChannel { w, h, data }
}

/// Saturated occluder color: every channel is 0 or 255, never both zero —
/// always at least 30 levels away from any background sample.
fn occluder_color(rng: &mut Rng) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 6] = [
        [255, 0, 0],
        [0, 255, 0],
        [0, 0, 255],
        [255, 255, 0],
        [255, 0, 255],
        [0, 255, 255],
    ];
    PALETTE[rng.below(PALETTE.len() as u64) as usize]
}

/// Inclusive-exclusive integer rectangle, possibly partly outside the frame.
#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: i64,
    y0: i64,
    w: i64,
    h: i64,
}

impl Rect {
    fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as i64, y as i64);
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticClip> {
    let (w, h) = (spec.width, spec.height);
    let rng = Rng::new(spec.seed ^ 0x5EED_C11F);
    let base: Vec<BaseChannel> = (0..3).map(|c| base_channel(&mut rng.fork(c), w, h)).collect();

    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    match spec.kind {
        SynthKind::Translate | SynthKind::FastTranslate => {
            for t in 0..spec.frames {
                let dx = spec.magnitude.0 * t as f64;
                let dy = spec.magnitude.1 * t as f64;
                let mut frame = Frame::new(w, h)?;
                for c in 0..3 {
                    for y in 0..h {
                        for x in 0..w {
                            let v = base[c].sample(x as f64 - dx, y as f64 - dy);
                            *frame.sample_mut(c, y, x) = v.round().clamp(0.0, 255.0) as u8;
                        }
                    }
                }
                frames.push(frame);
                masks.push(vec![0u8; w * h]);
            }
        }
        SynthKind::Occluder => {
            let mut occ_rng = rng.fork(7);
            let color = occluder_color(&mut occ_rng);
            let rect_w = (w as i64 / 3).max(2);
            let rect_h = (h as i64 / 3).max(2);
            let start_x = occ_rng.below((w as u64 / 4).max(1)) as i64;
            let start_y = occ_rng.below((h as u64 / 4).max(1)) as i64;
            let rect_at = |t: usize| Rect {
                x0: start_x + (spec.magnitude.0 * t as f64).round() as i64,
                y0: start_y + (spec.magnitude.1 * t as f64).round() as i64,
                w: rect_w,
                h: rect_h,
            };
            for t in 0..spec.frames {
                let rect = rect_at(t);
                let mut frame = Frame::new(w, h)?;
                for c in 0..3 {
                    for y in 0..h {
                        for x in 0..w {
                            *frame.sample_mut(c, y, x) = if rect.contains(x, y) {
                                color[c]
                            } else {
                                base[c].at(y, x).round().clamp(0.0, 255.0) as u8
                            };
                        }
                    }
                }
                let mut mask = vec![0u8; w * h];
                if t > 0 {
                    let prev = rect_at(t - 1);
                    for y in 0..h {
                        for x in 0..w {
                            if prev.contains(x, y) && !rect.contains(x, y) {
                                mask[y * w + x] = 1;
                            }
                        }
                    }
                }
                frames.push(frame);
                masks.push(mask);
            }
        }
    }
    Ok(SyntheticClip { frames, disocclusion: masks })
}
