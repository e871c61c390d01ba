//! Learned per-channel univariate CDF.
//!
//! Three affine layers of width 3 with softplus-reparameterized weights,
//! gated-tanh nonlinearities `g(v) = v + a * tanh(v)` between layers and a
//! final sigmoid. Weights are positive by construction and the gate
//! coefficients are squashed through tanh (so `a > -1`), which makes the
//! function a strictly monotone CDF for any raw parameter values.
//!
//! Evaluation runs in `f64` regardless of the tensor scalar type: the same
//! bits go into entropy tables on the encoder and decoder side, and the
//! precision costs nothing at the sizes involved.

use crate::error::CoreError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::VarId;

pub const LAYER_WIDTH: usize = 3;

/// Tape handles for the eight parameter tensors of one CDF bank, in layer
/// order. For `C` channels the shapes are:
///
/// | index | tensor | shape  |
/// |-------|--------|--------|
/// | 0     | `h1`   | `[C,3]`|
/// | 1     | `b1`   | `[C,3]`|
/// | 2     | `a1`   | `[C,3]`|
/// | 3     | `h2`   | `[C,9]`|
/// | 4     | `b2`   | `[C,3]`|
/// | 5     | `a2`   | `[C,3]`|
/// | 6     | `h3`   | `[C,3]`|
/// | 7     | `b3`   | `[C,1]`|
///
/// `h*` are softplus-reparameterized weights, `a*` tanh-reparameterized gate
/// coefficients, `b*` biases.
#[derive(Debug, Clone, Copy)]
pub struct FcdfParamIds(pub [VarId; 8]);

impl FcdfParamIds {
    pub fn as_array(&self) -> [VarId; 8] {
        self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = VarId> + '_ {
        self.0.iter().copied()
    }

    pub fn map_ref<'a, T, F: Fn(VarId) -> &'a Tensor<T>>(&self, f: F) -> [&'a Tensor<T>; 8] {
        std::array::from_fn(|i| f(self.0[i]))
    }
}

/// Expected parameter shapes for `channels` channels, in the order above.
pub fn param_shapes(channels: usize) -> [Vec<usize>; 8] {
    let r = LAYER_WIDTH;
    [
        vec![channels, r],
        vec![channels, r],
        vec![channels, r],
        vec![channels, r * r],
        vec![channels, r],
        vec![channels, r],
        vec![channels, r],
        vec![channels, 1],
    ]
}

fn validate<T: Scalar>(x: &Tensor<T>, p: &[&Tensor<T>; 8]) -> Result<usize, CoreError> {
    let (_, c, _, _) = x.dims4().map_err(|_| {
        CoreError::shape("factorized_cdf", format!("input must be rank 4, got {:?}", x.shape()))
    })?;
    let want = param_shapes(c);
    for (i, (t, w)) in p.iter().zip(want.iter()).enumerate() {
        if t.shape() != w.as_slice() {
            return Err(CoreError::shape(
                "factorized_cdf",
                format!("parameter {i} has shape {:?}, expected {w:?}", t.shape()),
            ));
        }
    }
    Ok(c)
}

/// Effective (reparameterized) coefficients of one channel, in `f64`.
#[derive(Debug, Clone)]
pub struct ChannelCdf {
    pub w1: [f64; 3],
    pub b1: [f64; 3],
    pub a1: [f64; 3],
    pub w2: [f64; 9],
    pub b2: [f64; 3],
    pub a2: [f64; 3],
    pub w3: [f64; 3],
    pub b3: f64,
}

impl ChannelCdf {
    pub fn from_params<T: Scalar>(p: &[&Tensor<T>; 8], c: usize) -> Self {
        let r = LAYER_WIDTH;
        let get = |t: &Tensor<T>, i: usize| t.data()[i].to_f64_lossy();
        ChannelCdf {
            w1: std::array::from_fn(|j| crate::math::softplus(get(p[0], c * r + j))),
            b1: std::array::from_fn(|j| get(p[1], c * r + j)),
            a1: std::array::from_fn(|j| get(p[2], c * r + j).tanh()),
            w2: std::array::from_fn(|j| crate::math::softplus(get(p[3], c * r * r + j))),
            b2: std::array::from_fn(|j| get(p[4], c * r + j)),
            a2: std::array::from_fn(|j| get(p[5], c * r + j).tanh()),
            w3: std::array::from_fn(|j| crate::math::softplus(get(p[6], c * r + j))),
            b3: get(p[7], c),
        }
    }

    /// CDF value at `x`; strictly increasing in `x`, range `(0, 1)`.
    pub fn eval(&self, x: f64) -> f64 {
        let fwd = self.stages(x);
        crate::math::sigmoid(fwd.u3)
    }

    fn stages(&self, x: f64) -> Stages {
        let mut u1 = [0.0; 3];
        let mut t1 = [0.0; 3];
        for j in 0..3 {
            u1[j] = self.w1[j] * x + self.b1[j];
            t1[j] = u1[j] + self.a1[j] * u1[j].tanh();
        }
        let mut u2 = [0.0; 3];
        let mut t2 = [0.0; 3];
        for i in 0..3 {
            let mut acc = self.b2[i];
            for j in 0..3 {
                acc += self.w2[i * 3 + j] * t1[j];
            }
            u2[i] = acc;
            t2[i] = acc + self.a2[i] * acc.tanh();
        }
        let mut u3 = self.b3;
        for i in 0..3 {
            u3 += self.w3[i] * t2[i];
        }
        Stages { u1, t1, u2, t2, u3 }
    }
}

struct Stages {
    u1: [f64; 3],
    t1: [f64; 3],
    u2: [f64; 3],
    t2: [f64; 3],
    u3: f64,
}

pub fn fcdf_fwd<T: Scalar>(x: &Tensor<T>, p: &[&Tensor<T>; 8]) -> Result<Tensor<T>, CoreError> {
    let c = validate(x, p)?;
    let (b, _, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    let od = out.data_mut();
    let xd = x.data();
    for ci in 0..c {
        let cdf = ChannelCdf::from_params(p, ci);
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            for i in 0..plane {
                od[base + i] = T::lit(cdf.eval(xd[base + i].to_f64_lossy()));
            }
        }
    }
    Ok(out)
}

pub struct FcdfGrads<T> {
    pub gx: Tensor<T>,
    pub gparams: [Tensor<T>; 8],
}

pub fn fcdf_bwd<T: Scalar>(
    x: &Tensor<T>,
    p: &[&Tensor<T>; 8],
    gout: &Tensor<T>,
    want_x: bool,
) -> FcdfGrads<T> {
    let (b, c, h, w) = x.dims4().expect("x rank");
    let r = LAYER_WIDTH;
    let plane = h * w;
    let xd = x.data();
    let gd = gout.data();

    let mut gx = Tensor::zeros(x.shape());
    // Param gradients accumulate in f64 and are cast once at the end.
    let mut gp: [Vec<f64>; 8] = [
        vec![0.0; c * r],
        vec![0.0; c * r],
        vec![0.0; c * r],
        vec![0.0; c * r * r],
        vec![0.0; c * r],
        vec![0.0; c * r],
        vec![0.0; c * r],
        vec![0.0; c],
    ];

    for ci in 0..c {
        let cdf = ChannelCdf::from_params(p, ci);
        // Raw parameter values are needed for the reparameterization chain.
        let h1raw: [f64; 3] = std::array::from_fn(|j| p[0].data()[ci * r + j].to_f64_lossy());
        let h2raw: [f64; 9] = std::array::from_fn(|j| p[3].data()[ci * r * r + j].to_f64_lossy());
        let h3raw: [f64; 3] = std::array::from_fn(|j| p[6].data()[ci * r + j].to_f64_lossy());

        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            for i in 0..plane {
                let g = gd[base + i].to_f64_lossy();
                if g == 0.0 {
                    continue;
                }
                let xv = xd[base + i].to_f64_lossy();
                let s = cdf.stages(xv);
                let y = crate::math::sigmoid(s.u3);
                let gu3 = g * y * (1.0 - y);

                gp[7][ci] += gu3;
                let mut gt1 = [0.0; 3];
                let mut gu2v = [0.0; 3];
                for i2 in 0..3 {
                    let th = s.u2[i2].tanh();
                    gp[6][ci * r + i2] += gu3 * s.t2[i2] * crate::math::sigmoid(h3raw[i2]);
                    let gt2 = gu3 * cdf.w3[i2];
                    let gu2 = gt2 * (1.0 + cdf.a2[i2] * (1.0 - th * th));
                    gu2v[i2] = gu2;
                    let da2 = 1.0 - cdf.a2[i2] * cdf.a2[i2]; // d tanh(a_raw)/d a_raw
                    gp[5][ci * r + i2] += gt2 * th * da2;
                    gp[4][ci * r + i2] += gu2;
                }
                for i2 in 0..3 {
                    for j in 0..3 {
                        gp[3][ci * r * r + i2 * 3 + j] +=
                            gu2v[i2] * s.t1[j] * crate::math::sigmoid(h2raw[i2 * 3 + j]);
                        gt1[j] += gu2v[i2] * cdf.w2[i2 * 3 + j];
                    }
                }
                let mut gxv = 0.0;
                for j in 0..3 {
                    let th = s.u1[j].tanh();
                    let gu1 = gt1[j] * (1.0 + cdf.a1[j] * (1.0 - th * th));
                    let da1 = 1.0 - cdf.a1[j] * cdf.a1[j];
                    gp[2][ci * r + j] += gt1[j] * th * da1;
                    gp[1][ci * r + j] += gu1;
                    gp[0][ci * r + j] += gu1 * xv * crate::math::sigmoid(h1raw[j]);
                    gxv += gu1 * cdf.w1[j];
                }
                if want_x {
                    // `g` is already folded into the chain through `gu3`.
                    gx.data_mut()[base + i] = T::lit(gxv);
                }
            }
        }
    }

    let shapes = param_shapes(c);
    let gparams: [Tensor<T>; 8] = std::array::from_fn(|k| {
        Tensor::from_vec(&shapes[k], gp[k].iter().map(|&v| T::lit(v)).collect())
            .expect("param grad shape")
    });
    FcdfGrads { gx, gparams }
}
