//! Reverse-mode autodiff tape.
//!
//! A [`Graph`] records operations eagerly: each method validates shapes, runs
//! the forward kernel immediately and appends a node. [`Graph::backward`]
//! replays the tape in reverse insertion order, accumulating gradients with a
//! fixed summation order, so repeated runs over the same tape are
//! bit-identical. Nodes are addressed by [`VarId`] handles.

use crate::error::CoreError;
use crate::ops::factorized::{self, FcdfParamIds};
use crate::ops::{conv, sample, shape as shape_ops, softmax};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    AddScalar(VarId, T),
    MulScalar(VarId, T),
    LeakyRelu(VarId, T),
    Softplus(VarId),
    ClampMin(VarId, T),
    Erf(VarId),
    Log2(VarId),
    PowScalar(VarId, T),
    Softmax { x: VarId, axis: usize },
    Concat { xs: Vec<VarId> },
    SliceChannels { x: VarId, from: usize, to: usize },
    MulSpatial { x: VarId, w: VarId },
    Reshape { x: VarId },
    Conv2d { x: VarId, w: VarId, b: Option<VarId>, stride: usize, pad: usize },
    ConvT2d { x: VarId, w: VarId, b: Option<VarId>, stride: usize, pad: usize },
    GridSample { src: VarId, coords: VarId },
    MeanAll(VarId),
    SumAll(VarId),
    RoundSte(VarId),
    FactorizedCdf { x: VarId, params: FcdfParamIds },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    needs_grad: bool,
    op: Op<T>,
}

/// Autodiff tape. Generic over the scalar type; see the crate-level aliases.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Trainable leaf: participates in gradient computation.
    pub fn input(&mut self, value: Tensor<T>) -> VarId {
        self.push("input", value, true, Op::Leaf)
    }

    /// Non-trainable leaf: gradients stop here.
    pub fn constant(&mut self, value: Tensor<T>) -> VarId {
        self.push("constant", value, false, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: VarId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, id: VarId) -> Option<Tensor<T>> {
        self.nodes[id.0].grad.take()
    }

    fn push(&mut self, opname: &'static str, value: Tensor<T>, needs_grad: bool, op: Op<T>) -> VarId {
        debug_assert!(
            value.is_all_finite(),
            "non-finite output produced by {opname}"
        );
        let _ = opname;
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn same_shape(&self, op: &'static str, a: VarId, b: VarId) -> Result<(), CoreError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(CoreError::shape(op, format!("shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, CoreError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push("add", v, self.needs(a) || self.needs(b), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, CoreError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push("sub", v, self.needs(a) || self.needs(b), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, CoreError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push("mul", v, self.needs(a) || self.needs(b), Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId, CoreError> {
        self.same_shape("div", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push("div", v, self.needs(a) || self.needs(b), Op::Div(a, b)))
    }

    pub fn add_scalar(&mut self, a: VarId, c: T) -> Result<VarId, CoreError> {
        let v = self.value(a).map(|x| x + c);
        Ok(self.push("add_scalar", v, self.needs(a), Op::AddScalar(a, c)))
    }

    pub fn mul_scalar(&mut self, a: VarId, c: T) -> Result<VarId, CoreError> {
        let v = self.value(a).map(|x| x * c);
        Ok(self.push("mul_scalar", v, self.needs(a), Op::MulScalar(a, c)))
    }

    /// Identity for positive inputs, `slope * x` for `x <= 0`.
    pub fn leaky_relu(&mut self, a: VarId, slope: T) -> Result<VarId, CoreError> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { slope * x });
        Ok(self.push("leaky_relu", v, self.needs(a), Op::LeakyRelu(a, slope)))
    }

    pub fn softplus(&mut self, a: VarId) -> Result<VarId, CoreError> {
        let v = self.value(a).map(softplus_t);
        Ok(self.push("softplus", v, self.needs(a), Op::Softplus(a)))
    }

    pub fn clamp_min(&mut self, a: VarId, c: T) -> Result<VarId, CoreError> {
        let v = self.value(a).map(|x| if x > c { x } else { c });
        Ok(self.push("clamp_min", v, self.needs(a), Op::ClampMin(a, c)))
    }

    pub fn erf(&mut self, a: VarId) -> Result<VarId, CoreError> {
        let v = self.value(a).map(|x| T::lit(crate::math::erf(x.to_f64_lossy())));
        Ok(self.push("erf", v, self.needs(a), Op::Erf(a)))
    }

    /// Base-2 logarithm; inputs must be positive.
    pub fn log2(&mut self, a: VarId) -> Result<VarId, CoreError> {
        let v = self.value(a).map(|x| x.log2());
        Ok(self.push("log2", v, self.needs(a), Op::Log2(a)))
    }

    /// `x^p` for positive `x`.
    pub fn pow_scalar(&mut self, a: VarId, p: T) -> Result<VarId, CoreError> {
        let v = self.value(a).map(|x| x.powf(p));
        Ok(self.push("pow_scalar", v, self.needs(a), Op::PowScalar(a, p)))
    }

    /// Rounds half away from zero in the forward pass; the backward pass is
    /// the identity (straight-through estimator).
    pub fn round_ste(&mut self, a: VarId) -> Result<VarId, CoreError> {
        let v = self.value(a).map(crate::quant::round_half_away);
        Ok(self.push("round_ste", v, self.needs(a), Op::RoundSte(a)))
    }

    // ---- structure ----

    pub fn softmax(&mut self, x: VarId, axis: usize) -> Result<VarId, CoreError> {
        let xs = self.value(x);
        if axis >= xs.rank() {
            return Err(CoreError::shape(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", xs.shape()),
            ));
        }
        let v = softmax::softmax_fwd(xs, axis);
        Ok(self.push("softmax", v, self.needs(x), Op::Softmax { x, axis }))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[VarId]) -> Result<VarId, CoreError> {
        if xs.is_empty() {
            return Err(CoreError::InvalidArg("concat of zero tensors".into()));
        }
        let views: Vec<&Tensor<T>> = xs.iter().map(|&id| self.value(id)).collect();
        let v = shape_ops::concat_channels_fwd(&views)?;
        let needs = xs.iter().any(|&id| self.needs(id));
        Ok(self.push("concat_channels", v, needs, Op::Concat { xs: xs.to_vec() }))
    }

    /// Channel range `[from, to)` of a rank-4 tensor.
    pub fn slice_channels(&mut self, x: VarId, from: usize, to: usize) -> Result<VarId, CoreError> {
        let v = shape_ops::slice_channels_fwd(self.value(x), from, to)?;
        Ok(self.push(
            "slice_channels",
            v,
            self.needs(x),
            Op::SliceChannels { x, from, to },
        ))
    }

    /// Multiplies `[B,C,H,W]` by a per-location weight map `[B,1,H,W]`.
    pub fn mul_spatial(&mut self, x: VarId, w: VarId) -> Result<VarId, CoreError> {
        let v = shape_ops::mul_spatial_fwd(self.value(x), self.value(w))?;
        Ok(self.push("mul_spatial", v, self.needs(x) || self.needs(w), Op::MulSpatial { x, w }))
    }

    /// Reinterprets the row-major data with a new shape of equal element count.
    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId, CoreError> {
        let v = Tensor::from_vec(shape, self.value(x).data().to_vec()).map_err(|_| {
            CoreError::shape(
                "reshape",
                format!(
                    "cannot reshape {:?} ({} elements) to {shape:?}",
                    self.value(x).shape(),
                    self.value(x).numel()
                ),
            )
        })?;
        Ok(self.push("reshape", v, self.needs(x), Op::Reshape { x }))
    }

    // ---- convolution and sampling ----

    /// 2-d convolution with zero padding. Weight layout `[Cout, Cin, Kh, Kw]`,
    /// optional bias `[Cout]`.
    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        stride: usize,
        pad: usize,
    ) -> Result<VarId, CoreError> {
        let v = conv::conv2d_fwd(
            self.value(x),
            self.value(w),
            b.map(|id| self.value(id)),
            stride,
            pad,
        )?;
        let needs =
            self.needs(x) || self.needs(w) || b.map(|id| self.needs(id)).unwrap_or(false);
        Ok(self.push("conv2d", v, needs, Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Transposed 2-d convolution. Weight layout `[Cin, Cout, Kh, Kw]`;
    /// output extent is `(H-1)*stride - 2*pad + Kh`.
    pub fn conv2d_transposed(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        stride: usize,
        pad: usize,
    ) -> Result<VarId, CoreError> {
        let v = conv::convt2d_fwd(
            self.value(x),
            self.value(w),
            b.map(|id| self.value(id)),
            stride,
            pad,
        )?;
        let needs =
            self.needs(x) || self.needs(w) || b.map(|id| self.needs(id)).unwrap_or(false);
        Ok(self.push("conv2d_transposed", v, needs, Op::ConvT2d { x, w, b, stride, pad }))
    }

    /// Bilinear sampling with clamp-to-edge semantics. `coords` is
    /// `[B,2,Ht,Wt]` holding absolute source positions (channel 0 = x,
    /// channel 1 = y, in pixels).
    pub fn grid_sample(&mut self, src: VarId, coords: VarId) -> Result<VarId, CoreError> {
        let v = sample::grid_sample_fwd(self.value(src), self.value(coords))?;
        Ok(self.push(
            "grid_sample",
            v,
            self.needs(src) || self.needs(coords),
            Op::GridSample { src, coords },
        ))
    }

    // ---- reductions ----

    pub fn mean_all(&mut self, x: VarId) -> Result<VarId, CoreError> {
        let t = self.value(x);
        let n = T::lit(t.numel() as f64);
        let v = Tensor::scalar(crate::ops::sum4(t.data()) / n);
        Ok(self.push("mean_all", v, self.needs(x), Op::MeanAll(x)))
    }

    pub fn sum_all(&mut self, x: VarId) -> Result<VarId, CoreError> {
        let v = Tensor::scalar(crate::ops::sum4(self.value(x).data()));
        Ok(self.push("sum_all", v, self.needs(x), Op::SumAll(x)))
    }

    /// Mean squared error between two tensors of identical shape.
    pub fn mse(&mut self, a: VarId, b: VarId) -> Result<VarId, CoreError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    // ---- learned univariate CDF ----

    /// Monotone per-channel CDF built from three softplus-reparameterized
    /// affine layers with gated-tanh nonlinearities and a final sigmoid.
    /// `x` is `[B,C,H,W]`; parameter shapes are documented on
    /// [`FcdfParamIds`].
    pub fn factorized_cdf(&mut self, x: VarId, params: FcdfParamIds) -> Result<VarId, CoreError> {
        let pvals = params.map_ref(|id| self.value(id));
        let v = factorized::fcdf_fwd(self.value(x), &pvals)?;
        let needs = self.needs(x) || params.iter().any(|id| self.needs(id));
        Ok(self.push("factorized_cdf", v, needs, Op::FactorizedCdf { x, params }))
    }

    // ---- backward ----

    /// Runs reverse-mode differentiation from `loss`, which must be a finite
    /// scalar. Gradients of all contributing nodes with `needs_grad` become
    /// available through [`Graph::grad`]. Prior gradients are cleared.
    pub fn backward(&mut self, loss: VarId) -> Result<(), CoreError> {
        if self.value(loss).numel() != 1 {
            return Err(CoreError::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        if !self.value(loss).is_all_finite() {
            return Err(CoreError::NonFinite("backward loss"));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        let shape = self.value(loss).shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(&shape, T::one()));

        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.is_none() || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let gout = self.nodes[id].grad.take().unwrap();
            let contribs = self.input_grads(id, &gout)?;
            self.nodes[id].grad = Some(gout);
            for (vid, g) in contribs {
                match &mut self.nodes[vid.0].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, id: usize, g: &Tensor<T>) -> Result<Vec<(VarId, Tensor<T>)>, CoreError> {
        let mut out: Vec<(VarId, Tensor<T>)> = Vec::with_capacity(2);
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.clone()));
                }
                if self.needs(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.clone()));
                }
                if self.needs(*b) {
                    out.push((*b, g.map(|x| -x)));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.zip_map(self.value(*b), |gi, bv| gi * bv)?));
                }
                if self.needs(*b) {
                    out.push((*b, g.zip_map(self.value(*a), |gi, av| gi * av)?));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    out.push((*a, g.zip_map(bv, |gi, x| gi / x)?));
                }
                if self.needs(*b) {
                    let mut gb = g.clone();
                    {
                        let gd = gb.data_mut();
                        let ad = av.data();
                        let bd = bv.data();
                        for i in 0..gd.len() {
                            gd[i] = -gd[i] * ad[i] / (bd[i] * bd[i]);
                        }
                    }
                    out.push((*b, gb));
                }
            }
            Op::AddScalar(a, _) => {
                if self.needs(*a) {
                    out.push((*a, g.clone()));
                }
            }
            Op::MulScalar(a, c) => {
                if self.needs(*a) {
                    let c = *c;
                    out.push((*a, g.map(|x| x * c)));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.needs(*a) {
                    let s = *slope;
                    out.push((*a, g.zip_map(self.value(*a), |gi, x| {
                        if x > T::zero() {
                            gi
                        } else {
                            s * gi
                        }
                    })?));
                }
            }
            Op::Softplus(a) => {
                if self.needs(*a) {
                    out.push((*a, g.zip_map(self.value(*a), |gi, x| gi * sigmoid_t(x))?));
                }
            }
            Op::ClampMin(a, c) => {
                if self.needs(*a) {
                    let c = *c;
                    out.push((*a, g.zip_map(self.value(*a), |gi, x| {
                        if x > c {
                            gi
                        } else {
                            T::zero()
                        }
                    })?));
                }
            }
            Op::Erf(a) => {
                if self.needs(*a) {
                    let k = T::lit(2.0 / std::f64::consts::PI.sqrt());
                    out.push((*a, g.zip_map(self.value(*a), |gi, x| {
                        gi * k * (-x * x).exp()
                    })?));
                }
            }
            Op::Log2(a) => {
                if self.needs(*a) {
                    let ln2 = T::lit(std::f64::consts::LN_2);
                    out.push((*a, g.zip_map(self.value(*a), |gi, x| gi / (x * ln2))?));
                }
            }
            Op::PowScalar(a, p) => {
                if self.needs(*a) {
                    let p = *p;
                    out.push((*a, g.zip_map(self.value(*a), |gi, x| {
                        gi * p * x.powf(p - T::one())
                    })?));
                }
            }
            Op::RoundSte(a) => {
                if self.needs(*a) {
                    out.push((*a, g.clone()));
                }
            }
            Op::Softmax { x, axis } => {
                if self.needs(*x) {
                    out.push((*x, softmax::softmax_bwd(&node.value, g, *axis)));
                }
            }
            Op::Concat { xs } => {
                let mut from = 0;
                for &xid in xs {
                    let c = self.value(xid).shape()[1];
                    if self.needs(xid) {
                        out.push((xid, shape_ops::slice_channels_fwd(g, from, from + c)?));
                    }
                    from += c;
                }
            }
            Op::SliceChannels { x, from, to } => {
                if self.needs(*x) {
                    out.push((*x, shape_ops::slice_channels_bwd(g, self.value(*x).shape(), *from, *to)));
                }
            }
            Op::MulSpatial { x, w } => {
                let (gx, gw) = shape_ops::mul_spatial_bwd(
                    self.value(*x),
                    self.value(*w),
                    g,
                    self.needs(*x),
                    self.needs(*w),
                );
                if let Some(gx) = gx {
                    out.push((*x, gx));
                }
                if let Some(gw) = gw {
                    out.push((*w, gw));
                }
            }
            Op::Reshape { x } => {
                if self.needs(*x) {
                    let t = Tensor::from_vec(self.value(*x).shape(), g.data().to_vec())
                        .expect("reshape grad shape");
                    out.push((*x, t));
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                if self.needs(*x) {
                    out.push((*x, conv::conv2d_bwd_x(g, self.value(*w), self.value(*x).shape(), *stride, *pad)));
                }
                if self.needs(*w) {
                    out.push((*w, conv::conv2d_bwd_w(g, self.value(*x), self.value(*w).shape(), *stride, *pad)));
                }
                if let Some(bid) = b {
                    if self.needs(*bid) {
                        out.push((*bid, conv::conv_bwd_bias(g)));
                    }
                }
            }
            Op::ConvT2d { x, w, b, stride, pad } => {
                if self.needs(*x) {
                    out.push((*x, conv::convt2d_bwd_x(g, self.value(*w), self.value(*x).shape(), *stride, *pad)));
                }
                if self.needs(*w) {
                    out.push((*w, conv::convt2d_bwd_w(g, self.value(*x), self.value(*w).shape(), *stride, *pad)));
                }
                if let Some(bid) = b {
                    if self.needs(*bid) {
                        out.push((*bid, conv::conv_bwd_bias(g)));
                    }
                }
            }
            Op::GridSample { src, coords } => {
                let (gs, gc) = sample::grid_sample_bwd(
                    self.value(*src),
                    self.value(*coords),
                    g,
                    self.needs(*src),
                    self.needs(*coords),
                );
                if let Some(gs) = gs {
                    out.push((*src, gs));
                }
                if let Some(gc) = gc {
                    out.push((*coords, gc));
                }
            }
            Op::MeanAll(x) => {
                if self.needs(*x) {
                    let t = self.value(*x);
                    let gv = g.data()[0] / T::lit(t.numel() as f64);
                    out.push((*x, Tensor::full(t.shape(), gv)));
                }
            }
            Op::SumAll(x) => {
                if self.needs(*x) {
                    out.push((*x, Tensor::full(self.value(*x).shape(), g.data()[0])));
                }
            }
            Op::FactorizedCdf { x, params } => {
                let pvals = params.map_ref(|id| self.value(id));
                let wants_x = self.needs(*x);
                let grads = factorized::fcdf_bwd(self.value(*x), &pvals, g, wants_x);
                if wants_x {
                    out.push((*x, grads.gx));
                }
                for (idx, gp) in grads.gparams.into_iter().enumerate() {
                    let pid = params.as_array()[idx];
                    if self.needs(pid) {
                        out.push((pid, gp));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn softplus_t<T: Scalar>(x: T) -> T {
    let hi = T::lit(30.0);
    if x > hi {
        x
    } else if x < -hi {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid_t<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
