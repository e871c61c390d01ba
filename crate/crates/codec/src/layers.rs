//! Parameter registry and the layer vocabulary the networks are built from.
//!
//! Parameters live in a [`ParamSet`] as f32 tensors, grouped by sub-network
//! name (the same names the training stages use as freeze masks and the
//! checkpoint uses as section headers). A forward pass first *binds* the set
//! into a graph — trainable groups as inputs, frozen groups as constants —
//! then layer definitions look their variables up by [`ParamId`].

use envc_core::ops::factorized::{param_shapes, FcdfParamIds};
use envc_core::{CoreError, Graph, Rng, Scalar, Tensor, VarId};

use crate::error::{CodecError, Result};

/// Leaky-ReLU negative slope used by every activation in the codec.
pub const LRELU_SLOPE: f64 = 0.1;

/// Index of a parameter within its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct ParamInfo {
    pub group: String,
    pub name: String,
}

/// Ordered collection of all model parameters. Order is the canonical
/// identity used by the optimizer, the checkpoint format, and the digest.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    infos: Vec<ParamInfo>,
    values: Vec<Tensor<f32>>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, group: &str, name: &str, value: Tensor<f32>) -> ParamId {
        self.infos.push(ParamInfo { group: group.to_string(), name: name.to_string() });
        self.values.push(value);
        ParamId(self.infos.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn info(&self, id: ParamId) -> &ParamInfo {
        &self.infos[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<f32> {
        &mut self.values[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<f32> {
        &self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor<f32>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamInfo, &Tensor<f32>)> {
        self.infos
            .iter()
            .zip(self.values.iter())
            .enumerate()
            .map(|(i, (info, v))| (ParamId(i), info, v))
    }

    /// Distinct group names in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for info in &self.infos {
            if !out.iter().any(|g| g == &info.group) {
                out.push(info.group.clone());
            }
        }
        out
    }

    /// Number of scalar parameters across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    /// Materializes every parameter in `g`. Parameters whose group satisfies
    /// `trainable` become graph inputs (they receive gradients); the rest
    /// become constants, which also prunes them from the backward sweep.
    pub fn bind<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        trainable: impl Fn(&str) -> bool,
    ) -> Bound {
        let mut vars = Vec::with_capacity(self.values.len());
        let mut live = Vec::with_capacity(self.values.len());
        for (info, value) in self.infos.iter().zip(self.values.iter()) {
            let t = value.cast::<T>();
            if trainable(&info.group) {
                vars.push(g.input(t));
                live.push(true);
            } else {
                vars.push(g.constant(t));
                live.push(false);
            }
        }
        Bound { vars, live }
    }

    /// Binds every parameter as a constant (inference).
    pub fn bind_frozen<T: Scalar>(&self, g: &mut Graph<T>) -> Bound {
        self.bind(g, |_| false)
    }
}

/// Graph variables for one bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<VarId>,
    live: Vec<bool>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> VarId {
        self.vars[id.0]
    }

    /// Whether the parameter was bound as a trainable input.
    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.live[id.0]
    }

    /// Gradients in parameter order, cast back to f32. Constants and
    /// parameters without a gradient path yield `None`.
    pub fn collect_grads<T: Scalar>(&self, g: &Graph<T>) -> Vec<Option<Tensor<f32>>> {
        self.vars
            .iter()
            .zip(self.live.iter())
            .map(|(&v, &live)| {
                if live {
                    g.grad(v).map(|t| t.cast::<f32>())
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Weight initialization choice for a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(1/fan_in).
    FanIn,
    /// All zeros (identity-at-start residual blocks, zero-flow projections).
    Zero,
}

fn init_weight(shape: &[usize], fan_in: usize, init: Init, rng: &mut Rng) -> Tensor<f32> {
    match init {
        Init::Zero => Tensor::zeros(shape),
        Init::FanIn => {
            let bound = (1.0 / fan_in as f64).sqrt();
            Tensor::rand_uniform(shape, -bound, bound, rng)
        }
    }
}

/// One (possibly transposed) convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct ConvDef {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub transposed: bool,
}

impl ConvDef {
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        let w = p.var(self.w);
        let b = Some(p.var(self.b));
        if self.transposed {
            g.conv2d_transposed(x, w, b, self.stride, self.pad)
        } else {
            g.conv2d(x, w, b, self.stride, self.pad)
        }
    }
}

/// Registers a convolution: weight `[cout, cin, k, k]`, zero bias `[cout]`.
pub fn conv(
    ps: &mut ParamSet,
    rng: &mut Rng,
    group: &str,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    init: Init,
) -> ConvDef {
    let w = init_weight(&[cout, cin, k, k], cin * k * k, init, rng);
    let w = ps.add(group, &format!("{name}.w"), w);
    let b = ps.add(group, &format!("{name}.b"), Tensor::zeros(&[cout]));
    ConvDef { w, b, stride, pad, transposed: false }
}

/// Registers a transposed convolution: weight `[cin, cout, k, k]`.
pub fn deconv(
    ps: &mut ParamSet,
    rng: &mut Rng,
    group: &str,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    init: Init,
) -> ConvDef {
    let w = init_weight(&[cin, cout, k, k], cin * k * k, init, rng);
    let w = ps.add(group, &format!("{name}.w"), w);
    let b = ps.add(group, &format!("{name}.b"), Tensor::zeros(&[cout]));
    ConvDef { w, b, stride, pad, transposed: true }
}

/// One residual block: `x + conv2(lrelu(conv1(x)))`, 3x3 convolutions.
/// `conv2` is zero-initialized so the block starts as the identity.
#[derive(Debug, Clone, Copy)]
pub struct ResBlockDef {
    pub c1: ConvDef,
    pub c2: ConvDef,
}

impl ResBlockDef {
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        let h = self.c1.forward(g, p, x)?;
        let h = g.leaky_relu(h, T::lit(LRELU_SLOPE))?;
        let h = self.c2.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// A unit of three stacked residual blocks (the enhancement block placed
/// after every down/up-sampling layer).
#[derive(Debug, Clone)]
pub struct ResUnitDef {
    pub blocks: Vec<ResBlockDef>,
}

pub const RES_UNIT_BLOCKS: usize = 3;

pub fn res_unit(ps: &mut ParamSet, rng: &mut Rng, group: &str, name: &str, c: usize) -> ResUnitDef {
    let blocks = (0..RES_UNIT_BLOCKS)
        .map(|i| ResBlockDef {
            c1: conv(ps, rng, group, &format!("{name}.rb{i}.c1"), c, c, 3, 1, 1, Init::FanIn),
            c2: conv(ps, rng, group, &format!("{name}.rb{i}.c2"), c, c, 3, 1, 1, Init::Zero),
        })
        .collect();
    ResUnitDef { blocks }
}

impl ResUnitDef {
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        mut x: VarId,
    ) -> std::result::Result<VarId, CoreError> {
        for b in &self.blocks {
            x = b.forward(g, p, x)?;
        }
        Ok(x)
    }
}

/// Learned per-channel factorized density (monotone CDF network).
#[derive(Debug, Clone)]
pub struct FcdfDef {
    ids: [ParamId; 8],
    pub channels: usize,
}

impl FcdfDef {
    pub fn var_ids(&self, p: &Bound) -> FcdfParamIds {
        FcdfParamIds([
            p.var(self.ids[0]),
            p.var(self.ids[1]),
            p.var(self.ids[2]),
            p.var(self.ids[3]),
            p.var(self.ids[4]),
            p.var(self.ids[5]),
            p.var(self.ids[6]),
            p.var(self.ids[7]),
        ])
    }

    pub fn param_ids(&self) -> &[ParamId; 8] {
        &self.ids
    }
}

/// Registers a factorized density over `channels` channels. Scale weights
/// start at softplus⁻¹(10^(-1/3)) so the composed CDF initially ramps over
/// roughly ±20; gate parameters start neutral.
pub fn fcdf(ps: &mut ParamSet, rng: &mut Rng, group: &str, name: &str, channels: usize) -> FcdfDef {
    let shapes = param_shapes(channels);
    let h_init = ((10.0f64.powf(-1.0 / 3.0)).exp_m1()).ln() as f32;
    let field = ["h1", "b1", "a1", "h2", "b2", "a2", "h3", "b3"];
    let mut ids = [ParamId(0); 8];
    for (i, shape) in shapes.iter().enumerate() {
        let value = match field[i] {
            "h1" | "h2" | "h3" => Tensor::full(shape, h_init),
            "b1" | "b2" => Tensor::rand_uniform(shape, -0.5, 0.5, rng),
            _ => Tensor::zeros(shape),
        };
        ids[i] = ps.add(group, &format!("{name}.{}", field[i]), value);
    }
    FcdfDef { ids, channels }
}

/// Looks up a parameter by `group` and `name`, for tests and tooling.
pub fn find_param(ps: &ParamSet, group: &str, name: &str) -> Result<ParamId> {
    ps.iter()
        .find(|(_, info, _)| info.group == group && info.name == name)
        .map(|(id, _, _)| id)
        .ok_or_else(|| CodecError::config(format!("no parameter {group}/{name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_with_conv() -> (ParamSet, ConvDef) {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(7);
        let c = conv(&mut ps, &mut rng, "g", "c0", 2, 3, 3, 1, 1, Init::FanIn);
        (ps, c)
    }

    #[test]
    fn bind_splits_trainable_and_frozen() {
        let (ps, c) = set_with_conv();
        let mut g = Graph::<f32>::new();
        let bound = ps.bind(&mut g, |grp| grp == "g");
        assert!(bound.is_trainable(c.w));

        let mut g2 = Graph::<f32>::new();
        let frozen = ps.bind_frozen(&mut g2);
        assert!(!frozen.is_trainable(c.w));
    }

    #[test]
    fn fan_in_bound_matches_shape() {
        let (ps, c) = set_with_conv();
        let w = ps.value(c.w);
        assert_eq!(w.shape(), &[3, 2, 3, 3]);
        let limit = (1.0f64 / 18.0).sqrt() as f32;
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(ps.value(c.b).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn res_unit_is_identity_at_init() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(3);
        let unit = res_unit(&mut ps, &mut rng, "g", "u", 4);
        assert_eq!(unit.blocks.len(), RES_UNIT_BLOCKS);

        let mut g = Graph::<f32>::new();
        let bound = ps.bind_frozen(&mut g);
        let x = g.input(Tensor::rand_uniform(&[1, 4, 5, 5], -1.0, 1.0, &mut rng));
        let y = unit.forward(&mut g, &bound, x).unwrap();
        assert_eq!(g.value(y).max_abs_diff(g.value(x)), 0.0);
    }

    #[test]
    fn res_unit_matches_hand_composition() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(11);
        let unit = res_unit(&mut ps, &mut rng, "g", "u", 3);
        // Give the zero-initialized convs real values so the composition is
        // nontrivial.
        for t in ps.values_mut() {
            if t.data().iter().all(|&v| v == 0.0) {
                *t = Tensor::rand_uniform(t.shape(), -0.2, 0.2, &mut rng);
            }
        }

        let mut g = Graph::<f32>::new();
        let bound = ps.bind_frozen(&mut g);
        let x = g.input(Tensor::rand_uniform(&[1, 3, 6, 6], -1.0, 1.0, &mut rng));
        let y = unit.forward(&mut g, &bound, x).unwrap();

        let mut h = x;
        for b in &unit.blocks {
            let a = g.conv2d(h, bound.var(b.c1.w), Some(bound.var(b.c1.b)), 1, 1).unwrap();
            let a = g.leaky_relu(a, 0.1).unwrap();
            let a = g.conv2d(a, bound.var(b.c2.w), Some(bound.var(b.c2.b)), 1, 1).unwrap();
            h = g.add(h, a).unwrap();
        }
        assert_eq!(g.value(y).max_abs_diff(g.value(h)), 0.0);
    }

    #[test]
    fn group_listing_and_lookup() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(1);
        conv(&mut ps, &mut rng, "a", "c0", 1, 1, 3, 1, 1, Init::FanIn);
        conv(&mut ps, &mut rng, "b", "c1", 1, 1, 3, 1, 1, Init::FanIn);
        conv(&mut ps, &mut rng, "a", "c2", 1, 1, 3, 1, 1, Init::FanIn);
        assert_eq!(ps.groups(), vec!["a".to_string(), "b".to_string()]);
        assert!(find_param(&ps, "a", "c2.w").is_ok());
        assert!(find_param(&ps, "z", "c2.w").is_err());
    }

    #[test]
    fn fcdf_registers_eight_tensors() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(5);
        let d = fcdf(&mut ps, &mut rng, "g", "density", 6);
        assert_eq!(ps.len(), 8);
        assert_eq!(d.channels, 6);
        assert_eq!(ps.value(d.param_ids()[0]).shape(), &[6, 3]);
        assert_eq!(ps.value(d.param_ids()[7]).shape(), &[6, 1]);
    }
}
