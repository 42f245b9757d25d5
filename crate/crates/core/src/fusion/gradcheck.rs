//! Central finite-difference verification of the analytic gradients.
//!
//! The scalar loss is the sum of the graph output, optionally weighted by a
//! fixed probe tensor. A parameter is skipped when perturbing it by ±eps
//! moves any relu pre-activation across (or onto) zero, since the loss is
//! not differentiable there.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{Activation, ConvCache, ConvLayer};
use super::model::{fuse_level_backward, fuse_level_cached, ConfidenceEstimator};
use super::ops::{
    concat, concat_backward, multiply_broadcast, multiply_broadcast_backward, resize_bilinear,
    resize_bilinear_backward,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// Signs of every relu pre-activation seen during one forward pass.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Trace {
    signs: Vec<i8>,
}

impl Trace {
    pub fn record(&mut self, layer: &ConvLayer, cache: &ConvCache) {
        if layer.activation == Activation::Relu {
            self.signs.extend(cache.pre_activation.data().iter().map(|&z| z.partial_cmp(&0.0).map_or(0, |o| o as i8)));
        }
    }
}

/// A differentiable computation with named parameter tensors.
pub trait Graph {
    fn name(&self) -> &str;
    fn params(&self) -> Vec<(String, Tensor)>;
    fn loss(&self, params: &[Tensor], trace: &mut Trace) -> Result<f64>;
    fn gradients(&self, params: &[Tensor]) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub name: String,
    pub size: usize,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
    pub params: Vec<ParamReport>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences on up to
/// `max_per_tensor` entries of every parameter (all entries when `None`).
pub fn grad_check(graph: &dyn Graph, eps: f64, max_per_tensor: Option<usize>, seed: u64) -> Result<GradCheckReport> {
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::InvalidParameter(format!("epsilon {eps} outside [1e-5, 1e-2]")));
    }
    let named = graph.params();
    let mut params: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
    let analytic = graph.gradients(&params)?;
    let mut base = Trace::default();
    graph.loss(&params, &mut base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = vec![];
    for (p, (name, _)) in named.iter().enumerate() {
        let grad = &analytic[p];
        if let Some(v) = grad.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{name}: analytic {v}")));
        }
        let n = params[p].len();
        let indices: Vec<usize> = match max_per_tensor {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut report = ParamReport { name: name.clone(), size: n, checked: 0, excluded: 0, max_rel_error: 0.0 };
        for i in indices {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + eps;
            let mut tp = Trace::default();
            let lp = graph.loss(&params, &mut tp)?;
            params[p].data_mut()[i] = orig - eps;
            let mut tm = Trace::default();
            let lm = graph.loss(&params, &mut tm)?;
            params[p].data_mut()[i] = orig;
            if tp != base || tm != base {
                report.excluded += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::NonFiniteGradient(format!("{name}[{i}]: numeric {numeric}")));
            }
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(relative_error(grad.data()[i], numeric));
        }
        reports.push(report);
    }
    Ok(GradCheckReport {
        op: graph.name().into(),
        max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
        checked: reports.iter().map(|r| r.checked).sum(),
        excluded: reports.iter().map(|r| r.excluded).sum(),
        params: reports,
    })
}

fn probe(shape: &[usize], seed: Option<u64>) -> Tensor {
    match seed {
        None => Tensor::filled(shape, 1.0),
        Some(s) => Tensor::random_uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(s)),
    }
}

/// One convolution layer; parameters are input, weights and bias.
pub struct ConvGraph {
    pub name: String,
    pub layer: ConvLayer,
    pub input: Tensor,
    pub probe: Tensor,
}

impl ConvGraph {
    pub fn new(name: &str, layer: ConvLayer, input: Tensor, probe_seed: Option<u64>) -> Result<Self> {
        let out = layer.forward(&input)?;
        Ok(Self { name: name.into(), probe: probe(out.shape(), probe_seed), layer, input })
    }

    fn with(&self, params: &[Tensor]) -> ConvLayer {
        ConvLayer { weights: params[1].clone(), bias: params[2].clone(), ..self.layer.clone() }
    }
}

impl Graph for ConvGraph {
    fn name(&self) -> &str {
        &self.name
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("input".into(), self.input.clone()),
            ("weights".into(), self.layer.weights.clone()),
            ("bias".into(), self.layer.bias.clone()),
        ]
    }

    fn loss(&self, params: &[Tensor], trace: &mut Trace) -> Result<f64> {
        let layer = self.with(params);
        let cache = layer.forward_cached(&params[0])?;
        trace.record(&layer, &cache);
        cache.output.dot(&self.probe)
    }

    fn gradients(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let layer = self.with(params);
        let cache = layer.forward_cached(&params[0])?;
        let g = layer.backward(&cache, &self.probe)?;
        Ok(vec![g.input, g.weights, g.bias])
    }
}

pub struct ResizeGraph {
    pub input: Tensor,
    pub target: (usize, usize),
    pub probe: Tensor,
}

impl ResizeGraph {
    pub fn new(input: Tensor, target: (usize, usize), probe_seed: Option<u64>) -> Result<Self> {
        let (c, _, _) = input.dims3()?;
        Ok(Self { probe: probe(&[c, target.0, target.1], probe_seed), input, target })
    }
}

impl Graph for ResizeGraph {
    fn name(&self) -> &str {
        "resize_bilinear"
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        vec![("input".into(), self.input.clone())]
    }

    fn loss(&self, params: &[Tensor], _: &mut Trace) -> Result<f64> {
        resize_bilinear(&params[0], self.target.0, self.target.1)?.dot(&self.probe)
    }

    fn gradients(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let (_, h, w) = params[0].dims3()?;
        Ok(vec![resize_bilinear_backward(&self.probe, h, w)?])
    }
}

pub struct MultiplyGraph {
    pub x: Tensor,
    pub m: Tensor,
    pub probe: Tensor,
}

impl MultiplyGraph {
    pub fn new(x: Tensor, m: Tensor, probe_seed: Option<u64>) -> Self {
        Self { probe: probe(x.shape(), probe_seed), x, m }
    }
}

impl Graph for MultiplyGraph {
    fn name(&self) -> &str {
        "multiply_broadcast"
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        vec![("features".into(), self.x.clone()), ("map".into(), self.m.clone())]
    }

    fn loss(&self, params: &[Tensor], _: &mut Trace) -> Result<f64> {
        multiply_broadcast(&params[0], &params[1])?.dot(&self.probe)
    }

    fn gradients(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let (gx, gm) = multiply_broadcast_backward(&params[0], &params[1], &self.probe)?;
        Ok(vec![gx, gm])
    }
}

pub struct ConcatGraph {
    pub a: Tensor,
    pub b: Tensor,
    pub probe: Tensor,
}

impl ConcatGraph {
    pub fn new(a: Tensor, b: Tensor, probe_seed: Option<u64>) -> Result<Self> {
        let shape = concat(&a, &b)?.shape().to_vec();
        Ok(Self { probe: probe(&shape, probe_seed), a, b })
    }
}

impl Graph for ConcatGraph {
    fn name(&self) -> &str {
        "concat"
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        vec![("a".into(), self.a.clone()), ("b".into(), self.b.clone())]
    }

    fn loss(&self, params: &[Tensor], _: &mut Trace) -> Result<f64> {
        concat(&params[0], &params[1])?.dot(&self.probe)
    }

    fn gradients(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let (c, _, _) = params[0].dims3()?;
        let (ga, gb) = concat_backward(&self.probe, c)?;
        Ok(vec![ga, gb])
    }
}

/// Confidence estimation followed by one fusion level.
pub struct ComposedGraph {
    pub estimator: ConfidenceEstimator,
    pub fusion: ConvLayer,
    pub depth: Tensor,
    pub validity: Tensor,
    pub rgb_features: Tensor,
    pub depth_features: Tensor,
    pub probe: Tensor,
}

impl ComposedGraph {
    /// Random instance at `h × w` with `channels` feature channels at half
    /// resolution.
    pub fn random(h: usize, w: usize, channels: usize, seed: u64, probe_seed: Option<u64>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let depth = Tensor::random_uniform(&[1, h, w], 0.225, &mut rng).map(|v| v + 0.575);
        // Roughly one pixel in six is a hole.
        let holes = Tensor::random_uniform(&[1, h, w], 1.0, &mut rng);
        let validity = holes.map(|v| if v < -0.66 { 0.0 } else { 1.0 });
        let depth = Tensor::new(
            depth.shape().to_vec(),
            depth.data().iter().zip(validity.data()).map(|(d, v)| d * v).collect(),
        )?;
        let (fh, fw) = (h.div_ceil(2), w.div_ceil(2));
        let rgb_features = Tensor::random_uniform(&[channels, fh, fw], 1.0, &mut rng);
        let depth_features = Tensor::random_uniform(&[channels, fh, fw], 1.0, &mut rng);
        let fusion = ConvLayer::random(2 * channels, channels, 1, 1, 0, Activation::None, &mut rng);
        Ok(Self {
            estimator: ConfidenceEstimator::default_random(derive_seed(seed, 2)),
            fusion,
            depth,
            validity,
            rgb_features,
            depth_features,
            probe: probe(&[channels, fh, fw], probe_seed),
        })
    }

    fn unpack(&self, params: &[Tensor]) -> (ConfidenceEstimator, ConvLayer) {
        let mut est = self.estimator.clone();
        for (i, layer) in est.layers.iter_mut().enumerate() {
            layer.weights = params[2 + 2 * i].clone();
            layer.bias = params[3 + 2 * i].clone();
        }
        let k = 2 + 2 * est.layers.len();
        let fusion = ConvLayer { weights: params[k].clone(), bias: params[k + 1].clone(), ..self.fusion.clone() };
        (est, fusion)
    }
}

impl Graph for ComposedGraph {
    fn name(&self) -> &str {
        "composed"
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        let mut v = vec![("depth".into(), self.depth.clone()), ("validity".into(), self.validity.clone())];
        for (i, l) in self.estimator.layers.iter().enumerate() {
            v.push((format!("cme{}.weights", i + 1), l.weights.clone()));
            v.push((format!("cme{}.bias", i + 1), l.bias.clone()));
        }
        v.push(("fusion.weights".into(), self.fusion.weights.clone()));
        v.push(("fusion.bias".into(), self.fusion.bias.clone()));
        v.push(("rgb_features".into(), self.rgb_features.clone()));
        v.push(("depth_features".into(), self.depth_features.clone()));
        v
    }

    fn loss(&self, params: &[Tensor], trace: &mut Trace) -> Result<f64> {
        let (est, fusion) = self.unpack(params);
        let n = params.len();
        let cme = est.estimate_cached(&params[0], &params[1])?;
        for (layer, cache) in est.layers.iter().zip(&cme.layers) {
            trace.record(layer, cache);
        }
        let conf = &cme.layers.last().expect("layers").output;
        let fused = fuse_level_cached(&fusion, &params[n - 2], &params[n - 1], conf)?;
        fused.conv.output.dot(&self.probe)
    }

    fn gradients(&self, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let (est, fusion) = self.unpack(params);
        let n = params.len();
        let cme = est.estimate_cached(&params[0], &params[1])?;
        let conf = &cme.layers.last().expect("layers").output;
        let cache = fuse_level_cached(&fusion, &params[n - 2], &params[n - 1], conf)?;
        let fg = fuse_level_backward(&fusion, &params[n - 1], conf, &cache, &self.probe)?;
        let (layer_grads, gd, gv) = est.backward(&cme, &fg.confidence)?;
        let mut out = vec![gd, gv];
        for (w, b) in layer_grads {
            out.push(w);
            out.push(b);
        }
        out.extend([fg.weights, fg.bias, fg.rgb, fg.depth]);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseCheckReport {
    pub size: [usize; 2],
    pub eps: f64,
    pub seed: u64,
    pub ops: Vec<GradCheckReport>,
    pub composed: GradCheckReport,
    pub max_rel_error: f64,
}

/// Entries sampled per parameter tensor by [`fuse_check`].
pub const FUSE_CHECK_SAMPLES: usize = 64;

/// Gradient checks for every op and for the composed estimator + fusion
/// graph at `h × w`, with the plain output sum as the loss.
pub fn fuse_check(h: usize, w: usize, seed: u64, eps: f64) -> Result<FuseCheckReport> {
    fuse_check_with(h, w, seed, eps, None, Some(FUSE_CHECK_SAMPLES))
}

pub fn fuse_check_with(
    h: usize,
    w: usize,
    seed: u64,
    eps: f64,
    probe_seed: Option<u64>,
    max_per_tensor: Option<usize>,
) -> Result<FuseCheckReport> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidParameter("size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |shape: &[usize]| Tensor::random_uniform(shape, 1.0, &mut rng);
    let ps = |k: u64| probe_seed.map(|s| derive_seed(s, k));
    let mut layer_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100));
    let mut layer = |i, o, k, s, p, a| ConvLayer::random(i, o, k, s, p, a, &mut layer_rng);

    let graphs: Vec<Box<dyn Graph>> = vec![
        Box::new(ConvGraph::new("conv2d_1x1", layer(2, 3, 1, 1, 0, Activation::None), rand(&[2, 4, 4]), ps(1))?),
        Box::new(ConvGraph::new("conv2d_3x3_stride2", layer(2, 3, 3, 2, 1, Activation::None), rand(&[2, h, w]), ps(2))?),
        Box::new(ConvGraph::new("relu", layer(2, 4, 3, 1, 1, Activation::Relu), rand(&[2, h, w]), ps(3))?),
        Box::new(ConvGraph::new("sigmoid", layer(2, 4, 3, 1, 1, Activation::Sigmoid), rand(&[2, h, w]), ps(4))?),
        Box::new(ResizeGraph::new(rand(&[2, h, w]), (h.div_ceil(2), w + w / 2 + 1), ps(5))?),
        Box::new(MultiplyGraph::new(rand(&[4, h, w]), rand(&[1, h, w]), ps(6))),
        Box::new(ConcatGraph::new(rand(&[2, h, w]), rand(&[3, h, w]), ps(7))?),
    ];
    let mut ops = vec![];
    for (k, g) in graphs.iter().enumerate() {
        ops.push(grad_check(g.as_ref(), eps, max_per_tensor, derive_seed(seed, 200 + k as u64))?);
    }
    let composed_graph = ComposedGraph::random(h, w, 8, seed, ps(8))?;
    let composed = grad_check(&composed_graph, eps, max_per_tensor, derive_seed(seed, 300))?;
    let max_rel_error = ops.iter().chain([&composed]).map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(FuseCheckReport { size: [h, w], eps, seed, ops, composed, max_rel_error })
}
