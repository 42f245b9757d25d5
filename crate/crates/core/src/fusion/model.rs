use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{Activation, ConvCache, ConvLayer};
use super::ops::{concat, concat_backward, multiply_broadcast, multiply_broadcast_backward, resize_bilinear, resize_bilinear_backward};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CME_LAYERS: usize = 5;
pub const PYRAMID_STRIDES: [usize; 4] = [4, 8, 16, 32];
pub const PYRAMID_CHANNELS: [usize; 4] = [16, 32, 64, 128];
pub const LEVEL_NAMES: [&str; 4] = ["C2", "C3", "C4", "C5"];

/// Five size-preserving convolutions from (depth, validity) to a per-pixel
/// confidence in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEstimator {
    pub layers: Vec<ConvLayer>,
}

/// Forward values of the estimator kept for backpropagation.
#[derive(Debug, Clone)]
pub struct CmeCache {
    pub layers: Vec<ConvCache>,
}

impl ConfidenceEstimator {
    /// 3x3 kernels, channels 2 → hidden[0] → ... → hidden[3] → 1.
    pub fn random(hidden: [usize; 4], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [2, hidden[0], hidden[1], hidden[2], hidden[3], 1];
        let layers = (0..CME_LAYERS)
            .map(|i| {
                let act = if i + 1 == CME_LAYERS { Activation::Sigmoid } else { Activation::Relu };
                ConvLayer::random(widths[i], widths[i + 1], 3, 1, 1, act, &mut rng)
            })
            .collect();
        Self { layers }
    }

    pub fn default_random(seed: u64) -> Self {
        Self::random([16; 4], seed)
    }

    pub fn zeros(hidden: [usize; 4]) -> Self {
        let widths = [2, hidden[0], hidden[1], hidden[2], hidden[3], 1];
        let layers = (0..CME_LAYERS)
            .map(|i| {
                let act = if i + 1 == CME_LAYERS { Activation::Sigmoid } else { Activation::Relu };
                ConvLayer::zeros(widths[i], widths[i + 1], 3, 1, 1, act)
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != CME_LAYERS {
            return Err(Error::InvalidParameter(format!("estimator needs {CME_LAYERS} layers, got {}", self.layers.len())));
        }
        for l in &self.layers {
            l.validate()?;
            let (kh, kw) = l.kernel();
            if l.stride != 1 || l.padding * 2 + 1 != kh || kh != kw {
                return Err(Error::InvalidParameter("estimator layers must preserve spatial size".into()));
            }
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::dims(&[pair[0].out_channels()], &[pair[1].in_channels()]));
            }
        }
        let (first, last) = (&self.layers[0], &self.layers[CME_LAYERS - 1]);
        if first.in_channels() != 2 || last.out_channels() != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::InvalidParameter("estimator maps 2 channels to 1 sigmoid channel".into()));
        }
        Ok(())
    }

    pub fn estimate_cached(&self, depth: &Tensor, validity: &Tensor) -> Result<CmeCache> {
        let (c, h, w) = depth.dims3()?;
        if c != 1 {
            return Err(Error::dims(&[1, h, w], &[c, h, w]));
        }
        validity.ensure_shape(&[1, h, w])?;
        let mut x = concat(depth, validity)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let cache = layer.forward_cached(&x)?;
            x = cache.output.clone();
            caches.push(cache);
        }
        Ok(CmeCache { layers: caches })
    }

    /// Confidence map `[1, H, W]` for depth and validity `[1, H, W]`.
    pub fn estimate(&self, depth: &Tensor, validity: &Tensor) -> Result<Tensor> {
        Ok(self.estimate_cached(depth, validity)?.layers.pop().expect("layers").output)
    }

    /// Gradients for every layer (weights, bias) and for depth and validity.
    pub fn backward(&self, cache: &CmeCache, grad_out: &Tensor) -> Result<(Vec<(Tensor, Tensor)>, Tensor, Tensor)> {
        let mut g = grad_out.clone();
        let mut layer_grads = vec![];
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let grads = layer.backward(c, &g)?;
            layer_grads.push((grads.weights, grads.bias));
            g = grads.input;
        }
        layer_grads.reverse();
        let (gd, gv) = concat_backward(&g, 1)?;
        Ok((layer_grads, gd, gv))
    }
}

/// One 1x1 channel-halving convolution per pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModule {
    pub levels: Vec<ConvLayer>,
}

impl FusionModule {
    pub fn random(channels: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = channels
            .iter()
            .map(|&c| ConvLayer::random(2 * c, c, 1, 1, 0, Activation::None, &mut rng))
            .collect();
        Self { levels }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    /// C2, C3, C4, C5.
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.levels.iter().map(|t| t.shape().to_vec()).collect()
    }
}

/// Intermediate values of one fusion level.
#[derive(Debug, Clone)]
pub struct FuseCache {
    pub confidence_resized: Tensor,
    pub attended: Tensor,
    pub conv: ConvCache,
}

pub fn fuse_level_cached(fm: &ConvLayer, rgb: &Tensor, depth: &Tensor, confidence: &Tensor) -> Result<FuseCache> {
    let (c, h, w) = rgb.dims3()?;
    depth.ensure_shape(rgb.shape())?;
    let (cc, _, _) = confidence.dims3()?;
    if cc != 1 {
        return Err(Error::InvalidParameter("confidence must have one channel".into()));
    }
    let (kh, kw) = fm.kernel();
    if fm.in_channels() != 2 * c || fm.out_channels() != c || (kh, kw) != (1, 1) {
        return Err(Error::dims(&[c, 2 * c, 1, 1], fm.weights.shape()));
    }
    let confidence_resized = resize_bilinear(confidence, h, w)?;
    let attended = multiply_broadcast(depth, &confidence_resized)?;
    let conv = fm.forward_cached(&concat(rgb, &attended)?)?;
    Ok(FuseCache { confidence_resized, attended, conv })
}

/// `conv1x1(concat(rgb, depth ⊙ resize(confidence)))`.
pub fn fuse_level(fm: &ConvLayer, rgb: &Tensor, depth: &Tensor, confidence: &Tensor) -> Result<Tensor> {
    Ok(fuse_level_cached(fm, rgb, depth, confidence)?.conv.output)
}

#[derive(Debug, Clone)]
pub struct FuseGrads {
    pub weights: Tensor,
    pub bias: Tensor,
    pub rgb: Tensor,
    pub depth: Tensor,
    pub confidence: Tensor,
}

pub fn fuse_level_backward(
    fm: &ConvLayer,
    depth: &Tensor,
    confidence: &Tensor,
    cache: &FuseCache,
    grad_out: &Tensor,
) -> Result<FuseGrads> {
    let (c, _, _) = depth.dims3()?;
    let (_, ch, cw) = confidence.dims3()?;
    let g = fm.backward(&cache.conv, grad_out)?;
    let (g_rgb, g_att) = concat_backward(&g.input, c)?;
    let (g_depth, g_conf_resized) = multiply_broadcast_backward(depth, &cache.confidence_resized, &g_att)?;
    Ok(FuseGrads {
        weights: g.weights,
        bias: g.bias,
        rgb: g_rgb,
        depth: g_depth,
        confidence: resize_bilinear_backward(&g_conf_resized, ch, cw)?,
    })
}

/// Fuses every level with its own 1x1 convolution.
pub fn fuse_pyramid(fm: &FusionModule, rgb: &FeaturePyramid, depth: &FeaturePyramid, confidence: &Tensor) -> Result<FeaturePyramid> {
    let n = fm.levels.len();
    if rgb.levels.len() != n || depth.levels.len() != n {
        return Err(Error::dims(&[n, n], &[rgb.levels.len(), depth.levels.len()]));
    }
    let levels = fm
        .levels
        .iter()
        .zip(rgb.levels.iter().zip(&depth.levels))
        .map(|(l, (r, d))| fuse_level(l, r, d, confidence))
        .collect::<Result<_>>()?;
    Ok(FeaturePyramid { levels })
}

/// Fixed-seed strided convolution stages producing C2–C5 at strides
/// 4/8/16/32 with 16/32/64/128 channels.
pub fn toy_backbone(input: &Tensor, seed: u64) -> Result<FeaturePyramid> {
    let (c, h, w) = input.dims3()?;
    if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
        return Err(Error::InvalidParameter(format!("backbone input {h}x{w} must be a positive multiple of 32")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = input.clone();
    let mut levels = vec![];
    let mut in_ch = c;
    for (i, &out_ch) in PYRAMID_CHANNELS.iter().enumerate() {
        let layer = if i == 0 {
            ConvLayer::random(in_ch, out_ch, 5, 4, 2, Activation::Relu, &mut rng)
        } else {
            ConvLayer::random(in_ch, out_ch, 3, 2, 1, Activation::Relu, &mut rng)
        };
        x = layer.forward(&x)?;
        levels.push(x.clone());
        in_ch = out_ch;
    }
    Ok(FeaturePyramid { levels })
}
