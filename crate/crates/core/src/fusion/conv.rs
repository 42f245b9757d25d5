use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::None => z,
        }
    }

    /// Derivative in terms of the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::None => 1.0,
        }
    }
}

/// 2-D cross-correlation with zero padding, bias and activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// `[out_ch, in_ch, kh, kw]`.
    pub weights: Tensor,
    /// `[out_ch]`.
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvCache {
    pub input: Tensor,
    pub pre_activation: Tensor,
    pub output: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize, activation: Activation) -> Result<Self> {
        let layer = Self { weights, bias, stride, padding, activation };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let [o, _, kh, kw] = self.weights.shape()[..] else {
            return Err(Error::InvalidParameter(format!(
                "conv weights must be [out, in, kh, kw], got {:?}",
                self.weights.shape()
            )));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidParameter(format!("kernel {kh}x{kw} must be odd")));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        self.bias.ensure_shape(&[o])
    }

    /// Uniform fan-in initialization, `±sqrt(6 / fan_in)`.
    pub fn random(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / (in_ch * kernel * kernel) as f64).sqrt();
        Self {
            weights: Tensor::random_uniform(&[out_ch, in_ch, kernel, kernel], bound, rng),
            bias: Tensor::random_uniform(&[out_ch], 0.1, rng),
            stride,
            padding,
            activation,
        }
    }

    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
            activation,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(Error::InvalidParameter(format!("input {h}x{w} smaller than kernel {kh}x{kw}")));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        let (c, h, w) = input.dims3()?;
        if c != self.in_channels() {
            return Err(Error::dims(&[self.in_channels(), h, w], &[c, h, w]));
        }
        Ok((c, h, w))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<ConvCache> {
        let (c, h, w) = self.check_input(input)?;
        let (oh, ow) = self.output_dims(h, w)?;
        let (kh, kw) = self.kernel();
        let o_ch = self.out_channels();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let wt = self.weights.data();
        let x = input.data();
        let mut pre = vec![0.0; o_ch * oh * ow];
        for o in 0..o_ch {
            let b = self.bias.data()[o];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    for i in 0..c {
                        for ky in 0..kh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let wrow = ((o * c + i) * kh + ky) * kw;
                            let xrow = (i * h + iy as usize) * w;
                            for kx in 0..kw {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    acc += wt[wrow + kx] * x[xrow + ix as usize];
                                }
                            }
                        }
                    }
                    pre[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let pre = Tensor::new(vec![o_ch, oh, ow], pre)?;
        let output = pre.map(|z| self.activation.apply(z));
        Ok(ConvCache { input: input.clone(), pre_activation: pre, output })
    }

    pub fn backward(&self, cache: &ConvCache, grad_output: &Tensor) -> Result<ConvGrads> {
        grad_output.ensure_shape(cache.output.shape())?;
        let (c, h, w) = cache.input.dims3()?;
        let (o_ch, oh, ow) = cache.output.dims3()?;
        let (kh, kw) = self.kernel();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let grad_pre: Vec<f64> = grad_output
            .data()
            .iter()
            .zip(cache.pre_activation.data())
            .zip(cache.output.data())
            .map(|((g, &z), &y)| g * self.activation.derivative(z, y))
            .collect();
        let wt = self.weights.data();
        let x = cache.input.data();
        let mut gx = vec![0.0; c * h * w];
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; o_ch];
        for o in 0..o_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_pre[(o * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    for i in 0..c {
                        for ky in 0..kh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let wrow = ((o * c + i) * kh + ky) * kw;
                            let xrow = (i * h + iy as usize) * w;
                            for kx in 0..kw {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    gw[wrow + kx] += g * x[xrow + ix as usize];
                                    gx[xrow + ix as usize] += g * wt[wrow + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: Tensor::new(vec![c, h, w], gx)?,
            weights: Tensor::new(self.weights.shape().to_vec(), gw)?,
            bias: Tensor::new(vec![o_ch], gb)?,
        })
    }
}
