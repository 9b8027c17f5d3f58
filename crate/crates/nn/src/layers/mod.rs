//! Layers with analytic forward and backward passes.

mod activation;
mod conv;
mod linear;
mod norm;
mod pool;
mod upsample;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use activation::{sigmoid, PRelu};
pub use conv::Conv3d;
pub use linear::Linear;
pub use norm::InstanceNorm3d;

use crate::error::NnError;
use crate::tensor::{Real, Tensor};
use norm::NormCache;

/// Layer description; `build` turns it into a parameterized [`Layer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    InstanceNorm {
        channels: usize,
        eps: f64,
        affine: bool,
    },
    Prelu {
        channels: usize,
        init: f64,
    },
    /// kernel 2, stride 2
    Maxpool3d,
    /// scale 2
    TrilinearUp,
    AdaptiveAvgPool,
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    Sigmoid,
}

impl LayerSpec {
    /// 3³ kernel, stride 1, padding 1, with bias.
    pub fn conv(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv3d {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            bias: true,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => in_channels * out_channels * kernel.pow(3) + if bias { out_channels } else { 0 },
            LayerSpec::InstanceNorm { channels, affine, .. } => {
                if affine {
                    2 * channels
                } else {
                    0
                }
            }
            LayerSpec::Prelu { channels, .. } => channels,
            LayerSpec::Linear {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0,
            LayerSpec::InstanceNorm { channels, eps, .. } => channels == 0 || !(eps > 0.0),
            LayerSpec::Prelu { channels, init } => channels == 0 || !init.is_finite(),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => in_features == 0 || out_features == 0,
            _ => false,
        };
        if bad {
            return Err(NnError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }

    /// Weights and biases are uniform in ±1/√fan_in.
    pub fn build<T: Real>(&self, rng: &mut impl Rng) -> Result<Layer<T>, NnError> {
        self.validate()?;
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let v: Vec<T> = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
            Tensor::from_vec(shape, v)
        };
        let kind = match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            } => {
                let fan_in = in_channels * kernel.pow(3);
                let weight = uniform(&[out_channels, in_channels, kernel, kernel, kernel], fan_in)?;
                let bias = if bias { Some(uniform(&[out_channels], fan_in)?) } else { None };
                LayerKind::Conv(Conv3d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight,
                    bias,
                })
            }
            LayerSpec::InstanceNorm { channels, eps, affine } => LayerKind::Norm(InstanceNorm3d {
                channels,
                eps,
                gamma: affine.then(|| Tensor::full(&[channels], T::one())),
                beta: affine.then(|| Tensor::zeros(&[channels])),
            }),
            LayerSpec::Prelu { channels, init } => LayerKind::Prelu(PRelu {
                channels,
                slope: Tensor::full(&[channels], T::of(init)),
            }),
            LayerSpec::Maxpool3d => LayerKind::MaxPool,
            LayerSpec::TrilinearUp => LayerKind::Upsample,
            LayerSpec::AdaptiveAvgPool => LayerKind::AvgPool,
            LayerSpec::Linear {
                in_features,
                out_features,
            } => LayerKind::Linear(Linear {
                in_features,
                out_features,
                weight: uniform(&[out_features, in_features], in_features)?,
                bias: uniform(&[out_features], in_features)?,
            }),
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::Sigmoid => LayerKind::Sigmoid,
        };
        Ok(Layer::from_kind(kind))
    }
}

#[derive(Debug, Clone)]
pub enum LayerKind<T> {
    Conv(Conv3d<T>),
    Norm(InstanceNorm3d<T>),
    Prelu(PRelu<T>),
    MaxPool,
    Upsample,
    AvgPool,
    Linear(Linear<T>),
    Relu,
    Sigmoid,
}

static NEXT_LAYER_ID: AtomicU64 = AtomicU64::new(1);

/// A layer instance. Every mutable borrow of the parameters bumps `version`,
/// so caches from an earlier forward pass are rejected afterwards.
#[derive(Debug)]
pub struct Layer<T> {
    id: u64,
    version: u64,
    kind: LayerKind<T>,
}

impl<T: Clone> Clone for Layer<T> {
    fn clone(&self) -> Self {
        Layer::from_kind(self.kind.clone())
    }
}

enum Saved<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Shape(Vec<usize>),
    Norm(NormCache<T>),
    Pool(Vec<usize>, Vec<usize>),
}

/// What a forward pass keeps for its backward pass.
pub struct Cache<T> {
    layer: u64,
    version: u64,
    saved: Saved<T>,
}

impl<T> Layer<T> {
    pub fn from_kind(kind: LayerKind<T>) -> Self {
        Layer {
            id: NEXT_LAYER_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            kind,
        }
    }
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &LayerKind<T> {
        &self.kind
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match &self.kind {
            LayerKind::Conv(c) => std::iter::once(&c.weight).chain(c.bias.as_ref()).collect(),
            LayerKind::Norm(n) => n.gamma.iter().chain(n.beta.iter()).collect(),
            LayerKind::Prelu(p) => vec![&p.slope],
            LayerKind::Linear(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.version += 1;
        match &mut self.kind {
            LayerKind::Conv(c) => std::iter::once(&mut c.weight).chain(c.bias.as_mut()).collect(),
            LayerKind::Norm(n) => n.gamma.iter_mut().chain(n.beta.iter_mut()).collect(),
            LayerKind::Prelu(p) => vec![&mut p.slope],
            LayerKind::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(match &self.kind {
            LayerKind::Conv(c) => c.forward(x)?,
            LayerKind::Norm(n) => n.forward(x)?.0,
            LayerKind::Prelu(p) => p.forward(x)?,
            LayerKind::MaxPool => pool::maxpool_forward(x)?.0,
            LayerKind::Upsample => upsample::upsample_forward(x)?,
            LayerKind::AvgPool => pool::avgpool_forward(x)?,
            LayerKind::Linear(l) => l.forward(x)?,
            LayerKind::Relu => activation::relu_forward(x),
            LayerKind::Sigmoid => activation::sigmoid_forward(x),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>), NnError> {
        let (y, saved) = match &self.kind {
            LayerKind::Conv(c) => (c.forward(x)?, Saved::Input(x.clone())),
            LayerKind::Norm(n) => {
                let (y, cache) = n.forward(x)?;
                (y, Saved::Norm(cache))
            }
            LayerKind::Prelu(p) => (p.forward(x)?, Saved::Input(x.clone())),
            LayerKind::MaxPool => {
                let (y, arg) = pool::maxpool_forward(x)?;
                (y, Saved::Pool(x.shape().to_vec(), arg))
            }
            LayerKind::Upsample => (upsample::upsample_forward(x)?, Saved::Shape(x.shape().to_vec())),
            LayerKind::AvgPool => (pool::avgpool_forward(x)?, Saved::Shape(x.shape().to_vec())),
            LayerKind::Linear(l) => (l.forward(x)?, Saved::Input(x.clone())),
            LayerKind::Relu => (activation::relu_forward(x), Saved::Input(x.clone())),
            LayerKind::Sigmoid => {
                let y = activation::sigmoid_forward(x);
                let saved = Saved::Output(y.clone());
                (y, saved)
            }
        };
        Ok((
            y,
            Cache {
                layer: self.id,
                version: self.version,
                saved,
            },
        ))
    }

    /// Returns the input gradient and one gradient per entry of [`Layer::params`].
    pub fn backward(&self, cache: &Cache<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        if cache.layer != self.id || cache.version != self.version {
            return Err(NnError::StaleCache {
                cache_layer: cache.layer,
                cache_version: cache.version,
                layer: self.id,
                version: self.version,
            });
        }
        let mismatch = || NnError::InvalidConfig("cache does not belong to this layer kind".into());
        Ok(match (&self.kind, &cache.saved) {
            (LayerKind::Conv(c), Saved::Input(x)) => c.backward(x, dy)?,
            (LayerKind::Norm(n), Saved::Norm(nc)) => n.backward(nc, dy)?,
            (LayerKind::Prelu(p), Saved::Input(x)) => p.backward(x, dy)?,
            (LayerKind::MaxPool, Saved::Pool(shape, arg)) => (pool::maxpool_backward(shape, arg, dy)?, Vec::new()),
            (LayerKind::Upsample, Saved::Shape(shape)) => (upsample::upsample_backward(shape, dy)?, Vec::new()),
            (LayerKind::AvgPool, Saved::Shape(shape)) => (pool::avgpool_backward(shape, dy)?, Vec::new()),
            (LayerKind::Linear(l), Saved::Input(x)) => l.backward(x, dy)?,
            (LayerKind::Relu, Saved::Input(x)) => (activation::relu_backward(x, dy)?, Vec::new()),
            (LayerKind::Sigmoid, Saved::Output(y)) => (activation::sigmoid_backward(y, dy)?, Vec::new()),
            _ => return Err(mismatch()),
        })
    }
}

/// A chain of layers.
#[derive(Debug, Clone)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn build(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self, NnError> {
        let layers = specs.iter().map(|s| s.build(rng)).collect::<Result<_, _>>()?;
        Ok(Sequential { layers })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur: Option<Tensor<T>> = None;
        for l in &self.layers {
            cur = Some(l.infer(cur.as_ref().unwrap_or(x))?);
        }
        Ok(cur.unwrap_or_else(|| x.clone()))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Cache<T>>), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur: Option<Tensor<T>> = None;
        for l in &self.layers {
            let (y, c) = l.forward(cur.as_ref().unwrap_or(x))?;
            caches.push(c);
            cur = Some(y);
        }
        Ok((cur.unwrap_or_else(|| x.clone()), caches))
    }

    /// Gradients come back in [`Sequential::params`] order.
    pub fn backward(&self, caches: &[Cache<T>], dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        if caches.len() != self.layers.len() {
            return Err(NnError::InvalidConfig(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut grad = dy.clone();
        for (l, c) in self.layers.iter().zip(caches).rev() {
            let (dx, g) = l.backward(c, &grad)?;
            per_layer.push(g);
            grad = dx;
        }
        Ok((grad, per_layer.into_iter().rev().flatten().collect()))
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}
