use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::layers::{Cache, LayerSpec, Sequential};
use crate::tensor::{Real, Tensor};

/// Strided conv stages, global average pool, then fully-connected layers
/// ending in a single sigmoid unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub conv_channels: Vec<usize>,
    pub conv_stride: usize,
    /// Last width must be 1.
    pub fc_widths: Vec<usize>,
    pub kernel: usize,
    pub prelu_init: f64,
    pub norm_eps: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            conv_channels: vec![32, 64, 128, 256],
            conv_stride: 2,
            fc_widths: vec![256, 128, 1],
            kernel: 3,
            prelu_init: 0.25,
            norm_eps: 1e-5,
        }
    }
}

impl DiscriminatorConfig {
    pub fn toy() -> Self {
        DiscriminatorConfig {
            conv_channels: vec![4, 8, 16, 32],
            fc_widths: vec![32, 16, 1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(NnError::InvalidConfig("discriminator needs nonzero conv widths".into()));
        }
        if self.fc_widths.last() != Some(&1) || self.fc_widths.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "fully-connected widths {:?} must be nonzero and end in 1",
                self.fc_widths
            )));
        }
        if self.conv_stride == 0 || self.kernel % 2 == 0 {
            return Err(NnError::InvalidConfig("conv stride must be >= 1 and kernel odd".into()));
        }
        Ok(())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut ci = 1;
        for &co in &self.conv_channels {
            specs.push(LayerSpec::Conv3d {
                in_channels: ci,
                out_channels: co,
                kernel: self.kernel,
                stride: self.conv_stride,
                padding: self.kernel / 2,
                bias: true,
            });
            specs.push(LayerSpec::InstanceNorm {
                channels: co,
                eps: self.norm_eps,
                affine: true,
            });
            specs.push(LayerSpec::Prelu {
                channels: co,
                init: self.prelu_init,
            });
            ci = co;
        }
        specs.push(LayerSpec::AdaptiveAvgPool);
        for (k, &w) in self.fc_widths.iter().enumerate() {
            specs.push(LayerSpec::Linear {
                in_features: ci,
                out_features: w,
            });
            specs.push(if k + 1 == self.fc_widths.len() {
                LayerSpec::Sigmoid
            } else {
                LayerSpec::Relu
            });
            ci = w;
        }
        specs
    }

    pub fn count_parameters(&self) -> Result<usize, NnError> {
        self.validate()?;
        Ok(self.layer_specs().iter().map(|s| s.param_count()).sum())
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    cfg: DiscriminatorConfig,
    net: Sequential<T>,
}

pub struct DiscriminatorTape<T> {
    caches: Vec<Cache<T>>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(cfg: &DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self, NnError> {
        cfg.validate()?;
        Ok(Discriminator {
            cfg: cfg.clone(),
            net: Sequential::build(&cfg.layer_specs(), rng)?,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    fn check_input(x: &Tensor<T>) -> Result<(), NnError> {
        let [_, c, ..] = x.dims5()?;
        if c != 1 {
            return Err(NnError::ShapeMismatch {
                expected: "[N, 1, D, H, W]".into(),
                actual: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    /// `[N, 1]` probabilities.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Self::check_input(x)?;
        self.net.infer(x)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorTape<T>), NnError> {
        Self::check_input(x)?;
        let (y, caches) = self.net.forward(x)?;
        Ok((y, DiscriminatorTape { caches }))
    }

    pub fn backward(&self, tape: &DiscriminatorTape<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        self.net.backward(&tape.caches, dy)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.params_mut()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }
}
