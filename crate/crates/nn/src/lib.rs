//! Dense 3-D convolutional networks with hand-written backward passes.

pub mod checkpoint;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrainState, FORMAT_VERSION};
pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorTape};
pub use error::NnError;
pub use generator::{Generator, GeneratorConfig, GeneratorTape};
pub use layers::{Cache, Layer, LayerKind, LayerSpec, Sequential};
pub use loss::{adversarial_loss, discriminator_loss, generator_loss, smooth_l1_loss, DiscLoss, GenLoss, LossGrad};
pub use optim::{Nadam, NadamConfig};
pub use tensor::{Real, Tensor};
