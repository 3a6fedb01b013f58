//! Velocity-parameterized diffusion for 10-channel material latents: noise
//! schedule, training objective, Euler-ancestral sampler, a U-Net denoiser
//! with its own reverse-mode differentiation, and the training loop.

pub mod capture;
pub mod checkpoint;
pub mod condition;
mod error;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod sampler;
pub mod schedule;
pub mod trainer;
pub mod unet;

pub use error::{Error, Result};
pub use objective::{expectations, make_training_pair, velocity_loss, TrainingPair};
pub use sampler::{sample_eulera, SamplerConfig, VelocityModel};
pub use schedule::NoiseSchedule;
pub use condition::ConditionStack;
pub use unet::{BlockType, Denoiser, NetConfig};
pub use capture::{CaptureLighting, Lighting, Variant};
pub use trainer::{finetune_conditional, train_backbone, FixedBatch, RunDir, TrainConfig, Trainer};
