//! Multilabel-conditional style-based GAN with scalewise label embeddings.

pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod data;
pub mod discriminator;
mod error;
pub mod evaluation;
pub mod generator;
pub mod label_encoder;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod trainer;

pub use config::{AblationFlags, ModelConfig, ScaleSet};
pub use discriminator::{Discriminator, ScorePair};
pub use error::{Error, Result};
pub use generator::{truncate, Generator};
pub use label_encoder::{LabelEncoder, ScaleEmbeddingSet};
pub use losses::LossWeights;
