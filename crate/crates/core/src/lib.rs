pub mod adam;
pub mod checkpoint;
pub mod conditioning;
pub mod config;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod field;
pub mod flowmatch;
pub mod latentae;
pub mod loss;
pub mod nn;
pub mod pgm;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use checkpoint::ModelCheckpoint;
pub use conditioning::{ConditioningBundle, SpeakerTable};
pub use config::{ConvertParams, RunConfig};
pub use corpus::{Corpus, CorpusSpec, Utterance};
pub use error::{Error, Result};
pub use field::{ConditionedNet, FrameField};
pub use latentae::Autoencoder;
pub use pipeline::{Converter, GenModel, PipelineKind, Space};
pub use schedule::NoiseSchedule;
pub use tensor::Tensor2;
