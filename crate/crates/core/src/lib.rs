//! Audio violence detection toolkit.
//!
//! The crate is organised along the processing chain: [`audio_io`] turns WAV
//! bytes into fixed-length chunks, [`features`] maps chunks to vectors,
//! [`classifiers`] holds the random forest and SMO-trained SVM,
//! [`evaluation`] runs k-fold cross-validation and [`model_store`] persists
//! trained pipelines.

pub mod audio_io;
pub mod classifiers;
pub mod evaluation;
pub mod features;
pub mod model_store;

mod rng;

pub use audio_io::{AudioBuffer, AudioError, Chunk, ChunkOptions};
pub use classifiers::{Classifier, ClassifierError, ClassifierSpec, Dataset, Prediction};
pub use evaluation::{CvReport, EvalError, FoldAssignment, Metrics};
pub use features::{EmbeddingProvider, FeatureError, FeatureVector, MfccConfig, ProviderDescriptor};
pub use model_store::{PipelineArtifact, StoreError};
