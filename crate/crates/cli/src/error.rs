use std::fmt;

use avd_core::features::FeatureError;
use avd_core::model_store::StoreError;
use avd_core::{AudioError, ClassifierError, EvalError};
use avd_service::{LoadError, PredictError};

/// A failure with the process exit code it maps to: 1 for I/O or decoding,
/// 2 for bad data or configuration, 3 for empty input.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn empty(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::InvalidChunkOptions(_) => Self::data(e.to_string()),
            _ => Self::io(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Io(_) | FeatureError::CorruptFile(_) | FeatureError::ProviderUnavailable(_) => {
                Self::io(e.to_string())
            }
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(_) => Self::io(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Store(s) => s.into(),
            LoadError::Provider(p) => p.into(),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::AudioTooShort { .. } | PredictError::EmptyChunks => Self::empty(e.to_string()),
            PredictError::MalformedAudio(_) | PredictError::PayloadTooLarge { .. } => Self::io(e.to_string()),
            PredictError::Feature(f) => f.into(),
            _ => Self::data(e.to_string()),
        }
    }
}
