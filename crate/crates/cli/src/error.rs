use std::path::PathBuf;

use lingmark::eval::EvalError;
use lingmark::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("missing {}; run `{producer}` first", path.display())]
    Missing { path: PathBuf, producer: String },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Missing { .. } => 3,
        }
    }
}

macro_rules! failed_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Failed(e.to_string())
            }
        }
    )*};
}

failed_from!(
    std::io::Error,
    serde_json::Error,
    lingmark::chat::ChatError,
    lingmark::records::RecordError,
    lingmark::backend::ModelError,
    lingmark::markers::MarkerError,
    lingmark::stats::StatsError,
    lingmark::registry::RegistryError,
    lingmark::baselines::BaselineError,
    lingmark::formulation::FormulationError
);

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(m) => {
                CliError::Validation(format!("invalid training config: {m}"))
            }
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::Validation(format!("config: {e}"))
    }
}
