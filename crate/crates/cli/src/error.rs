use thiserror::Error;

use scoregen::dpo::DpoError;
use scoregen::evaluator::EvalError;
use scoregen::metrics::MetricsError;
use scoregen::midi::CodecError;
use scoregen::model::ModelError;
use scoregen::patching::PatchError;
use scoregen::preprocess::PreprocessError;

use crate::config::Diagnostic;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", format_diagnostics(.0))]
    ConfigInvalid(Vec<Diagnostic>),
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ConfigInvalid(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        CliError::ConfigInvalid(vec![Diagnostic::new(field, reason)])
    }

    /// Prefixes a data error with the piece it came from.
    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
            e => e,
        }
    }
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteGradient => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<DpoError> for CliError {
    fn from(e: DpoError) -> Self {
        match e {
            DpoError::Model(m) => m.into(),
            DpoError::BadConfig { field, reason } => CliError::config(&format!("dpo.{field}"), reason),
            e => CliError::Data(e.to_string()),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_errors!(EvalError, MetricsError, CodecError, PatchError, PreprocessError, scoregen::abc::AbcError);
