use std::fmt::Display;

use mvrec::classifiers::ClassifierError;
use mvrec::dataset::DatasetError;
use mvrec::embedding::EmbeddingError;
use mvrec::eval::EvalError;
use mvrec::geometry::GeometryError;
use serde::Serialize;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USER: u8 = 2;

/// A failure reported as one JSON line on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: &'static str,
    pub message: String,
    #[serde(skip)]
    pub exit_code: u8,
}

impl CliError {
    pub fn user(kind: &'static str, message: impl Display) -> Self {
        CliError {
            error: kind,
            message: message.to_string(),
            exit_code: EXIT_USER,
        }
    }

    pub fn internal(kind: &'static str, message: impl Display) -> Self {
        CliError {
            error: kind,
            message: message.to_string(),
            exit_code: EXIT_INTERNAL,
        }
    }

    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("serializable");
        s.retain(|c| c != '\n');
        s
    }
}

/// Training blow-ups and broken invariants are on us; everything else is input.
fn classifier_exit(e: &ClassifierError) -> u8 {
    match e {
        ClassifierError::Numerics(_) | ClassifierError::NonFiniteLoss { .. } | ClassifierError::UntrainedState(_) => {
            EXIT_INTERNAL
        }
        _ => EXIT_USER,
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let exit_code = match &e {
            EvalError::Classifier(c) => classifier_exit(c),
            _ => EXIT_USER,
        };
        CliError {
            error: e.kind(),
            message: e.to_string(),
            exit_code,
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        CliError {
            error: e.kind(),
            exit_code: classifier_exit(&e),
            message: e.to_string(),
        }
    }
}

macro_rules! user_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::user(e.kind(), e)
            }
        }
    )*};
}

user_error!(DatasetError, EmbeddingError, GeometryError);

pub type CliResult<T> = Result<T, CliError>;
