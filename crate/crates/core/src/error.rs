//! Crate-wide error type and process exit codes.

use thiserror::Error;

use crate::dataset::DataError;
use crate::episodes::EpisodeError;
use crate::evaluation::EvalError;
use crate::heads::HeadError;
use crate::learner::LearnerError;
use crate::nlc::NlcError;
use crate::numeric::NumericError;
use crate::optim::OptimError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("test split shares classes with the training split: {0:?}")]
    Leakage(Vec<String>),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Count(#[from] NlcError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("training diverged at episode {episode}: {source}")]
    Diverged {
        episode: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 1 for configuration problems, 2 for data problems (including class
    /// leakage), 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Toml(_) | Error::Synth(_) => 1,
            Error::Head(HeadError::UnknownKind(_)) => 1,
            Error::Leakage(_) | Error::Data(_) | Error::Episode(_) | Error::Io { .. } => 2,
            Error::Json(_) | Error::Csv(_) | Error::Eval(_) => 2,
            Error::Learner(LearnerError::Way { .. } | LearnerError::FeatureDim { .. }) => 2,
            Error::Diverged { .. }
            | Error::Numeric(_)
            | Error::Optim(_)
            | Error::Head(_)
            | Error::Count(_)
            | Error::Learner(_) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(Error::Config("x".into()).exit_code(), 1);
        assert_eq!(Error::Leakage(vec!["a".into()]).exit_code(), 2);
        assert_eq!(Error::Numeric(NumericError::SingularMatrix).exit_code(), 3);
        let diverged = Error::Diverged {
            episode: 7,
            source: Box::new(Error::Numeric(NumericError::NonFinite("exp"))),
        };
        assert_eq!(diverged.exit_code(), 3);
        assert!(diverged.to_string().contains("episode 7"));
    }
}
