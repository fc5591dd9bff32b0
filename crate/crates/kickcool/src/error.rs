use serde::Serialize;
use thiserror::Error;

/// Which protocol stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    Release,
    Kick,
    Flight,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Release => "first free flight",
            Stage::Kick => "kick",
            Stage::Flight => "second free flight",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: estimated relative error {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("non-finite state at t = {t} s ({what})")]
    NonFinite { t: f64, what: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("unbounded: {0}")]
    Unbounded(String),

    #[error("quantum prediction {sigma:.6e} m already lies outside the band [{lo:.6e}, {hi:.6e}] m")]
    Inconsistent { sigma: f64, lo: f64, hi: f64 },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Quadrature { .. } | Error::NonFinite { .. } => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
