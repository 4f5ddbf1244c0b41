use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a forecast error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Cals,
    Refit,
    EmpiricalLikelihood,
    InnovationRisk,
    Inference,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Cals => "cals",
            Stage::Refit => "garch-refit",
            Stage::EmpiricalLikelihood => "empirical-likelihood",
            Stage::InnovationRisk => "innovation-risk",
            Stage::Inference => "inference",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter domain error: {0}")]
    Domain(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("insufficient data: need more than {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("singularity: {0}")]
    Singular(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("need at least {needed} exceedances, found {found}")]
    InsufficientExceedances { needed: usize, found: usize },

    #[error("length mismatch: {0}")]
    Alignment(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strips stage tags and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
