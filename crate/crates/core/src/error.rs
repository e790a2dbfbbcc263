use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("integration diverged at step {step}")]
    IntegrationDiverged { step: usize },

    #[error("estimator is undriven: measurement strength is zero or the record has no dy")]
    EstimatorUndriven,

    #[error("pse_step called for step {pse_step} but the ROSE state is at step {rose_step}")]
    Sequencing { pse_step: u64, rose_step: u64 },

    #[error("estimator failed at step {step}: {source}")]
    EstimatorStep {
        step: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },

    #[error("kernel matrix is ill-conditioned (Cholesky failed); increase jitter (currently {jitter:e})")]
    IllConditioned { jitter: f64 },

    #[error("hyperparameter fit failed: every candidate (V, I) produced an ill-conditioned kernel")]
    FitFailed,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("evaluator failed twice at iteration {iter}: {reason}")]
    EvaluatorAborted { iter: usize, reason: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}
