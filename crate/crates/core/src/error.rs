use thiserror::Error;

/// Errors raised by the library. Input-shaped problems and numeric failures are
/// kept apart so the CLI can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("kinship matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    DegenerateKinship { min_eigenvalue: f64 },

    #[error("fixed-effect design is rank deficient after whitening")]
    SingularDesign,

    #[error("effect design is collinear (Gram matrix singular)")]
    CollinearEffects,

    #[error("residual sum of squares is zero; the model fits the response exactly")]
    PerfectFit,

    #[error("prior covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    InvalidPrior { min_eigenvalue: f64 },

    #[error("variance-ratio optimization failed: {0}")]
    OptimizationFailure(String),

    #[error("genotype matrix has no polymorphic columns")]
    EmptyGenotypes,

    #[error("no SNP with minor allele frequency >= {0}")]
    NoCommonVariant(f64),

    #[error("too many candidate SNPs for enumeration: {p} > {max}")]
    TooManyVariables { p: usize, max: usize },

    #[error("numerical integration failed: {0}")]
    OracleFailure(String),

    #[error("MCMC produced no kept samples")]
    NoSamples,

    #[error("duplicate sample id `{0}`")]
    DuplicateSampleId(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for failures that originate in numerical routines rather than in
    /// malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateKinship { .. }
                | Error::SingularDesign
                | Error::CollinearEffects
                | Error::PerfectFit
                | Error::OptimizationFailure(_)
                | Error::NoSamples
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
