use thiserror::Error;

/// Errors raised across the library.
///
/// Variant names double as the machine-readable error kinds reported by the
/// command-line front end, see [`Error::kind`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("initial vector is not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("matrix is not a sub-generator: {0}")]
    NotASubGenerator(String),
    #[error("sub-generator is singular: {0}")]
    SingularT(String),
    #[error("phase {0} is unreachable or cannot reach absorption")]
    UnreachablePhase(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("argument must be non-negative, got {0}")]
    NegativeArgument(f64),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("assumption (A1) violated: q = 0 and E X_1 = 0")]
    AssumptionA1Violated,
    #[error("matrix is singular")]
    Singular,
    #[error("matrix is not a transition-rate matrix: {0}")]
    NotAGenerator(String),
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("leading polynomial coefficient is zero")]
    DegenerateLeadingCoefficient,
    #[error("sigma = 0: use the compound Poisson solver")]
    SigmaZero,
    #[error("sigma > 0: use the Brownian solver")]
    SigmaPositive,
    #[error("no convergence after {iterations} iterations (last iterate {last}, last gap {gap:e})")]
    MaxIterExceeded { iterations: usize, last: f64, gap: f64 },
    #[error("bad starting value: {0}")]
    BadStart(String),
    #[error("convergence rate is undefined for the explicit solution")]
    ExplicitCase,
    #[error("multiple zeros detected near {0}")]
    MultipleZeros(String),
    #[error("no polynomial root matches Phi_q = {phi} (closest distance {distance:e})")]
    PhiMismatch { phi: f64, distance: f64 },
    #[error("expected {expected} zeros, found {found}")]
    RootCountMismatch { expected: usize, found: usize },
    #[error("levels x and y are both zero")]
    DegenerateLevels,
    #[error("scale function vanishes at the denominator level")]
    ZeroDenominator,
    #[error("process is unstable: E X_1 = {0} <= 0")]
    Unstable(f64),
    #[error("killing rate must be positive, got {0}")]
    NonpositiveQ(f64),
}

impl Error {
    /// Stable identifier of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotADistribution(_) => "NotADistribution",
            Error::NotASubGenerator(_) => "NotASubGenerator",
            Error::SingularT(_) => "SingularT",
            Error::UnreachablePhase(_) => "UnreachablePhase",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NegativeArgument(_) => "NegativeArgument",
            Error::BadParameter(_) => "BadParameter",
            Error::InvalidModel(_) => "InvalidModel",
            Error::AssumptionA1Violated => "AssumptionA1Violated",
            Error::Singular => "Singular",
            Error::NotAGenerator(_) => "NotAGenerator",
            Error::NoConvergence => "NoConvergence",
            Error::DegenerateLeadingCoefficient => "DegenerateLeadingCoefficient",
            Error::SigmaZero => "SigmaZero",
            Error::SigmaPositive => "SigmaPositive",
            Error::MaxIterExceeded { .. } => "MaxIterExceeded",
            Error::BadStart(_) => "BadStart",
            Error::ExplicitCase => "ExplicitCase",
            Error::MultipleZeros(_) => "MultipleZeros",
            Error::PhiMismatch { .. } => "PhiMismatch",
            Error::RootCountMismatch { .. } => "RootCountMismatch",
            Error::DegenerateLevels => "DegenerateLevels",
            Error::ZeroDenominator => "ZeroDenominator",
            Error::Unstable(_) => "Unstable",
            Error::NonpositiveQ(_) => "NonpositiveQ",
        }
    }

    /// True for errors caused by invalid input rather than by a numerical procedure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NotADistribution(_)
                | Error::NotASubGenerator(_)
                | Error::SingularT(_)
                | Error::UnreachablePhase(_)
                | Error::DimensionMismatch(_)
                | Error::NegativeArgument(_)
                | Error::BadParameter(_)
                | Error::InvalidModel(_)
                | Error::AssumptionA1Violated
                | Error::BadStart(_)
                | Error::DegenerateLevels
                | Error::Unstable(_)
                | Error::NonpositiveQ(_)
        )
    }

    /// True for failures of the root-based method.
    pub fn is_root_failure(&self) -> bool {
        matches!(
            self,
            Error::MultipleZeros(_) | Error::PhiMismatch { .. } | Error::RootCountMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
