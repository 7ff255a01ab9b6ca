use thiserror::Error;

use crate::diff::Primitive;

pub type Result<T> = std::result::Result<T, GeoError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("non-finite intermediate in primitive `{primitive}`")]
    Domain { primitive: Primitive },

    #[error("non-finite derivative produced while evaluating jets")]
    NonFinite,

    #[error(
        "degenerate metric at {point:?}: smallest singular value of the Jacobian is {sigma_min:e}"
    )]
    DegenerateMetric { point: Vec<f64>, sigma_min: f64 },

    #[error("ill-conditioned metric at {point:?}: reciprocal condition number {rcond:e}")]
    IllConditioned { point: Vec<f64>, rcond: f64 },

    #[error("failure at lambda = {lambda}: {source}")]
    AlongPath {
        lambda: f64,
        #[source]
        source: Box<GeoError>,
    },

    #[error("integration blew up at step {step} (lambda = {lambda})")]
    BlowUp { step: usize, lambda: f64 },

    #[error("relative energy drift {drift:e} exceeds bound {bound:e}")]
    EnergyDrift { drift: f64, bound: f64 },

    #[error("residual evaluation failed: {0}")]
    ResidualEvaluation(Box<GeoError>),

    #[error(
        "shooting did not converge in {iterations} iterations (best residual {best_residual:e})"
    )]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("shooting Jacobian is singular; retry with a different seed")]
    SingularJacobian,

    #[error("no geodesic found: all {seeds} shooting seeds failed")]
    NoGeodesic { seeds: usize },

    #[error("non-finite loss at epoch {epoch}, sample {sample}")]
    Training { epoch: usize, sample: usize },

    #[error("Metropolis-Hastings acceptance rate {rate:.4} is below 1%; reduce proposal_sigma")]
    LowAcceptance { rate: f64 },

    #[error("empty sample set: {0}")]
    EmptySampleSet(String),

    #[error("point {point:?} lies within {radius:e} of the source, where the field is not smooth")]
    NonSmoothPoint { point: Vec<f64>, radius: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl GeoError {
    /// Numeric failures: blow-up, degenerate metric, non-finite values.
    pub fn is_numeric(&self) -> bool {
        match self {
            GeoError::Domain { .. }
            | GeoError::NonFinite
            | GeoError::DegenerateMetric { .. }
            | GeoError::IllConditioned { .. }
            | GeoError::BlowUp { .. }
            | GeoError::EnergyDrift { .. }
            | GeoError::Training { .. }
            | GeoError::NonSmoothPoint { .. }
            | GeoError::SingularJacobian => true,
            GeoError::AlongPath { source, .. } => source.is_numeric(),
            GeoError::ResidualEvaluation(inner) => inner.is_numeric(),
            _ => false,
        }
    }

    pub fn is_non_convergence(&self) -> bool {
        matches!(
            self,
            GeoError::NonConvergence { .. }
                | GeoError::NoGeodesic { .. }
                | GeoError::LowAcceptance { .. }
        )
    }

    pub(crate) fn at_lambda(self, lambda: f64) -> GeoError {
        match self {
            e @ (GeoError::AlongPath { .. } | GeoError::BlowUp { .. }) => e,
            e => GeoError::AlongPath {
                lambda,
                source: Box::new(e),
            },
        }
    }
}

impl From<std::io::Error> for GeoError {
    fn from(e: std::io::Error) -> Self {
        GeoError::Io(e.to_string())
    }
}
