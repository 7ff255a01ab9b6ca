//! Immersions and the geometry they induce on their chart: metric, Christoffel
//! symbols, covariant derivatives and volume distortion.

mod immersion;
mod metric;

pub use immersion::{
    load_decoder, peaks_height, DomainBox, Euclidean, Immersion, ManifoldSpec, MlpDecoder, Peaks,
    Sphere, SPHERE_POLE_MARGIN,
};
pub(crate) use metric::quadratic;
pub use metric::{
    christoffel, christoffel_derivatives, christoffel_from_jet, covariant_derivative,
    induced_metric, magnification_factor, metric_jet, ChristoffelSymbols, MetricJet, MetricTensor,
    MIN_RCOND, MIN_SINGULAR_VALUE,
};
