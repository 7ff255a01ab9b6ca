//! Forward-mode differentiation over chart coordinates and parameter
//! gradients for losses built from input derivatives of a network.

mod jet;
mod paramgrad;

pub use jet::{pair_count, pair_index, triple_index, Jet, Primitive, MAX_ORDER, MAX_VARS};
pub use paramgrad::{loss_parameter_gradient, JetBatch, JetLayout, JetLoss, ParamGradient};

use crate::error::{GeoError, Result};

/// Evaluate `f` at `point` with every coordinate seeded as a jet variable,
/// tracking derivatives up to `order`.
///
/// Any primitive that produced a non-finite value is reported by name.
pub fn evaluate_with_jets<F>(f: F, point: &[f64], order: usize) -> Result<Vec<Jet>>
where
    F: FnOnce(&[Jet]) -> Vec<Jet>,
{
    let vars = point.len();
    if vars > MAX_VARS {
        return Err(GeoError::InvalidArgument(format!(
            "{vars} variables exceeds the jet limit of {MAX_VARS}"
        )));
    }
    if order > MAX_ORDER {
        return Err(GeoError::InvalidArgument(format!(
            "derivative order {order} exceeds {MAX_ORDER}"
        )));
    }
    let seeds = seed(point, order);
    let out = f(&seeds);
    check_outputs(&out)?;
    Ok(out)
}

/// Seed each coordinate of `point` as an independent jet variable.
pub fn seed(point: &[f64], order: usize) -> Vec<Jet> {
    let vars = point.len();
    point
        .iter()
        .enumerate()
        .map(|(i, &x)| Jet::variable(x, i, vars, order))
        .collect()
}

pub(crate) fn check_outputs(out: &[Jet]) -> Result<()> {
    for j in out {
        if let Some(primitive) = j.fault() {
            return Err(GeoError::Domain { primitive });
        }
    }
    if out.iter().any(|j| !j.is_finite()) {
        return Err(GeoError::NonFinite);
    }
    Ok(())
}
