//! File formats: network weights, run configuration and CSV tables.

mod config;
mod table;
mod weights;

pub use config::{OutputPaths, RunConfig};
pub use table::{coordinate_columns, format_number, Table};
pub use weights::{FieldHeader, LayerRecord, Standardisation, WeightsFile, WEIGHTS_FORMAT};
