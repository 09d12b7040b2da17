//! Core data plane for mapping urban formality from satellite imagery.
//!
//! * [`typology`]: the 4×4 building-diversity × street-pattern matrix, its
//!   collapse into four formality classes and their colors.
//! * [`tilemath`]: Web-Mercator ground resolution, pixel and quadkey math.
//! * [`raster`]: imagery and label rasters, color encoding, masking,
//!   histograms, class weights and file I/O.
//! * [`windowing`]: train/test split, overlap gridding, tile extraction and
//!   stitching.
//! * [`metrics`]: confusion matrices, accuracy, IoU, precision and recall.
//!
//! Numeric code is generic over [`Scalar`]/[`Float`]; the aliases below fix
//! the common instantiations.

pub mod metrics;
pub mod raster;
pub mod scalar;
pub mod tilemath;
pub mod typology;
pub mod windowing;

pub use num_rational::{BigRational, Rational64};
pub use scalar::{Float, Scalar};

/// Exact rational, used where results must compare equal without tolerance.
/// Arbitrary precision, so pixel counts of any realistic size cannot overflow.
pub type Exact = BigRational;

pub type GeoPoint = tilemath::GeoPoint<f64>;
pub type MetricsReport = metrics::MetricsReport<f64>;
pub type ExactMetricsReport = metrics::MetricsReport<Exact>;
pub type ClassWeights = raster::ClassWeights<f64>;
pub type ExactClassWeights = raster::ClassWeights<Exact>;
