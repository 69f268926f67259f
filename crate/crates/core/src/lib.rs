//! Sparse high-dimensional approximation with ANOVA-truncated Fourier bases.
//!
//! Coefficients are fitted by least squares on grouped frequency boxes, the
//! decay of the fitted coefficients gives per-dimension smoothness estimates,
//! and those estimates drive a bandwidth allocation for the next round.

pub mod bandwidth;
pub mod error;
pub mod fourier;
pub mod index_sets;
pub mod least_squares;
pub mod lsqr;
pub mod pipeline;
pub mod sampling;
pub mod smoothness;
pub mod test_functions;

pub use error::{Error, Result};
pub use fourier::{Backend, FourierOperator};
pub use index_sets::{AnovaTerm, BandwidthVector, FrequencyBox, GroupedIndexSet};
pub use sampling::{NoiseMeta, SamplingSet};
