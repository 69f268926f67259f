//! Matrix-free application of the nonequispaced Fourier matrix
//! `L = [exp(2πi⟨k, x_i⟩)]` over a [`GroupedIndexSet`] and of its adjoint.

mod direct;
mod naive;

use std::f64::consts::TAU;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_sets::GroupedIndexSet;

pub use direct::DirectOperator;
pub use naive::NaiveOperator;

/// A linear map from coefficients on an index set to values at fixed points.
pub trait FourierOperator: Send + Sync {
    fn n_points(&self) -> usize;

    fn n_coefficients(&self) -> usize;

    /// `out_i = Σ_k c_k exp(2πi⟨k, x_i⟩)`.
    fn forward(&self, coeffs: &[Complex64], out: &mut [Complex64]) -> Result<()>;

    /// `out_k = Σ_i conj(exp(2πi⟨k, x_i⟩)) r_i`.
    fn adjoint(&self, values: &[Complex64], out: &mut [Complex64]) -> Result<()>;

    fn check_forward(&self, coeffs: &[Complex64], out: &[Complex64]) -> Result<()> {
        check_len(self.n_coefficients(), coeffs.len())?;
        check_len(self.n_points(), out.len())
    }

    fn check_adjoint(&self, values: &[Complex64], out: &[Complex64]) -> Result<()> {
        check_len(self.n_points(), values.len())?;
        check_len(self.n_coefficients(), out.len())
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Evaluation strategy for the operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Per-dimension exponential tables with blocked tensor contractions.
    #[default]
    DirectCached,
    /// One complex exponential per matrix entry. Reference only.
    Naive,
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::DirectCached => "direct-cached",
            Backend::Naive => "naive",
        }
    }

    /// Builds the operator for `points` (row-major, width `index_set.d()`).
    pub fn build<'a>(
        &self,
        points: &'a [f64],
        index_set: &'a GroupedIndexSet,
    ) -> Result<Box<dyn FourierOperator + 'a>> {
        let d = index_set.d();
        if d == 0 || points.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: points.len(),
            });
        }
        if points.is_empty() {
            return Err(Error::Empty("operator needs at least one point"));
        }
        Ok(match self {
            Backend::DirectCached => Box::new(DirectOperator::new(points, index_set)),
            Backend::Naive => Box::new(NaiveOperator::new(points, index_set)),
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct-cached" => Ok(Backend::DirectCached),
            "naive" => Ok(Backend::Naive),
            "grouped-fft" => Err(Error::UnavailableBackend(s.to_string())),
            other => Err(Error::UnknownBackend(other.to_string())),
        }
    }
}

/// Parses a backend name.
pub fn backend_select(name: &str) -> Result<Backend> {
    name.parse()
}

/// `L c` with the default backend.
pub fn forward(
    points: &[f64],
    index_set: &GroupedIndexSet,
    coeffs: &[Complex64],
) -> Result<Vec<Complex64>> {
    let op = Backend::default().build(points, index_set)?;
    let mut out = vec![Complex64::new(0.0, 0.0); op.n_points()];
    op.forward(coeffs, &mut out)?;
    Ok(out)
}

/// `L* r` with the default backend.
pub fn adjoint(
    points: &[f64],
    index_set: &GroupedIndexSet,
    values: &[Complex64],
) -> Result<Vec<Complex64>> {
    let op = Backend::default().build(points, index_set)?;
    let mut out = vec![Complex64::new(0.0, 0.0); op.n_coefficients()];
    op.adjoint(values, &mut out)?;
    Ok(out)
}

/// Fractional part of `k·x` in `[-1/2, 1/2]`, keeping the rounding error of
/// the product so that large frequencies keep full phase accuracy.
#[inline]
pub(crate) fn reduced_turns(k: f64, x: f64) -> f64 {
    let hi = k * x;
    let lo = k.mul_add(x, -hi);
    (hi - hi.round()) + lo
}

/// `exp(2πi t)`.
#[inline]
pub(crate) fn cis_turns(t: f64) -> Complex64 {
    let (s, c) = (TAU * t).sin_cos();
    Complex64::new(c, s)
}
