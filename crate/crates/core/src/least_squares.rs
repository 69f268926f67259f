//! Least-squares fits on grouped index sets, coefficient energies and the
//! fast cross-validation score.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::Backend;
use crate::index_sets::{
    axis_frequency, axis_len, entry_level, set_difference_tail, AnovaTerm, GroupedIndexSet,
};
use crate::lsqr::lsqr;
use crate::sampling::SamplingSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Confidence parameter `t` of the oversampling rule `n ≥ 10|I|(ln|I| + t)`.
    pub oversampling_t: f64,
    pub backend: Backend,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 50,
            rel_tol: 1e-8,
            oversampling_t: 1.0,
            backend: Backend::DirectCached,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if !self.oversampling_t.is_finite() {
            return Err(Error::Config("oversampling_t must be finite".into()));
        }
        Ok(())
    }
}

/// Smallest sample count with logarithmic oversampling for `cardinality`.
pub fn oversampling_threshold(cardinality: usize, t: f64) -> f64 {
    let c = cardinality as f64;
    10.0 * c * (c.ln() + t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    /// `‖L ĝ - y‖ / ‖y‖` (0 for zero data).
    pub relative_residual: f64,
    /// `‖L*(L ĝ - y)‖ / (‖L‖ ‖L ĝ - y‖)` at the last iterate.
    pub normal_residual: f64,
    pub converged: bool,
}

/// A fitted trigonometric polynomial on a grouped index set.
#[derive(Clone, Debug)]
pub struct AnovaApproximation {
    index_set: GroupedIndexSet,
    coefficients: Vec<Complex64>,
    fit: FitDiagnostics,
    backend: Backend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub k: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

/// On-disk form of a fitted approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub index_set: GroupedIndexSet,
    pub coefficients: Vec<CoefficientEntry>,
    pub fit: FitDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub fcv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l2_test_error: Option<f64>,
}

/// Solves `min_ĝ Σ_i |Σ_k ĝ_k exp(2πi⟨k, x_i⟩) - y_i|²` by LSQR.
pub fn fit(
    samples: &SamplingSet,
    index_set: &GroupedIndexSet,
    cfg: &FitConfig,
) -> Result<AnovaApproximation> {
    cfg.validate()?;
    if index_set.is_empty() {
        return Err(Error::Empty("index set has no frequencies"));
    }
    if samples.d() != index_set.d() {
        return Err(Error::DimensionMismatch {
            expected: index_set.d(),
            actual: samples.d(),
        });
    }
    let n = samples.len();
    let threshold = oversampling_threshold(index_set.len(), cfg.oversampling_t);
    if (n as f64) < threshold {
        log::warn!(
            "{n} samples for {} frequencies is below logarithmic oversampling ({threshold:.0})",
            index_set.len()
        );
    }
    let op = cfg.backend.build(samples.points(), index_set)?;
    let sol = lsqr(op.as_ref(), samples.values(), cfg.max_iter, cfg.rel_tol)?;
    let relative_residual = if sol.bnorm > 0.0 {
        sol.rnorm / sol.bnorm
    } else {
        0.0
    };
    let normal_residual = if sol.rnorm > 0.0 && sol.anorm > 0.0 {
        sol.arnorm / (sol.anorm * sol.rnorm)
    } else {
        0.0
    };
    if !sol.converged {
        log::warn!(
            "LSQR stopped after {} iterations without reaching tolerance {}",
            sol.iterations,
            cfg.rel_tol
        );
    }
    Ok(AnovaApproximation {
        index_set: index_set.clone(),
        coefficients: sol.x,
        fit: FitDiagnostics {
            iterations: sol.iterations,
            relative_residual,
            normal_residual,
            converged: sol.converged,
        },
        backend: cfg.backend,
    })
}

impl AnovaApproximation {
    /// Wraps given coefficients, e.g. a planted polynomial.
    pub fn from_coefficients(
        index_set: GroupedIndexSet,
        coefficients: Vec<Complex64>,
    ) -> Result<Self> {
        if coefficients.len() != index_set.len() {
            return Err(Error::DimensionMismatch {
                expected: index_set.len(),
                actual: coefficients.len(),
            });
        }
        Ok(AnovaApproximation {
            index_set,
            coefficients,
            fit: FitDiagnostics {
                iterations: 0,
                relative_residual: 0.0,
                normal_residual: 0.0,
                converged: true,
            },
            backend: Backend::default(),
        })
    }

    pub fn index_set(&self) -> &GroupedIndexSet {
        &self.index_set
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn fit_diagnostics(&self) -> &FitDiagnostics {
        &self.fit
    }

    /// Values of the polynomial at `points` (row-major).
    pub fn evaluate(&self, points: &[f64]) -> Result<Vec<Complex64>> {
        let op = self.backend.build(points, &self.index_set)?;
        let mut out = vec![Complex64::new(0.0, 0.0); op.n_points()];
        op.forward(&self.coefficients, &mut out)?;
        Ok(out)
    }

    /// `y - g(x)` at the sample points.
    pub fn residuals(&self, samples: &SamplingSet) -> Result<Vec<Complex64>> {
        let g = self.evaluate(samples.points())?;
        Ok(samples.values().iter().zip(g).map(|(y, g)| y - g).collect())
    }

    /// `Σ_k |ĝ_k|²` over all frequencies.
    pub fn total_energy(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `|ĝ_0|²`, zero without a constant frequency.
    pub fn constant_energy(&self) -> f64 {
        if self.index_set.has_constant() {
            self.coefficients[0].norm_sqr()
        } else {
            0.0
        }
    }

    /// Squared norm of one ANOVA component.
    pub fn group_energy(&self, term: &AnovaTerm) -> Result<f64> {
        let i = self
            .index_set
            .term_index(term)
            .ok_or_else(|| Error::UnknownTerm(term.dims().to_vec()))?;
        Ok(self.coefficients[self.index_set.box_range(i)]
            .iter()
            .map(|c| c.norm_sqr())
            .sum())
    }

    /// Energy of the frequencies removed when dimension `dim` of `term` is
    /// narrowed to bandwidth `m_new`.
    pub fn tail_energy(&self, term: &AnovaTerm, dim: usize, m_new: usize) -> Result<f64> {
        let varied = self.index_set.varied_set(term, dim, m_new)?;
        Ok(set_difference_tail(&self.index_set, &varied)?
            .into_iter()
            .map(|p| self.coefficients[p].norm_sqr())
            .sum())
    }

    /// Tail energies and tail sizes for every narrowing of `dim` in `term`.
    ///
    /// Entry `h` corresponds to bandwidth `2h`, for `h = 0, …, m/2`; the last
    /// entry is always `(0, 0)`. One pass over the box.
    pub fn tail_profile(&self, term: &AnovaTerm, dim: usize) -> Result<Vec<(f64, usize)>> {
        let i = self
            .index_set
            .term_index(term)
            .ok_or_else(|| Error::UnknownTerm(term.dims().to_vec()))?;
        let pos = term.position(dim).ok_or(Error::InvalidTerm {
            dims: term.dims().to_vec(),
            reason: "probed dimension is not part of the term",
        })?;
        let bws = self.index_set.boxes()[i].bandwidths();
        let m = bws[pos];
        let width = axis_len(m);
        let stride: usize = bws[pos + 1..].iter().map(|&b| axis_len(b)).product();
        let mut level = vec![(0.0, 0usize); m / 2 + 1];
        for (idx, c) in self.coefficients[self.index_set.box_range(i)].iter().enumerate() {
            let k = axis_frequency(m, (idx / stride) % width);
            let q = entry_level(k);
            level[q].0 += c.norm_sqr();
            level[q].1 += 1;
        }
        // tail(2h) collects the levels above h.
        let mut out = vec![(0.0, 0usize); m / 2 + 1];
        let mut acc = (0.0, 0usize);
        for h in (0..m / 2).rev() {
            acc.0 += level[h + 1].0;
            acc.1 += level[h + 1].1;
            out[h] = acc;
        }
        Ok(out)
    }

    /// Coefficients keyed by frequency, in enumeration order.
    pub fn coefficient_dump(&self) -> Vec<CoefficientEntry> {
        self.index_set
            .frequencies()
            .zip(&self.coefficients)
            .map(|(k, c)| CoefficientEntry {
                k,
                re: c.re,
                im: c.im,
            })
            .collect()
    }

    /// Rebuilds an approximation from a dump over the given index set.
    pub fn from_dump(index_set: GroupedIndexSet, dump: &[CoefficientEntry]) -> Result<Self> {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); index_set.len()];
        if dump.len() != index_set.len() {
            return Err(Error::DimensionMismatch {
                expected: index_set.len(),
                actual: dump.len(),
            });
        }
        for e in dump {
            let p = index_set.position(&e.k).ok_or_else(|| {
                Error::InvalidSamples(format!("frequency {:?} not in the index set", e.k))
            })?;
            coeffs[p] = Complex64::new(e.re, e.im);
        }
        Self::from_coefficients(index_set, coeffs)
    }

    pub fn to_saved(&self) -> SavedModel {
        SavedModel {
            index_set: self.index_set.clone(),
            coefficients: self.coefficient_dump(),
            fit: self.fit,
        }
    }

    pub fn from_saved(saved: SavedModel) -> Result<Self> {
        let mut a = Self::from_dump(saved.index_set, &saved.coefficients)?;
        a.fit = saved.fit;
        Ok(a)
    }

    pub fn report(&self, fcv: Option<f64>, l2_test_error: Option<f64>) -> FitReport {
        FitReport {
            iterations: self.fit.iterations,
            relative_residual: self.fit.relative_residual,
            fcv,
            l2_test_error,
        }
    }
}

/// Fast leave-one-out surrogate `(1/n) Σ |g(x_i) - y_i|² / (1 - |I|/n)²`.
pub fn fcv_score(approx: &AnovaApproximation, samples: &SamplingSet) -> Result<f64> {
    let n = samples.len();
    let card = approx.index_set().len();
    if card >= n {
        return Err(Error::UndefinedScore {
            cardinality: card,
            n,
        });
    }
    let res = approx.residuals(samples)?;
    let mse = res.iter().map(|r| r.norm_sqr()).sum::<f64>() / n as f64;
    let shrink = 1.0 - card as f64 / n as f64;
    Ok(mse / (shrink * shrink))
}

/// Uniform random points with exact function values, reused across fits.
#[derive(Clone, Debug)]
pub struct TestSet {
    d: usize,
    points: Vec<f64>,
    values: Vec<f64>,
}

impl TestSet {
    pub fn uniform<F>(f: F, d: usize, n_test: usize, seed: u64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        if n_test == 0 {
            return Err(Error::Empty("n_test must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<f64> = (0..n_test * d).map(|_| rng.random::<f64>()).collect();
        let values = points.par_chunks_exact(d).map(&f).collect();
        Ok(TestSet { d, points, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Monte Carlo `‖f - g‖_{L2}`.
    pub fn l2_error(&self, approx: &AnovaApproximation) -> Result<f64> {
        if approx.index_set().d() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: approx.index_set().d(),
            });
        }
        // Bounded batches keep the operator tables small.
        const BATCH: usize = 1 << 17;
        let mut sum = 0.0;
        for (pts, vals) in self
            .points
            .chunks(BATCH * self.d)
            .zip(self.values.chunks(BATCH))
        {
            let g = approx.evaluate(pts)?;
            sum += g
                .iter()
                .zip(vals)
                .map(|(g, &f)| (Complex64::new(f, 0.0) - g).norm_sqr())
                .sum::<f64>();
        }
        Ok((sum / self.len() as f64).sqrt())
    }
}

/// Monte Carlo `‖f - g‖_{L2}` on `n_test` seeded uniform points.
pub fn l2_test_error<F>(approx: &AnovaApproximation, f: F, n_test: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    TestSet::uniform(f, approx.index_set().d(), n_test, seed)?.l2_error(approx)
}
