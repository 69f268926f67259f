//! Smoothness learning from the decay of fitted Fourier coefficients.
//!
//! For every term and dimension the box is narrowed step by step and the
//! energy of the removed frequencies is recorded. While that tail energy
//! stays above the coefficient floor, its decay follows a power law whose
//! exponent is fitted in log-log scale.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_sets::AnovaTerm;
use crate::least_squares::AnovaApproximation;

/// Width of a histogram bin for `log10 |ĝ_k|`.
pub const FLOOR_BIN_DEX: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Floor {
    pub c: f64,
    /// Set when every coefficient is zero; `c` is then 0.
    pub degenerate: bool,
}

/// Most common coefficient magnitude: the centre of the fullest bin of a
/// `log10` histogram. Ties go to the smaller magnitude.
pub fn coefficient_floor_of(coefficients: &[Complex64]) -> Floor {
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for c in coefficients {
        let a = c.norm();
        if a > 0.0 && a.is_finite() {
            *bins.entry((a.log10() / FLOOR_BIN_DEX).floor() as i64).or_default() += 1;
        }
    }
    // BTreeMap iterates upwards, so the first maximum is the smallest bin.
    let mut best: Option<(i64, usize)> = None;
    for (&b, &count) in &bins {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((b, count));
        }
    }
    match best {
        Some((b, _)) => Floor {
            c: 10f64.powf((b as f64 + 0.5) * FLOOR_BIN_DEX),
            degenerate: false,
        },
        None => Floor {
            c: 0.0,
            degenerate: true,
        },
    }
}

pub fn coefficient_floor(approx: &AnovaApproximation) -> Floor {
    coefficient_floor_of(approx.coefficients())
}

/// Largest even bandwidth `m̄` such that `tail(m) > c² · |tail(m)|` for all
/// even `m ≤ m̄`. `profile[h]` holds tail energy and size at bandwidth `2h`.
/// Returns 0 when the condition already fails at `m = 0`.
pub fn cutoff_from_profile(profile: &[(f64, usize)], c: f64) -> usize {
    let c2 = c * c;
    let mut last = None;
    for (h, &(energy, count)) in profile.iter().enumerate() {
        if energy > 0.0 && energy > c2 * count as f64 {
            last = Some(h);
        } else {
            break;
        }
    }
    last.map_or(0, |h| 2 * h)
}

pub fn cutoff(approx: &AnovaApproximation, term: &AnovaTerm, dim: usize, c: f64) -> Result<usize> {
    Ok(cutoff_from_profile(&approx.tail_profile(term, dim)?, c))
}

/// Power law `D i^{-2t}` fitted to `y_1, …, y_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    #[serde(rename = "D")]
    pub constant: f64,
    #[serde(rename = "t")]
    pub rate: f64,
    pub n_points: usize,
}

pub fn harmonic_number(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

/// Weighted least squares of `log y_i` against `log i` with weights
/// `1 / (H_n i)`.
pub fn weighted_loglog_fit(y: &[f64]) -> Result<DecayFit> {
    let n = y.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if let Some(v) = y.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "log-log fit needs positive finite values, got {v}"
        )));
    }
    let h = harmonic_number(n);
    let (mut s_x, mut s_xx, mut s_y, mut s_xy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let i = (i + 1) as f64;
        let w = 1.0 / (h * i);
        let x = i.ln();
        let ly = v.ln();
        s_x += w * x;
        s_xx += w * x * x;
        s_y += w * ly;
        s_xy += w * x * ly;
    }
    let denom = s_xx - s_x * s_x;
    Ok(DecayFit {
        constant: ((s_xx * s_y - s_xy * s_x) / denom).exp(),
        rate: -0.5 * (s_xy - s_x * s_y) / denom,
        n_points: n,
    })
}

/// Learned decay for one ANOVA term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub dims: Vec<usize>,
    /// Dimensions whose estimation succeeded.
    #[serde(rename = "J")]
    pub learned: Vec<usize>,
    #[serde(rename = "D")]
    pub constants: BTreeMap<usize, f64>,
    #[serde(rename = "s")]
    pub rates: BTreeMap<usize, f64>,
    pub cutoff: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    pub floor_c: f64,
    pub terms: Vec<TermEstimate>,
}

impl SmoothnessEstimate {
    pub fn term(&self, term: &AnovaTerm) -> Option<&TermEstimate> {
        self.terms.iter().find(|t| t.dims == term.dims())
    }

    /// Learned rate of `dim` in `term`, if estimation succeeded.
    pub fn rate(&self, term: &AnovaTerm, dim: usize) -> Option<f64> {
        self.term(term)?.rates.get(&dim).copied()
    }

    pub fn constant(&self, term: &AnovaTerm, dim: usize) -> Option<f64> {
        self.term(term)?.constants.get(&dim).copied()
    }
}

struct Probe {
    term: usize,
    dim: usize,
    cutoff: usize,
    fit: Option<DecayFit>,
}

fn probe(approx: &AnovaApproximation, t: usize, term: &AnovaTerm, dim: usize, c: f64) -> Probe {
    let profile = approx
        .tail_profile(term, dim)
        .expect("term and dimension come from the index set");
    let cut = cutoff_from_profile(&profile, c);
    let points = cut / 2 + 1;
    let fit = if cut > 0 && points >= 3 {
        let v: Vec<f64> = profile[..points].iter().map(|p| p.0).collect();
        weighted_loglog_fit(&v)
            .ok()
            .filter(|f| f.rate > 0.0 && f.rate.is_finite() && f.constant.is_finite())
    } else {
        None
    };
    Probe {
        term: t,
        dim,
        cutoff: cut,
        fit,
    }
}

/// Estimates decay constants and rates for every term and dimension.
pub fn learn(approx: &AnovaApproximation) -> SmoothnessEstimate {
    let floor = coefficient_floor(approx);
    learn_with_floor(approx, floor.c)
}

/// [`learn`] with a given floor.
pub fn learn_with_floor(approx: &AnovaApproximation, c: f64) -> SmoothnessEstimate {
    let set = approx.index_set();
    let pairs: Vec<(usize, &AnovaTerm, usize)> = set
        .boxes()
        .iter()
        .enumerate()
        .flat_map(|(t, b)| b.term().dims().iter().map(move |&j| (t, b.term(), j)))
        .collect();
    let probes: Vec<Probe> = pairs
        .par_iter()
        .map(|&(t, term, j)| probe(approx, t, term, j, c))
        .collect();
    let mut terms: Vec<TermEstimate> = set
        .boxes()
        .iter()
        .map(|b| TermEstimate {
            dims: b.term().dims().to_vec(),
            learned: Vec::new(),
            constants: BTreeMap::new(),
            rates: BTreeMap::new(),
            cutoff: BTreeMap::new(),
        })
        .collect();
    for p in probes {
        let te = &mut terms[p.term];
        te.cutoff.insert(p.dim, p.cutoff);
        if let Some(f) = p.fit {
            te.learned.push(p.dim);
            te.constants.insert(p.dim, f.constant);
            te.rates.insert(p.dim, f.rate);
        }
    }
    SmoothnessEstimate { floor_c: c, terms }
}
