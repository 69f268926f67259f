//! Allocation of a frequency budget to per-term boxes.
//!
//! Given decay constants `C` and rates `s`, the box sizes minimizing
//! `Σ_u max_j C_{u,j} (m_{u,j} - 1)^{-2 s_{u,j}}` under
//! `Σ_u Π_j (m_{u,j} - 1) = m - 1` have a closed form in terms of one
//! Lagrange multiplier `λ`, which solves a scalar monotone equation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_sets::{AnovaTerm, BandwidthVector, GroupedIndexSet};

pub const DEFAULT_MIN_BANDWIDTH: usize = 4;
const MAX_BISECTION_STEPS: usize = 200;
const LAMBDA_REL_TOL: f64 = 1e-10;

/// A dimension whose decay was learned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedDim {
    pub dim: usize,
    #[serde(rename = "C")]
    pub constant: f64,
    pub s: f64,
}

/// A dimension whose bandwidth is held fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedDim {
    pub dim: usize,
    pub bandwidth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermAllocation {
    pub term: AnovaTerm,
    pub learned: Vec<LearnedDim>,
    pub fixed: Vec<FixedDim>,
}

impl TermAllocation {
    /// Every dimension of `term` learned with `C = constant`, `s = rate`.
    pub fn uniform(term: AnovaTerm, constant: f64, rate: f64) -> Self {
        let learned = term
            .dims()
            .iter()
            .map(|&dim| LearnedDim {
                dim,
                constant,
                s: rate,
            })
            .collect();
        TermAllocation {
            term,
            learned,
            fixed: Vec::new(),
        }
    }

    fn learned_at(&self, dim: usize) -> Option<&LearnedDim> {
        self.learned.iter().find(|l| l.dim == dim)
    }

    fn fixed_at(&self, dim: usize) -> Option<usize> {
        self.fixed.iter().find(|f| f.dim == dim).map(|f| f.bandwidth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub d: usize,
    /// Total number of frequencies, the constant included.
    pub budget: usize,
    pub terms: Vec<TermAllocation>,
    #[serde(default = "default_min_bandwidth")]
    pub min_bandwidth: usize,
}

fn default_min_bandwidth() -> usize {
    DEFAULT_MIN_BANDWIDTH
}

impl AllocationProblem {
    /// All dimensions learned with `C = 1`, `s = 1`.
    pub fn uniform(d: usize, terms: &[AnovaTerm], budget: usize) -> Self {
        AllocationProblem {
            d,
            budget,
            terms: terms
                .iter()
                .map(|t| TermAllocation::uniform(t.clone(), 1.0, 1.0))
                .collect(),
            min_bandwidth: DEFAULT_MIN_BANDWIDTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget < 2 {
            return Err(Error::Config(format!("budget {} is below 2", self.budget)));
        }
        if self.min_bandwidth < 2 || self.min_bandwidth % 2 != 0 {
            return Err(Error::Config(format!(
                "min_bandwidth {} must be even and at least 2",
                self.min_bandwidth
            )));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if t.term.is_empty() {
                return Err(Error::DegenerateTerm(Vec::new()));
            }
            if self.terms[..i].iter().any(|o| o.term == t.term) {
                return Err(Error::DuplicateTerm(t.term.dims().to_vec()));
            }
            if let Some(&j) = t.term.dims().iter().find(|&&j| j >= self.d) {
                return Err(Error::InvalidTerm {
                    dims: vec![j],
                    reason: "dimension out of range",
                });
            }
            for &j in t.term.dims() {
                let n_learned = t.learned.iter().filter(|l| l.dim == j).count();
                let n_fixed = t.fixed.iter().filter(|f| f.dim == j).count();
                if n_learned + n_fixed != 1 {
                    return Err(Error::InvalidTerm {
                        dims: t.term.dims().to_vec(),
                        reason: "each dimension must be either learned or fixed exactly once",
                    });
                }
            }
            if t.learned.len() + t.fixed.len() != t.term.len() {
                return Err(Error::InvalidTerm {
                    dims: t.term.dims().to_vec(),
                    reason: "allocation names a dimension outside the term",
                });
            }
            for l in &t.learned {
                if !(l.constant > 0.0 && l.constant.is_finite() && l.s > 0.0 && l.s.is_finite()) {
                    return Err(Error::Config(format!(
                        "term {}: C = {} and s = {} must be positive and finite",
                        t.term, l.constant, l.s
                    )));
                }
            }
            for f in &t.fixed {
                if f.bandwidth < 2 || f.bandwidth % 2 != 0 {
                    return Err(Error::InvalidBandwidth {
                        dim: f.dim,
                        value: f.bandwidth,
                        reason: "fixed bandwidths must be even and at least 2",
                    });
                }
            }
        }
        let minimal = 1 + self
            .terms
            .iter()
            .map(|t| minimal_box(t, self.min_bandwidth))
            .sum::<usize>();
        if minimal > self.budget {
            return Err(Error::Infeasible(format!(
                "minimal boxes need {minimal} frequencies, budget is {}",
                self.budget
            )));
        }
        Ok(())
    }
}

fn minimal_box(t: &TermAllocation, min_bw: usize) -> usize {
    t.term
        .dims()
        .iter()
        .map(|&j| t.fixed_at(j).unwrap_or(min_bw) - 1)
        .product()
}

/// `A_u = ½ Σ_{j learned} 1/s_j` and `B_u` (kept as `ln B_u`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermConstants {
    pub a: f64,
    pub log_b: f64,
}

impl TermConstants {
    pub fn b(&self) -> f64 {
        self.log_b.exp()
    }

    /// Box size `B^{1/(1+A)} (λA)^{-A/(1+A)}` at `ln λ = mu`; `B` when `A = 0`.
    pub fn box_size(&self, mu: f64) -> f64 {
        if self.a == 0.0 {
            self.b()
        } else {
            ((self.log_b - self.a * (mu + self.a.ln())) / (1.0 + self.a)).exp()
        }
    }
}

pub fn reduce_constants(problem: &AllocationProblem) -> Result<Vec<TermConstants>> {
    problem
        .terms
        .iter()
        .map(|t| {
            if t.learned.is_empty() && t.fixed.is_empty() {
                return Err(Error::DegenerateTerm(t.term.dims().to_vec()));
            }
            let a = 0.5 * t.learned.iter().map(|l| 1.0 / l.s).sum::<f64>();
            let log_b = t
                .learned
                .iter()
                .map(|l| l.constant.ln() / (2.0 * l.s))
                .sum::<f64>()
                + t.fixed
                    .iter()
                    .map(|f| ((f.bandwidth - 1) as f64).ln())
                    .sum::<f64>();
            Ok(TermConstants { a, log_b })
        })
        .collect()
}

/// Left-hand side of the multiplier equation at `ln λ = mu`.
pub fn lambda_equation_lhs(constants: &[TermConstants], mu: f64) -> f64 {
    constants.iter().map(|c| c.box_size(mu)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSolution {
    pub lambda: f64,
    pub log_lambda: f64,
    /// `|lhs - (m - 1)| / (m - 1)` at the root.
    pub relative_residual: f64,
}

/// Solves `Σ_u B_u^{1/(1+A_u)} (λ A_u)^{-A_u/(1+A_u)} = m - 1` by bisection
/// in `ln λ`. The left side is strictly decreasing in `λ`.
pub fn solve_lambda(constants: &[TermConstants], budget: usize) -> Result<LambdaSolution> {
    if budget < 2 {
        return Err(Error::Config(format!("budget {budget} is below 2")));
    }
    if constants.iter().all(|c| c.a == 0.0) {
        return Err(Error::Solver("no learned dimension to allocate".into()));
    }
    let target = (budget - 1) as f64;
    let fixed: f64 = constants.iter().filter(|c| c.a == 0.0).map(|c| c.b()).sum();
    if fixed >= target {
        return Err(Error::Infeasible(format!(
            "fixed boxes already use {fixed} of {target} frequencies"
        )));
    }
    let f = |mu: f64| lambda_equation_lhs(constants, mu) - target;
    let (mut lo, mut hi) = (1e-30f64.ln(), 1e30f64.ln());
    let mut expansions = 0;
    while !(f(lo) > 0.0 && f(hi) < 0.0) {
        if expansions == 64 {
            return Err(Error::Solver(format!(
                "could not bracket the root: f({lo:.3e}) = {:.3e}, f({hi:.3e}) = {:.3e}",
                f(lo),
                f(hi)
            )));
        }
        let width = hi - lo;
        if f(lo) <= 0.0 {
            lo -= width;
        }
        if f(hi) >= 0.0 {
            hi += width;
        }
        expansions += 1;
    }
    let mut mu = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTION_STEPS {
        mu = 0.5 * (lo + hi);
        let v = f(mu);
        if v.abs() <= 1e-3 * LAMBDA_REL_TOL * target || mu == lo || mu == hi {
            break;
        }
        if v > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
    }
    let relative_residual = f(mu).abs() / target;
    if !(relative_residual <= LAMBDA_REL_TOL) {
        return Err(Error::Solver(format!(
            "bisection stalled at ln λ = {mu}, relative residual {relative_residual:.3e}"
        )));
    }
    Ok(LambdaSolution {
        lambda: mu.exp(),
        log_lambda: mu,
        relative_residual,
    })
}

/// Real-valued bandwidths `m_{u,j} = (C_{u,j} / (λ A_u B_u)^{1/(1+A_u)})^{1/(2 s_{u,j})} + 1`
/// for learned dimensions, in term-dimension order. Fixed dimensions pass through.
pub fn bandwidths_from_lambda(
    problem: &AllocationProblem,
    constants: &[TermConstants],
    log_lambda: f64,
) -> Vec<Vec<f64>> {
    problem
        .terms
        .iter()
        .zip(constants)
        .map(|(t, c)| {
            let log_z = if c.a > 0.0 {
                (log_lambda + c.a.ln() + c.log_b) / (1.0 + c.a)
            } else {
                0.0
            };
            t.term
                .dims()
                .iter()
                .map(|&j| match t.learned_at(j) {
                    Some(l) => ((l.constant.ln() - log_z) / (2.0 * l.s)).exp() + 1.0,
                    None => t.fixed_at(j).expect("validated") as f64,
                })
                .collect()
        })
        .collect()
}

/// `Σ_u Π_j (m_{u,j} - 1)` for real bandwidths.
pub fn continuous_cardinality(continuous: &[Vec<f64>]) -> f64 {
    continuous
        .iter()
        .map(|b| b.iter().map(|m| m - 1.0).product::<f64>())
        .sum()
}

/// `1 + Σ_u Π_j (m_{u,j} - 1)`.
pub fn realized_cardinality(bandwidths: &[Vec<usize>]) -> usize {
    1 + bandwidths
        .iter()
        .map(|b| b.iter().map(|m| m.saturating_sub(1)).product::<usize>())
        .sum::<usize>()
}

fn decay(l: &LearnedDim, m: usize) -> f64 {
    l.constant * ((m - 1) as f64).powf(-2.0 * l.s)
}

fn box_without(bw: &[usize], pos: usize) -> usize {
    bw.iter()
        .enumerate()
        .filter(|&(p, _)| p != pos)
        .map(|(_, &m)| m - 1)
        .product()
}

/// Rounds to even bandwidths and repairs the budget greedily.
///
/// Learned dimensions go to the nearest even value `≥ min_bandwidth`. While
/// over budget, the step down with the smallest increase of
/// `C (m - 1)^{-2s}` is taken; then steps up with the largest decrease are
/// taken while they fit. A last step up is taken when it lands closer to the
/// budget than staying below it. Ties go to the first term, then the first
/// dimension.
pub fn round_and_repair(
    problem: &AllocationProblem,
    continuous: &[Vec<f64>],
) -> Result<Vec<Vec<usize>>> {
    problem.validate()?;
    let min_bw = problem.min_bandwidth;
    let cap = problem.budget.max(min_bw);
    let mut bw: Vec<Vec<usize>> = problem
        .terms
        .iter()
        .zip(continuous)
        .map(|(t, cont)| {
            t.term
                .dims()
                .iter()
                .zip(cont)
                .map(|(&j, &x)| match t.fixed_at(j) {
                    Some(m) => m,
                    None => {
                        let x = if x.is_finite() { x.min(cap as f64) } else { cap as f64 };
                        (2 * ((x / 2.0).round() as usize)).clamp(min_bw, cap + cap % 2)
                    }
                })
                .collect()
        })
        .collect();

    // Learned (term, position) pairs in tie-break order.
    let slots: Vec<(usize, usize, &LearnedDim)> = problem
        .terms
        .iter()
        .enumerate()
        .flat_map(|(u, t)| {
            t.term
                .dims()
                .iter()
                .enumerate()
                .filter_map(move |(p, &j)| t.learned_at(j).map(|l| (u, p, l)))
        })
        .collect();

    let budget = problem.budget;
    let mut card = realized_cardinality(&bw);
    while card > budget {
        let mut best: Option<(f64, usize, usize)> = None;
        for &(u, p, l) in &slots {
            let m = bw[u][p];
            if m < min_bw + 2 {
                continue;
            }
            let cost = decay(l, m - 2) - decay(l, m);
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, u, p));
            }
        }
        let (_, u, p) = best.ok_or_else(|| {
            Error::Infeasible(format!("cannot shrink below {card} frequencies"))
        })?;
        card -= 2 * box_without(&bw[u], p);
        bw[u][p] -= 2;
    }

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for &(u, p, l) in &slots {
            let step = 2 * box_without(&bw[u], p);
            if card + step > budget {
                continue;
            }
            let m = bw[u][p];
            let gain = decay(l, m) - decay(l, m + 2);
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, u, p));
            }
        }
        match best {
            Some((_, u, p)) => {
                card += 2 * box_without(&bw[u], p);
                bw[u][p] += 2;
            }
            None => break,
        }
    }

    let gap = budget - card;
    let mut best: Option<(usize, f64, usize, usize)> = None;
    for &(u, p, l) in &slots {
        let over = 2 * box_without(&bw[u], p) - gap;
        if over >= gap {
            continue;
        }
        let m = bw[u][p];
        let gain = decay(l, m) - decay(l, m + 2);
        let better = match best {
            None => true,
            Some((o, g, _, _)) => over < o || (over == o && gain > g),
        };
        if better {
            best = Some((over, gain, u, p));
        }
    }
    if let Some((_, _, u, p)) = best {
        bw[u][p] += 2;
    }
    Ok(bw)
}

/// Per-term real-valued solution, aligned with the term's dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousBox {
    pub dims: Vec<usize>,
    pub bandwidths: Vec<f64>,
}

/// Even bandwidths for every term plus the multiplier that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    #[serde(flatten)]
    pub index_set: GroupedIndexSet,
    pub realized_cardinality: usize,
    pub budget: usize,
    /// `None` when no dimension was learned.
    pub lambda: Option<f64>,
    pub log_lambda: Option<f64>,
    pub continuous: Vec<ContinuousBox>,
}

impl BandwidthPlan {
    pub fn bandwidths_of(&self, term: &AnovaTerm) -> Option<&[usize]> {
        self.index_set.bandwidths_of(term)
    }
}

/// Continuous solution, rounding and repair in one go.
pub fn optimize(problem: &AllocationProblem) -> Result<BandwidthPlan> {
    problem.validate()?;
    let constants = reduce_constants(problem)?;
    let (lambda, continuous) = if constants.iter().any(|c| c.a > 0.0) {
        let sol = solve_lambda(&constants, problem.budget)?;
        (
            Some(sol),
            bandwidths_from_lambda(problem, &constants, sol.log_lambda),
        )
    } else {
        (None, bandwidths_from_lambda(problem, &constants, 0.0))
    };
    let bw = round_and_repair(problem, &continuous)?;
    let terms = problem
        .terms
        .iter()
        .zip(&bw)
        .map(|(t, b)| Ok((t.term.clone(), BandwidthVector::new(b.clone())?)))
        .collect::<Result<Vec<_>>>()?;
    let index_set = GroupedIndexSet::new(problem.d, terms, true)?;
    Ok(BandwidthPlan {
        realized_cardinality: index_set.len(),
        index_set,
        budget: problem.budget,
        lambda: lambda.map(|s| s.lambda),
        log_lambda: lambda.map(|s| s.log_lambda),
        continuous: problem
            .terms
            .iter()
            .zip(continuous)
            .map(|(t, b)| ContinuousBox {
                dims: t.term.dims().to_vec(),
                bandwidths: b,
            })
            .collect(),
    })
}

/// Base of the logarithm in the budget rule `m log m = n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Binary,
    Decimal,
}

impl LogBase {
    pub fn log(&self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Binary => x.log2(),
            LogBase::Decimal => x.log10(),
        }
    }
}

/// Largest integer `m ≥ 1` with `m log m ≤ n`.
pub fn plan_budget(n: f64, base: LogBase) -> usize {
    let g = |m: usize| (m as f64) * base.log(m as f64);
    let mut lo = 1usize;
    let mut hi = 2usize;
    while g(hi) <= n {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if g(mid) <= n {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Worst squared `L2` error of projecting the unit ball of the anisotropic
/// Sobolev space onto the full box `[-m_j/2, m_j/2)^d`:
/// `max_j (m_j/2)^{-2 s_j}`.
pub fn box_projection_worst_case(bandwidths: &[usize], rates: &[f64]) -> f64 {
    bandwidths
        .iter()
        .zip(rates)
        .map(|(&m, &s)| 1.0 / ((m / 2) as f64).powf(2.0 * s).max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(d: &[usize]) -> AnovaTerm {
        AnovaTerm::new(d.to_vec()).unwrap()
    }

    #[test]
    fn constants_examples() {
        let p = AllocationProblem {
            d: 2,
            budget: 100,
            terms: vec![
                TermAllocation::uniform(term(&[0]), 1.0, 1.0),
                TermAllocation {
                    term: term(&[0, 1]),
                    learned: vec![
                        LearnedDim { dim: 0, constant: 1.0, s: 1.0 },
                        LearnedDim { dim: 1, constant: 1.0, s: 3.0 },
                    ],
                    fixed: vec![],
                },
                TermAllocation {
                    term: term(&[1]),
                    learned: vec![],
                    fixed: vec![FixedDim { dim: 1, bandwidth: 4 }],
                },
            ],
            min_bandwidth: 4,
        };
        let c = reduce_constants(&p).unwrap();
        assert!((c[0].a - 0.5).abs() < 1e-15 && (c[0].b() - 1.0).abs() < 1e-15);
        assert!((c[1].a - 2.0 / 3.0).abs() < 1e-15 && (c[1].b() - 1.0).abs() < 1e-15);
        assert_eq!(c[2].a, 0.0);
        assert!((c[2].b() - 3.0).abs() < 1e-14);

        let mixed = AllocationProblem {
            d: 2,
            budget: 100,
            terms: vec![TermAllocation {
                term: term(&[0, 1]),
                learned: vec![LearnedDim { dim: 0, constant: 16.0, s: 2.0 }],
                fixed: vec![FixedDim { dim: 1, bandwidth: 4 }],
            }],
            min_bandwidth: 4,
        };
        let c = reduce_constants(&mixed).unwrap();
        assert!((c[0].a - 0.25).abs() < 1e-15 && (c[0].b() - 6.0).abs() < 1e-13);
    }

    #[test]
    fn one_term_closed_forms() {
        // A = 1, B = 1: 1/sqrt(λ) = m - 1.
        let c = [TermConstants { a: 1.0, log_b: 0.0 }];
        let sol = solve_lambda(&c, 5).unwrap();
        assert!((sol.lambda - 1.0 / 16.0).abs() < 1e-10 / 16.0);
        // Two identical terms with m - 1 = 8 share evenly.
        let sol = solve_lambda(&[c[0], c[0]], 9).unwrap();
        assert!((sol.lambda - 1.0 / 16.0).abs() < 1e-10 / 16.0);

        // One dimension with s = 1, C = 1 and m = 5: the box takes the whole budget.
        let p = AllocationProblem {
            d: 1,
            budget: 5,
            terms: vec![TermAllocation::uniform(term(&[0]), 1.0, 1.0)],
            min_bandwidth: 2,
        };
        let k = reduce_constants(&p).unwrap();
        let sol = solve_lambda(&k, 5).unwrap();
        assert!((sol.lambda - 1.0 / 32.0).abs() < 1e-10 / 32.0);
        let cont = bandwidths_from_lambda(&p, &k, sol.log_lambda);
        assert!((cont[0][0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_degenerate() {
        let p = AllocationProblem::uniform(2, &[term(&[0]), term(&[0, 1])], 10);
        assert!(matches!(optimize(&p), Err(Error::Infeasible(_))));
        let p = AllocationProblem {
            d: 1,
            budget: 10,
            terms: vec![TermAllocation {
                term: term(&[0]),
                learned: vec![],
                fixed: vec![],
            }],
            min_bandwidth: 4,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn minimal_budget_gives_minimal_boxes() {
        let p = AllocationProblem::uniform(2, &[term(&[0]), term(&[1]), term(&[0, 1])], 1 + 3 + 3 + 9);
        let plan = optimize(&p).unwrap();
        assert_eq!(plan.realized_cardinality, 16);
        for t in plan.index_set.boxes() {
            assert!(t.bandwidths().iter().all(|&m| m == 4));
        }
    }

    #[test]
    fn budget_rule() {
        assert_eq!(plan_budget(100_000.0, LogBase::Natural), 10_770);
        assert_eq!(plan_budget(2.0 * 2f64.ln(), LogBase::Natural), 2);
        assert_eq!(plan_budget(std::f64::consts::E, LogBase::Natural), 2);
        let m = plan_budget(1e5, LogBase::Binary);
        assert!((m as f64) * (m as f64).log2() <= 1e5);
        assert!(((m + 1) as f64) * ((m + 1) as f64).log2() > 1e5);
    }

    #[test]
    fn plan_json_round_trip() {
        let p = AllocationProblem::uniform(2, &[term(&[0]), term(&[1]), term(&[0, 1])], 200);
        let plan = optimize(&p).unwrap();
        let v = serde_json::to_value(&plan).unwrap();
        assert_eq!(v["d"], 2);
        assert!(v["terms"].is_array() && v["lambda"].is_number());
        let back: BandwidthPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back, plan);
    }
}
