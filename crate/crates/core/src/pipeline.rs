//! Experiment drivers: the noiseless refinement loop and the noisy
//! cross-validation sweep.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{
    optimize, plan_budget, AllocationProblem, BandwidthPlan, FixedDim, LearnedDim, LogBase,
    TermAllocation, DEFAULT_MIN_BANDWIDTH,
};
use crate::error::{Error, Result};
use crate::index_sets::{AnovaTerm, GroupedIndexSet};
use crate::least_squares::{fcv_score, fit, AnovaApproximation, FitConfig, FitDiagnostics, TestSet};
use crate::sampling::SamplingSet;
use crate::smoothness::{learn, SmoothnessEstimate};
use crate::test_functions::{sample, NoiseSpec, TestFunction};

/// How the frequency budget is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetRule {
    /// Largest `m` with `m log m ≤ n`.
    MLogM {
        #[serde(default)]
        base: LogBase,
    },
    Fixed { m: usize },
}

impl Default for BudgetRule {
    fn default() -> Self {
        BudgetRule::MLogM {
            base: LogBase::Natural,
        }
    }
}

impl BudgetRule {
    pub fn budget(&self, n: usize) -> usize {
        match self {
            BudgetRule::MLogM { base } => plan_budget(n as f64, *base),
            BudgetRule::Fixed { m } => *m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSweepConfig {
    /// Explicit grid; when absent a geometric grid over `[m_min, m_max]` is used.
    pub m_values: Option<Vec<usize>>,
    pub grid_points: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub rounds: usize,
}

impl Default for CvSweepConfig {
    fn default() -> Self {
        CvSweepConfig {
            m_values: None,
            grid_points: 20,
            m_min: 300,
            m_max: 10_000,
            rounds: 3,
        }
    }
}

impl CvSweepConfig {
    /// Sorted, deduplicated grid of budgets.
    pub fn grid(&self) -> Vec<usize> {
        if let Some(v) = &self.m_values {
            return v.clone();
        }
        geometric_grid(self.m_min, self.m_max, self.grid_points)
    }
}

/// `count` geometrically spaced integers from `lo` to `hi`, rounded and deduplicated.
pub fn geometric_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if count <= 1 || lo >= hi {
        return vec![lo];
    }
    let ratio = (hi as f64 / lo as f64).ln() / (count - 1) as f64;
    let mut out: Vec<usize> = (0..count)
        .map(|i| (lo as f64 * (ratio * i as f64).exp()).round() as usize)
        .collect();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `d2`, `d5` or `d10`.
    pub function: String,
    pub n: usize,
    pub seed: u64,
    pub iterations: usize,
    pub budget: BudgetRule,
    /// Noise level; `None` samples exactly.
    pub snr_db: Option<f64>,
    /// Defaults to `seed + 1`.
    pub noise_seed: Option<u64>,
    pub cv_sweep: CvSweepConfig,
    /// Monte Carlo points for the `L2` error; 0 disables it.
    pub n_test: usize,
    /// Defaults to `seed + 2`.
    pub test_seed: Option<u64>,
    pub fit: FitConfig,
    pub min_bandwidth: usize,
    /// Replaces the function's known ANOVA terms.
    pub terms: Option<Vec<Vec<usize>>>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            function: "d2".into(),
            n: 100_000,
            seed: 0,
            iterations: 9,
            budget: BudgetRule::default(),
            snr_db: None,
            noise_seed: None,
            cv_sweep: CvSweepConfig::default(),
            n_test: 1_000_000,
            test_seed: None,
            fit: FitConfig::default(),
            min_bandwidth: DEFAULT_MIN_BANDWIDTH,
            terms: None,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        TestFunction::by_name(&self.function)?;
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if let Some(s) = self.snr_db {
            NoiseSpec::new(s, 0)?;
        }
        let grid = self.cv_sweep.grid();
        if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "cv grid must be nonempty and strictly ascending".into(),
            ));
        }
        if self.cv_sweep.rounds == 0 {
            return Err(Error::Config("cv rounds must be at least 1".into()));
        }
        if self.min_bandwidth < 2 || self.min_bandwidth % 2 != 0 {
            return Err(Error::Config("min_bandwidth must be even and at least 2".into()));
        }
        self.fit.validate()?;
        self.anova_terms()?;
        Ok(())
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        TestFunction::by_name(&self.function)
    }

    pub fn anova_terms(&self) -> Result<Vec<AnovaTerm>> {
        let f = self.test_function()?;
        match &self.terms {
            None => Ok(f.known_terms().to_vec()),
            Some(list) => list
                .iter()
                .map(|dims| {
                    let t = AnovaTerm::new(dims.clone())?;
                    if t.is_empty() || dims.iter().any(|&j| j >= f.d()) {
                        return Err(Error::Config(format!("term {dims:?} is not valid for d = {}", f.d())));
                    }
                    Ok(t)
                })
                .collect(),
        }
    }

    pub fn noise(&self) -> Option<NoiseSpec> {
        self.snr_db.map(|snr_db| NoiseSpec {
            snr_db,
            seed: self.noise_seed.unwrap_or(self.seed.wrapping_add(1)),
        })
    }

    pub fn samples(&self) -> Result<SamplingSet> {
        sample(&self.test_function()?, self.n, self.seed, self.noise())
    }

    /// Test points for the `L2` error, or `None` when disabled.
    pub fn test_set(&self) -> Result<Option<TestSet>> {
        if self.n_test == 0 {
            return Ok(None);
        }
        let f = self.test_function()?;
        let seed = self.test_seed.unwrap_or(self.seed.wrapping_add(2));
        Ok(Some(TestSet::uniform(|x| f.eval(x), f.d(), self.n_test, seed)?))
    }
}

/// Starting plan with `C = 1` and `s = 1` in every dimension.
pub fn init_plan(d: usize, terms: &[AnovaTerm], m: usize, min_bandwidth: usize) -> Result<BandwidthPlan> {
    let mut problem = AllocationProblem::uniform(d, terms, m);
    problem.min_bandwidth = min_bandwidth;
    optimize(&problem)
}

/// What dimensions without a learned rate fall back to.
#[derive(Clone, Copy, Debug)]
pub enum Unlearned<'a> {
    /// Keep the bandwidth of this index set.
    Carry(&'a GroupedIndexSet),
    /// Use the starting values `C = 1`, `s = 1`.
    Initial,
}

/// Allocation problem using learned `(D, s)` where available.
pub fn problem_from_estimate(
    d: usize,
    terms: &[AnovaTerm],
    estimate: &SmoothnessEstimate,
    unlearned: Unlearned<'_>,
    budget: usize,
    min_bandwidth: usize,
) -> Result<AllocationProblem> {
    let mut allocs = Vec::with_capacity(terms.len());
    for t in terms {
        let te = estimate.term(t);
        let mut learned = Vec::new();
        let mut fixed = Vec::new();
        for (pos, &j) in t.dims().iter().enumerate() {
            let hit = te.and_then(|e| Some((*e.constants.get(&j)?, *e.rates.get(&j)?)));
            match (hit, unlearned) {
                (Some((c, s)), _) => learned.push(LearnedDim {
                    dim: j,
                    constant: c,
                    s,
                }),
                (None, Unlearned::Carry(set)) => {
                    let bw = set.bandwidths_of(t).ok_or_else(|| Error::UnknownTerm(t.dims().to_vec()))?;
                    fixed.push(FixedDim {
                        dim: j,
                        bandwidth: bw[pos],
                    });
                }
                (None, Unlearned::Initial) => learned.push(LearnedDim {
                    dim: j,
                    constant: 1.0,
                    s: 1.0,
                }),
            }
        }
        allocs.push(TermAllocation {
            term: t.clone(),
            learned,
            fixed,
        });
    }
    Ok(AllocationProblem {
        d,
        budget,
        terms: allocs,
        min_bandwidth,
    })
}

/// One fit in an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// CV round (1-based); 0 in the refinement loop.
    pub round: usize,
    /// Refinement iteration (1-based); 0 in the CV sweep.
    pub iteration: usize,
    pub m: usize,
    pub cardinality: usize,
    pub plan: BandwidthPlan,
    pub estimate: SmoothnessEstimate,
    pub l2_error: Option<f64>,
    /// Noise variance of the samples, when noisy.
    pub sigma2: Option<f64>,
    pub fcv: Option<f64>,
    pub fit: FitDiagnostics,
    pub wall_time_s: f64,
}

impl IterationRecord {
    /// `‖f - g‖² + σ²`, the quantity the score estimates.
    pub fn l2_sq_plus_sigma2(&self) -> Option<f64> {
        self.l2_error.map(|e| e * e + self.sigma2.unwrap_or(0.0))
    }
}

fn run_one(
    samples: &SamplingSet,
    test: Option<&TestSet>,
    plan: BandwidthPlan,
    m: usize,
    fit_cfg: &FitConfig,
) -> Result<(IterationRecord, AnovaApproximation)> {
    let start = Instant::now();
    let approx = fit(samples, &plan.index_set, fit_cfg)?;
    let l2_error = test.map(|t| t.l2_error(&approx)).transpose()?;
    let fcv = match fcv_score(&approx, samples) {
        Ok(v) => Some(v),
        Err(Error::UndefinedScore { .. }) => None,
        Err(e) => return Err(e),
    };
    let estimate = learn(&approx);
    let record = IterationRecord {
        round: 0,
        iteration: 0,
        m,
        cardinality: plan.index_set.len(),
        plan,
        estimate,
        l2_error,
        sigma2: samples.noise().map(|n| n.sigma2),
        fcv,
        fit: *approx.fit_diagnostics(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((record, approx))
}

/// Fit, learn, reallocate, refit. `on_record` sees each record as soon as it
/// exists, so a failure later still leaves the earlier ones written.
pub fn refine_loop_with(
    cfg: &ExperimentConfig,
    samples: &SamplingSet,
    test: Option<&TestSet>,
    mut on_record: impl FnMut(&IterationRecord) -> Result<()>,
) -> Result<Vec<IterationRecord>> {
    cfg.validate()?;
    let terms = cfg.anova_terms()?;
    let d = samples.d();
    let m = cfg.budget.budget(samples.len());
    let mut records: Vec<IterationRecord> = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let plan = match records.last() {
            None => init_plan(d, &terms, m, cfg.min_bandwidth)?,
            Some(prev) => optimize(&problem_from_estimate(
                d,
                &terms,
                &prev.estimate,
                Unlearned::Carry(&prev.plan.index_set),
                m,
                cfg.min_bandwidth,
            )?)?,
        };
        let (mut rec, _) = run_one(samples, test, plan, m, &cfg.fit)?;
        rec.iteration = it;
        log::info!(
            "iteration {it}: |I| = {}, L2 = {:?}, lsqr iterations = {}",
            rec.cardinality,
            rec.l2_error,
            rec.fit.iterations
        );
        on_record(&rec)?;
        records.push(rec);
    }
    Ok(records)
}

/// [`refine_loop_with`] on the configured samples and test points.
pub fn refine_loop(cfg: &ExperimentConfig) -> Result<Vec<IterationRecord>> {
    let samples = cfg.samples()?;
    let test = cfg.test_set()?;
    refine_loop_with(cfg, &samples, test.as_ref(), |_| Ok(()))
}

/// One round of the CV sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRound {
    pub round: usize,
    pub m_star: usize,
    pub records: Vec<IterationRecord>,
}

impl CvRound {
    pub fn best(&self) -> Option<&IterationRecord> {
        self.records.iter().find(|r| r.m == self.m_star)
    }
}

/// For every budget on the grid: plan from the current estimate, fit, score.
/// The budget with the smallest score supplies the next estimate.
pub fn cv_sweep_loop_with(
    cfg: &ExperimentConfig,
    samples: &SamplingSet,
    test: Option<&TestSet>,
    mut on_round: impl FnMut(&CvRound) -> Result<()>,
) -> Result<Vec<CvRound>> {
    cfg.validate()?;
    let terms = cfg.anova_terms()?;
    let d = samples.d();
    let grid = cfg.cv_sweep.grid();
    let mut estimate: Option<SmoothnessEstimate> = None;
    let mut rounds = Vec::with_capacity(cfg.cv_sweep.rounds);
    for round in 1..=cfg.cv_sweep.rounds {
        let entries: Vec<Option<IterationRecord>> = grid
            .par_iter()
            .map(|&m| {
                let plan = match &estimate {
                    None => init_plan(d, &terms, m, cfg.min_bandwidth),
                    Some(est) => problem_from_estimate(
                        d,
                        &terms,
                        est,
                        Unlearned::Initial,
                        m,
                        cfg.min_bandwidth,
                    )
                    .and_then(|p| optimize(&p)),
                };
                let plan = match plan {
                    Ok(p) => p,
                    Err(e) => {
                        log::warn!("round {round}: skipping m = {m}: {e}");
                        return Ok(None);
                    }
                };
                if plan.index_set.len() >= samples.len() {
                    log::warn!("round {round}: skipping m = {m}: |I| >= n");
                    return Ok(None);
                }
                let (mut rec, _) = run_one(samples, test, plan, m, &cfg.fit)?;
                rec.round = round;
                Ok(Some(rec))
            })
            .collect::<Result<_>>()?;
        let records: Vec<IterationRecord> = entries.into_iter().flatten().collect();
        let best = records
            .iter()
            .filter(|r| r.fcv.is_some())
            .min_by(|a, b| a.fcv.partial_cmp(&b.fcv).expect("finite scores"))
            .ok_or_else(|| Error::Infeasible(format!("round {round}: no grid entry could be fitted")))?;
        let m_star = best.m;
        estimate = Some(best.estimate.clone());
        log::info!("round {round}: m* = {m_star}, FCV = {:?}", best.fcv);
        let r = CvRound {
            round,
            m_star,
            records,
        };
        on_round(&r)?;
        rounds.push(r);
    }
    Ok(rounds)
}

pub fn cv_sweep_loop(cfg: &ExperimentConfig) -> Result<Vec<CvRound>> {
    let samples = cfg.samples()?;
    let test = cfg.test_set()?;
    cv_sweep_loop_with(cfg, &samples, test.as_ref(), |_| Ok(()))
}

fn term_column(t: &AnovaTerm) -> String {
    let dims: Vec<String> = t.dims().iter().map(|j| j.to_string()).collect();
    format!("bw_{}", dims.join("_"))
}

/// Fixed leading columns of the record CSV.
pub const RECORD_COLUMNS: [&str; 9] = [
    "round",
    "iteration",
    "m",
    "cardinality",
    "fcv",
    "l2_error",
    "l2_sq_plus_sigma2",
    "lsqr_iterations",
    "relative_residual",
];

/// Writes one row per record with the bandwidths of each term in `terms`
/// as `m1xm2x…`. Wall times are left out so reruns give identical files.
pub fn write_records_csv<W: Write>(
    records: &[IterationRecord],
    terms: &[AnovaTerm],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = RECORD_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(terms.iter().map(term_column));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    for r in records {
        let mut row = vec![
            r.round.to_string(),
            r.iteration.to_string(),
            r.m.to_string(),
            r.cardinality.to_string(),
            opt(r.fcv),
            opt(r.l2_error),
            opt(r.l2_sq_plus_sigma2()),
            r.fit.iterations.to_string(),
            format!("{:.17e}", r.fit.relative_residual),
        ];
        for t in terms {
            row.push(
                r.plan
                    .bandwidths_of(t)
                    .map(|b| b.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("x"))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
