//! Benchmark functions with known ANOVA structure and seeded sampling.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_sets::AnovaTerm;
use crate::sampling::{NoiseMeta, SamplingSet};

/// Bernoulli polynomials `p_2` and `p_4`.
pub fn bernoulli_poly(n: u32, x: f64) -> Result<f64> {
    match n {
        2 => Ok(x * x - x + 1.0 / 6.0),
        4 => Ok(x * x * (x * x - 2.0 * x + 1.0) - 1.0 / 30.0),
        _ => Err(Error::Config(format!("Bernoulli polynomial of degree {n} not provided"))),
    }
}

/// Cardinal B-spline of order `n` with knots `0, 1, …, n`, by the Cox-de Boor
/// recursion.
pub fn cardinal_bspline(n: usize, t: f64) -> f64 {
    if n == 0 || !(0.0..n as f64).contains(&t) {
        return 0.0;
    }
    // vals[k] = N_r(t - k) for the current order r.
    let mut vals = vec![0.0; n];
    let i = t.floor() as usize;
    vals[i] = 1.0;
    for r in 2..=n {
        let rf = r as f64;
        // Ascending k reads vals[k + 1] before it is overwritten.
        for k in 0..n {
            let u = t - k as f64;
            let right = if k + 1 < n { vals[k + 1] } else { 0.0 };
            vals[k] = (u * vals[k] + (rf - u) * right) / (rf - 1.0);
        }
    }
    vals[0]
}

/// `1/sqrt(n N_{2n}(n))`: makes `n N_n(n x)` unit-norm on `[0, 1)`.
fn bspline_scale(n: usize) -> f64 {
    1.0 / (n as f64 * cardinal_bspline(2 * n, n as f64)).sqrt()
}

/// Periodic B-spline of order `n ∈ {2, 4, 6}` on the torus: the cardinal
/// spline stretched over one period, unit `L2` norm. Not mean-free; its mean
/// equals the scale factor.
pub fn bspline(n: usize, x: f64) -> Result<f64> {
    if !matches!(n, 2 | 4 | 6) {
        return Err(Error::Config(format!("B-spline order {n} not provided")));
    }
    Ok(bspline_unchecked(n, x))
}

fn bspline_unchecked(n: usize, x: f64) -> f64 {
    let nf = n as f64;
    let t = (x - x.floor()) * nf;
    bspline_scale(n) * nf * cardinal_bspline(n, t)
}

/// Fourier coefficient of [`bspline`] at `k`: `scale · sinc(πk/n)^n · (-1)^k`.
pub fn bspline_fourier_coefficient(n: usize, k: i64) -> f64 {
    let sinc = if k == 0 {
        1.0
    } else {
        let a = PI * k as f64 / n as f64;
        a.sin() / a
    };
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    bspline_scale(n) * sinc.powi(n as i32) * sign
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    (1..=order)
        .map(|i| {
            let mut x = (PI * (i as f64 - 0.25) / (order as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=order {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// `∫_0^1 g` for `g` polynomial of degree ≤ 11 on every piece `[i/12, (i+1)/12)`.
fn integrate_pieces(g: impl Fn(f64) -> f64) -> f64 {
    let rule = gauss_legendre(6);
    let h = 1.0 / 12.0;
    (0..12)
        .map(|p| {
            let mid = (p as f64 + 0.5) * h;
            rule.iter()
                .map(|&(x, w)| w * g(mid + 0.5 * h * x))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

/// One product of B-splines `Π_j B_{order_j}(x_{dim_j})`.
#[derive(Clone, Debug, PartialEq)]
struct SplineProduct {
    factors: Vec<(usize, usize)>,
}

impl SplineProduct {
    fn eval(&self, x: &[f64]) -> f64 {
        self.factors
            .iter()
            .map(|&(j, n)| bspline_unchecked(n, x[j]))
            .product()
    }

    /// `∫ P_a P_b` over the torus, factorized per variable.
    fn inner(&self, other: &SplineProduct) -> f64 {
        let mut vars: Vec<usize> = self
            .factors
            .iter()
            .chain(&other.factors)
            .map(|f| f.0)
            .collect();
        vars.sort_unstable();
        vars.dedup();
        vars.iter()
            .map(|&j| {
                let a = self.factors.iter().find(|f| f.0 == j).map(|f| f.1);
                let b = other.factors.iter().find(|f| f.0 == j).map(|f| f.1);
                integrate_pieces(|x| {
                    a.map_or(1.0, |n| bspline_unchecked(n, x))
                        * b.map_or(1.0, |n| bspline_unchecked(n, x))
                })
            })
            .product()
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Bernoulli2,
    Reciprocal { weights: Vec<f64> },
    Splines { products: Vec<SplineProduct>, scale: f64 },
}

/// A benchmark function with its ANOVA terms and, where known, exact rates.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    name: String,
    d: usize,
    kind: Kind,
    known_terms: Vec<AnovaTerm>,
    analytic_rates: Vec<(AnovaTerm, usize, f64)>,
    l2_norm: Option<f64>,
}

/// Prefactor making the two-dimensional example unit-norm.
pub fn d2_prefactor() -> f64 {
    (378_000.0f64 / 2281.0).sqrt()
}

fn term(d: &[usize]) -> AnovaTerm {
    AnovaTerm::new(d.to_vec()).expect("static term")
}

/// All nonempty subsets of `{0..d}` with at most `max_order` elements, by size
/// then lexicographically.
pub fn terms_up_to(d: usize, max_order: usize) -> Vec<AnovaTerm> {
    let mut out: Vec<AnovaTerm> = (1u64..(1 << d))
        .filter(|mask| (mask.count_ones() as usize) <= max_order)
        .map(|mask| term(&(0..d).filter(|j| mask >> j & 1 == 1).collect::<Vec<_>>()))
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.dims().cmp(b.dims())));
    out
}

impl TestFunction {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "d2" => Ok(example_d2()),
            "d5" => Ok(example_d5()),
            "d10" => Ok(example_d10()),
            other => Err(Error::Config(format!(
                "unknown test function `{other}` (expected d2, d5 or d10)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn known_terms(&self) -> &[AnovaTerm] {
        &self.known_terms
    }

    /// `(term, dim, s)` triples for the terms whose decay is known exactly.
    pub fn analytic_rates(&self) -> &[(AnovaTerm, usize, f64)] {
        &self.analytic_rates
    }

    pub fn analytic_rate(&self, t: &AnovaTerm, dim: usize) -> Option<f64> {
        self.analytic_rates
            .iter()
            .find(|(u, j, _)| u == t && *j == dim)
            .map(|r| r.2)
    }

    pub fn l2_norm(&self) -> Option<f64> {
        self.l2_norm
    }

    /// The normalization divisor of the B-spline example.
    pub fn spline_normalization(&self) -> Option<f64> {
        match &self.kind {
            Kind::Splines { scale, .. } => Some(*scale),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Bernoulli2 => {
                let p2 = |t: f64| t * t - t + 1.0 / 6.0;
                let p4 = |t: f64| t * t * (t * t - 2.0 * t + 1.0) - 1.0 / 30.0;
                d2_prefactor() * (p2(x[0]) + p4(x[1]) + p4(x[0]) * p2(x[1]))
            }
            Kind::Reciprocal { weights } => {
                let a = 1.0
                    + 0.5
                        * weights
                            .iter()
                            .zip(x)
                            .map(|(w, &t)| w * (2.0 * PI * t).sin())
                            .sum::<f64>();
                1.0 / a
            }
            Kind::Splines { products, scale } => {
                products.iter().map(|p| p.eval(x)).sum::<f64>() / scale
            }
        }
    }
}

pub fn example_d2() -> TestFunction {
    TestFunction {
        name: "d2".into(),
        d: 2,
        kind: Kind::Bernoulli2,
        known_terms: vec![term(&[0]), term(&[1]), term(&[0, 1])],
        analytic_rates: vec![
            (term(&[0]), 0, 1.5),
            (term(&[1]), 1, 3.5),
            (term(&[0, 1]), 0, 3.5),
            (term(&[0, 1]), 1, 1.5),
        ],
        l2_norm: Some(1.0),
    }
}

pub fn example_d5() -> TestFunction {
    TestFunction {
        name: "d5".into(),
        d: 5,
        kind: Kind::Reciprocal {
            weights: (1..=5).map(|j| (j as f64).powi(-6)).collect(),
        },
        known_terms: terms_up_to(5, 3),
        analytic_rates: Vec::new(),
        l2_norm: None,
    }
}

/// Orders of the seven B-spline products, as `(dim, order)` with 0-based dims.
const SPLINE_PRODUCTS: [&[(usize, usize)]; 7] = [
    &[(0, 2), (1, 4), (2, 6)],
    &[(3, 2), (4, 4)],
    &[(4, 6), (5, 2)],
    &[(5, 4), (6, 6)],
    &[(6, 2), (7, 4)],
    &[(7, 6), (8, 2)],
    &[(8, 4), (9, 6)],
];

pub fn example_d10() -> TestFunction {
    let products: Vec<SplineProduct> = SPLINE_PRODUCTS
        .iter()
        .map(|f| SplineProduct { factors: f.to_vec() })
        .collect();
    let norm2: f64 = products
        .iter()
        .flat_map(|a| products.iter().map(move |b| a.inner(b)))
        .sum();

    let mut known: Vec<AnovaTerm> = Vec::new();
    for p in &products {
        let dims: Vec<usize> = p.factors.iter().map(|f| f.0).collect();
        let prod_term = term(&dims);
        for sub in prod_term.subterms().into_iter().chain([prod_term]) {
            if !sub.is_empty() && !known.contains(&sub) {
                known.push(sub);
            }
        }
    }
    known.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.dims().cmp(b.dims())));

    // A term's component in dim j decays like the roughest spline in j among
    // the products that contain the term.
    let mut rates = Vec::new();
    for u in &known {
        for &j in u.dims() {
            let s = products
                .iter()
                .filter(|p| u.dims().iter().all(|d| p.factors.iter().any(|f| f.0 == *d)))
                .filter_map(|p| p.factors.iter().find(|f| f.0 == j))
                .map(|f| f.1 as f64 - 0.5)
                .fold(f64::INFINITY, f64::min);
            rates.push((u.clone(), j, s));
        }
    }
    TestFunction {
        name: "d10".into(),
        d: 10,
        kind: Kind::Splines {
            products,
            scale: norm2.sqrt(),
        },
        known_terms: known,
        analytic_rates: rates,
        l2_norm: Some(1.0),
    }
}

/// Additive Gaussian noise at a prescribed signal-to-noise ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64, seed: u64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        Ok(NoiseSpec { snr_db, seed })
    }
}

/// `n` uniform points and values `f(x_i) + ε_i`. The noise is rescaled so the
/// realized ratio `Σ f² / Σ ε²` matches `snr_db` exactly.
pub fn sample(
    f: &TestFunction,
    n: usize,
    seed: u64,
    noise: Option<NoiseSpec>,
) -> Result<SamplingSet> {
    if n == 0 {
        return Err(Error::Empty("n must be positive"));
    }
    let d = f.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    let clean: Vec<f64> = points.par_chunks_exact(d).map(|x| f.eval(x)).collect();
    let Some(spec) = noise else {
        let values = clean.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        return SamplingSet::new(d, points, values);
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let mut eps: Vec<f64> = (0..n).map(|_| noise_rng.sample(StandardNormal)).collect();
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    let raw: f64 = eps.iter().map(|e| e * e).sum();
    let scale = if raw > 0.0 {
        (signal / (raw * 10f64.powf(spec.snr_db / 10.0))).sqrt()
    } else {
        0.0
    };
    eps.iter_mut().for_each(|e| *e *= scale);
    let sigma2 = eps.iter().map(|e| e * e).sum::<f64>() / n as f64;
    let values = clean
        .iter()
        .zip(&eps)
        .map(|(&v, &e)| Complex64::new(v + e, 0.0))
        .collect();
    Ok(SamplingSet::new(d, points, values)?.with_noise(NoiseMeta {
        sigma2,
        snr_db: spec.snr_db,
        seed: spec.seed,
    }))
}
