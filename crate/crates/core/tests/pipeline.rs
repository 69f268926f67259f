use anisova_core::pipeline::{
    cv_sweep_loop_with, refine_loop_with, write_records_csv, BudgetRule, CvSweepConfig,
    ExperimentConfig, IterationRecord,
};
use anisova_core::test_functions::bernoulli_poly;
use anisova_core::{AnovaTerm, SamplingSet};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn base(n: usize, iterations: usize) -> ExperimentConfig {
    ExperimentConfig {
        n,
        iterations,
        n_test: 0,
        ..ExperimentConfig::default()
    }
}

fn slack(r: &IterationRecord) -> usize {
    r.plan
        .index_set
        .boxes()
        .iter()
        .map(|b| {
            let lens: Vec<usize> = b.bandwidths().iter().map(|m| m - 1).collect();
            lens.iter().product::<usize>() / lens.iter().copied().min().unwrap_or(1).max(1)
        })
        .max()
        .unwrap_or(0)
}

#[test]
fn every_iteration_spends_the_budget() {
    let cfg = base(6000, 4);
    let samples = cfg.samples().unwrap();
    let recs = refine_loop_with(&cfg, &samples, None, |_| Ok(())).unwrap();
    let m = cfg.budget.budget(6000);
    for r in &recs {
        assert_eq!(r.m, m);
        assert_eq!(r.cardinality, r.plan.index_set.len());
        assert!(r.cardinality.abs_diff(m) <= slack(r), "{} vs {m}", r.cardinality);
    }
}

#[test]
fn unlearned_dimensions_keep_their_bandwidth() {
    // Only x0 carries signal; the box of term {1} holds solver noise only.
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
    let values = points
        .chunks(2)
        .map(|x| Complex64::new(bernoulli_poly(2, x[0]).unwrap(), 0.0))
        .collect();
    let samples = SamplingSet::new(2, points, values).unwrap();
    let cfg = ExperimentConfig {
        terms: Some(vec![vec![0], vec![1]]),
        budget: BudgetRule::Fixed { m: 200 },
        ..base(n, 4)
    };
    let recs = refine_loop_with(&cfg, &samples, None, |_| Ok(())).unwrap();
    let t1 = AnovaTerm::new(vec![1]).unwrap();
    let mut carried = 0;
    for w in recs.windows(2) {
        let learned = w[0].estimate.rate(&t1, 1).is_some();
        if !learned {
            carried += 1;
            assert_eq!(w[0].plan.bandwidths_of(&t1), w[1].plan.bandwidths_of(&t1));
        }
    }
    assert_eq!(carried, recs.len() - 1, "the noise-only dimension was learned");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = base(3000, 3);
    let samples = cfg.samples().unwrap();
    let terms = cfg.anova_terms().unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let recs = pool.install(|| refine_loop_with(&cfg, &samples, None, |_| Ok(())).unwrap());
        let mut csv = Vec::new();
        write_records_csv(&recs, &terms, &mut csv).unwrap();
        csv
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn partial_records_reach_the_callback_before_a_failure() {
    let cfg = base(3000, 3);
    let samples = cfg.samples().unwrap();
    let mut seen = 0;
    let err = refine_loop_with(&cfg, &samples, None, |r| {
        seen += 1;
        if r.iteration == 2 {
            Err(anisova_core::Error::Config("stop".into()))
        } else {
            Ok(())
        }
    });
    assert!(err.is_err());
    assert_eq!(seen, 2);
}

#[test]
fn cv_sweep_skips_unusable_budgets() {
    let cfg = ExperimentConfig {
        snr_db: Some(30.0),
        cv_sweep: CvSweepConfig {
            // 10 cannot hold the minimal boxes; 5000 exceeds the sample count.
            m_values: Some(vec![10, 60, 200, 5000]),
            rounds: 2,
            ..CvSweepConfig::default()
        },
        ..base(1500, 1)
    };
    let samples = cfg.samples().unwrap();
    let rounds = cv_sweep_loop_with(&cfg, &samples, None, |_| Ok(())).unwrap();
    assert_eq!(rounds.len(), 2);
    for r in &rounds {
        let ms: Vec<usize> = r.records.iter().map(|x| x.m).collect();
        assert_eq!(ms, vec![60, 200]);
        let best = r.best().unwrap();
        assert!(r.records.iter().all(|x| x.fcv.unwrap() >= best.fcv.unwrap()));
        assert_eq!(r.round, best.round);
    }
}
