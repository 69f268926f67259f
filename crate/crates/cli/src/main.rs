//! `anisova`: sample test functions, fit ANOVA approximations, learn
//! smoothness and run the refinement and cross-validation experiments.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anisova_core::bandwidth::{optimize, BandwidthPlan};
use anisova_core::least_squares::{fcv_score, fit, AnovaApproximation, SavedModel};
use anisova_core::pipeline::{
    cv_sweep_loop_with, init_plan, problem_from_estimate, refine_loop_with, write_records_csv,
    BudgetRule, ExperimentConfig, IterationRecord, Unlearned,
};
use anisova_core::sampling::read_points_csv;
use anisova_core::smoothness::{learn, SmoothnessEstimate};
use anisova_core::{Error, SamplingSet};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "anisova", version, about = "Anisotropic ANOVA approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON experiment config; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed frequency budget instead of the `m log m = n` rule.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long = "snr-db", global = true)]
    snr_db: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write samples.csv and samples.json.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit on the initial plan (or `--plan`) and write model.json.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Samples CSV; generated from the config when absent.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Bandwidth plan JSON from `optimize`.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Learn decay constants and rates from a model; writes estimate.json.
    Learn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Allocate the budget into boxes; writes plan.json.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Learned estimate; without it every dimension uses `C = 1`, `s = 1`.
        #[arg(long)]
        estimate: Option<PathBuf>,
        /// Model whose bandwidths unlearned dimensions keep.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Refinement loop; writes records.csv, records.json and records.jsonl.
    Iterate {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validation sweep; writes cv.csv and cv.json.
    CvSweep {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a model at `--points`, or its L2 error against the config function.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate { common }
            | Command::Fit { common, .. }
            | Command::Learn { common, .. }
            | Command::Optimize { common, .. }
            | Command::Iterate { common }
            | Command::CvSweep { common }
            | Command::Evaluate { common, .. } => common,
        }
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Numerical(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Other(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Solver(_)
            | Error::Infeasible(_)
            | Error::Domain(_)
            | Error::InsufficientData { .. }
            | Error::DegenerateTerm(_)
            | Error::UndefinedScore { .. } => Failure::Numerical(msg),
            Error::Io(_) => Failure::Other(msg),
            _ => Failure::Config(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Other(format!("{}: {e}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Other(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    println!("{}", path.display());
    Ok(())
}

fn load_config(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &c.config {
        Some(p) => read_json(p).map_err(|e| match e {
            Failure::Other(m) => Failure::Config(m),
            e => e,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(n) = c.n {
        cfg.n = n;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.m {
        cfg.budget = BudgetRule::Fixed { m };
        cfg.cv_sweep.m_values = Some(vec![m]);
    }
    if let Some(i) = c.iterations {
        cfg.iterations = i;
    }
    if let Some(s) = c.snr_db {
        cfg.snr_db = Some(s);
    }
    if let Some(o) = &c.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn load_samples(cfg: &ExperimentConfig, path: Option<&Path>) -> CliResult<SamplingSet> {
    match path {
        Some(p) => {
            let file = File::open(p).map_err(|e| io_err(p, e))?;
            Ok(SamplingSet::read_csv(BufReader::new(file))?)
        }
        None => Ok(cfg.samples()?),
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    function: &'a str,
    d: usize,
    n: usize,
    seed: u64,
    snr_db: Option<f64>,
    sigma2: Option<f64>,
}

#[derive(Serialize)]
struct FitOutput<'a> {
    #[serde(flatten)]
    model: &'a SavedModel,
    fcv: Option<f64>,
    l2_test_error: Option<f64>,
}

#[derive(Serialize)]
struct Evaluation {
    function: String,
    n_test: usize,
    l2_test_error: f64,
}

fn generate(cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = output_dir(cfg)?;
    let samples = cfg.samples()?;
    let path = dir.join("samples.csv");
    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
    samples.write_csv(BufWriter::new(file))?;
    println!("{}", path.display());
    write_json(
        &dir.join("samples.json"),
        &Sidecar {
            function: &cfg.function,
            d: samples.d(),
            n: samples.len(),
            seed: cfg.seed,
            snr_db: cfg.snr_db,
            sigma2: samples.noise().map(|n| n.sigma2),
        },
    )
}

fn fit_cmd(cfg: &ExperimentConfig, samples: Option<&Path>, plan: Option<&Path>) -> CliResult<()> {
    let dir = output_dir(cfg)?;
    let samples = load_samples(cfg, samples)?;
    let set = match plan {
        Some(p) => read_json::<BandwidthPlan>(p)?.index_set,
        None => {
            let m = cfg.budget.budget(samples.len());
            init_plan(samples.d(), &cfg.anova_terms()?, m, cfg.min_bandwidth)?.index_set
        }
    };
    let approx = fit(&samples, &set, &cfg.fit)?;
    let fcv = fcv_score(&approx, &samples).ok();
    let f = cfg.test_function()?;
    let l2 = match cfg.test_set()? {
        Some(t) if f.d() == samples.d() => Some(t.l2_error(&approx)?),
        _ => None,
    };
    let saved = approx.to_saved();
    write_json(
        &dir.join("model.json"),
        &FitOutput {
            model: &saved,
            fcv,
            l2_test_error: l2,
        },
    )
}

fn load_model(path: &Path) -> CliResult<AnovaApproximation> {
    Ok(AnovaApproximation::from_saved(read_json(path)?)?)
}

fn optimize_cmd(
    cfg: &ExperimentConfig,
    estimate: Option<&Path>,
    model: Option<&Path>,
) -> CliResult<()> {
    let dir = output_dir(cfg)?;
    let f = cfg.test_function()?;
    let terms = cfg.anova_terms()?;
    let m = cfg.budget.budget(cfg.n);
    let previous = model.map(load_model).transpose()?;
    let plan = match estimate {
        None => init_plan(f.d(), &terms, m, cfg.min_bandwidth)?,
        Some(p) => {
            let est: SmoothnessEstimate = read_json(p)?;
            let unlearned = match &previous {
                Some(a) => Unlearned::Carry(a.index_set()),
                None => Unlearned::Initial,
            };
            optimize(&problem_from_estimate(
                f.d(),
                &terms,
                &est,
                unlearned,
                m,
                cfg.min_bandwidth,
            )?)?
        }
    };
    write_json(&dir.join("plan.json"), &plan)
}

fn iterate(cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = output_dir(cfg)?;
    let samples = cfg.samples()?;
    let test = cfg.test_set()?;
    let log_path = dir.join("records.jsonl");
    let csv_path = dir.join("records.csv");
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    let mut so_far = Vec::new();
    let records = refine_loop_with(cfg, &samples, test.as_ref(), |r| {
        let line = serde_json::to_string(r)?;
        writeln!(log, "{line}")?;
        log.flush()?;
        so_far.push(r.clone());
        let file = File::create(&csv_path)?;
        write_records_csv(&so_far, &cfg.anova_terms()?, BufWriter::new(file))
    })?;
    println!("{}", log_path.display());
    println!("{}", csv_path.display());
    write_json(&dir.join("records.json"), &records)
}

fn cv_sweep(cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = output_dir(cfg)?;
    let samples = cfg.samples()?;
    let test = cfg.test_set()?;
    let csv_path = dir.join("cv.csv");
    let mut so_far: Vec<IterationRecord> = Vec::new();
    let rounds = cv_sweep_loop_with(cfg, &samples, test.as_ref(), |r| {
        so_far.extend(r.records.iter().cloned());
        let file = File::create(&csv_path)?;
        write_records_csv(&so_far, &cfg.anova_terms()?, BufWriter::new(file))
    })?;
    println!("{}", csv_path.display());
    write_json(&dir.join("cv.json"), &rounds)
}

fn evaluate(cfg: &ExperimentConfig, model: &Path, points: Option<&Path>) -> CliResult<()> {
    let dir = output_dir(cfg)?;
    let approx = load_model(model)?;
    match points {
        Some(p) => {
            let file = File::open(p).map_err(|e| io_err(p, e))?;
            let (d, pts) = read_points_csv(BufReader::new(file))?;
            let values = approx.evaluate(&pts)?;
            let path = dir.join("predictions.csv");
            let file = File::create(&path).map_err(|e| io_err(&path, e))?;
            let mut w = BufWriter::new(file);
            let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
                let xs: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
                writeln!(w, "{},re,im", xs.join(","))?;
                for (x, v) in pts.chunks_exact(d).zip(&values) {
                    let xs: Vec<String> = x.iter().map(|c| format!("{c:.17e}")).collect();
                    writeln!(w, "{},{:.17e},{:.17e}", xs.join(","), v.re, v.im)?;
                }
                w.flush()
            };
            write(&mut w).map_err(|e| io_err(&path, e))?;
            println!("{}", path.display());
            Ok(())
        }
        None => {
            let test = cfg
                .test_set()?
                .ok_or_else(|| Failure::Config("n_test is 0 and no --points given".into()))?;
            let l2 = test.l2_error(&approx)?;
            write_json(
                &dir.join("evaluation.json"),
                &Evaluation {
                    function: cfg.function.clone(),
                    n_test: test.len(),
                    l2_test_error: l2,
                },
            )
        }
    }
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("ANISOVA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("ANISOVA_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Other(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let cfg = load_config(cli.command.common())?;
    match &cli.command {
        Command::Generate { .. } => generate(&cfg),
        Command::Fit { samples, plan, .. } => fit_cmd(&cfg, samples.as_deref(), plan.as_deref()),
        Command::Learn { model, .. } => {
            let dir = output_dir(&cfg)?;
            let est = learn(&load_model(model)?);
            write_json(&dir.join("estimate.json"), &est)
        }
        Command::Optimize {
            estimate, model, ..
        } => optimize_cmd(&cfg, estimate.as_deref(), model.as_deref()),
        Command::Iterate { .. } => iterate(&cfg),
        Command::CvSweep { .. } => cv_sweep(&cfg),
        Command::Evaluate { model, points, .. } => evaluate(&cfg, model, points.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
