use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use lcnlab_core::critlab::{crit_on_stratum, ed_bound, EdNorm, DEFAULT_STARTS};
use lcnlab_core::dynamics::{invariants, recover_scales};
use lcnlab_core::format::to_json;
use lcnlab_core::funcspace::{analyze, is_filling};
use lcnlab_core::harness::{
    experiment_distinct_solutions, experiment_rrmp_table, grid_csv, landscape_grid, repro_section73,
    ExperimentConfig, LossNorm, Plane,
};
use lcnlab_core::optim::{gd_train, run_rng, trace_csv, Dataset, QuadLoss, TrainConfig};
use lcnlab_core::rootlab::{
    boundary_margin, classify_rrmp, discriminant, find_roots, rrmp_classify_by_signs, Partition,
    RootValue,
};
use lcnlab_core::{Architecture, Filter, LcnError, RootTolerance};

const DESK_DATASETS: usize = 1_000;
const FULL_DATASETS: usize = 10_000;
const DESK_TARGETS: usize = 100;
const FULL_TARGETS: usize = 500;
const DISTINCT_INITS: usize = 50;

#[derive(Parser)]
#[command(name = "lcnlab", version, about = "Linear convolutional network geometry and training experiments")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use 10,000 datasets and 500 targets in the experiments.
    #[arg(long, global = true)]
    full: bool,
    /// JSON experiment config; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ArchArgs {
    /// Filter sizes, e.g. 2,2.
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    /// Strides (default all 1).
    #[arg(long, value_delimiter = ',')]
    s: Option<Vec<usize>>,
    /// Output dimension.
    #[arg(long, default_value_t = 1)]
    d_last: usize,
}

impl ArchArgs {
    fn build(&self) -> Result<Architecture, CliError> {
        let s = self.s.clone().unwrap_or_else(|| vec![1; self.k.len()]);
        Ok(Architecture::from_filters(&self.k, &s, self.d_last)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Euclidean,
    Bombieri,
    Data,
}

impl From<NormArg> for LossNorm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Euclidean => LossNorm::Euclidean,
            NormArg::Bombieri => LossNorm::Bombieri,
            NormArg::Data => LossNorm::Data,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Filling, ED bound and, with a target, its function-space region.
    AnalyzeArch {
        #[command(flatten)]
        arch: ArchArgs,
        /// Coefficients, highest x-power first.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        target: Option<Vec<f64>>,
    },
    /// Roots and real root multiplicity pattern of a binary form.
    Classify {
        /// Coefficients, highest x-power first.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        poly: Vec<f64>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Gradient descent on a fixed target or on a sampled dataset.
    Train {
        #[command(flatten)]
        arch: ArchArgs,
        /// Target filter; without it a standard normal dataset is drawn.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        target: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "euclidean")]
        norm: NormArg,
        /// Samples in the drawn dataset.
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Also write the loss trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Real critical points on a multiple root locus.
    Critpoints {
        /// JSON file with the target coefficients (array or {"u": [...]}).
        #[arg(long)]
        target: PathBuf,
        /// Partition, e.g. "2,1,1".
        #[arg(long)]
        lambda: String,
        #[arg(long, default_value = "euclidean")]
        norm: String,
        #[arg(long, default_value_t = DEFAULT_STARTS)]
        starts: usize,
    },
    /// Conserved layer-norm differences of a parameter.
    Invariants {
        /// JSON file with one array of coefficients per layer.
        #[arg(long)]
        theta: PathBuf,
    },
    /// Rescalings of a factorization with prescribed norm differences.
    RecoverScales {
        /// JSON file with the reference factorization, one array per layer.
        #[arg(long)]
        q: PathBuf,
        /// `β_{i+1} - β_i` for consecutive layers.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        deltas: Vec<f64>,
    },
    /// Seeded experiment protocols.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
    /// Loss and discriminant over a random plane in parameter space.
    Landscape {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        target: Vec<f64>,
        #[arg(long, value_enum, default_value = "euclidean")]
        norm: NormArg,
        /// Grid points per axis.
        #[arg(long, default_value_t = 101)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        range: f64,
        /// JSON file with the plane origin, one array per layer.
        #[arg(long)]
        origin: Option<PathBuf>,
    },
    /// Full quartic-target reproduction report.
    #[command(name = "repro-73")]
    Repro73,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Filter sizes of a stride-one architecture.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: TableFormat,
}

#[derive(Subcommand)]
enum Experiment {
    /// Target and solution rrmp shares over random datasets.
    RrmpTable {
        #[command(flatten)]
        common: ExperimentArgs,
        #[arg(long)]
        datasets: Option<usize>,
    },
    /// Distinct converged solutions per target over many initializations.
    Distinct {
        #[command(flatten)]
        common: ExperimentArgs,
        #[arg(long)]
        targets: Option<usize>,
        #[arg(long)]
        inits: Option<usize>,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Discrepancy(String),
}

impl From<LcnError> for CliError {
    fn from(e: LcnError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn read_layers(path: &Path) -> Result<Vec<Filter>, CliError> {
    let layers: Vec<Vec<f64>> = serde_json::from_str(&read(path)?)?;
    layers.into_iter().map(|c| Ok(Filter::new(c)?)).collect()
}

fn read_target(path: &Path) -> Result<Filter, CliError> {
    let v: Value = serde_json::from_str(&read(path)?)?;
    let coeffs = v.get("u").cloned().unwrap_or(v);
    Ok(Filter::new(serde_json::from_value(coeffs)?)?)
}

fn target_loss(u: Vec<f64>, norm: NormArg) -> Result<QuadLoss, CliError> {
    let u = Filter::new(u)?;
    match norm {
        NormArg::Euclidean => Ok(QuadLoss::identity(u)),
        NormArg::Bombieri => Ok(QuadLoss::bombieri(u)),
        NormArg::Data => Err(CliError::Config(
            "a fixed target takes the euclidean or bombieri norm".into(),
        )),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_common(cfg: &mut ExperimentConfig, a: &ExperimentArgs) {
    if let Some(k) = &a.k {
        cfg.k = k.clone();
    }
    if let Some(n) = a.norm {
        cfg.norm = n.into();
    }
    if let Some(n) = a.samples {
        cfg.n_samples = n;
    }
}

fn table_output(fmt: TableFormat, json: serde_json::Result<String>, csv: String) -> Result<String, CliError> {
    Ok(match fmt {
        TableFormat::Csv => csv,
        TableFormat::Json => json?,
    })
}

fn root_json(p: &Filter) -> Result<Vec<Value>, CliError> {
    Ok(find_roots(p)?
        .into_iter()
        .map(|r| match r.value {
            RootValue::Finite(z) => json!({"re": z.re, "im": z.im, "multiplicity": r.multiplicity}),
            RootValue::Infinity => json!({"infinity": true, "multiplicity": r.multiplicity}),
        })
        .collect())
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::AnalyzeArch { arch, target } => {
            let a = arch.build()?;
            let stride_one = a.s.iter().all(|&s| s == 1);
            let ed = |norm| stride_one.then(|| ed_bound(&a, norm).ok()).flatten();
            let region = match target {
                Some(t) => Some(serde_json::to_value(analyze(
                    &Filter::new(t.clone())?,
                    &a,
                    RootTolerance::default(),
                )?)?),
                None => None,
            };
            Ok(to_json(&json!({
                "architecture": a,
                "degree": a.degree(),
                "end_to_end_size": a.end_to_end_size(),
                "end_to_end_stride": a.end_to_end_stride(),
                "filling": is_filling(&a),
                "ed_bound_euclidean": ed(EdNorm::Generic),
                "ed_bound_bombieri": ed(EdNorm::Bombieri),
                "target": region,
            }))?)
        }
        Command::Classify { poly, tol } => {
            let p = Filter::new(poly.clone())?;
            let r = classify_rrmp(&p, RootTolerance::new(*tol)?)?;
            let closed = (2..=4).contains(&p.degree()) && p[0] != 0.0;
            Ok(to_json(&json!({
                "rrmp": r,
                "partition": r.partition(),
                "simple": r.is_simple(),
                "roots": root_json(&p)?,
                "discriminant": discriminant(&p).ok(),
                "sign_rrmp": closed.then(|| rrmp_classify_by_signs(&p).ok()).flatten(),
                "boundary_margin": closed.then(|| boundary_margin(&p).ok()).flatten(),
            }))?)
        }
        Command::Train { arch, target, norm, samples, step, max_iters, trace } => {
            let a = arch.build()?;
            let loss = match target {
                Some(u) => target_loss(u.clone(), *norm)?,
                None => {
                    let mut rng = run_rng(seed, 0);
                    let data = Dataset::sample_normal(a.d[0], arch.d_last, *samples, &mut rng);
                    let (loss, _) = QuadLoss::from_data(&data, &a)?;
                    match norm {
                        NormArg::Data => loss,
                        other => target_loss(loss.u.0, *other)?,
                    }
                }
            };
            let mut cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            if let Some(s) = step {
                cfg.step = *s;
            }
            if let Some(m) = max_iters {
                cfg.max_iters = *m;
            }
            cfg.validate()?;
            let r = gd_train(&a, &loss, &cfg)?;
            if let Some(path) = trace {
                write(Some(path), &trace_csv(&r))?;
            }
            Ok(to_json(&json!({"target": loss.u, "run": r}))?)
        }
        Command::Critpoints { target, lambda, norm, starts } => {
            let u = read_target(target)?;
            let lambda: Partition = lambda.parse()?;
            let loss = match norm.parse::<EdNorm>()? {
                EdNorm::Generic => QuadLoss::identity(u),
                EdNorm::Bombieri => QuadLoss::bombieri(u),
            };
            Ok(to_json(&crit_on_stratum(&loss, &lambda, *starts, seed)?)?)
        }
        Command::Invariants { theta } => {
            let theta = read_layers(theta)?;
            let d = invariants(&theta);
            let rows: Vec<Vec<f64>> = d.row_iter().map(|r| r.iter().copied().collect()).collect();
            let consecutive: Vec<f64> = (1..theta.len()).map(|i| d[(i - 1, i)]).collect();
            Ok(to_json(&json!({
                "norms_sq": theta.iter().map(Filter::norm_sq).collect::<Vec<_>>(),
                "delta": rows,
                "consecutive": consecutive,
            }))?)
        }
        Command::RecoverScales { q, deltas } => {
            let q = read_layers(q)?;
            let sols = recover_scales(&q, deltas)?;
            let out: Vec<Value> = sols
                .iter()
                .map(|s| json!({"beta": s.beta, "kappa": s.kappa, "theta": s.apply(&q)}))
                .collect();
            Ok(to_json(&out)?)
        }
        Command::Experiment { which } => {
            let mut cfg = load_config(cli)?;
            match which {
                Experiment::RrmpTable { common, datasets } => {
                    apply_common(&mut cfg, common);
                    if cli.config.is_none() || datasets.is_some() || cli.full {
                        cfg.n_datasets = datasets.unwrap_or(if cli.full { FULL_DATASETS } else { DESK_DATASETS });
                    }
                    let t = experiment_rrmp_table(&cfg)?;
                    eprintln!("{} of {} runs discarded", t.discarded, t.n_datasets);
                    table_output(common.format, to_json(&t), t.to_csv())
                }
                Experiment::Distinct { common, targets, inits } => {
                    if cli.config.is_none() {
                        cfg.norm = LossNorm::Euclidean;
                        cfg.inits_per_target = DISTINCT_INITS;
                    }
                    apply_common(&mut cfg, common);
                    if cli.config.is_none() || targets.is_some() || cli.full {
                        cfg.n_datasets = targets.unwrap_or(if cli.full { FULL_TARGETS } else { DESK_TARGETS });
                    }
                    if let Some(m) = inits {
                        cfg.inits_per_target = *m;
                    }
                    let r = experiment_distinct_solutions(&cfg)?;
                    eprintln!("{} targets without a converged start", r.no_converged);
                    table_output(common.format, to_json(&r), r.to_csv())
                }
            }
        }
        Command::Landscape { arch, target, norm, n, range, origin } => {
            let a = arch.build()?;
            let loss = target_loss(target.clone(), *norm)?;
            let mut plane = Plane::random(&a, &mut run_rng(seed, 0));
            if let Some(p) = origin {
                plane.origin = read_layers(p)?;
            }
            Ok(grid_csv(&landscape_grid(&a, &loss, &plane, *n, *range)?))
        }
        Command::Repro73 => {
            let rep = repro_section73(seed)?;
            let text = to_json(&rep)?;
            if rep.discrepancies.is_empty() {
                Ok(text)
            } else {
                write(cli.out.as_ref(), &text)?;
                Err(CliError::Discrepancy(rep.discrepancies.join("; ")))
            }
        }
    }
}

fn write(path: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli).and_then(|text| write(cli.out.as_ref(), &text)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Discrepancy(msg)) => {
            eprintln!("discrepancy: {msg}");
            ExitCode::from(3)
        }
    }
}
