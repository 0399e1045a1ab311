use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use wassnet::io::{read_json, read_points, write_json};
use wassnet::prior::{tune, Granularity, GpTarget, RbfKernel, TuneOptions};
use wassnet::quantizer::QuantizerTable;
use wassnet::snn::{propagate, sample_network, BoundLedger, PropagationConfig, SnnModel};
use wassnet::transport::{empirical_w2_with_cap, mw2, relative_w2};
use wassnet::{Error, GaussianMixture, TOL};

#[derive(Parser)]
#[command(name = "wassnet", version, about = "Gaussian-mixture approximations of stochastic networks with certified W2 bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the table of optimal scalar Gaussian quantizers.
    QuantizerBuild {
        #[arg(long, alias = "max_n")]
        max_n: usize,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Approximate a network at a set of points by a Gaussian mixture.
    Approximate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: PathBuf,
        /// Signature size per component.
        #[arg(long, default_value_t = 10)]
        budget: usize,
        /// Compression size.
        #[arg(long = "m", alias = "M", default_value_t = 5)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Quantizer table; built in memory when absent.
        #[arg(long, env = "WASSNET_TABLE")]
        table: Option<PathBuf>,
        #[arg(long, alias = "out_gmm")]
        out_gmm: PathBuf,
        #[arg(long, alias = "out_ledger")]
        out_ledger: PathBuf,
    },
    /// Sample-based W2 between a network and a mixture.
    Empirical {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        gmm: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ledger from `approximate` to annotate with the estimate.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Mixture Wasserstein distance between two mixture files.
    Mw2 {
        #[arg(long, alias = "gmm_a")]
        gmm_a: PathBuf,
        #[arg(long, alias = "gmm_b")]
        gmm_b: PathBuf,
        /// Where to write the optimal plan.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Tune prior variances of a zero-mean template toward a GP.
    TunePrior {
        #[arg(long)]
        arch: PathBuf,
        /// Target kernel, e.g. rbf:ls=0.5,var=1
        #[arg(long)]
        gp: String,
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        beta: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Points per mini-batch; 0 uses all points.
        #[arg(long, default_value_t = 0)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        step_size: f64,
        #[arg(long, default_value_t = 0.99)]
        decay: f64,
        #[arg(long, default_value = "per-layer")]
        granularity: Granularity,
        #[arg(long, default_value_t = 10)]
        budget: usize,
        #[arg(long = "m", alias = "M", default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, env = "WASSNET_TABLE")]
        table: Option<PathBuf>,
        /// Tune report.
        #[arg(long)]
        out: PathBuf,
        /// Tuned model; defaults to `<out>.model.json`.
        #[arg(long)]
        out_model: Option<PathBuf>,
    },
    /// Render ledgers as a markdown table.
    Report {
        ledgers: Vec<PathBuf>,
        #[arg(long, default_value = "md")]
        format: String,
    },
}

/// Ledger file written by `approximate`.
#[derive(Debug, Serialize, Deserialize)]
struct LedgerFile {
    model: String,
    d: usize,
    budget: usize,
    m: usize,
    seed: u64,
    ledger: BoundLedger,
    audit: bool,
    /// Bound relative to the produced mixture; null for a zero reference.
    relative_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    empirical: Option<EmpiricalRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmpiricalRecord {
    samples: usize,
    seed: u64,
    w2: f64,
    std_error: f64,
    relative: Option<f64>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 4 } else { 3 })
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::QuantizerBuild { max_n, tol, out } => quantizer_build(max_n, tol, &out),
        Command::Approximate {
            model,
            points,
            budget,
            m,
            seed,
            table,
            out_gmm,
            out_ledger,
        } => approximate(&model, &points, budget, m, seed, table.as_deref(), &out_gmm, &out_ledger),
        Command::Empirical {
            model,
            points,
            gmm,
            samples,
            seed,
            ledger,
        } => empirical(&model, &points, &gmm, samples, seed, ledger.as_deref()),
        Command::Mw2 { gmm_a, gmm_b, plan } => mw2_cmd(&gmm_a, &gmm_b, plan.as_deref()),
        Command::TunePrior {
            arch,
            gp,
            points,
            beta,
            steps,
            batch,
            seed,
            step_size,
            decay,
            granularity,
            budget,
            m,
            samples,
            table,
            out,
            out_model,
        } => {
            let opts = TuneOptions {
                beta,
                steps,
                step_size,
                decay,
                batch,
                seed,
                granularity,
                n_samples: samples,
                ..TuneOptions::default()
            };
            let out_model = out_model.unwrap_or_else(|| out.with_extension("model.json"));
            tune_prior(&arch, &gp, &points, budget, m, table.as_deref(), &opts, &out, &out_model)
        }
        Command::Report { ledgers, format } => report(&ledgers, &format),
    }
}

fn positive(name: &str, v: usize) -> CmdResult {
    if v == 0 {
        return Err(Failure::Usage(format!("--{name} must be at least 1")));
    }
    Ok(())
}

/// Prefixes input errors with the offending file.
fn in_file<T>(path: &Path, r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        Error::Json(_) | Error::Io(_) | Error::Invalid(_) | Error::Dimension { .. } => {
            Error::Invalid(format!("{}: {e}", path.display()))
        }
        e => e,
    })
}

fn load_model(path: &Path) -> Result<SnnModel, Error> {
    in_file(path, std::fs::read_to_string(path).map_err(Error::from).and_then(|t| SnnModel::from_json(&t)))
}

fn load_points(path: &Path) -> Result<Vec<nalgebra::DVector<f64>>, Error> {
    in_file(path, read_points(path))
}

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    in_file(path, read_json(path))
}

fn load_table(path: Option<&Path>) -> Result<Option<QuantizerTable>, Error> {
    path.map(|p| in_file(p, QuantizerTable::load(p))).transpose()
}

fn quantizer_build(max_n: usize, tol: f64, out: &Path) -> CmdResult {
    positive("max-n", max_n)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Failure::Usage("--tol must be positive".into()));
    }
    let table = QuantizerTable::build(max_n, tol, TOL.quantizer_max_iters)?;
    std::fs::write(out, table.to_json()?).map_err(Error::from)?;
    eprintln!("wrote {} quantizers to {}", max_n, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn approximate(
    model_path: &Path,
    points: &Path,
    budget: usize,
    m: usize,
    seed: u64,
    table: Option<&Path>,
    out_gmm: &Path,
    out_ledger: &Path,
) -> CmdResult {
    positive("budget", budget)?;
    positive("m", m)?;
    let model = load_model(model_path)?;
    let points = load_points(points)?;
    let table = load_table(table)?;
    let mut cfg = PropagationConfig::new(budget, m);
    cfg.seed = seed;
    if let Some(t) = &table {
        cfg.table = t;
    }
    let (mix, ledger) = propagate(&model, &points, &cfg)?;
    let relative_bound = relative_or_none(ledger.bound, &mix)?;
    let file = LedgerFile {
        model: model_path.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        d: points.len(),
        budget,
        m,
        seed,
        audit: ledger.audit(),
        ledger,
        relative_bound,
        empirical: None,
    };
    write_json(out_gmm, &mix)?;
    write_json(out_ledger, &file)?;
    println!("components {}", mix.len());
    println!("bound {}", file.ledger.bound);
    match relative_bound {
        Some(r) => println!("relative_bound {r}"),
        None => println!("relative_bound undefined"),
    }
    Ok(())
}

fn relative_or_none(w2: f64, reference: &GaussianMixture) -> Result<Option<f64>, Error> {
    if reference.second_moment() > 0.0 {
        relative_w2(w2, reference).map(Some)
    } else {
        Ok(None)
    }
}

fn empirical(model: &Path, points: &Path, gmm: &Path, samples: usize, seed: u64, ledger: Option<&Path>) -> CmdResult {
    positive("samples", samples)?;
    let model = load_model(model)?;
    let points = load_points(points)?;
    let mix: GaussianMixture = load(gmm)?;
    let dim = model.output_dim() * points.len();
    if mix.dim() != dim {
        let e = Error::Dimension {
            expected: dim,
            got: mix.dim(),
            context: "mixture dimension against model output times points",
        };
        return Err(in_file::<()>(gmm, Err(e)).unwrap_err().into());
    }
    let xs = sample_network(&model, &points, samples, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let ys = mix.sample(samples, &mut rng)?;
    let est = match empirical_w2_with_cap(&xs, &ys, TOL.empirical_cost_cap) {
        Err(Error::TooLarge { entries, cap }) => {
            eprintln!("hint: {samples} samples need {entries} cost entries; reduce --samples");
            return Err(Error::TooLarge { entries, cap }.into());
        }
        r => r?,
    };
    let relative = relative_or_none(est.w2, &mix)?;
    println!("empirical_w2 {}", est.w2);
    println!("std_error {}", est.std_error);
    match relative {
        Some(r) => println!("relative_w2 {r}"),
        None => println!("relative_w2 undefined"),
    }
    if let Some(path) = ledger {
        let mut file: LedgerFile = load(path)?;
        file.empirical = Some(EmpiricalRecord {
            samples,
            seed,
            w2: est.w2,
            std_error: est.std_error,
            relative,
        });
        write_json(path, &file)?;
    }
    Ok(())
}

fn mw2_cmd(a: &Path, b: &Path, plan: Option<&Path>) -> CmdResult {
    let p: GaussianMixture = load(a)?;
    let q: GaussianMixture = load(b)?;
    let (d, t) = mw2(&p, &q)?;
    println!("{d}");
    if let Some(path) = plan {
        write_json(path, &t)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn tune_prior(
    arch: &Path,
    gp: &str,
    points: &Path,
    budget: usize,
    m: usize,
    table: Option<&Path>,
    opts: &TuneOptions,
    out: &Path,
    out_model: &Path,
) -> CmdResult {
    positive("budget", budget)?;
    positive("m", m)?;
    positive("steps", opts.steps)?;
    positive("samples", opts.n_samples)?;
    let kernel: RbfKernel = gp.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let template = load_model(arch)?;
    let target = GpTarget::new(kernel, load_points(points)?)?;
    let table = load_table(table)?;
    let mut cfg = PropagationConfig::new(budget, m);
    cfg.seed = opts.seed;
    if let Some(t) = &table {
        cfg.table = t;
    }
    let (report, tuned) = tune(&template, &target, &cfg, opts)?;
    write_json(out, &report)?;
    write_json(out_model, &tuned)?;
    println!("initial_loss {}", report.initial.loss);
    println!("final_loss {}", report.final_loss.loss);
    println!("relative_w2_empirical {} -> {}", report.initial_relative_w2.empirical, report.relative_w2.empirical);
    Ok(())
}

fn report(ledgers: &[PathBuf], format: &str) -> CmdResult {
    if format != "md" {
        return Err(Failure::Usage(format!("unsupported format {format:?}; only md is available")));
    }
    let mut out = String::from("| model | D | budget | M | empirical | formal |\n|---|---|---|---|---|---|\n");
    for path in ledgers {
        let f: LedgerFile = load(path)?;
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            f.model,
            f.d,
            f.budget,
            f.m,
            cell(f.empirical.as_ref().and_then(|e| e.relative)),
            cell(f.relative_bound)
        ));
    }
    print!("{out}");
    Ok(())
}
