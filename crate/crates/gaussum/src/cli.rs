//! Command-line front end: fixtures, reduction experiments, criterion
//! comparison tables, density-grid export and filter/smoother runs.
//!
//! Exit codes: 0 success, 2 argument error, 3 numeric error,
//! 4 reduction-stuck or non-convergence, 1 I/O failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::criteria::CriterionKind;
use crate::error::{Error, Result};
use crate::fixtures;
use crate::gaussmix::{read_mixture, write_mixture, GaussianMixture, MixtureJson};
use crate::quad::{default_box, QuadSpec};
use crate::reduce::{global_kl_fit, reduce_to_with, GlobalFitConfig, ReductionTrace};
use crate::ssm::{
    default_prior, read_model, read_series, run_filter_with, run_smoother, write_run,
    FilterConfig,
};

#[derive(Parser)]
#[command(
    name = "gaussum",
    version,
    about = "Gaussian mixture reduction and Gaussian-sum filtering/smoothing"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone)]
pub struct GlobalOpts {
    /// Seed for the synthetic level-shift fixture.
    #[arg(long, global = true, default_value_t = fixtures::LEVEL_SHIFT_SEED)]
    pub seed: u64,
    /// Relative tolerance of the adaptive 1-D quadrature.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub quad_tol: f64,
    /// Nodes per axis of the 2-D tensor quadrature rule.
    #[arg(long, global = true, default_value_t = 400)]
    pub quad_nodes: usize,
    /// Integration boxes cover component means plus/minus this many
    /// standard deviations.
    #[arg(long, global = true, default_value_t = 10.0)]
    pub quad_box_k: f64,
    /// Rayon thread-pool size (defaults to the number of cores). Results
    /// do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl GlobalOpts {
    fn quad_for(&self, m: &GaussianMixture) -> Result<QuadSpec> {
        Ok(QuadSpec::for_mixture(m, self.quad_box_k)?
            .with_rel_tol(self.quad_tol)
            .with_nodes_per_axis(self.quad_nodes))
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Write the benchmark mixtures and the synthetic level-shift series.
    Fixtures(FixturesArgs),
    /// Greedy reduction of a mixture to a target order.
    Reduce(ReduceArgs),
    /// KL-to-truth table across criteria and orders (CSV).
    Compare(CompareArgs),
    /// Evaluate a mixture density on a grid (CSV).
    EvalGrid(EvalGridArgs),
    /// Gaussian-sum filter over an observation series.
    Filter(FilterArgs),
    /// Gaussian-sum filter plus fixed-interval smoother.
    Smooth(FilterArgs),
}

#[derive(Args)]
pub struct FixturesArgs {
    /// Directory receiving table1.json, table3.json and levelshift.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct ReduceArgs {
    /// Input mixture JSON.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Target order.
    #[arg(long)]
    pub to: usize,
    #[arg(long, default_value = "pearson")]
    pub criterion: CriterionKind,
    /// Record the numeric KL divergence to the input at every order.
    #[arg(long)]
    pub track_kl: bool,
    /// Output mixture JSON (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional reduction trace JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Input mixture JSON.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Criteria columns.
    #[arg(long, value_delimiter = ',', default_values_t = vec![
        CriterionKind::RunnallsBound,
        CriterionKind::KitagawaWkl,
        CriterionKind::PearsonChi2,
        CriterionKind::NumericKl,
    ])]
    pub criteria: Vec<CriterionKind>,
    /// Target orders, e.g. "1-15" or "2,4,8" (default: all below the input
    /// order).
    #[arg(long)]
    pub orders: Option<String>,
    /// Add a column with the globally KL-fitted mixture per order (slow).
    #[arg(long)]
    pub optimal: bool,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalGridArgs {
    /// Input mixture JSON.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Lower grid corner, comma-separated (default: mean - 5 sigma box).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lo: Option<Vec<f64>>,
    /// Upper grid corner, comma-separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub hi: Option<Vec<f64>>,
    /// Points per axis (default 401 in 1-D, 201 in 2-D).
    #[arg(long)]
    pub points: Option<usize>,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FilterArgs {
    /// Model JSON (matrices F/G/H plus the two noise mixtures).
    #[arg(long)]
    pub model: PathBuf,
    /// Observation series CSV, one vector per row.
    #[arg(long)]
    pub data: PathBuf,
    /// Maximum number of posterior components.
    #[arg(long)]
    pub cap: usize,
    #[arg(long, default_value = "pearson")]
    pub criterion: CriterionKind,
    /// Optional prior mixture JSON (default: zero mean, covariance 1e4 I).
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Also cap the predicted mixture before each measurement update.
    #[arg(long)]
    pub cap_after_predict: bool,
    /// Output run JSON (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(threads) = cli.global.threads {
        // Ignored when a global pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fixtures(args) => cmd_fixtures(args, &cli.global),
        Command::Reduce(args) => cmd_reduce(args, &cli.global),
        Command::Compare(args) => cmd_compare(args, &cli.global),
        Command::EvalGrid(args) => cmd_eval_grid(args),
        Command::Filter(args) => cmd_filter(args, false),
        Command::Smooth(args) => cmd_filter(args, true),
    }
}

/// Nine significant digits, as used by all CSV output.
fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, text)?;
            Ok(())
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn cmd_fixtures(args: &FixturesArgs, global: &GlobalOpts) -> Result<()> {
    fs::create_dir_all(&args.out_dir)?;
    write_mixture(&args.out_dir.join("table1.json"), &fixtures::benchmark_mixture_1d())?;
    write_mixture(&args.out_dir.join("table3.json"), &fixtures::benchmark_mixture_2d())?;
    let series = fixtures::level_shift_series(global.seed);
    let mut csv = String::with_capacity(series.len() * 20);
    for v in &series {
        csv.push_str(&format!("{v}\n"));
    }
    fs::write(args.out_dir.join("levelshift.csv"), csv)?;
    eprintln!(
        "wrote table1.json, table3.json, levelshift.csv to {}",
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TraceJson<'a> {
    steps: &'a [crate::reduce::ReductionStep],
    final_mixture: MixtureJson,
}

fn write_trace(path: &Path, trace: &ReductionTrace) -> Result<()> {
    let raw = TraceJson {
        steps: &trace.steps,
        final_mixture: MixtureJson::from_mixture(&trace.final_mixture),
    };
    fs::write(path, serde_json::to_string_pretty(&raw)? + "\n")?;
    Ok(())
}

pub fn cmd_reduce(args: &ReduceArgs, global: &GlobalOpts) -> Result<()> {
    let mixture = read_mixture(&args.input)?.normalize()?;
    let quad = global.quad_for(&mixture)?;
    let trace = reduce_to_with(&mixture, args.to, args.criterion, args.track_kl, Some(&quad))?;
    for s in &trace.steps {
        match s.kl_to_true {
            Some(kl) => eprintln!(
                "order {} -> {}: merged ({}, {}), score {}, kl {}",
                s.order_before,
                s.order_before - 1,
                s.chosen_pair.0,
                s.chosen_pair.1,
                fmt9(s.score),
                fmt9(kl)
            ),
            None => eprintln!(
                "order {} -> {}: merged ({}, {}), score {}",
                s.order_before,
                s.order_before - 1,
                s.chosen_pair.0,
                s.chosen_pair.1,
                fmt9(s.score)
            ),
        }
    }
    if let Some(trace_path) = &args.trace {
        write_trace(trace_path, &trace)?;
    }
    write_text(
        args.out.as_deref(),
        &(trace.final_mixture.to_json() + "\n"),
    )
}

fn parse_orders(spec: &str, max_order: usize) -> Result<Vec<usize>> {
    let mut orders = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad_orders(spec))?;
            let b: usize = b.trim().parse().map_err(|_| bad_orders(spec))?;
            if a > b {
                return Err(bad_orders(spec));
            }
            orders.extend(a..=b);
        } else {
            orders.push(part.parse().map_err(|_| bad_orders(spec))?);
        }
    }
    orders.sort_unstable();
    orders.dedup();
    if orders.is_empty() || orders[0] < 1 || *orders.last().unwrap() > max_order {
        return Err(Error::Argument(format!(
            "orders must lie in 1..={max_order}, got `{spec}`"
        )));
    }
    Ok(orders)
}

fn bad_orders(spec: &str) -> Error {
    Error::Argument(format!("cannot parse orders `{spec}` (expected e.g. `1-15` or `2,4,8`)"))
}

pub fn cmd_compare(args: &CompareArgs, global: &GlobalOpts) -> Result<()> {
    let mixture = read_mixture(&args.input)?.normalize()?;
    let quad = global.quad_for(&mixture)?;
    let orders = match &args.orders {
        Some(spec) => parse_orders(spec, mixture.order())?,
        None => (1..mixture.order()).collect(),
    };
    let min_order = orders[0];

    // One tracked reduction per criterion covers every requested order. The
    // Pearson safe-guard can exclude every remaining pair before the lowest
    // order is reached; the table still needs those rows, so a stuck column
    // is continued under the log-determinant bound (the endpoint of a full
    // collapse is criterion-independent anyway).
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for &kind in &args.criteria {
        let trace = match reduce_to_with(&mixture, min_order, kind, true, Some(&quad)) {
            Ok(trace) => trace,
            Err(Error::ReductionStuck { partial: Some(partial), .. }) => {
                eprintln!(
                    "note: {kind} excluded every pair at order {}; finishing its column \
                     with runnalls",
                    partial.final_mixture.order()
                );
                let mut steps = partial.steps;
                let mut current = partial.final_mixture;
                while current.order() > min_order {
                    let order_before = current.order();
                    let (next, chosen_pair, score) =
                        crate::reduce::reduce_step(&current, CriterionKind::RunnallsBound)?;
                    current = next;
                    steps.push(crate::reduce::ReductionStep {
                        order_before,
                        chosen_pair,
                        score,
                        kl_to_true: Some(crate::quad::kl_numeric(&mixture, &current, &quad)?),
                    });
                }
                ReductionTrace { steps, final_mixture: current }
            }
            Err(e) => return Err(e),
        };
        let kl_at = |order: usize| -> f64 {
            if order == mixture.order() {
                0.0
            } else {
                trace
                    .steps
                    .iter()
                    .find(|s| s.order_before == order + 1)
                    .and_then(|s| s.kl_to_true)
                    .expect("tracked step for every visited order")
            }
        };
        columns.push((kind.to_string(), orders.iter().map(|&m| kl_at(m)).collect()));
    }
    if args.optimal {
        let mut vals = Vec::with_capacity(orders.len());
        for &m in &orders {
            let cfg = GlobalFitConfig { quad: Some(quad.clone()), ..Default::default() };
            let fit = global_kl_fit(&mixture, m, &cfg, None)?;
            if !fit.converged {
                eprintln!("optimal fit at order {m}: optimizer did not converge, keeping best");
            }
            vals.push(fit.kl);
        }
        columns.push(("optimal".into(), vals));
    }

    let mut csv = String::from("m");
    for (name, _) in &columns {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for (row, &m) in orders.iter().enumerate().rev() {
        csv.push_str(&m.to_string());
        for (_, vals) in &columns {
            csv.push(',');
            csv.push_str(&fmt9(vals[row]));
        }
        csv.push('\n');
    }
    write_text(args.out.as_deref(), &csv)
}

pub fn cmd_eval_grid(args: &EvalGridArgs) -> Result<()> {
    let mixture = read_mixture(&args.input)?.normalize()?;
    let d = mixture.dim();
    if d > 2 {
        return Err(Error::Argument(format!(
            "eval-grid supports dimensions 1 and 2, mixture has dimension {d}"
        )));
    }
    let (lo, hi) = match (&args.lo, &args.hi) {
        (Some(lo), Some(hi)) => (lo.clone(), hi.clone()),
        (None, None) => default_box(&mixture, 5.0)?,
        _ => {
            return Err(Error::Argument(
                "either give both --lo and --hi or neither".into(),
            ));
        }
    };
    if lo.len() != d
        || hi.len() != d
        || lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| a.partial_cmp(b) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::Argument(format!(
            "grid corners must be {d}-dimensional with lo < hi"
        )));
    }
    let points = args.points.unwrap_or(if d == 1 { 401 } else { 201 });
    if points < 2 {
        return Err(Error::Argument("grid needs at least 2 points per axis".into()));
    }
    let axis = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (points - 1) as f64;

    let mut csv = String::new();
    match d {
        1 => {
            csv.push_str("x,density\n");
            for i in 0..points {
                let x = axis(0, i);
                let v = mixture.density_unchecked(&[x]);
                csv.push_str(&format!("{},{}\n", fmt9(x), fmt9(v)));
            }
        }
        _ => {
            csv.push_str("x,y,density\n");
            for i in 0..points {
                let x = axis(0, i);
                for j in 0..points {
                    let y = axis(1, j);
                    let v = mixture.density_unchecked(&[x, y]);
                    csv.push_str(&format!("{},{},{}\n", fmt9(x), fmt9(y), fmt9(v)));
                }
            }
        }
    }
    write_text(args.out.as_deref(), &csv)
}

pub fn cmd_filter(args: &FilterArgs, smooth: bool) -> Result<()> {
    let model = read_model(&args.model)?;
    let ys = read_series(&args.data)?;
    let prior = match &args.prior {
        Some(p) => read_mixture(p)?.normalize()?,
        None => default_prior(model.state_dim()),
    };
    let cfg = FilterConfig {
        cap_m: args.cap,
        criterion: args.criterion,
        cap_after_predict: args.cap_after_predict,
    };
    let mut run = run_filter_with(&model, &ys, &prior, &cfg)?;
    if smooth {
        run = run_smoother(&run, &model)?;
    }
    eprintln!(
        "{} steps, cap {}, criterion {}, log-likelihood {}",
        run.filtered.len(),
        run.cap_m,
        run.criterion,
        fmt9(run.log_likelihood)
    );
    match &args.out {
        Some(path) => write_run(path, &run),
        None => write_text(None, &(run.to_json() + "\n")),
    }
}
