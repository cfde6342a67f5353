//! Command-line front end: subcommands, config files, CSV/JSON output and
//! run manifests.
//!
//! Exit codes: 0 success, 1 usage or argument error, 2 numeric, resource or
//! I/O failure, 3 failed check.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::disorder::DisorderLaw;
use crate::hierarchy::GraphParams;
use crate::montecarlo::{self, McConfig, Temperature};
use crate::partition::{evaluate_conditional, local_partition_functions, q_map_power, DisorderAssignment};
use crate::scaling::{self, ScheduleMode, TemperatureSchedule};
use crate::{moments, variance_flow, Error};

pub use config::{config_args, load_config, parse_config, ConfigEntry};
pub use manifest::RunManifest;

/// Flags naming output files; recorded in a manifest but not in its digest.
const OUTPUT_FLAGS: [&str; 2] = ["out", "summary"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Library(#[from] Error),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Clap(#[from] clap::Error),
}

impl CliError {
    fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("cannot write {}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Clap(_) | CliError::Library(Error::Argument(_)) => 1,
            CliError::Library(_) | CliError::Io(_) => 2,
        }
    }
}

fn is_global_flag(id: &str) -> bool {
    matches!(id, "config" | "threads" | "help" | "version")
}

#[derive(Debug, Parser)]
#[command(
    name = "dpre",
    version,
    about = "Directed polymers on diamond hierarchical graphs: exact recursions, variance flows and Monte Carlo",
    args_override_self = true
)]
pub struct Cli {
    /// `key = value` file of flag defaults for the subcommand; flags given on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "DPRE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Edge, vertex and path counts of D_n.
    GraphInfo(GraphInfoArgs),
    /// Monte Carlo samples of W_n with bootstrap moment estimates.
    #[command(after_help = "CSV columns: replicate,w\nJSON summary keys: config_digest, summary")]
    Sample(SampleArgs),
    /// Iterate the variance map M_V from 0.
    #[command(
        after_help = "CSV columns: n,r,value,residual\n  n = step k, value = Var(W_k), residual = arctan coordinate r_k - k/n_eff (b = s window runs only)"
    )]
    VarianceFlow(VarianceFlowArgs),
    /// Limiting variance function R(r).
    #[command(
        after_help = "CSV columns: n,r,value,residual\n  b = s: n = N, value = M^N(V_{N,r}), residual = |M(R(r)) - R(r+1)| / R(r+1) at the same N\n  b < s: n = K, value = R_{b,s}(r), residual = |R(s r/b) - M(R(r))|"
    )]
    Rfunc(RfuncArgs),
    /// Exact integer moments of W_k.
    #[command(after_help = "CSV columns: n,k,m,raw_moment,centered_moment")]
    Moments(MomentsArgs),
    /// Check E[W_n | F^N] = 1 + Q^N(local - 1) on sampled disorder.
    #[command(after_help = "CSV columns: replicate,conditional,q_value,rel_diff\nExit code 3 when any rel_diff exceeds --tol.")]
    IdentityCheck(IdentityCheckArgs),
    /// Variance-level asymptotics along an n grid.
    #[command(
        after_help = "CSV columns: n,r,value,residual\n  lemma32: value = Δ, residual = L|Δ|\n  l2-gap:  value = residual = M_v^n(0) - M^L(M_v^{n-L}(0))\n  prop22:  value = rescaled variance, residual = relative distance to its limit\n  lemma36: value = residual = m-th centered moment of W_{n-L}\nWith --check, exit code 3 unless every residual sequence strictly decreases."
    )]
    Asymptotics(AsymptoticsArgs),
    /// Monte Carlo estimate of b^{-n} E[log W_n].
    #[command(after_help = "CSV columns: n,beta,estimate,standard_error,replicates")]
    FreeEnergy(FreeEnergyArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct GraphInfoArgs {
    #[arg(long, default_value_t = 2)]
    b: u32,
    /// Defaults to b.
    #[arg(long)]
    s: Option<u32>,
    #[arg(long, default_value_t = 3)]
    n: u32,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, default_value_t = 2)]
    b: u32,
    /// Defaults to b.
    #[arg(long)]
    s: Option<u32>,
    #[arg(long, default_value_t = 6)]
    n: u32,
    /// gaussian, rademacher or twopoint:<p>.
    #[arg(long, default_value = "gaussian")]
    law: DisorderLaw,
    #[arg(long, conflicts_with = "schedule", required_unless_present = "schedule", allow_hyphen_values = true)]
    beta: Option<f64>,
    /// closed or exactv.
    #[arg(long)]
    schedule: Option<ScheduleMode>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    r: f64,
    #[arg(long, default_value_t = 10_000)]
    replicates: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = montecarlo::DEFAULT_BOOTSTRAP_RESAMPLES)]
    bootstrap: u32,
    #[arg(long, default_value_t = montecarlo::DEFAULT_MAX_ORDER)]
    m_max: u32,
    /// Per-replicate CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VarianceFlowArgs {
    #[arg(long, default_value_t = 2)]
    b: u32,
    /// Defaults to b.
    #[arg(long)]
    s: Option<u32>,
    /// Window size used for V(β_{n,r}) and the arctan coordinates.
    #[arg(long, default_value_t = 1000)]
    n: u64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    r: f64,
    #[arg(long, default_value = "gaussian")]
    law: DisorderLaw,
    #[arg(long, default_value = "exactv")]
    schedule: ScheduleMode,
    /// Explicit per-vertex variance, instead of the schedule.
    #[arg(long, conflicts_with = "beta")]
    v: Option<f64>,
    /// Explicit β, instead of the schedule.
    #[arg(long)]
    beta: Option<f64>,
    /// Number of steps; defaults to n.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RfuncArgs {
    #[arg(long, default_value_t = 2)]
    b: u32,
    /// Defaults to b; s > b selects the R_{b,s} family.
    #[arg(long)]
    s: Option<u32>,
    #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
    r: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "10000,100000,1000000")]
    grid: Vec<u64>,
    /// Refinement depth for s > b.
    #[arg(long, default_value_t = 60)]
    k: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MomentsArgs {
    #[arg(long, default_value_t = 2)]
    b: u32,
    /// Number of generations.
    #[arg(long, default_value_t = 6)]
    n: u64,
    #[arg(long, default_value = "gaussian")]
    law: DisorderLaw,
    #[arg(long, conflicts_with = "schedule", required_unless_present = "schedule", allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long)]
    schedule: Option<ScheduleMode>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    r: f64,
    #[arg(long, default_value_t = 4)]
    m_max: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IdentityCheckArgs {
    #[arg(long, default_value_t = 2)]
    b: u32,
    /// Defaults to b.
    #[arg(long)]
    s: Option<u32>,
    #[arg(long, default_value_t = 3)]
    n: u32,
    /// Conditioning generation N.
    #[arg(long, default_value_t = 1)]
    cutoff: u32,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value = "gaussian")]
    law: DisorderLaw,
    /// Number of disorder realizations.
    #[arg(long, default_value_t = 20)]
    replicates: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AsymptoticKind {
    Lemma32,
    L2Gap,
    Prop22,
    Lemma36,
}

#[derive(Debug, Args)]
struct AsymptoticsArgs {
    #[arg(long, value_enum)]
    kind: AsymptoticKind,
    #[arg(long, default_value_t = 2)]
    b: u32,
    #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
    r: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000,1000000")]
    grid: Vec<u64>,
    /// β̂ for prop22.
    #[arg(long, default_value_t = 2.0)]
    beta_hat: f64,
    /// Moment order for lemma36.
    #[arg(long, default_value_t = 4)]
    m: u32,
    #[arg(long, default_value = "gaussian")]
    law: DisorderLaw,
    /// Fail with exit code 3 unless residuals strictly decrease along the grid.
    #[arg(long)]
    check: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FreeEnergyArgs {
    #[arg(long, default_value_t = 2)]
    b: u32,
    /// Defaults to b.
    #[arg(long)]
    s: Option<u32>,
    #[arg(long, default_value_t = 6)]
    n: u32,
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value = "gaussian")]
    law: DisorderLaw,
    #[arg(long, default_value_t = 10_000)]
    replicates: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write the replayed outputs into this directory under their original
    /// file names.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_number(x: f64) -> String {
    let magnitude = x.abs();
    if x != 0.0 && x.is_finite() && !(1e-5..1e16).contains(&magnitude) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

struct Csv {
    text: String,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        Self { text: header.join(",") + "\n" }
    }

    fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("summary serializes") + "\n"
}

/// Resolved parameters and output paths of a parsed subcommand.
struct Resolved {
    name: String,
    parameters: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Resolved {
    fn new(name: &str, matches: &ArgMatches) -> Self {
        let command = Cli::command();
        let sub = command.find_subcommand(name).expect("parsed subcommand exists");
        let mut parameters = BTreeMap::new();
        let mut outputs = BTreeMap::new();
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            if is_global_flag(id) {
                continue;
            }
            let Some(long) = arg.get_long() else { continue };
            let Some(raw) = matches.get_raw(id) else { continue };
            let value = raw.map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(",");
            if OUTPUT_FLAGS.contains(&id) {
                outputs.insert(long.to_string(), value);
            } else {
                parameters.insert(long.to_string(), value);
            }
        }
        Self { name: name.to_string(), parameters, outputs }
    }

    fn digest(&self) -> String {
        manifest::digest(&self.name, &self.parameters)
    }

    /// Writes `<first output>.manifest.json` when the run wrote files.
    fn write_manifest(&self) -> Result<(), CliError> {
        let Some(first) = self.outputs.get("out").or_else(|| self.outputs.values().next()) else {
            return Ok(());
        };
        let manifest = RunManifest::new(&self.name, self.parameters.clone(), self.outputs.clone());
        manifest.write(Path::new(&format!("{first}.manifest.json")))
    }
}

/// Index of the subcommand token: the first bare word that is not the value
/// of a global flag.
fn subcommand_position(argv: &[OsString]) -> Option<usize> {
    (1..argv.len()).find(|&i| {
        let word = argv[i].to_str().unwrap_or("");
        !word.starts_with('-') && !matches!(argv[i - 1].to_str(), Some("--config" | "--threads"))
    })
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut iter = argv.iter().skip(1);
    while let Some(arg) = iter.next() {
        let text = arg.to_str().unwrap_or("");
        if text == "--" {
            break;
        }
        if text == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(path) = text.strip_prefix("--config=") {
            return Some(PathBuf::from(path));
        }
    }
    None
}

fn parse(argv: Vec<OsString>) -> Result<(Cli, ArgMatches), CliError> {
    let command = Cli::command();
    let argv = match (config_path(&argv), subcommand_position(&argv)) {
        (Some(path), Some(pos)) => {
            let name = argv[pos].to_string_lossy().into_owned();
            let sub = command
                .find_subcommand(&name)
                .ok_or_else(|| CliError::Usage(format!("unknown subcommand {name:?}")))?;
            let extra = config_args(&load_config(&path)?, sub)?;
            let mut full: Vec<OsString> = argv[..=pos].to_vec();
            full.extend(extra);
            full.extend_from_slice(&argv[pos + 1..]);
            full
        }
        _ => argv,
    };
    let matches = command.try_get_matches_from(argv)?;
    let cli = Cli::from_arg_matches(&matches)?;
    Ok((cli, matches))
}

/// Runs the command line and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    match execute(argv) {
        Ok(code) => code,
        Err(CliError::Clap(err)) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            code
        }
        Err(err) => {
            eprintln!("dpre: {err}");
            err.exit_code()
        }
    }
}

fn execute(argv: Vec<OsString>) -> Result<i32, CliError> {
    let (cli, matches) = parse(argv)?;
    let workers = cli.threads.unwrap_or_else(montecarlo::default_workers).max(1);
    // a second build (replay) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    let (name, sub_matches) = matches.subcommand().expect("a subcommand is required");
    let resolved = Resolved::new(name, sub_matches);
    let code = match cli.command {
        Command::GraphInfo(args) => graph_info(&args)?,
        Command::Sample(args) => sample(&args, &resolved, workers)?,
        Command::VarianceFlow(args) => variance_flow_cmd(&args)?,
        Command::Rfunc(args) => rfunc(&args)?,
        Command::Moments(args) => moments_cmd(&args)?,
        Command::IdentityCheck(args) => identity_check(&args)?,
        Command::Asymptotics(args) => asymptotics(&args)?,
        Command::FreeEnergy(args) => free_energy(&args, workers)?,
        Command::Replay(args) => return replay(&args, cli.threads),
    };
    resolved.write_manifest()?;
    Ok(code)
}

fn graph_info(args: &GraphInfoArgs) -> Result<i32, CliError> {
    let params = GraphParams::new(args.b, args.s.unwrap_or(args.b), args.n)?;
    let mut text = String::new();
    let _ = writeln!(text, "b {}\ns {}\nn {}", params.b, params.s, params.n);
    let _ = writeln!(text, "edge_count {}", params.edge_count()?);
    for g in 1..=params.n {
        let _ = writeln!(text, "vertex_count_generation_{g} {}", params.new_vertex_count(g)?);
    }
    let _ = writeln!(text, "total_vertex_count {}", params.total_vertex_count()?);
    match params.path_count() {
        Ok(count) => {
            let _ = writeln!(text, "path_count {count}");
        }
        Err(_) => {
            let _ = writeln!(text, "path_count exceeds_u128");
        }
    }
    let path_vertices = u64::from(params.s).checked_pow(params.n).map(|x| x - 1);
    if let Some(count) = path_vertices {
        let _ = writeln!(text, "path_vertex_count {count}");
    }
    emit(None, &text)?;
    Ok(0)
}

fn temperature(beta: Option<f64>, schedule: Option<ScheduleMode>, r: f64, law: DisorderLaw) -> Result<Temperature, CliError> {
    match (beta, schedule) {
        (Some(beta), None) => Ok(Temperature::Fixed { beta }),
        (None, Some(mode)) => Ok(Temperature::Schedule(TemperatureSchedule::new(mode, r, law))),
        _ => Err(CliError::Usage("give exactly one of --beta and --schedule".into())),
    }
}

#[derive(Serialize)]
struct SummaryFile<'a, T: Serialize> {
    config_digest: String,
    summary: &'a T,
}

fn sample(args: &SampleArgs, resolved: &Resolved, workers: usize) -> Result<i32, CliError> {
    let params = GraphParams::new(args.b, args.s.unwrap_or(args.b), args.n)?;
    let mut config = McConfig::new(
        params,
        args.law,
        temperature(args.beta, args.schedule, args.r, args.law)?,
        args.replicates,
        args.seed,
    );
    config.bootstrap_resamples = args.bootstrap;
    config.m_max = args.m_max;
    let run = montecarlo::run_with_workers(&config, workers)?;
    let mut csv = Csv::new(&["replicate", "w"]);
    for (i, w) in run.samples.iter().enumerate() {
        csv.row(&[i.to_string(), format_number(*w)]);
    }
    emit(args.out.as_deref(), &csv.text)?;
    if let Some(path) = &args.summary {
        let file = SummaryFile { config_digest: resolved.digest(), summary: &run.summary };
        std::fs::write(path, to_json(&file)).map_err(|e| CliError::io(path, e))?;
    }
    eprintln!(
        "dpre: {} replicates, mean {} (se {}), variance {} in {:.2?}",
        run.summary.replicates,
        format_number(run.summary.mean),
        format_number(run.summary.standard_error),
        format_number(run.summary.variance().estimate),
        run.summary.wall_time
    );
    Ok(0)
}

fn variance_flow_cmd(args: &VarianceFlowArgs) -> Result<i32, CliError> {
    let s = args.s.unwrap_or(args.b);
    let windowed = args.v.is_none() && args.beta.is_none();
    let v = match (args.v, args.beta) {
        (Some(v), _) => v,
        (None, Some(beta)) => args.law.tilt_variance(beta),
        (None, None) => {
            if s != args.b {
                return Err(CliError::Usage("the critical window needs b = s; pass --v or --beta".into()));
            }
            TemperatureSchedule::new(args.schedule, args.r, args.law).vertex_variance(args.b, args.n)?
        }
    };
    let trace = variance_flow::iterate_variance(args.b, s, v, args.steps.unwrap_or(args.n))?;
    let window = if windowed { Some(scaling::n_eff(args.b, args.n, args.r)?) } else { None };
    let coords = match window {
        Some(ne) => variance_flow::arctan_coords(trace.clone(), ne)?.coords,
        None => None,
    };
    let mut csv = Csv::new(&["n", "r", "value", "residual"]);
    for (k, x) in trace.values.iter().enumerate() {
        let residual = match (&coords, window) {
            (Some(c), Some(ne)) => format_number(c[k] - k as f64 / ne),
            _ => String::new(),
        };
        csv.row(&[k.to_string(), format_number(args.r), format_number(*x), residual]);
    }
    emit(args.out.as_deref(), &csv.text)?;
    Ok(0)
}

fn rfunc(args: &RfuncArgs) -> Result<i32, CliError> {
    let s = args.s.unwrap_or(args.b);
    let mut csv = Csv::new(&["n", "r", "value", "residual"]);
    if s == args.b {
        for &r in &args.r {
            let here = variance_flow::r_function(args.b, r, &args.grid)?;
            let next = variance_flow::r_function(args.b, r + 1.0, &args.grid)?;
            for (&(big_n, x), &(_, y)) in here.sequence.iter().zip(&next.sequence) {
                let residual = (variance_flow::map_m(args.b, args.b, x) - y).abs() / y;
                csv.row(&[big_n.to_string(), format_number(r), format_number(x), format_number(residual)]);
            }
        }
    } else if s > args.b {
        let ratio = f64::from(s) / f64::from(args.b);
        for &r in &args.r {
            let x = variance_flow::r_function_subcritical(args.b, s, r, args.k)?;
            let scaled = variance_flow::r_function_subcritical(args.b, s, ratio * r, args.k)?;
            let residual = (scaled - variance_flow::map_m(args.b, s, x)).abs();
            csv.row(&[args.k.to_string(), format_number(r), format_number(x), format_number(residual)]);
        }
    } else {
        return Err(CliError::Usage(format!("R is defined for b <= s, got b={}, s={s}", args.b)));
    }
    emit(args.out.as_deref(), &csv.text)?;
    Ok(0)
}

fn moments_cmd(args: &MomentsArgs) -> Result<i32, CliError> {
    let beta = match temperature(args.beta, args.schedule, args.r, args.law)? {
        Temperature::Fixed { beta } => beta,
        Temperature::Schedule(schedule) => schedule.beta(args.b, args.n)?,
    };
    let table = moments::moment_recursion(args.b, beta, &args.law, args.m_max, args.n as usize)?;
    let mut csv = Csv::new(&["n", "k", "m", "raw_moment", "centered_moment"]);
    for k in 0..=table.steps() {
        let centered = moments::centered_moments(&table, k)?;
        for m in 1..=table.max_order {
            let c = if m == 1 { 0.0 } else { centered[m as usize - 2] };
            csv.row(&[args.n.to_string(), k.to_string(), m.to_string(), format_number(table.raw(m, k)), format_number(c)]);
        }
    }
    emit(args.out.as_deref(), &csv.text)?;
    Ok(0)
}

fn identity_check(args: &IdentityCheckArgs) -> Result<i32, CliError> {
    let params = GraphParams::new(args.b, args.s.unwrap_or(args.b), args.n)?;
    let mut csv = Csv::new(&["replicate", "conditional", "q_value", "rel_diff"]);
    let mut worst: f64 = 0.0;
    for i in 0..args.replicates {
        let env = DisorderAssignment::new(args.law, args.seed, i);
        let conditional = evaluate_conditional(&params, args.beta, &args.law, &env, args.cutoff)?;
        let local = local_partition_functions(&params, args.beta, &args.law, &env, args.cutoff)?;
        let q_value = 1.0 + q_map_power(&local.centered(), args.cutoff)?;
        let rel = (conditional - q_value).abs() / q_value.abs();
        worst = worst.max(rel);
        csv.row(&[i.to_string(), format_number(conditional), format_number(q_value), format_number(rel)]);
    }
    emit(args.out.as_deref(), &csv.text)?;
    if !(worst <= args.tol) {
        eprintln!("dpre: identity-check FAILED: worst relative difference {worst:e} > {:e}", args.tol);
        return Ok(3);
    }
    eprintln!("dpre: identity-check passed: worst relative difference {worst:e}");
    Ok(0)
}

fn asymptotics(args: &AsymptoticsArgs) -> Result<i32, CliError> {
    let b = args.b;
    let mut csv = Csv::new(&["n", "r", "value", "residual"]);
    let mut failures = Vec::new();
    let mut record = |label: String, rows: Vec<(u64, Option<f64>, f64, Option<f64>)>, csv: &mut Csv| {
        let residuals: Vec<f64> = rows.iter().filter_map(|row| row.3).collect();
        if residuals.len() == rows.len() && !residuals.windows(2).all(|w| w[1] < w[0]) {
            failures.push(label);
        }
        for (n, r, value, residual) in rows {
            csv.row(&[
                n.to_string(),
                r.map(format_number).unwrap_or_default(),
                format_number(value),
                residual.map(format_number).unwrap_or_default(),
            ]);
        }
    };
    match args.kind {
        AsymptoticKind::Lemma32 | AsymptoticKind::L2Gap => {
            for &r in &args.r {
                let rows = args
                    .grid
                    .iter()
                    .map(|&n| {
                        if args.kind == AsymptoticKind::Lemma32 {
                            let delta = variance_flow::lemma32_residual(b, n, r)?;
                            let l = (n as f64).ln().floor();
                            Ok((n, Some(r), delta, Some(l * delta.abs())))
                        } else {
                            let gap = variance_flow::l2_gap(b, n, r)?;
                            Ok((n, Some(r), gap, Some(gap)))
                        }
                    })
                    .collect::<Result<Vec<_>, Error>>()?;
                record(format!("r={r}"), rows, &mut csv);
            }
        }
        AsymptoticKind::Prop22 => {
            let points = variance_flow::prop22_check(b, args.beta_hat, &args.grid, &args.law)?;
            let limit = match points.first().map(|p| p.regime) {
                Some(variance_flow::Regime::Subcritical) => Some(scaling::upsilon(b, args.beta_hat)?),
                Some(variance_flow::Regime::Critical) => Some(6.0 / (f64::from(b) + 1.0)),
                _ => None,
            };
            let rows = points
                .iter()
                .map(|p| (p.n, None, p.scaled, limit.map(|l| (p.scaled - l).abs() / l)))
                .collect();
            record(format!("β̂={}", args.beta_hat), rows, &mut csv);
        }
        AsymptoticKind::Lemma36 => {
            for &r in &args.r {
                let points = moments::lemma36_profile(b, r, args.m, &args.grid, &args.law)?;
                let rows = points
                    .iter()
                    .map(|p| (p.n, Some(r), p.centered_moment, Some(p.centered_moment.abs())))
                    .collect();
                record(format!("r={r}"), rows, &mut csv);
            }
        }
    }
    emit(args.out.as_deref(), &csv.text)?;
    if args.check && !failures.is_empty() {
        eprintln!("dpre: asymptotics check FAILED: residuals not strictly decreasing for {}", failures.join(", "));
        return Ok(3);
    }
    Ok(0)
}

fn free_energy(args: &FreeEnergyArgs, workers: usize) -> Result<i32, CliError> {
    let params = GraphParams::new(args.b, args.s.unwrap_or(args.b), args.n)?;
    let config = McConfig::new(params, args.law, Temperature::Fixed { beta: args.beta }, args.replicates, args.seed);
    let f = montecarlo::free_energy_with_workers(&config, workers)?;
    let mut csv = Csv::new(&["n", "beta", "estimate", "standard_error", "replicates"]);
    csv.row(&[
        f.n.to_string(),
        format_number(f.beta),
        format_number(f.estimate),
        format_number(f.standard_error),
        f.replicates.to_string(),
    ]);
    emit(args.out.as_deref(), &csv.text)?;
    Ok(0)
}

fn replay(args: &ReplayArgs, threads: Option<usize>) -> Result<i32, CliError> {
    let manifest = RunManifest::read(&args.manifest)?;
    let command = Cli::command();
    let sub = command
        .find_subcommand(&manifest.subcommand)
        .filter(|_| manifest.subcommand != "replay")
        .ok_or_else(|| CliError::Usage(format!("manifest names unknown subcommand {:?}", manifest.subcommand)))?;
    let mut argv: Vec<OsString> = vec!["dpre".into(), manifest.subcommand.clone().into()];
    if let Some(t) = threads {
        argv.push(format!("--threads={t}").into());
    }
    for (key, value) in &manifest.parameters {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::Usage(format!("manifest parameter {key:?} is not a flag of {}", manifest.subcommand)))?;
        if arg.get_action().takes_values() {
            argv.push(format!("--{key}={value}").into());
        } else if value == "true" {
            argv.push(format!("--{key}").into());
        }
    }
    for (key, path) in &manifest.outputs {
        let path = match &args.out_dir {
            Some(dir) => {
                let name = Path::new(path)
                    .file_name()
                    .ok_or_else(|| CliError::Usage(format!("output path {path:?} has no file name")))?;
                dir.join(name)
            }
            None => PathBuf::from(path),
        };
        argv.push(format!("--{key}={}", path.display()).into());
    }
    let (_, matches) = parse(argv.clone())?;
    let (name, sub_matches) = matches.subcommand().expect("a subcommand is required");
    if Resolved::new(name, sub_matches).digest() != manifest.config_digest {
        return Err(CliError::Usage("replayed parameters do not reproduce the manifest digest".into()));
    }
    execute(argv)
}
