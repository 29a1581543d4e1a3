//! Command-line harness: `otibsn {solve|gen|bench}`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{
    gen_spherical, gen_square, gen_uniform, load_image_pair, read_cost_csv, read_vector,
    write_cost_csv, write_vector,
};
use crate::error::{OtError, Result};
use crate::oracle::{exact_small_lp, ORACLE_MAX_CELLS};
use crate::outer::{
    eot_single_solve, ibsink_solve, ibsn_solve, sinkhorn_baseline, OuterResult, OuterStop,
};
use crate::par;
use crate::problem::{InnerScale, OtProblem, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CAPPED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "otibsn",
    version,
    about = "High-precision discrete optimal transport",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance and write its trajectory and summary.
    Solve(SolveArgs),
    /// Write a generated instance as cost and marginal CSV files.
    Gen(GenArgs),
    /// Run several algorithms on one instance under a time budget each.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    Ibsn,
    Ibsink,
    Sinkhorn,
    EotIbsn,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ibsn => "ibsn",
            Algorithm::Ibsink => "ibsink",
            Algorithm::Sinkhorn => "sinkhorn",
            Algorithm::EotIbsn => "eot-ibsn",
        }
    }

    pub fn run(self, problem: &OtProblem, config: &SolverConfig) -> Result<OuterResult> {
        match self {
            Algorithm::Ibsn => ibsn_solve(problem, config),
            Algorithm::Ibsink => ibsink_solve(problem, config),
            Algorithm::Sinkhorn => sinkhorn_baseline(problem, config),
            Algorithm::EotIbsn => eot_single_solve(problem, config),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    Uniform,
    Square,
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Clock {
    /// Monotonic wall time since the start of the solve.
    Monotonic,
    /// Record zero wall time, for byte-reproducible trajectories.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    MinDim,
    One,
}

/// Where the instance comes from.
#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    /// Generator used when no files are given.
    #[arg(long, value_enum, default_value = "uniform")]
    pub cost: Generator,
    #[arg(long, num_args = 2, value_names = ["M", "N"], default_values_t = [32usize, 32])]
    pub size: Vec<usize>,
    /// Cost CSV (optional first line `# m n`); requires --a-file and --b-file.
    #[arg(long, requires_all = ["a_file", "b_file"], conflicts_with = "images")]
    pub cost_file: Option<PathBuf>,
    /// Source marginal, one value per line.
    #[arg(long, requires = "cost_file")]
    pub a_file: Option<PathBuf>,
    /// Target marginal, one value per line.
    #[arg(long, requires = "cost_file")]
    pub b_file: Option<PathBuf>,
    /// Two grayscale images (PGM P2/P5 or CSV grid) of equal size.
    #[arg(long, num_args = 2, value_names = ["IMG1", "IMG2"])]
    pub images: Option<Vec<PathBuf>>,
}

/// One flag per solver setting; unset flags keep the library defaults.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Proximal parameter [default: 1e-4]
    #[arg(long)]
    pub eta: Option<f64>,
    /// Inexactness schedule numerator [default: 1e-4]
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Inexactness schedule floor [default: 1e-11]
    #[arg(long)]
    pub mu_floor: Option<f64>,
    /// Scale of the inexact test [default: min-dim]
    #[arg(long, value_enum)]
    pub inner_scale: Option<ScaleArg>,
    /// Sinkhorn warm-start tolerance [default: 1e-3]
    #[arg(long)]
    pub warm_tol: Option<f64>,
    /// Outer stopping tolerance on the KKT residual [default: 1e-11]
    #[arg(long)]
    pub kkt_tol: Option<f64>,
    /// [default: 300]
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// [default: 1000]
    #[arg(long)]
    pub max_inner: Option<usize>,
    /// [default: 1e-10]
    #[arg(long)]
    pub cg_rel_tol: Option<f64>,
    /// [default: 2n]
    #[arg(long)]
    pub cg_max_iters: Option<usize>,
    /// [default: 1e-4]
    #[arg(long)]
    pub armijo_sigma: Option<f64>,
    /// [default: 0.8]
    #[arg(long)]
    pub armijo_beta: Option<f64>,
    /// Seed for generated instances [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap on Sinkhorn sweeps per loop [default: 100000]
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    /// Re-center gamma every N Newton steps [default: off]
    #[arg(long)]
    pub recenter_every: Option<usize>,
    /// Record a trajectory row per inner iteration.
    #[arg(long)]
    pub log_inner: bool,
    /// Wall-clock budget in seconds [default: none]
    #[arg(long)]
    pub time_budget: Option<f64>,
    /// Known optimal value for the gap column [default: oracle when small]
    #[arg(long)]
    pub reference_objective: Option<f64>,
    /// Skip the exact oracle even when the instance is small enough.
    #[arg(long)]
    pub no_oracle: bool,
    #[arg(long, value_enum, default_value = "monotonic")]
    pub clock: Clock,
    /// Kernel threads; 1 runs sequentially.
    #[arg(long, env = "OTIBSN_THREADS")]
    pub threads: Option<usize>,
    /// File of `key = value` lines setting any flag; command-line flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl SolverArgs {
    pub fn to_config(&self) -> Result<SolverConfig> {
        let d = SolverConfig::default();
        let config = SolverConfig {
            eta: self.eta.unwrap_or(d.eta),
            mu0: self.mu0.unwrap_or(d.mu0),
            mu_floor: self.mu_floor.unwrap_or(d.mu_floor),
            inner_scale: match self.inner_scale {
                Some(ScaleArg::One) => InnerScale::One,
                Some(ScaleArg::MinDim) => InnerScale::MinDim,
                None => d.inner_scale,
            },
            warm_tol: self.warm_tol.unwrap_or(d.warm_tol),
            kkt_tol: self.kkt_tol.unwrap_or(d.kkt_tol),
            max_outer: self.max_outer.unwrap_or(d.max_outer),
            max_inner: self.max_inner.unwrap_or(d.max_inner),
            cg_rel_tol: self.cg_rel_tol.unwrap_or(d.cg_rel_tol),
            cg_max_iters: self.cg_max_iters.or(d.cg_max_iters),
            armijo_sigma: self.armijo_sigma.unwrap_or(d.armijo_sigma),
            armijo_beta: self.armijo_beta.unwrap_or(d.armijo_beta),
            seed: self.seed.unwrap_or(d.seed),
            max_sweeps: self.max_sweeps.unwrap_or(d.max_sweeps),
            recenter_every: self.recenter_every.or(d.recenter_every),
            log_inner: self.log_inner,
            record_iterates: false,
            time_budget: self.time_budget.or(d.time_budget),
            reference_objective: self.reference_objective,
            frozen_clock: self.clock == Clock::None,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum, default_value = "ibsn")]
    pub algo: Algorithm,
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Trajectory CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON output.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "uniform")]
    pub cost: Generator,
    #[arg(long, num_args = 2, value_names = ["M", "N"], default_values_t = [32usize, 32])]
    pub size: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving cost.csv, a.csv and b.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Algorithm::Ibsn, Algorithm::Ibsink, Algorithm::Sinkhorn])]
    pub algos: Vec<Algorithm>,
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Wall-clock budget per algorithm in seconds; overrides --time-budget.
    #[arg(long, default_value_t = 60.0)]
    pub budget: f64,
    /// Directory receiving one trajectory per algorithm and summary.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Fields of the summary JSON written by `solve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub m: usize,
    pub n: usize,
    pub eta: f64,
    pub outer_iters: usize,
    pub inner_total: usize,
    pub cg_total: usize,
    pub wall_seconds: f64,
    pub objective: f64,
    pub kkt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

impl Summary {
    pub fn new(
        algo: Algorithm,
        problem: &OtProblem,
        config: &SolverConfig,
        r: &OuterResult,
    ) -> Self {
        Self {
            algorithm: algo.name().to_string(),
            m: problem.m(),
            n: problem.n(),
            eta: config.eta,
            outer_iters: r.outer_iters,
            inner_total: r.inner_total,
            cg_total: r.cg_total,
            wall_seconds: r.wall_seconds,
            objective: r.objective,
            kkt: r.kkt.delta_kkt,
            gap: config.reference_objective.map(|f| (r.objective - f).abs()),
        }
    }
}

fn generate(kind: Generator, size: &[usize], seed: u64) -> Result<OtProblem> {
    let (m, n) = (size[0], size[1]);
    if m == 0 || n == 0 {
        return Err(OtError::InvalidConfig(format!(
            "size must be positive, got {m} {n}"
        )));
    }
    Ok(match kind {
        Generator::Uniform => gen_uniform(m, n, seed),
        Generator::Square => gen_square(m, n, seed),
        Generator::Spherical => gen_spherical(m, n, seed),
    })
}

pub fn load_instance(args: &InstanceArgs, seed: u64) -> Result<OtProblem> {
    if let Some(imgs) = &args.images {
        return load_image_pair(&imgs[0], &imgs[1]);
    }
    if let (Some(c), Some(a), Some(b)) = (&args.cost_file, &args.a_file, &args.b_file) {
        return OtProblem::normalized(read_cost_csv(c)?, read_vector(a)?, read_vector(b)?);
    }
    generate(args.cost, &args.size, seed)
}

/// Fills the reference objective from the exact oracle on small instances.
fn attach_oracle(problem: &OtProblem, config: &mut SolverConfig, skip: bool) -> Result<()> {
    if !skip
        && config.reference_objective.is_none()
        && problem.m() * problem.n() <= ORACLE_MAX_CELLS
    {
        config.reference_objective = Some(exact_small_lp(problem)?.value);
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| OtError::LoadError {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let mut config = args.solver.to_config()?;
    let problem = load_instance(&args.instance, config.seed)?;
    attach_oracle(&problem, &mut config, args.solver.no_oracle)?;
    let result = args.algo.run(&problem, &config)?;
    if let Some(path) = &args.out {
        write_file(path, &result.trajectory.to_csv())?;
    }
    let summary = Summary::new(args.algo, &problem, &config, &result);
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| OtError::NumericalFailure(e.to_string()))?;
    if let Some(path) = &args.summary {
        write_file(path, &(json.clone() + "\n"))?;
    }
    println!("{json}");
    Ok(if result.stop == OuterStop::Converged {
        EXIT_OK
    } else {
        EXIT_CAPPED
    })
}

fn cmd_gen(args: &GenArgs) -> Result<i32> {
    let problem = generate(args.cost, &args.size, args.seed)?;
    let io = |path: PathBuf, r: std::io::Result<()>| {
        r.map_err(|e| OtError::LoadError {
            path,
            msg: e.to_string(),
        })
    };
    let dir = &args.out_dir;
    io(dir.clone(), fs::create_dir_all(dir))?;
    io(
        dir.join("cost.csv"),
        write_cost_csv(&dir.join("cost.csv"), problem.cost()),
    )?;
    io(
        dir.join("a.csv"),
        write_vector(&dir.join("a.csv"), problem.source()),
    )?;
    io(
        dir.join("b.csv"),
        write_vector(&dir.join("b.csv"), problem.target()),
    )?;
    Ok(EXIT_OK)
}

pub const BENCH_HEADER: &str =
    "algorithm,status,m,n,eta,outer_iters,inner_total,cg_total,warm_sweeps,wall_seconds,objective,kkt,gap,error";

fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let mut config = args.solver.to_config()?;
    config.time_budget = Some(args.budget);
    let problem = load_instance(&args.instance, config.seed)?;
    attach_oracle(&problem, &mut config, args.solver.no_oracle)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| OtError::LoadError {
        path: args.out_dir.clone(),
        msg: e.to_string(),
    })?;
    let mut table = format!("{BENCH_HEADER}\n");
    let mut failures = 0;
    for &algo in &args.algos {
        let (m, n) = (problem.m(), problem.n());
        match algo.run(&problem, &config) {
            Ok(r) => {
                let path = args.out_dir.join(format!("trajectory_{}.csv", algo.name()));
                write_file(&path, &r.trajectory.to_csv())?;
                let status = if r.stop == OuterStop::Converged {
                    "converged"
                } else {
                    "capped"
                };
                let gap = config
                    .reference_objective
                    .map(|f| format!("{:.16e}", (r.objective - f).abs()));
                let _ = writeln!(
                    table,
                    "{},{status},{m},{n},{:e},{},{},{},{},{:.6},{:.16e},{:.16e},{},",
                    algo.name(),
                    config.eta,
                    r.outer_iters,
                    r.inner_total,
                    r.cg_total,
                    r.warm_sweeps,
                    r.wall_seconds,
                    r.objective,
                    r.kkt.delta_kkt,
                    gap.unwrap_or_default()
                );
            }
            Err(e) => {
                failures += 1;
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(
                    table,
                    "{},failed,{m},{n},{:e},,,,,,,,,{msg}",
                    algo.name(),
                    config.eta
                );
            }
        }
    }
    write_file(&args.out_dir.join("summary.csv"), &table)?;
    print!("{table}");
    Ok(if failures == args.algos.len() {
        EXIT_ERROR
    } else {
        EXIT_OK
    })
}

/// Splices `key = value` lines from the `--config` file in front of the
/// explicit flags, so that the explicit flags override them.
fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let pos = args.iter().position(|a| a == "--config");
    let inline = args
        .iter()
        .position(|a| a.to_string_lossy().starts_with("--config="));
    let path = match (pos, inline) {
        (Some(p), _) => match args.get(p + 1) {
            Some(v) => PathBuf::from(v),
            None => return Ok(args),
        },
        (None, Some(p)) => PathBuf::from(&args[p].to_string_lossy()["--config=".len()..]),
        (None, None) => return Ok(args),
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut extra: Vec<OsString> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), k + 1))?;
        let key = format!("--{}", key.trim().replace('_', "-"));
        let value = value.trim().trim_matches('"');
        match value {
            "true" => extra.push(key.into()),
            "false" => {}
            _ => {
                extra.push(key.into());
                extra.extend(value.split_whitespace().map(OsString::from));
            }
        }
    }
    let sub = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(args.len(), |p| p + 2);
    let mut out = args[..sub.min(args.len())].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[sub.min(args.len())..]);
    Ok(out)
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = match expand_config(args.into_iter().map(Into::into).collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_ERROR;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = match &cli.command {
        Command::Solve(a) => a.solver.threads,
        Command::Bench(a) => a.solver.threads,
        Command::Gen(_) => None,
    };
    let outcome = par::with_threads(threads, move || match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
