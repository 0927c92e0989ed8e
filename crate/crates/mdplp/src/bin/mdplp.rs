//! Command-line experiment driver.
//!
//! Subcommands: `scenario-sweep`, `smooth-trace`, `bounds`, `validate-model`.
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mdplp::bounds::Route;
use mdplp::fourier_basis;
use mdplp::harness::{
    report_bounds, run_scenario_sweep, run_smoothing_trace, run_validation, sweep_csv, trace_csv,
    write_manifest, HarnessError, ProblemSpec, RunConfig, ThetaMode,
};
use mdplp::model::Criterion;

#[derive(Parser)]
#[command(
    name = "mdplp",
    version,
    about = "Finite convex approximations of continuous-space MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-trial scenario sweep over a sample-size grid (CSV output)
    ScenarioSweep(CommonArgs),
    /// Fast-gradient smoothing trace with posterior bounds (CSV output)
    SmoothTrace(CommonArgs),
    /// Print the certificate constants for a configuration (JSON)
    Bounds(BoundsArgs),
    /// Probe kernel normalization, cost sign and Lipschitz quotients (JSON)
    ValidateModel(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// lqg | fisheries
    #[arg(long, default_value = "lqg")]
    problem: String,
    /// ac | dc
    #[arg(long, default_value = "ac")]
    criterion: String,
    /// discount factor for dc
    #[arg(long)]
    tau: Option<f64>,
    /// basis size
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// paper | inf | cost-sup | <value>
    #[arg(long = "theta-p", default_value = "paper")]
    theta_p: String,
    /// comma-separated sample grid, e.g. 10,100,1000
    #[arg(long = "N-grid", default_value = "10,100,1000,10000")]
    n_grid: String,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// quadrature nodes per dimension for kernel expectations
    #[arg(long = "quad-nodes", default_value_t = 64)]
    quad_nodes: usize,
    /// tensor grid resolution per dimension (smoothing route)
    #[arg(long = "grid-nodes", default_value_t = 256)]
    grid_nodes: usize,
    /// iteration budget (smoothing route)
    #[arg(long = "k-max", default_value_t = 10000)]
    k_max: u64,
    /// explicit smoothing weight; defaults to the epsilon schedule
    #[arg(long)]
    eta: Option<f64>,
    /// constant added to reported objectives (plot offset)
    #[arg(long = "report-offset", default_value_t = 0.0)]
    report_offset: f64,
    /// problem-parameter overrides, JSON file matching LqgParams / FisheriesParams
    #[arg(long)]
    params: Option<PathBuf>,
    /// JSON RunConfig file; command-line flags are ignored when given
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory for CSV + manifest (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// directory for persisted quadrature tables
    #[arg(long = "cache-dir")]
    cache_dir: Option<PathBuf>,
    /// random probes for validate-model
    #[arg(long, default_value_t = 100)]
    probes: usize,
}

#[derive(Args, Clone)]
struct BoundsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// scenario | smoothing
    #[arg(long, default_value = "scenario")]
    route: String,
    /// projection-residual constant D
    #[arg(long = "residual-d", default_value_t = 1.0)]
    residual_d: f64,
    /// projection-residual rate exponent d
    #[arg(long = "residual-rate", default_value_t = 1.0)]
    residual_rate: f64,
}

fn parse_config(args: &CommonArgs) -> Result<RunConfig, HarnessError> {
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)?;
        return Ok(serde_json::from_str(&text)?);
    }
    let criterion = match args.criterion.as_str() {
        "ac" => Criterion::AverageCost,
        "dc" => {
            let tau = args.tau.ok_or_else(|| {
                HarnessError::Config("--tau is required with --criterion dc".into())
            })?;
            Criterion::Discounted { tau }
        }
        other => return Err(HarnessError::Config(format!("unknown criterion '{other}'"))),
    };
    let problem = match args.problem.as_str() {
        "lqg" => ProblemSpec::Lqg {
            params: args.params.as_ref().map(|p| read_params(p)).transpose()?,
        },
        "fisheries" => ProblemSpec::Fisheries {
            params: args.params.as_ref().map(|p| read_params(p)).transpose()?,
        },
        other => return Err(HarnessError::Config(format!("unknown problem '{other}'"))),
    };
    let theta_p = match args.theta_p.as_str() {
        "paper" => ThetaMode::Paper,
        "inf" => ThetaMode::Inf,
        "cost-sup" => ThetaMode::CostSup,
        v => ThetaMode::Value(
            v.parse::<f64>()
                .map_err(|_| HarnessError::Config(format!("bad --theta-p value '{v}'")))?,
        ),
    };
    let n_grid: Result<Vec<u64>, _> = args
        .n_grid
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse::<u64>())
        .collect();
    Ok(RunConfig {
        problem,
        criterion,
        n: args.n,
        theta_p,
        n_grid: n_grid.map_err(|e| HarnessError::Config(format!("bad --N-grid: {e}")))?,
        trials: args.trials,
        base_seed: args.seed,
        epsilon: args.epsilon,
        beta: args.beta,
        quad_nodes: args.quad_nodes,
        grid_nodes: args.grid_nodes,
        k_max: args.k_max,
        eta_override: args.eta,
        report_offset: args.report_offset,
        cache_dir: args.cache_dir.clone(),
        ..RunConfig::default()
    })
}

fn read_params<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn emit(
    config: &RunConfig,
    out: &Option<PathBuf>,
    file_name: &str,
    contents: &str,
) -> Result<(), HarnessError> {
    match out {
        None => {
            print!("{contents}");
            Ok(())
        }
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(file_name);
            fs::write(&path, contents)?;
            let model = config.build_model()?;
            let basis =
                fourier_basis(&model, config.n).map_err(|e| HarnessError::Config(e.to_string()))?;
            let theta = config.resolve_theta(&model);
            write_manifest(dir, config, theta, &basis, &model, &[file_name.to_string()])?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn run() -> Result<(), HarnessError> {
    let cli = Cli::parse();
    match cli.command {
        Command::ScenarioSweep(args) => {
            let config = parse_config(&args)?;
            let table = run_scenario_sweep(&config)?;
            emit(&config, &args.out, "scenario_sweep.csv", &sweep_csv(&table))
        }
        Command::SmoothTrace(args) => {
            let config = parse_config(&args)?;
            let table = run_smoothing_trace(&config)?;
            emit(&config, &args.out, "smooth_trace.csv", &trace_csv(&table))
        }
        Command::Bounds(args) => {
            let mut config = parse_config(&args.common)?;
            config.residual_d = args.residual_d;
            config.residual_rate = args.residual_rate;
            let route = match args.route.as_str() {
                "scenario" => Route::Scenario,
                "smoothing" => Route::Smoothing,
                other => return Err(HarnessError::Config(format!("unknown route '{other}'"))),
            };
            let report = report_bounds(&config, route)?;
            let json = serde_json::to_string_pretty(&report)?;
            emit(
                &config,
                &args.common.out,
                "bounds.json",
                &format!("{json}\n"),
            )
        }
        Command::ValidateModel(args) => {
            let config = parse_config(&args)?;
            let report = run_validation(&config, args.probes)?;
            let json = serde_json::to_string_pretty(&report)?;
            emit(&config, &args.out, "validation.json", &format!("{json}\n"))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
