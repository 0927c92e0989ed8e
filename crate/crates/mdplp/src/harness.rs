//! Experiment harness: run configuration, multi-trial scenario sweeps,
//! smoothing traces, bounds reports, quantile aggregation and the CSV /
//! JSON / cache artifacts the command-line tool emits.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{fourier_basis, BasisSet};
use crate::bounds::{self, BoundsReport, Route};
use crate::model::{validate_model, ControlModel, Criterion, ModelValidation};
use crate::problems::{fisheries_instance, lqg_instance, FisheriesParams, LqgParams};
use crate::scenario::{self, sample_uniform_with};
use crate::smoothing::{run_algorithm1, RecordMode, SmoothingContext, TraceRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProblemSpec {
    Lqg {
        #[serde(default)]
        params: Option<LqgParams>,
    },
    Fisheries {
        #[serde(default)]
        params: Option<FisheriesParams>,
    },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Lqg { .. } => "lqg",
            ProblemSpec::Fisheries { .. } => "fisheries",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// max{L_Q, 1} * ||psi||_inf
    Paper,
    /// the large-cap surrogate 1e6 for an unbounded coefficient ball
    Inf,
    /// ||psi||_inf
    CostSup,
    Value(f64),
}

pub const THETA_INF_CAP: f64 = 1e6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub criterion: Criterion,
    pub n: usize,
    pub theta_p: ThetaMode,
    /// sample counts for scenario sweeps
    #[serde(default)]
    pub n_grid: Vec<u64>,
    pub trials: usize,
    pub base_seed: u64,
    pub epsilon: f64,
    pub beta: f64,
    pub quad_nodes: usize,
    /// tensor grid resolution per dimension for the smoothing route
    pub grid_nodes: usize,
    /// iteration budget for the smoothing route
    pub k_max: u64,
    #[serde(default)]
    pub eta_override: Option<f64>,
    /// gradient-smoothness constant handed to the fast-gradient scheme;
    /// `None` uses the certified per-grid estimate (the generic 4 rho_n^2
    /// bound is far looser for sup-small normalized bases)
    #[serde(default)]
    pub lipschitz_override: Option<f64>,
    /// residual-rate inputs D, d of the composite bound
    pub residual_d: f64,
    pub residual_rate: f64,
    /// constant added to reported objectives (plot offset; 10 reproduces the
    /// reference fisheries axes)
    #[serde(default)]
    pub report_offset: f64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    pub solver_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::Lqg { params: None },
            criterion: Criterion::AverageCost,
            n: 10,
            theta_p: ThetaMode::Paper,
            n_grid: vec![10, 100, 1000],
            trials: 50,
            base_seed: 1,
            epsilon: 0.1,
            beta: 0.05,
            quad_nodes: 64,
            grid_nodes: 256,
            k_max: 1000,
            eta_override: None,
            lipschitz_override: None,
            residual_d: 1.0,
            residual_rate: 1.0,
            report_offset: 0.0,
            cache_dir: None,
            solver_tolerance: 1e-8,
        }
    }
}

impl RunConfig {
    pub fn build_model(&self) -> Result<ControlModel, HarnessError> {
        let model = match &self.problem {
            ProblemSpec::Lqg { params } => {
                let p = params.clone().unwrap_or_else(LqgParams::figures);
                lqg_instance(&p, self.criterion, self.quad_nodes)
                    .map_err(|e| HarnessError::Config(e.to_string()))?
            }
            ProblemSpec::Fisheries { params } => {
                let p = params.clone().unwrap_or_else(FisheriesParams::paper);
                fisheries_instance(&p, self.criterion, self.quad_nodes)
                    .map_err(|e| HarnessError::Config(e.to_string()))?
            }
        };
        Ok(model)
    }

    pub fn resolve_theta(&self, model: &ControlModel) -> f64 {
        match self.theta_p {
            ThetaMode::Paper => bounds::mdp_theta_p_default(model),
            ThetaMode::Inf => THETA_INF_CAP,
            ThetaMode::CostSup => model.cost_sup_norm,
            ThetaMode::Value(v) => v,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials < 1 {
            return Err(HarnessError::Config("trials must be >= 1".into()));
        }
        // epsilon is a cost-scale precision for the smoothing schedule and a
        // certificate level for the scenario route; only positivity is
        // checked here, the routes enforce their own ranges
        if !(self.epsilon > 0.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(HarnessError::Config(
                "epsilon must be positive and beta must lie in (0,1)".into(),
            ));
        }
        if let ThetaMode::Value(v) = self.theta_p {
            if !(v > 0.0) {
                return Err(HarnessError::Config("theta_p must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Deterministic per-(trial, grid-row) RNG stream.
fn trial_rng(base_seed: u64, trial: usize, grid_index: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(base_seed);
    rng.set_stream(((trial as u64) << 24) | grid_index as u64);
    rng
}

// ---------------------------------------------------------------------------
// aggregation helpers

/// Pairwise (cascade) summation: order-stable to ~1e-15 relative error.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Linear-interpolation quantile of a sorted slice at level q in [0,1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

// ---------------------------------------------------------------------------
// scenario sweeps

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_samples: u64,
    pub trials: usize,
    pub failures: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub q10: f64,
    pub q90: f64,
    pub mean_alpha_norm: f64,
    pub cap_active_trials: usize,
    /// trials that returned a best iterate short of full KKT tolerance
    pub nonconverged_trials: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub theta_p: f64,
    pub rows: Vec<SweepRow>,
    /// per-row raw objectives by trial index (reported convention)
    pub per_trial: Vec<Vec<f64>>,
}

/// Runs `trials` independent scenario programs per grid entry and aggregates
/// quantiles. Per-trial failures are recorded; a row fails the sweep only if
/// every trial at that sample count failed.
pub fn run_scenario_sweep(config: &RunConfig) -> Result<SweepTable, HarnessError> {
    config.validate()?;
    let model = config.build_model()?;
    let basis = fourier_basis(&model, config.n).map_err(|e| HarnessError::Config(e.to_string()))?;
    let theta = config.resolve_theta(&model);
    if config.n_grid.is_empty() {
        return Err(HarnessError::Config("n_grid must not be empty".into()));
    }
    let mut rows = Vec::new();
    let mut per_trial_all = Vec::new();
    for (gi, &n_samples) in config.n_grid.iter().enumerate() {
        let results: Vec<Option<(f64, f64, bool, bool)>> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(config.base_seed, t, gi);
                let samples = sample_uniform_with(&model, n_samples as usize, &mut rng);
                let program = scenario::assemble(&model, &basis, &samples, theta).ok()?;
                let sol = scenario::solve(&program, config.solver_tolerance).ok()?;
                Some((
                    sol.objective + config.report_offset,
                    sol.alpha_norm(),
                    sol.ball_active,
                    sol.converged,
                ))
            })
            .collect();
        let ok: Vec<(f64, f64, bool, bool)> = results.iter().flatten().cloned().collect();
        let failures = config.trials - ok.len();
        if ok.is_empty() {
            return Err(HarnessError::Numerical(format!(
                "all {} trials failed at N = {}",
                config.trials, n_samples
            )));
        }
        let mut objectives: Vec<f64> = ok.iter().map(|r| r.0).collect();
        per_trial_all.push(objectives.clone());
        let mean_alpha = mean(&ok.iter().map(|r| r.1).collect::<Vec<_>>());
        let caps = ok.iter().filter(|r| r.2).count();
        let nonconverged = ok.iter().filter(|r| !r.3).count();
        let m = mean(&objectives);
        objectives.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rows.push(SweepRow {
            n_samples,
            trials: config.trials,
            failures,
            mean: m,
            min: objectives[0],
            max: *objectives.last().unwrap(),
            q10: quantile_sorted(&objectives, 0.10),
            q90: quantile_sorted(&objectives, 0.90),
            mean_alpha_norm: mean_alpha,
            cap_active_trials: caps,
            nonconverged_trials: nonconverged,
        });
    }
    Ok(SweepTable {
        theta_p: theta,
        rows,
        per_trial: per_trial_all,
    })
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from(
        "N,trials,failures,nonconverged,mean,min,max,q10,q90,mean_alpha_norm,cap_active\n",
    );
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{:.12},{:.12},{:.12},{:.12},{:.12},{:.6},{}\n",
            r.n_samples,
            r.trials,
            r.failures,
            r.nonconverged_trials,
            r.mean,
            r.min,
            r.max,
            r.q10,
            r.q90,
            r.mean_alpha_norm,
            r.cap_active_trials
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// smoothing traces

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceTable {
    pub theta_p: f64,
    pub eta: f64,
    /// rows carry the a-priori epsilon from the inverted iteration schedule
    pub rows: Vec<TraceRowWithPrior>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRowWithPrior {
    pub iter: u64,
    pub j_lb: f64,
    pub j_ub: f64,
    pub gap: f64,
    pub grad_norm: f64,
    pub prior_epsilon: f64,
}

/// Runs the fast-gradient scheme and emits the recorded posterior bounds next
/// to the a-priori precision curve. Average-cost criterion only.
pub fn run_smoothing_trace(config: &RunConfig) -> Result<TraceTable, HarnessError> {
    config.validate()?;
    if !matches!(config.criterion, Criterion::AverageCost) {
        return Err(HarnessError::Config(
            "the smoothing route is implemented for the average-cost criterion".into(),
        ));
    }
    let model = config.build_model()?;
    let basis = fourier_basis(&model, config.n).map_err(|e| HarnessError::Config(e.to_string()))?;
    let theta = config.resolve_theta(&model);
    let eta = match config.eta_override {
        Some(v) if v > 0.0 => v,
        Some(v) => {
            return Err(HarnessError::Config(format!(
                "eta must be positive, got {v}"
            )))
        }
        None => {
            bounds::smoothing_schedule(&model, &basis, theta, config.epsilon)
                .map_err(|e| HarnessError::Config(e.to_string()))?
                .eta
        }
    };
    let ctx = build_context_cached(config, &model, &basis)?;
    let lip = config.lipschitz_override.unwrap_or_else(|| {
        ctx.certified_gradient_lipschitz()
            .min(4.0 * basis.rho_n.powi(2))
    });
    let run = run_algorithm1(
        &ctx,
        theta,
        eta,
        config.k_max,
        RecordMode::Geometric,
        Some(lip),
    )
    .map_err(|e| HarnessError::Numerical(e.to_string()))?;
    let rows = run
        .history
        .iter()
        .map(|row: &TraceRow| TraceRowWithPrior {
            iter: row.iter,
            j_lb: row.j_lb + config.report_offset,
            j_ub: row.j_ub + config.report_offset,
            gap: row.gap,
            grad_norm: row.grad_norm,
            prior_epsilon: bounds::schedule_epsilon_for_k(&model, &basis, theta, row.iter),
        })
        .collect();
    Ok(TraceTable {
        theta_p: theta,
        eta,
        rows,
    })
}

pub fn trace_csv(table: &TraceTable) -> String {
    let mut out = String::from("iter,J_LB,J_UB,gap,grad_norm,prior_epsilon\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{:.12},{:.12},{:.12e},{:.6e},{:.6e}\n",
            r.iter, r.j_lb, r.j_ub, r.gap, r.grad_norm, r.prior_epsilon
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// bounds reports and validation

pub fn report_bounds(config: &RunConfig, route: Route) -> Result<BoundsReport, HarnessError> {
    config.validate()?;
    let model = config.build_model()?;
    let basis = fourier_basis(&model, config.n).map_err(|e| HarnessError::Config(e.to_string()))?;
    let theta = config.resolve_theta(&model);
    bounds::composite_bound(
        &model,
        &basis,
        theta,
        config.residual_d,
        config.residual_rate,
        config.epsilon,
        config.beta,
        route,
    )
    .map_err(|e| HarnessError::Numerical(e.to_string()))
}

pub fn run_validation(config: &RunConfig, probes: usize) -> Result<ModelValidation, HarnessError> {
    let model = config.build_model()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.base_seed);
    Ok(validate_model(&model, probes, &mut rng))
}

// ---------------------------------------------------------------------------
// quadrature cache and manifests

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Content hash identifying one grid precomputation: problem, basis
/// descriptor, quadrature and grid settings.
pub fn cache_key(config: &RunConfig, basis: &BasisSet) -> Result<u64, HarnessError> {
    let key = serde_json::json!({
        "problem": &config.problem,
        "criterion": &config.criterion,
        "basis": basis.descriptor(),
        "quad_nodes": config.quad_nodes,
        "grid_nodes": config.grid_nodes,
    });
    Ok(fnv1a(serde_json::to_string(&key)?.as_bytes()))
}

const CACHE_MAGIC: u64 = 0x6d64_706c_7163_6831; // "mdplqch1"

/// Binary layout: magic, key-hash, node count, basis size, then psi and the
/// node-major (Q-I)u_i table as little-endian f64.
fn write_cache(path: &Path, key: u64, psi: &[f64], qmi: &[f64], n: usize) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(32 + 8 * (psi.len() + qmi.len()));
    buf.extend_from_slice(&CACHE_MAGIC.to_le_bytes());
    buf.extend_from_slice(&key.to_le_bytes());
    buf.extend_from_slice(&(psi.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for v in psi.iter().chain(qmi.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)
}

fn read_cache(path: &Path, key: u64) -> Option<(Vec<f64>, Vec<f64>, usize)> {
    let data = fs::read(path).ok()?;
    if data.len() < 32 {
        return None;
    }
    let get_u64 = |i: usize| u64::from_le_bytes(data[i..i + 8].try_into().unwrap());
    if get_u64(0) != CACHE_MAGIC || get_u64(8) != key {
        return None;
    }
    let nodes = get_u64(16) as usize;
    let n = get_u64(24) as usize;
    let need = 32 + 8 * (nodes + nodes * n);
    if data.len() != need {
        return None;
    }
    let mut vals = Vec::with_capacity(nodes + nodes * n);
    for i in 0..(nodes + nodes * n) {
        let off = 32 + 8 * i;
        vals.push(f64::from_le_bytes(data[off..off + 8].try_into().unwrap()));
    }
    let qmi = vals.split_off(nodes);
    Some((vals, qmi, n))
}

/// Builds the smoothing context, reusing the on-disk table when the content
/// hash matches (stale entries are recomputed and overwritten).
pub fn build_context_cached<'a>(
    config: &RunConfig,
    model: &'a ControlModel,
    basis: &'a BasisSet,
) -> Result<SmoothingContext<'a>, HarnessError> {
    let key = cache_key(config, basis)?;
    let path = config
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("qu_cache_{key:016x}.bin")));
    if let Some(p) = &path {
        if let Some((psi, qmi, n)) = read_cache(p, key) {
            if n == basis.n {
                let mut ctx = SmoothingContext::new_empty(model, basis, config.grid_nodes);
                if psi.len() == ctx.nodes {
                    ctx.psi = psi;
                    ctx.qmi = qmi;
                    return Ok(ctx);
                }
            }
        }
    }
    let ctx = SmoothingContext::new(model, basis, config.grid_nodes)
        .map_err(|e| HarnessError::Numerical(e.to_string()))?;
    if let Some(p) = &path {
        write_cache(p, key, &ctx.psi, &ctx.qmi, basis.n)?;
    }
    Ok(ctx)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub theta_p: f64,
    pub basis: crate::basis::BasisDescriptor,
    pub objective_shift: f64,
    pub outputs: Vec<String>,
}

pub fn write_manifest(
    dir: &Path,
    config: &RunConfig,
    theta_p: f64,
    basis: &BasisSet,
    model: &ControlModel,
    outputs: &[String],
) -> Result<PathBuf, HarnessError> {
    let manifest = Manifest {
        version: crate::VERSION.to_string(),
        config: config.clone(),
        theta_p,
        basis: basis.descriptor(),
        objective_shift: model.objective_shift,
        outputs: outputs.to_vec(),
    };
    fs::create_dir_all(dir)?;
    let path = dir.join("manifest.json");
    let mut f = fs::File::create(&path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn pairwise_sum_matches_naive() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>() - 0.5).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-10);
    }

    #[test]
    fn quantiles_match_reference() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..20 {
            let m = rng.gen_range(2..50);
            let mut xs: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for q in [0.0, 0.1, 0.5, 0.9, 1.0] {
                // independent reference: same linear-interpolation definition
                let pos = q * (m - 1) as f64;
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                let expect = if lo + 1 < m {
                    xs[lo] * (1.0 - frac) + xs[lo + 1] * frac
                } else {
                    xs[lo]
                };
                assert!((quantile_sorted(&xs, q) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let config = RunConfig {
            problem: ProblemSpec::Fisheries { params: None },
            n: 2,
            n_grid: vec![20],
            trials: 3,
            base_seed: 99,
            quad_nodes: 24,
            ..RunConfig::default()
        };
        let a = run_scenario_sweep(&config).unwrap();
        let b = run_scenario_sweep(&config).unwrap();
        assert_eq!(a.rows[0].mean.to_bits(), b.rows[0].mean.to_bits());
        assert_eq!(a.per_trial, b.per_trial);
    }

    #[test]
    fn config_validation_errors() {
        let bad = RunConfig {
            trials: 0,
            ..RunConfig::default()
        };
        assert!(matches!(bad.validate(), Err(HarnessError::Config(_))));
        let bad2 = RunConfig {
            epsilon: -1.0,
            ..RunConfig::default()
        };
        assert!(bad2.validate().is_err());
        // coarse cost-scale precision stays legal for the smoothing schedule
        let coarse = RunConfig {
            epsilon: 2.0,
            ..RunConfig::default()
        };
        assert!(coarse.validate().is_ok());
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Numerical("x".into()).exit_code(), 3);
    }

    #[test]
    fn cache_roundtrip() {
        let dir = std::env::temp_dir().join(format!("mdplp_cache_test_{}", std::process::id()));
        let config = RunConfig {
            problem: ProblemSpec::Fisheries { params: None },
            n: 2,
            quad_nodes: 16,
            grid_nodes: 12,
            cache_dir: Some(dir.clone()),
            ..RunConfig::default()
        };
        let model = config.build_model().unwrap();
        let basis = fourier_basis(&model, config.n).unwrap();
        let fresh = build_context_cached(&config, &model, &basis).unwrap();
        let cached = build_context_cached(&config, &model, &basis).unwrap();
        assert_eq!(fresh.psi, cached.psi);
        assert_eq!(fresh.qmi, cached.qmi);
        // stale key is ignored and rebuilt
        let other = RunConfig {
            grid_nodes: 10,
            ..config.clone()
        };
        let rebuilt = build_context_cached(&other, &model, &basis).unwrap();
        assert_ne!(rebuilt.psi.len(), fresh.psi.len());
        let _ = fs::remove_dir_all(dir);
    }
}
