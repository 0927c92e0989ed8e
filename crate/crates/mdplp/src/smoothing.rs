//! Fast-gradient smoothing of the dual program: the entropy prox gives a
//! Gibbs-measure gradient in closed form, evaluated on one fixed tensor grid
//! per run; posterior value bounds come from the averaged dual iterates.
//!
//! Reported bounds use the cost convention of the experiments: `j_lb` is the
//! feasibility certificate min_k [psi + sum_i alpha_i (Q-I)u_i](k) and `j_ub`
//! the averaged-occupation value <psi, y> + theta_P ||A* y - c||.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSet};
use crate::model::{ControlModel, ModelError};
use crate::quadrature::TensorGrid;

#[derive(Debug, Error)]
pub enum SmoothingError {
    #[error("non-finite iterate at iteration {iteration}")]
    NonFiniteIterate { iteration: u64 },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ball projection prox: argmin over {||beta|| <= theta_P} of
/// q.beta + 0.5 ||beta - alpha||^2, in closed form xi (alpha - q).
pub fn prox_t(q: &[f64], alpha: &[f64], theta_p: f64) -> Vec<f64> {
    assert_eq!(q.len(), alpha.len());
    let diff: Vec<f64> = alpha.iter().zip(q).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let xi = if norm > theta_p { theta_p / norm } else { 1.0 };
    diff.into_iter().map(|v| xi * v).collect()
}

/// Precomputed grid data shared by every iteration of one run: stage cost
/// and (Q - I)u_i at the tensor nodes, plus the lambda weights.
pub struct SmoothingContext<'a> {
    pub model: &'a ControlModel,
    pub basis: &'a BasisSet,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub psi: Vec<f64>,
    /// node-major [node * n + i] values of (Q - I) u_i
    pub qmi: Vec<f64>,
    pub nodes: usize,
}

impl<'a> SmoothingContext<'a> {
    /// Grid skeleton with zeroed tables, for callers that restore psi and
    /// (Q-I)u_i from a persisted cache.
    pub fn new_empty(
        model: &'a ControlModel,
        basis: &'a BasisSet,
        grid_nodes_per_dim: usize,
    ) -> Self {
        let dim_k = model.dim_k();
        let grid = TensorGrid::new(dim_k, grid_nodes_per_dim, &[]);
        let nodes = grid.len();
        let mut points = vec![0.0; nodes * dim_k];
        let mut weights = vec![0.0; nodes];
        for t in 0..nodes {
            let (p, w) = grid.point(t);
            points[t * dim_k..(t + 1) * dim_k].copy_from_slice(&p);
            weights[t] = w;
        }
        Self {
            model,
            basis,
            points,
            weights,
            psi: vec![0.0; nodes],
            qmi: vec![0.0; nodes * basis.n],
            nodes,
        }
    }

    pub fn new(
        model: &'a ControlModel,
        basis: &'a BasisSet,
        grid_nodes_per_dim: usize,
    ) -> Result<Self, SmoothingError> {
        let dim_k = model.dim_k();
        let grid = TensorGrid::new(dim_k, grid_nodes_per_dim, &[]);
        let nodes = grid.len();
        let n = basis.n;
        let mut points = vec![0.0; nodes * dim_k];
        let mut weights = vec![0.0; nodes];
        for t in 0..nodes {
            let (p, w) = grid.point(t);
            points[t * dim_k..(t + 1) * dim_k].copy_from_slice(&p);
            weights[t] = w;
        }
        let rows: Result<Vec<(f64, Vec<f64>)>, SmoothingError> = (0..nodes)
            .into_par_iter()
            .map(|t| {
                let k = &points[t * dim_k..(t + 1) * dim_k];
                let (s, a) = k.split_at(model.dim_s);
                let psi = model.cost(s, a);
                let evals: Vec<_> = basis
                    .funcs
                    .iter()
                    .map(|f| move |y: &[f64]| f.eval(y))
                    .collect();
                let (qu, _) = model.kernel_expectation_multi(&evals, s, a)?;
                let qmi: Vec<f64> = (0..n).map(|i| qu[i] - basis.eval(i, s)).collect();
                Ok((psi, qmi))
            })
            .collect();
        let rows = rows?;
        let mut psi = vec![0.0; nodes];
        let mut qmi = vec![0.0; nodes * n];
        for (t, (p, row)) in rows.into_iter().enumerate() {
            psi[t] = p;
            qmi[t * n..(t + 1) * n].copy_from_slice(&row);
        }
        Ok(Self {
            model,
            basis,
            points,
            weights,
            psi,
            qmi,
            nodes,
        })
    }

    /// Certified gradient-smoothness constant for the discretized dual:
    /// eta * ||grad phi(a) - grad phi(a')|| <= L ||a - a'|| with
    /// L = max_k sum_i ((Q-I)u_i(k))^2, since the Gibbs covariance of the
    /// moment vector is dominated by its largest squared norm. Tighter than
    /// the generic 4 rho_n^2 whenever the basis sup norms sit below one.
    pub fn certified_gradient_lipschitz(&self) -> f64 {
        let n = self.basis.n;
        let mut best: f64 = 0.0;
        for t in 0..self.nodes {
            let row = &self.qmi[t * n..(t + 1) * n];
            let sq: f64 = row.iter().map(|v| v * v).sum();
            if sq > best {
                best = sq;
            }
        }
        best.max(f64::MIN_POSITIVE)
    }

    /// g(k) = -psi(k) + rho - sum_i alpha_i (Q - I)u_i(k) at every node.
    fn fill_g(&self, rho: f64, alpha: &[f64], g: &mut [f64]) {
        let n = self.basis.n;
        g.par_chunks_mut(4096).enumerate().for_each(|(chunk, out)| {
            let base = chunk * 4096;
            for (off, go) in out.iter_mut().enumerate() {
                let t = base + off;
                let mut acc = -self.psi[t] + rho;
                let row = &self.qmi[t * n..(t + 1) * n];
                for i in 0..n {
                    acc -= alpha[i] * row[i];
                }
                *go = acc;
            }
        });
    }

    /// Gibbs statistics at (rho, alpha): the adjoint image A* y (first
    /// component -1), the mean stage cost under y, the log partition value
    /// log <exp(g/eta), lambda>, and the entropy d(y).
    pub fn gibbs_stats(&self, rho: f64, alpha: &[f64], eta: f64, g: &mut Vec<f64>) -> GibbsStats {
        assert!(eta > 0.0);
        let n = self.basis.n;
        g.resize(self.nodes, 0.0);
        self.fill_g(rho, alpha, g);
        let gmax = g
            .par_chunks(4096)
            .map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        // per-chunk partials folded in index order keep the reduction
        // deterministic regardless of thread scheduling
        let partials: Vec<(f64, f64, f64, Vec<f64>)> = g
            .par_chunks(4096)
            .enumerate()
            .map(|(chunk, gs)| {
                let base = chunk * 4096;
                let mut z = 0.0;
                let mut cost = 0.0;
                let mut glog = 0.0;
                let mut adj = vec![0.0; n];
                for (off, &gv) in gs.iter().enumerate() {
                    let t = base + off;
                    let p = self.weights[t] * ((gv - gmax) / eta).exp();
                    z += p;
                    cost += p * self.psi[t];
                    glog += p * gv;
                    let row = &self.qmi[t * n..(t + 1) * n];
                    for i in 0..n {
                        adj[i] += p * row[i];
                    }
                }
                (z, cost, glog, adj)
            })
            .collect();
        let mut z = 0.0;
        let mut cost = 0.0;
        let mut gmean = 0.0;
        let mut adjoint = vec![0.0; n + 1];
        for (pz, pc, pg, padj) in partials {
            z += pz;
            cost += pc;
            gmean += pg;
            for i in 0..n {
                adjoint[1 + i] += padj[i];
            }
        }
        cost /= z;
        gmean /= z;
        for v in adjoint[1..].iter_mut() {
            *v /= z;
        }
        adjoint[0] = -1.0;
        let log_partition = gmax / eta + z.ln();
        // d(y) = <g/eta, y> - log Z
        let entropy = gmean / eta - log_partition;
        GibbsStats {
            adjoint,
            mean_cost: cost,
            log_partition,
            entropy,
        }
    }

    /// Smoothed objective phi_eta(rho, alpha) of the discretized program:
    /// (rho,alpha).c + eta log <exp(g/eta), lambda> with c = (-1, 0, ...).
    pub fn phi_eta(&self, rho: f64, alpha: &[f64], eta: f64, scratch: &mut Vec<f64>) -> f64 {
        let stats = self.gibbs_stats(rho, alpha, eta, scratch);
        -rho + eta * stats.log_partition
    }

    /// min over K of psi + sum_i alpha_i (Q-I)u_i: dense grid scan followed
    /// by coordinate golden-section refinement inside the best cell.
    pub fn certified_min(&self, alpha: &[f64]) -> Result<MinResult, SmoothingError> {
        let n = self.basis.n;
        let dim_k = self.model.dim_k();
        let (best_t, grid_min) = (0..self.nodes)
            .map(|t| {
                let row = &self.qmi[t * n..(t + 1) * n];
                let mut v = self.psi[t];
                for i in 0..n {
                    v += alpha[i] * row[i];
                }
                (t, v)
            })
            .fold((0usize, f64::INFINITY), |acc, (t, v)| {
                if v < acc.1 {
                    (t, v)
                } else {
                    acc
                }
            });
        let eval = |k: &[f64]| -> Result<f64, SmoothingError> {
            let (s, a) = k.split_at(self.model.dim_s);
            let evals: Vec<_> = self
                .basis
                .funcs
                .iter()
                .map(|f| move |y: &[f64]| f.eval(y))
                .collect();
            let (qu, _) = self.model.kernel_expectation_multi(&evals, s, a)?;
            let mut v = self.model.cost(s, a);
            for i in 0..n {
                v += alpha[i] * (qu[i] - self.basis.eval(i, s));
            }
            Ok(v)
        };
        let mut x = self.points[best_t * dim_k..(best_t + 1) * dim_k].to_vec();
        let mut fx = grid_min;
        let cell = 1.5 / (self.nodes as f64).powf(1.0 / dim_k as f64);
        for _sweep in 0..3 {
            for d in 0..dim_k {
                let (lo, hi) = ((x[d] - cell).max(0.0), (x[d] + cell).min(1.0));
                let (xd, fd) = golden_min(
                    |v| {
                        let mut y = x.clone();
                        y[d] = v;
                        eval(&y).unwrap_or(f64::INFINITY)
                    },
                    lo,
                    hi,
                    40,
                );
                if fd < fx {
                    x[d] = xd;
                    fx = fd;
                }
            }
        }
        let uncertain = grid_min - fx > 0.05 * (1.0 + grid_min.abs());
        Ok(MinResult {
            value: fx.min(grid_min),
            argmin: x,
            grid_value: grid_min,
            uncertain,
        })
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[derive(Debug, Clone)]
pub struct GibbsStats {
    /// A* y_eta(rho, alpha): [-1, <(Q-I)u_1, y>, ..., <(Q-I)u_n, y>]
    pub adjoint: Vec<f64>,
    pub mean_cost: f64,
    pub log_partition: f64,
    pub entropy: f64,
}

/// Adjoint image and log partition at one primal point (the op-level
/// interface; longer runs share a [`SmoothingContext`]).
pub fn gibbs_gradient(
    ctx: &SmoothingContext,
    rho: f64,
    alpha: &[f64],
    eta: f64,
) -> (Vec<f64>, f64) {
    let mut scratch = Vec::new();
    let stats = ctx.gibbs_stats(rho, alpha, eta, &mut scratch);
    (stats.adjoint, stats.log_partition)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: u64,
    pub j_lb: f64,
    pub j_ub: f64,
    pub gap: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordMode {
    None,
    Geometric,
    Every,
}

#[derive(Debug, Clone)]
pub struct MinResult {
    pub value: f64,
    pub argmin: Vec<f64>,
    pub grid_value: f64,
    pub uncertain: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorBounds {
    pub j_lb: f64,
    pub j_ub: f64,
    pub maximizer_uncertain: bool,
}

/// Final state of a fast-gradient run, with the averaged-dual sufficient
/// statistics (never the mixture measure itself).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingRun {
    pub eta: f64,
    pub iterations: u64,
    pub theta_p: f64,
    /// packed (rho, alpha) iterates
    pub iterate_w: Vec<f64>,
    pub iterate_z: Vec<f64>,
    pub iterate_alpha: Vec<f64>,
    /// <psi, y_hat>
    pub ybar_cost: f64,
    /// A* y_hat, first component -1
    pub ybar_adjoint: Vec<f64>,
    /// sum of averaging weights (telescopes to 1)
    pub ybar_weight_total: f64,
    pub history: Vec<TraceRow>,
}

impl SmoothingRun {
    pub fn alpha_block(&self) -> &[f64] {
        &self.iterate_alpha[1..]
    }
}

/// Bounds from the run's averaged dual and last primal iterate.
pub fn posterior_bounds(
    ctx: &SmoothingContext,
    run: &SmoothingRun,
) -> Result<PosteriorBounds, SmoothingError> {
    let (j_lb, j_ub, unc) = bounds_from_parts(
        ctx,
        run.theta_p,
        run.ybar_cost / run.ybar_weight_total.max(f64::MIN_POSITIVE),
        &run.ybar_adjoint,
        run.ybar_weight_total,
        run.alpha_block(),
        true,
    )?;
    Ok(PosteriorBounds {
        j_lb,
        j_ub,
        maximizer_uncertain: unc,
    })
}

fn bounds_from_parts(
    ctx: &SmoothingContext,
    theta_p: f64,
    ybar_cost: f64,
    ybar_adjoint: &[f64],
    weight_total: f64,
    alpha: &[f64],
    refine: bool,
) -> Result<(f64, f64, bool), SmoothingError> {
    let n = ctx.basis.n;
    let wt = weight_total.max(f64::MIN_POSITIVE);
    // ||A* y - c|| on the alpha block (rho components cancel exactly)
    let resid: f64 = (0..n)
        .map(|i| (ybar_adjoint[1 + i] / wt).powi(2))
        .sum::<f64>()
        .sqrt();
    let j_ub = ybar_cost + theta_p * resid;
    let (j_lb, unc) = if refine {
        let r = ctx.certified_min(alpha)?;
        (r.value, r.uncertain)
    } else {
        let mut best = f64::INFINITY;
        for t in 0..ctx.nodes {
            let row = &ctx.qmi[t * n..(t + 1) * n];
            let mut v = ctx.psi[t];
            for i in 0..n {
                v += alpha[i] * row[i];
            }
            best = best.min(v);
        }
        (best, false)
    };
    Ok((j_lb, j_ub, unc))
}

/// Runs the optimal fast-gradient scheme for `iters` gradient evaluations
/// from w = 0. The rho coordinate is never constrained by the prox (the ball
/// applies to the alpha block only) and stays at zero because the first
/// gradient component cancels against c exactly.
pub fn run_algorithm1(
    ctx: &SmoothingContext,
    theta_p: f64,
    eta: f64,
    iters: u64,
    record: RecordMode,
    lipschitz_override: Option<f64>,
) -> Result<SmoothingRun, SmoothingError> {
    assert!(eta > 0.0 && iters >= 1);
    let n = ctx.basis.n;
    let lip = lipschitz_override
        .unwrap_or(4.0 * ctx.basis.rho_n.powi(2))
        .max(f64::MIN_POSITIVE);
    let mut w = vec![0.0; n + 1];
    let mut z = vec![0.0; n + 1];
    let mut alpha_it = vec![0.0; n + 1];
    let mut cum_r = vec![0.0; n + 1];
    let mut ybar_cost_raw = 0.0;
    let mut ybar_adj_raw = vec![0.0; n + 1];
    let mut history = Vec::new();
    let total_weight = (iters as f64) * (iters as f64 + 1.0);
    let mut scratch = Vec::new();

    let checkpoints = checkpoint_set(iters, record);
    for j in 0..iters {
        let stats = ctx.gibbs_stats(w[0], &w[1..], eta, &mut scratch);
        // r = (eta/L)(c - A* y); c = (-1, 0, ..., 0)
        let mut r = vec![0.0; n + 1];
        for i in 1..=n {
            r[i] = (eta / lip) * (-stats.adjoint[i]);
        }
        let jf = j as f64;
        for i in 0..=n {
            cum_r[i] += (jf + 1.0) / 2.0 * r[i];
        }
        // z = T(cum_r, 0); alpha = T(r, w)  (theta applies to alpha block)
        let zb = prox_t(&cum_r[1..], &vec![0.0; n], theta_p);
        z[0] = -cum_r[0];
        z[1..].copy_from_slice(&zb);
        let ab = prox_t(&r[1..], &w[1..], theta_p);
        alpha_it[0] = w[0] - r[0];
        alpha_it[1..].copy_from_slice(&ab);
        // dual averaging weight 2(j+1)/(iters (iters+1))
        let omega = 2.0 * (jf + 1.0);
        ybar_cost_raw += omega * stats.mean_cost;
        for i in 0..=n {
            ybar_adj_raw[i] += omega * stats.adjoint[i];
        }
        // w = 2/(j+3) z + (j+1)/(j+3) alpha
        for i in 0..=n {
            w[i] = 2.0 / (jf + 3.0) * z[i] + (jf + 1.0) / (jf + 3.0) * alpha_it[i];
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(SmoothingError::NonFiniteIterate { iteration: j });
        }
        if checkpoints.contains(&(j + 1)) {
            let grad_norm: f64 = (1..=n)
                .map(|i| stats.adjoint[i].powi(2))
                .sum::<f64>()
                .sqrt();
            let partial_wt = ((jf + 1.0) * (jf + 2.0)) / total_weight;
            let adj_now: Vec<f64> = ybar_adj_raw.iter().map(|v| v / total_weight).collect();
            let (j_lb, j_ub, _unc) = bounds_from_parts(
                ctx,
                theta_p,
                ybar_cost_raw / total_weight / partial_wt,
                &adj_now,
                partial_wt,
                &alpha_it[1..],
                true,
            )?;
            history.push(TraceRow {
                iter: j + 1,
                j_lb,
                j_ub,
                gap: j_ub - j_lb,
                grad_norm,
            });
        }
    }
    let ybar_adjoint: Vec<f64> = ybar_adj_raw.iter().map(|v| v / total_weight).collect();
    Ok(SmoothingRun {
        eta,
        iterations: iters,
        theta_p,
        iterate_w: w,
        iterate_z: z,
        iterate_alpha: alpha_it,
        ybar_cost: ybar_cost_raw / total_weight,
        ybar_adjoint,
        ybar_weight_total: ybar_adjoint_weight(iters),
        history,
    })
}

fn ybar_adjoint_weight(iters: u64) -> f64 {
    // sum_j 2(j+1) / (iters (iters+1)) over j = 0..iters-1
    let total = (iters as f64) * (iters as f64 + 1.0);
    let mut acc = 0.0;
    for j in 0..iters {
        acc += 2.0 * (j as f64 + 1.0) / total;
    }
    acc
}

fn checkpoint_set(iters: u64, mode: RecordMode) -> std::collections::BTreeSet<u64> {
    let mut set = std::collections::BTreeSet::new();
    match mode {
        RecordMode::None => {}
        RecordMode::Every => {
            set.extend(1..=iters);
        }
        RecordMode::Geometric => {
            let mut k = 1u64;
            while k <= iters {
                for m in 1..10 {
                    let v = k * m;
                    if v <= iters {
                        set.insert(v);
                    }
                }
                k *= 10;
            }
            set.insert(iters);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::fourier_basis;
    use crate::model::{Criterion, KernelDensity, StageCost};
    use crate::quadrature::QuadratureSpec;
    use std::sync::Arc;

    fn toy_model(cost: StageCost) -> ControlModel {
        let density: KernelDensity = Arc::new(|_y, _s, _a| 1.0);
        ControlModel::new(
            1,
            1,
            density,
            cost,
            0.0,
            2.0,
            2.0,
            Criterion::AverageCost,
            QuadratureSpec::new(32, 1, 1e-10).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn prox_identity_inside_ball() {
        let a = [0.3, -0.4];
        let out = prox_t(&[0.0, 0.0], &a, 1.0);
        assert_eq!(out, vec![0.3, -0.4]);
    }

    #[test]
    fn prox_lands_on_sphere() {
        let out = prox_t(&[3.0, 0.0], &[0.0, 0.0], 1.0);
        assert!((out[0] + 1.0).abs() < 1e-15 && out[1].abs() < 1e-15);
        let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prox_q_equals_alpha() {
        let out = prox_t(&[0.5, 0.5], &[0.5, 0.5], 2.0);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn gibbs_first_component_minus_one() {
        let m = toy_model(Arc::new(|s, a| s[0] + a[0]));
        let b = fourier_basis(&m, 3).unwrap();
        let ctx = SmoothingContext::new(&m, &b, 48).unwrap();
        let (adj, _) = gibbs_gradient(&ctx, 0.2, &[0.1, -0.2, 0.05], 0.3);
        assert_eq!(adj[0], -1.0);
    }

    #[test]
    fn huge_eta_gives_uniform_average() {
        let m = toy_model(Arc::new(|s, a| s[0] + a[0]));
        let b = fourier_basis(&m, 2).unwrap();
        let ctx = SmoothingContext::new(&m, &b, 64).unwrap();
        let (adj, _) = gibbs_gradient(&ctx, 0.0, &[0.4, -0.3], 1e9);
        // uniform average of (Q-I)u_i over the grid
        let n = b.n;
        for i in 0..n {
            let direct: f64 = (0..ctx.nodes)
                .map(|t| ctx.weights[t] * ctx.qmi[t * n + i])
                .sum();
            assert!(
                (adj[1 + i] - direct).abs() < 1e-9,
                "{} vs {}",
                adj[1 + i],
                direct
            );
        }
    }

    #[test]
    fn gibbs_matches_analytic_exponential() {
        // g(k) = k_1 via psi = -s (allowed in the context math even though a
        // real model would be nonnegative), eta = 1: density e^x / (e - 1)
        let m = toy_model(Arc::new(|s, _a| -s[0]));
        let b = BasisSet::empty(1);
        let ctx = SmoothingContext::new(&m, &b, 96).unwrap();
        let mut scratch = Vec::new();
        let stats = ctx.gibbs_stats(0.0, &[], 1.0, &mut scratch);
        // E[psi] under the Gibbs law: -E[x] with E[x] = (e-2)/(e-1) ... over
        // x in [0,1] with density e^x/(e-1): E[x] = integral x e^x / (e-1) = 1/(e-1)
        let e = std::f64::consts::E;
        let expect_mean_x = 1.0 / (e - 1.0);
        assert!(
            (stats.mean_cost + expect_mean_x).abs() < 1e-8,
            "{}",
            stats.mean_cost
        );
        // log partition: log integral e^x dx = log(e - 1)
        assert!((stats.log_partition - (e - 1.0).ln()).abs() < 1e-8);
    }

    #[test]
    fn averaging_weights_telescope() {
        for iters in [1u64, 2, 7, 40] {
            assert!((ybar_adjoint_weight(iters) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_hand_trace() {
        let m = toy_model(Arc::new(|s, a| s[0] + a[0]));
        let b = fourier_basis(&m, 2).unwrap();
        let ctx = SmoothingContext::new(&m, &b, 48).unwrap();
        let eta = 0.25;
        let theta = 5.0;
        let run = run_algorithm1(&ctx, theta, eta, 1, RecordMode::None, None).unwrap();
        // hand-step: w0 = 0, r = (eta/L)(c - A*y(0)), L = 4 rho_n^2
        let (adj, _) = gibbs_gradient(&ctx, 0.0, &[0.0, 0.0], eta);
        let lip = 4.0 * b.rho_n.powi(2);
        let r: Vec<f64> = (0..3)
            .map(|i| if i == 0 { 0.0 } else { -(eta / lip) * adj[i] })
            .collect();
        // z = T(0.5 r, 0), alpha = T(r, 0), w1 = (2/3) z + (1/3) alpha
        let zb = prox_t(&[0.5 * r[1], 0.5 * r[2]], &[0.0, 0.0], theta);
        let ab = prox_t(&[r[1], r[2]], &[0.0, 0.0], theta);
        for i in 0..2 {
            assert!((run.iterate_z[1 + i] - zb[i]).abs() < 1e-14);
            assert!((run.iterate_alpha[1 + i] - ab[i]).abs() < 1e-14);
            let w_expect = 2.0 / 3.0 * zb[i] + 1.0 / 3.0 * ab[i];
            assert!((run.iterate_w[1 + i] - w_expect).abs() < 1e-14);
        }
        assert_eq!(run.iterate_w[0], 0.0);
        assert!((run.ybar_weight_total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_cost_keeps_alpha_near_zero() {
        // constant cost: g is flat in k up to the alpha terms, the Gibbs
        // measure is uniform-symmetric, and the mean-zero waves never pick
        // up gradient mass
        let m = toy_model(Arc::new(|_s, _a| 1.0));
        let b = fourier_basis(&m, 1).unwrap();
        let ctx = SmoothingContext::new(&m, &b, 64).unwrap();
        let run = run_algorithm1(&ctx, 3.0, 0.1, 50, RecordMode::None, None).unwrap();
        for v in run.alpha_block() {
            assert!(v.abs() < 1e-8, "alpha drifted: {v}");
        }
    }

    #[test]
    fn degenerate_basis_bounds_reduce_to_cost_extremes() {
        // n = 0: j_lb is the exact minimum stage cost over K, j_ub the
        // Gibbs-averaged cost, so the sandwich brackets the flat program
        let m = toy_model(Arc::new(|s, a| (s[0] - 0.3).powi(2) + 0.5 * a[0]));
        let b = BasisSet::empty(1);
        let ctx = SmoothingContext::new(&m, &b, 48).unwrap();
        let run = run_algorithm1(&ctx, 1.0, 0.05, 30, RecordMode::None, None).unwrap();
        let pb = posterior_bounds(&ctx, &run).unwrap();
        // continuous minimum of the cost is 0 at (0.3, 0)
        assert!(pb.j_lb.abs() < 1e-6, "j_lb {}", pb.j_lb);
        assert!(pb.j_ub >= pb.j_lb);
    }

    #[test]
    fn sandwich_holds_on_history() {
        let m = toy_model(Arc::new(|s, a| (s[0] - 0.5).powi(2) + 0.3 * a[0]));
        let b = fourier_basis(&m, 3).unwrap();
        let ctx = SmoothingContext::new(&m, &b, 64).unwrap();
        let run = run_algorithm1(&ctx, 4.0, 0.05, 200, RecordMode::Geometric, None).unwrap();
        assert!(!run.history.is_empty());
        for row in &run.history {
            assert!(row.j_lb <= row.j_ub + 1e-9, "violated at {}", row.iter);
        }
        let pb = posterior_bounds(&ctx, &run).unwrap();
        assert!(pb.j_lb <= pb.j_ub);
    }
}
