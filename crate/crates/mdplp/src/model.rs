//! Markov control models on the unit hypercube.
//!
//! A [`ControlModel`] couples a transition-kernel density q(y|s,a), a
//! nonnegative stage cost, the Lipschitz data used by every error bound, and
//! the quadrature rule that realizes kernel expectations Qu(s,a).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{panel_rule, QuadratureError, QuadratureSpec};

pub type KernelDensity = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// Vectorized density: fills `out[t] = q(ys[t] | s, a)` for a batch of
/// next-state points (flattened, dim_s each). Lets kernels hoist per-(s,a)
/// normalizers out of the node loop.
pub type KernelDensityBatch = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type StageCost = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// Optional per-(s,a) support of the next-state density, one (lo,hi) interval
/// per state axis. Needed when the support moves with the state-action pair
/// (the fisheries kernel); the static `split_points` of [`QuadratureSpec`]
/// cannot express that.
pub type SupportFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<(f64, f64)> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    AverageCost,
    Discounted { tau: f64 },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("box bounds must be finite")]
    NonFiniteBounds,
    #[error("box has a zero-width component at axis {0}")]
    DegenerateBox(usize),
    #[error("kernel density integrates to {mass} at probe point (|mass-1| > 100*tolerance)")]
    QuadratureDivergence { mass: f64 },
    #[error("discount factor must lie in (0,1), got {0}")]
    BadDiscount(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Affine change of coordinates from a raw box to the unit box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxTransform {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxTransform {
    pub fn to_unit(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(i, &x)| (x - self.lo[i]) / (self.hi[i] - self.lo[i]))
            .collect()
    }

    pub fn to_raw(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .enumerate()
            .map(|(i, &x)| self.lo[i] + x * (self.hi[i] - self.lo[i]))
            .collect()
    }
}

/// Control model expressed on K = [0,1]^(dim_s+dim_a).
///
/// Immutable after construction; all methods are `&self` and safe to call
/// concurrently.
pub struct ControlModel {
    pub dim_s: usize,
    pub dim_a: usize,
    kernel_density: KernelDensity,
    kernel_density_batch: Option<KernelDensityBatch>,
    stage_cost: StageCost,
    support: Option<SupportFn>,
    pub lipschitz_kernel: f64,
    pub cost_sup_norm: f64,
    pub cost_lip_norm: f64,
    pub criterion: Criterion,
    pub quadrature: QuadratureSpec,
    /// Present when the model was produced by [`to_unit_box`].
    pub transform: Option<BoxTransform>,
    /// Constant subtracted from a raw reward on ingestion (reported
    /// objectives add it back). Zero for cost-native models.
    pub objective_shift: f64,
}

impl ControlModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim_s: usize,
        dim_a: usize,
        kernel_density: KernelDensity,
        stage_cost: StageCost,
        lipschitz_kernel: f64,
        cost_sup_norm: f64,
        cost_lip_norm: f64,
        criterion: Criterion,
        quadrature: QuadratureSpec,
    ) -> Result<Self, ModelError> {
        quadrature.validate()?;
        if let Criterion::Discounted { tau } = criterion {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(ModelError::BadDiscount(tau));
            }
        }
        Ok(Self {
            dim_s,
            dim_a,
            kernel_density,
            kernel_density_batch: None,
            stage_cost,
            support: None,
            lipschitz_kernel,
            cost_sup_norm,
            cost_lip_norm,
            criterion,
            quadrature,
            transform: None,
            objective_shift: 0.0,
        })
    }

    pub fn with_support(mut self, support: SupportFn) -> Self {
        self.support = Some(support);
        self
    }

    pub fn with_batch_density(mut self, batch: KernelDensityBatch) -> Self {
        self.kernel_density_batch = Some(batch);
        self
    }

    /// True when the density support is the whole state box, so integration
    /// panels are shared by every state-action pair.
    pub fn has_static_panels(&self) -> bool {
        self.support.is_none()
    }

    /// The shared next-state panels (tensor product flattened), valid when
    /// [`Self::has_static_panels`] holds: node coordinates (dim_s-major) and
    /// product weights.
    pub fn static_panel_nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let panels = self.state_panels(&[], &[]);
        let sizes: Vec<usize> = panels.iter().map(|(x, _)| x.len()).collect();
        let total: usize = sizes.iter().product();
        let mut nodes = vec![0.0; total * self.dim_s];
        let mut weights = vec![0.0; total];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for d in (0..self.dim_s).rev() {
                let j = rem % sizes[d];
                rem /= sizes[d];
                nodes[flat * self.dim_s + d] = panels[d].0[j];
                w *= panels[d].1[j];
            }
            weights[flat] = w;
        }
        (nodes, weights)
    }

    /// Density values over a flattened batch of next-state nodes.
    pub fn density_batch(&self, ys: &[f64], s: &[f64], a: &[f64], out: &mut [f64]) {
        match &self.kernel_density_batch {
            Some(f) => f(ys, s, a, out),
            None => {
                for (t, chunk) in ys.chunks(self.dim_s).enumerate() {
                    out[t] = (self.kernel_density)(chunk, s, a);
                }
            }
        }
    }

    pub fn dim_k(&self) -> usize {
        self.dim_s + self.dim_a
    }

    pub fn cost(&self, s: &[f64], a: &[f64]) -> f64 {
        (self.stage_cost)(s, a)
    }

    pub fn density(&self, y: &[f64], s: &[f64], a: &[f64]) -> f64 {
        (self.kernel_density)(y, s, a)
    }

    /// Integration panels for the next-state variable at (s,a): per-axis
    /// nodes and weights restricted to the density support and split at the
    /// declared kinks.
    fn state_panels(&self, s: &[f64], a: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let bounds: Vec<(f64, f64)> = match &self.support {
            Some(f) => f(s, a)
                .into_iter()
                .map(|(lo, hi)| (lo.max(0.0), hi.min(1.0)))
                .collect(),
            None => vec![(0.0, 1.0); self.dim_s],
        };
        bounds
            .into_iter()
            .enumerate()
            .map(|(axis, (lo, hi))| {
                let empty = Vec::new();
                let splits = self.quadrature.split_points.get(axis).unwrap_or(&empty);
                panel_rule(lo, hi.max(lo), splits, self.quadrature.nodes_per_dim)
            })
            .collect()
    }

    /// Qu(s,a) = ∫ u(y) q(y|s,a) dy for several integrands sharing one
    /// density sweep. Returns the values and the density mass.
    pub fn kernel_expectation_multi<F>(
        &self,
        funcs: &[F],
        s: &[f64],
        a: &[f64],
    ) -> Result<(Vec<f64>, f64), ModelError>
    where
        F: Fn(&[f64]) -> f64,
    {
        let panels = self.state_panels(s, a);
        let sizes: Vec<usize> = panels.iter().map(|(x, _)| x.len()).collect();
        let total: usize = sizes.iter().product();
        let mut ys = vec![0.0; total * self.dim_s];
        let mut ws = vec![0.0; total];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for d in (0..self.dim_s).rev() {
                let j = rem % sizes[d];
                rem /= sizes[d];
                ys[flat * self.dim_s + d] = panels[d].0[j];
                w *= panels[d].1[j];
            }
            ws[flat] = w;
        }
        let mut dens = vec![0.0; total];
        self.density_batch(&ys, s, a, &mut dens);
        let mut acc = vec![0.0; funcs.len()];
        let mut mass = 0.0;
        for flat in 0..total {
            let q = dens[flat];
            if q == 0.0 {
                continue;
            }
            let wq = ws[flat] * q;
            mass += wq;
            let y = &ys[flat * self.dim_s..(flat + 1) * self.dim_s];
            for (k, f) in funcs.iter().enumerate() {
                acc[k] += wq * f(y);
            }
        }
        if (mass - 1.0).abs() > 100.0 * self.quadrature.tolerance {
            return Err(ModelError::QuadratureDivergence { mass });
        }
        Ok((acc, mass))
    }

    /// Qu(s,a) for one integrand.
    pub fn kernel_expectation<F>(&self, u: F, s: &[f64], a: &[f64]) -> Result<f64, ModelError>
    where
        F: Fn(&[f64]) -> f64,
    {
        let (vals, _) = self.kernel_expectation_multi(std::slice::from_ref(&u), s, a)?;
        Ok(vals[0])
    }

    /// ∫ q(y|s,a) dy, for normalization checks.
    pub fn density_mass(&self, s: &[f64], a: &[f64]) -> f64 {
        let panels = self.state_panels(s, a);
        let mut mass = 0.0;
        let sizes: Vec<usize> = panels.iter().map(|(x, _)| x.len()).collect();
        let total: usize = sizes.iter().product();
        let mut y = vec![0.0; self.dim_s];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for d in (0..self.dim_s).rev() {
                let j = rem % sizes[d];
                rem /= sizes[d];
                y[d] = panels[d].0[j];
                w *= panels[d].1[j];
            }
            mass += w * (self.kernel_density)(&y, s, a);
        }
        mass
    }
}

/// Model on an arbitrary finite box, before the coordinate change.
pub struct RawControlModel {
    pub dim_s: usize,
    pub dim_a: usize,
    pub kernel_density: KernelDensity,
    pub kernel_density_batch: Option<KernelDensityBatch>,
    pub stage_cost: StageCost,
    pub support: Option<SupportFn>,
    pub lipschitz_kernel: f64,
    pub cost_sup_norm: f64,
    pub cost_lip_norm: f64,
    pub criterion: Criterion,
    pub quadrature: QuadratureSpec,
}

/// Affinely maps a model on the box [lo,hi] onto the unit hypercube.
///
/// The kernel density picks up the Jacobian of the state map so it stays a
/// probability density; Lipschitz constants are rescaled by the largest box
/// width (the coordinate change is a contraction by at most that factor in
/// the sup metric).
pub fn to_unit_box(
    lo: &[f64],
    hi: &[f64],
    raw: RawControlModel,
) -> Result<ControlModel, ModelError> {
    let dim_k = raw.dim_s + raw.dim_a;
    assert_eq!(lo.len(), dim_k, "lo must have dim_s + dim_a entries");
    assert_eq!(hi.len(), dim_k, "hi must have dim_s + dim_a entries");
    if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteBounds);
    }
    for i in 0..dim_k {
        if hi[i] - lo[i] <= 0.0 {
            return Err(ModelError::DegenerateBox(i));
        }
    }
    let dim_s = raw.dim_s;
    let transform = BoxTransform {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
    };
    let widths: Vec<f64> = (0..dim_k).map(|i| hi[i] - lo[i]).collect();
    let jac: f64 = widths[..dim_s].iter().product();
    let max_width = widths.iter().cloned().fold(0.0, f64::max);

    let t_state = BoxTransform {
        lo: lo[..dim_s].to_vec(),
        hi: hi[..dim_s].to_vec(),
    };
    let t_action = BoxTransform {
        lo: lo[dim_s..].to_vec(),
        hi: hi[dim_s..].to_vec(),
    };

    let raw_density = raw.kernel_density;
    let ts = t_state.clone();
    let ta = t_action.clone();
    let density: KernelDensity = Arc::new(move |y, s, a| {
        let yr = ts.to_raw(y);
        let sr = ts.to_raw(s);
        let ar = ta.to_raw(a);
        raw_density(&yr, &sr, &ar) * jac
    });

    let raw_cost = raw.stage_cost;
    let ts2 = t_state.clone();
    let ta2 = t_action.clone();
    let cost: StageCost = Arc::new(move |s, a| raw_cost(&ts2.to_raw(s), &ta2.to_raw(a)));

    let support = raw.support.map(|raw_support| {
        let ts3 = t_state.clone();
        let ta3 = t_action.clone();
        let tsi = t_state.clone();
        let f: SupportFn = Arc::new(move |s, a| {
            let sr = ts3.to_raw(s);
            let ar = ta3.to_raw(a);
            raw_support(&sr, &ar)
                .into_iter()
                .enumerate()
                .map(|(i, (l, h))| {
                    let w = tsi.hi[i] - tsi.lo[i];
                    (((l - tsi.lo[i]) / w), ((h - tsi.lo[i]) / w))
                })
                .collect()
        });
        f
    });

    let batch = raw.kernel_density_batch.map(|raw_batch| {
        let ts4 = t_state.clone();
        let ta4 = t_action.clone();
        let f: KernelDensityBatch = Arc::new(move |ys, s, a, out| {
            let sr = ts4.to_raw(s);
            let ar = ta4.to_raw(a);
            let dim = sr.len();
            let mut raw_ys = vec![0.0; ys.len()];
            for (chunk_out, chunk_in) in raw_ys.chunks_mut(dim).zip(ys.chunks(dim)) {
                let mapped = ts4.to_raw(chunk_in);
                chunk_out.copy_from_slice(&mapped);
            }
            raw_batch(&raw_ys, &sr, &ar, out);
            for v in out.iter_mut() {
                *v *= jac;
            }
        });
        f
    });
    let mut model = ControlModel::new(
        raw.dim_s,
        raw.dim_a,
        density,
        cost,
        raw.lipschitz_kernel * max_width,
        raw.cost_sup_norm,
        raw.cost_lip_norm * max_width,
        raw.criterion,
        raw.quadrature,
    )?;
    model.kernel_density_batch = batch;
    model.support = support;
    model.transform = Some(transform);
    Ok(model)
}

/// Outcome of [`validate_model`]: report-only, never fails.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelValidation {
    pub probes: usize,
    pub max_mass_error: f64,
    pub min_cost: f64,
    pub cost_negative: bool,
    /// max |Qu(k)-Qu(k')| / ||k-k'||_inf over probe pairs, for a sup-norm-1
    /// probe function.
    pub empirical_kernel_lipschitz: f64,
    pub declared_kernel_lipschitz: f64,
    pub lipschitz_exceeded: bool,
}

/// Probes Assumption-style invariants: kernel normalization, cost sign and
/// the empirical kernel Lipschitz quotient against the declared constant.
pub fn validate_model<R: Rng>(
    model: &ControlModel,
    probe_count: usize,
    rng: &mut R,
) -> ModelValidation {
    assert!(probe_count >= 1);
    let mut max_mass_error: f64 = 0.0;
    let mut min_cost = f64::INFINITY;
    let probe = |y: &[f64]| {
        // sup-norm <= 1 probe with nonzero variation on every axis
        y.iter()
            .enumerate()
            .map(|(i, &v)| (std::f64::consts::PI * (i as f64 + 1.0) * v).cos())
            .product::<f64>()
    };
    let mut quot: f64 = 0.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    for _ in 0..probe_count {
        let s: Vec<f64> = (0..model.dim_s).map(|_| rng.gen::<f64>()).collect();
        let a: Vec<f64> = (0..model.dim_a).map(|_| rng.gen::<f64>()).collect();
        max_mass_error = max_mass_error.max((model.density_mass(&s, &a) - 1.0).abs());
        min_cost = min_cost.min(model.cost(&s, &a));
        if let Ok(qu) = model.kernel_expectation(probe, &s, &a) {
            if let Some((ps, pa, pqu)) = &prev {
                let dist = s
                    .iter()
                    .chain(a.iter())
                    .zip(ps.iter().chain(pa.iter()))
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                if dist > 1e-9 {
                    quot = quot.max((qu - pqu).abs() / dist);
                }
            }
            prev = Some((s, a, qu));
        }
    }
    ModelValidation {
        probes: probe_count,
        max_mass_error,
        min_cost,
        cost_negative: min_cost < 0.0,
        empirical_kernel_lipschitz: quot,
        declared_kernel_lipschitz: model.lipschitz_kernel,
        lipschitz_exceeded: quot > model.lipschitz_kernel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn toy_model() -> ControlModel {
        // next state uniform on [0,1], cost s+a
        let density: KernelDensity = Arc::new(|_y, _s, _a| 1.0);
        let cost: StageCost = Arc::new(|s, a| s[0] + a[0]);
        ControlModel::new(
            1,
            1,
            density,
            cost,
            0.0,
            2.0,
            1.0,
            Criterion::AverageCost,
            QuadratureSpec::new(16, 1, 1e-10).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_integrand_is_normalized() {
        let m = toy_model();
        let qu = m.kernel_expectation(|_| 1.0, &[0.3], &[0.7]).unwrap();
        assert!((qu - 1.0).abs() < 1e-12);
        let zero = m.kernel_expectation(|_| 0.0, &[0.3], &[0.7]).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn divergence_detected_for_bad_density() {
        let density: KernelDensity = Arc::new(|_y, _s, _a| 0.5);
        let m = ControlModel::new(
            1,
            1,
            density,
            Arc::new(|_s, _a| 0.0),
            0.0,
            0.0,
            0.0,
            Criterion::AverageCost,
            QuadratureSpec::new(8, 1, 1e-10).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            m.kernel_expectation(|_| 1.0, &[0.5], &[0.5]),
            Err(ModelError::QuadratureDivergence { .. })
        ));
    }

    #[test]
    fn identity_transform_preserves_model() {
        let raw = RawControlModel {
            dim_s: 1,
            dim_a: 1,
            kernel_density: Arc::new(|_y, _s, _a| 1.0),
            kernel_density_batch: None,
            stage_cost: Arc::new(|s, a| s[0] + a[0]),
            support: None,
            lipschitz_kernel: 0.5,
            cost_sup_norm: 2.0,
            cost_lip_norm: 1.0,
            criterion: Criterion::AverageCost,
            quadrature: QuadratureSpec::new(16, 1, 1e-10).unwrap(),
        };
        let m = to_unit_box(&[0.0, 0.0], &[1.0, 1.0], raw).unwrap();
        assert_eq!(m.lipschitz_kernel, 0.5);
        assert_eq!(m.cost_lip_norm, 1.0);
        assert!((m.cost(&[0.25], &[0.5]) - 0.75).abs() < 1e-15);
        assert!((m.density_mass(&[0.2], &[0.9]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_rejected() {
        let raw = RawControlModel {
            dim_s: 1,
            dim_a: 1,
            kernel_density: Arc::new(|_y, _s, _a| 1.0),
            kernel_density_batch: None,
            stage_cost: Arc::new(|_s, _a| 0.0),
            support: None,
            lipschitz_kernel: 0.0,
            cost_sup_norm: 0.0,
            cost_lip_norm: 0.0,
            criterion: Criterion::AverageCost,
            quadrature: QuadratureSpec::new(8, 1, 1e-10).unwrap(),
        };
        assert!(matches!(
            to_unit_box(&[0.0, 1.0], &[1.0, 1.0], raw),
            Err(ModelError::DegenerateBox(1))
        ));
        let raw2 = RawControlModel {
            dim_s: 1,
            dim_a: 1,
            kernel_density: Arc::new(|_y, _s, _a| 1.0),
            kernel_density_batch: None,
            stage_cost: Arc::new(|_s, _a| 0.0),
            support: None,
            lipschitz_kernel: 0.0,
            cost_sup_norm: 0.0,
            cost_lip_norm: 0.0,
            criterion: Criterion::AverageCost,
            quadrature: QuadratureSpec::new(8, 1, 1e-10).unwrap(),
        };
        assert!(matches!(
            to_unit_box(&[0.0, f64::NAN], &[1.0, 1.0], raw2),
            Err(ModelError::NonFiniteBounds)
        ));
    }

    #[test]
    fn validate_flags_negative_cost() {
        let density: KernelDensity = Arc::new(|_y, _s, _a| 1.0);
        let cost: StageCost = Arc::new(|s, _a| s[0] - 0.5);
        let m = ControlModel::new(
            1,
            1,
            density,
            cost,
            0.0,
            0.5,
            1.0,
            Criterion::AverageCost,
            QuadratureSpec::new(8, 1, 1e-10).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let report = validate_model(&m, 64, &mut rng);
        assert!(report.cost_negative);
        assert!(report.max_mass_error < 1e-12);
    }
}
