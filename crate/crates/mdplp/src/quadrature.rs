//! Gauss-Legendre quadrature on [0,1] intervals, with piecewise splits at
//! declared kink locations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("nodes_per_dim must be >= 2, got {0}")]
    TooFewNodes(usize),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("split point {0} outside [0,1]")]
    SplitOutOfRange(f64),
}

/// Tensor Gauss-Legendre rule description for the kernel integrals.
///
/// `split_points[axis]` lists interior locations where the integrand is known
/// to be non-smooth; each segment between consecutive splits gets its own
/// `nodes_per_dim`-point panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub nodes_per_dim: usize,
    pub split_points: Vec<Vec<f64>>,
    pub tolerance: f64,
}

impl QuadratureSpec {
    pub fn new(nodes_per_dim: usize, dim: usize, tolerance: f64) -> Result<Self, QuadratureError> {
        let spec = Self {
            nodes_per_dim,
            split_points: vec![Vec::new(); dim],
            tolerance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_splits(mut self, axis: usize, splits: Vec<f64>) -> Result<Self, QuadratureError> {
        self.split_points[axis] = splits;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), QuadratureError> {
        if self.nodes_per_dim < 2 {
            return Err(QuadratureError::TooFewNodes(self.nodes_per_dim));
        }
        if !(self.tolerance > 0.0) {
            return Err(QuadratureError::BadTolerance(self.tolerance));
        }
        for axis in &self.split_points {
            for &s in axis {
                if !(0.0..=1.0).contains(&s) {
                    return Err(QuadratureError::SplitOutOfRange(s));
                }
            }
        }
        Ok(())
    }
}

/// Nodes and weights of the m-point Gauss-Legendre rule on [-1,1], memoized
/// by order (panel construction happens per state-action pair, so the base
/// rule must not be re-derived each time).
pub fn gauss_legendre_cached(m: usize) -> std::sync::Arc<(Vec<f64>, Vec<f64>)> {
    use std::collections::HashMap;
    use std::sync::{Arc, OnceLock, RwLock};
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(hit) = cache.read().unwrap().get(&m) {
        return hit.clone();
    }
    let fresh = Arc::new(gauss_legendre(m));
    cache.write().unwrap().entry(m).or_insert(fresh).clone()
}

/// Nodes and weights of the m-point Gauss-Legendre rule on [-1,1].
///
/// Newton iteration on the Legendre recurrence; accurate to machine precision
/// for the orders used here (m <= a few hundred).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let n = m as f64;
    for i in 0..(m + 1) / 2 {
        // Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
        let (_, d) = legendre_with_deriv(m, 0.0);
        weights[m / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_with_deriv(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// One-dimensional panel rule on [lo,hi] split at the given interior points.
///
/// Returns (nodes, weights) with weights summing to hi-lo.
pub fn panel_rule(
    lo: f64,
    hi: f64,
    splits: &[f64],
    nodes_per_panel: usize,
) -> (Vec<f64>, Vec<f64>) {
    let rule = gauss_legendre_cached(nodes_per_panel);
    let (gx, gw) = (&rule.0, &rule.1);
    let mut cuts: Vec<f64> = vec![lo];
    for &s in splits {
        if s > lo && s < hi {
            cuts.push(s);
        }
    }
    cuts.push(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut xs = Vec::with_capacity(nodes_per_panel * (cuts.len() - 1));
    let mut ws = Vec::with_capacity(xs.capacity());
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if b - a <= 0.0 {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for j in 0..nodes_per_panel {
            xs.push(mid + half * gx[j]);
            ws.push(half * gw[j]);
        }
    }
    (xs, ws)
}

/// Tensor grid over [0,1]^dim used by the smoothing module: per-axis
/// Gauss-Legendre nodes (respecting static splits) and product weights.
pub struct TensorGrid {
    pub dim: usize,
    pub axes: Vec<Vec<f64>>,
    pub axis_weights: Vec<Vec<f64>>,
}

impl TensorGrid {
    pub fn new(dim: usize, nodes_per_dim: usize, splits: &[Vec<f64>]) -> Self {
        let mut axes = Vec::with_capacity(dim);
        let mut axis_weights = Vec::with_capacity(dim);
        for d in 0..dim {
            let empty = Vec::new();
            let sp = splits.get(d).unwrap_or(&empty);
            let (x, w) = panel_rule(0.0, 1.0, sp, nodes_per_dim);
            axes.push(x);
            axis_weights.push(w);
        }
        Self {
            dim,
            axes,
            axis_weights,
        }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index -> point and product weight.
    pub fn point(&self, mut idx: usize) -> (Vec<f64>, f64) {
        let mut p = vec![0.0; self.dim];
        let mut w = 1.0;
        for d in (0..self.dim).rev() {
            let m = self.axes[d].len();
            let j = idx % m;
            idx /= m;
            p[d] = self.axes[d][j];
            w *= self.axis_weights[d][j];
        }
        (p, w)
    }
}
