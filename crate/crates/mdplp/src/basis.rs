//! Lipschitz-normalized Fourier bases for the value-function subspace, with
//! cached kernel expectations Qu_i.

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlModel, ModelError};

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("basis of size {requested} on dim {dim} exceeds the tensor budget")]
    UnsupportedDimension { requested: usize, dim: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Cos,
    Sin,
}

/// One axis factor of a tensor Fourier function: cos/sin(2*pi*freq*x), or the
/// constant 1 when `freq == 0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AxisWave {
    pub freq: u32,
    pub phase: Phase,
}

impl AxisWave {
    fn eval(&self, x: f64) -> f64 {
        if self.freq == 0 {
            return 1.0;
        }
        let t = 2.0 * std::f64::consts::PI * self.freq as f64 * x;
        match self.phase {
            Phase::Cos => t.cos(),
            Phase::Sin => t.sin(),
        }
    }
}

/// Product of per-axis waves scaled so the estimated Lipschitz norm is one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisFunction {
    pub waves: Vec<AxisWave>,
    pub amplitude: f64,
}

impl BasisFunction {
    pub fn eval(&self, s: &[f64]) -> f64 {
        debug_assert_eq!(s.len(), self.waves.len());
        let mut v = self.amplitude;
        for (w, &x) in self.waves.iter().zip(s) {
            v *= w.eval(x);
        }
        v
    }

    fn total_freq(&self) -> u32 {
        self.waves.iter().map(|w| w.freq).sum()
    }
}

/// Serializable descriptor recorded in run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisDescriptor {
    pub family: String,
    pub n: usize,
    pub amplitudes: Vec<f64>,
}

type QuKey = (usize, Box<[u64]>);

/// The n-dimensional subspace X_n: normalized functions u_i on the state box
/// plus the memoized kernel expectations Qu_i.
///
/// The coefficient norm is fixed to l2, so the norm-equivalence ratio is
/// rho_n = sqrt(n).
pub struct BasisSet {
    pub n: usize,
    pub dim_s: usize,
    pub funcs: Vec<BasisFunction>,
    pub lip_norms: Vec<f64>,
    pub rho_n: f64,
    qu_cache: DashMap<QuKey, f64>,
}

impl BasisSet {
    /// Basis with no functions; the program then degenerates to the scalar
    /// rho decision alone.
    pub fn empty(dim_s: usize) -> Self {
        Self {
            n: 0,
            dim_s,
            funcs: Vec::new(),
            lip_norms: Vec::new(),
            rho_n: 0.0,
            qu_cache: DashMap::new(),
        }
    }

    /// Test hook: replaces one evaluator (e.g. with the constant function to
    /// probe stochastic-kernel normalization through qu_values).
    pub fn with_replaced(mut self, i: usize, f: BasisFunction) -> Self {
        self.qu_cache.clear();
        self.funcs[i] = f;
        self
    }

    pub fn eval(&self, i: usize, s: &[f64]) -> f64 {
        self.funcs[i].eval(s)
    }

    pub fn descriptor(&self) -> BasisDescriptor {
        BasisDescriptor {
            family: "fourier".to_string(),
            n: self.n,
            amplitudes: self.funcs.iter().map(|f| f.amplitude).collect(),
        }
    }

    fn cache_key(&self, i: usize, s: &[f64], a: &[f64]) -> QuKey {
        let bits: Vec<u64> = s.iter().chain(a.iter()).map(|v| v.to_bits()).collect();
        (i, bits.into_boxed_slice())
    }

    /// Qu_i(s,a) for all i at each point, filling and reusing the cache.
    /// Deterministic for a fixed model/basis/quadrature.
    pub fn qu_values(
        &self,
        model: &ControlModel,
        points: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Vec<Vec<f64>>, BasisError> {
        let mut out = vec![vec![0.0; points.len()]; self.n];
        for (j, (s, a)) in points.iter().enumerate() {
            let mut missing = false;
            for i in 0..self.n {
                match self.qu_cache.get(&self.cache_key(i, s, a)) {
                    Some(v) => out[i][j] = *v,
                    None => {
                        missing = true;
                        break;
                    }
                }
            }
            if missing {
                let evals: Vec<_> = self
                    .funcs
                    .iter()
                    .map(|f| move |y: &[f64]| f.eval(y))
                    .collect();
                let (vals, _) = model.kernel_expectation_multi(&evals, s, a)?;
                for i in 0..self.n {
                    self.qu_cache.insert(self.cache_key(i, s, a), vals[i]);
                    out[i][j] = vals[i];
                }
            }
        }
        Ok(out)
    }

    /// Qu_i at one point without touching the cache (recompute oracle).
    pub fn qu_values_uncached(
        &self,
        model: &ControlModel,
        s: &[f64],
        a: &[f64],
    ) -> Result<Vec<f64>, BasisError> {
        let evals: Vec<_> = self
            .funcs
            .iter()
            .map(|f| move |y: &[f64]| f.eval(y))
            .collect();
        let (vals, _) = model.kernel_expectation_multi(&evals, s, a)?;
        Ok(vals)
    }

    /// Bulk kernel expectations for scenario assembly: parallel over points,
    /// bypassing the memo table (fresh samples are never revisited).
    /// Returns point-major rows [Qu_1(k_j), ..., Qu_n(k_j)].
    ///
    /// When the density support is the whole box the integration nodes are
    /// shared, so the basis values are evaluated once and each point costs
    /// one density sweep plus a small matrix-vector product.
    pub fn qu_matrix(
        &self,
        model: &ControlModel,
        points: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Vec<Vec<f64>>, BasisError> {
        use rayon::prelude::*;
        if !model.has_static_panels() {
            return points
                .par_iter()
                .map(|(s, a)| self.qu_values_uncached(model, s, a))
                .collect();
        }
        let (nodes, weights) = model.static_panel_nodes();
        let total = weights.len();
        let n = self.n;
        // node-major basis table
        let mut table = vec![0.0; total * n];
        for t in 0..total {
            let y = &nodes[t * model.dim_s..(t + 1) * model.dim_s];
            for i in 0..n {
                table[t * n + i] = self.eval(i, y);
            }
        }
        let tol = 100.0 * model.quadrature.tolerance;
        points
            .par_iter()
            .map_init(
                || vec![0.0; total],
                |dens, (s, a)| {
                    model.density_batch(&nodes, s, a, dens);
                    let mut mass = 0.0;
                    let mut acc = vec![0.0; n];
                    for t in 0..total {
                        let wq = weights[t] * dens[t];
                        if wq == 0.0 {
                            continue;
                        }
                        mass += wq;
                        let row = &table[t * n..(t + 1) * n];
                        for i in 0..n {
                            acc[i] += wq * row[i];
                        }
                    }
                    if (mass - 1.0).abs() > tol {
                        return Err(BasisError::Model(ModelError::QuadratureDivergence { mass }));
                    }
                    Ok(acc)
                },
            )
            .collect()
    }
}

/// Grid-based estimate of the Lipschitz norm
/// max { sup |u|, |u(x)-u(x')| / ||x-x'||_inf } over adjacent grid nodes.
///
/// A lower estimate that converges from below as the resolution grows.
pub fn estimate_lipschitz_norm<F>(dim: usize, u: F, grid_resolution: usize) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert!(grid_resolution >= 2);
    let m = grid_resolution;
    let h = 1.0 / (m - 1) as f64;
    let total = m.pow(dim as u32);
    let vals: Vec<f64> = (0..total)
        .map(|flat| {
            let mut x = vec![0.0; dim];
            let mut rem = flat;
            for d in (0..dim).rev() {
                x[d] = (rem % m) as f64 * h;
                rem /= m;
            }
            u(&x)
        })
        .collect();
    let mut best = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    // forward neighbor offsets in {0,1}^dim \ {0}; each has sup-distance h
    let strides: Vec<usize> = (0..dim)
        .rev()
        .scan(1usize, |acc, _| {
            let s = *acc;
            *acc *= m;
            Some(s)
        })
        .collect();
    // strides[d] corresponds to axis dim-1-d; rebuild in axis order
    let mut stride = vec![0usize; dim];
    for (d, s) in strides.into_iter().enumerate() {
        stride[dim - 1 - d] = s;
    }
    for offset_mask in 1..(1usize << dim) {
        for flat in 0..total {
            let mut ok = true;
            let mut nb = flat;
            let mut rem = flat;
            let mut coords = vec![0usize; dim];
            for d in (0..dim).rev() {
                coords[d] = rem % m;
                rem /= m;
            }
            for d in 0..dim {
                if offset_mask & (1 << d) != 0 {
                    if coords[d] + 1 >= m {
                        ok = false;
                        break;
                    }
                    nb += stride[d];
                }
            }
            if ok {
                let q = (vals[nb] - vals[flat]).abs() / h;
                if q > best {
                    best = q;
                }
            }
        }
    }
    best
}

fn tensor_budget(dim: usize) -> usize {
    match dim {
        1 => 4096,
        2 => 1024,
        3 => 512,
        _ => 0,
    }
}

fn normalization_resolution(dim: usize) -> usize {
    match dim {
        1 => 4096,
        2 => 181,
        _ => 48,
    }
}

/// Enumerates the Fourier family on [0,1]^dim_s ordered by total frequency
/// (ties lexicographic on the wave tuple), the all-constant function
/// excluded, each entry rescaled so its estimated Lipschitz norm is one.
pub fn fourier_basis(model: &ControlModel, n: usize) -> Result<BasisSet, BasisError> {
    assert!(n >= 1);
    let dim = model.dim_s;
    if n > tensor_budget(dim) || tensor_budget(dim) == 0 {
        return Err(BasisError::UnsupportedDimension { requested: n, dim });
    }
    let mut raw: Vec<BasisFunction> = Vec::new();
    // grow the frequency budget until enough entries exist
    let mut max_total = 1u32;
    while raw.len() < n {
        raw.clear();
        let mut tuple = vec![
            AxisWave {
                freq: 0,
                phase: Phase::Cos
            };
            dim
        ];
        enumerate_waves(dim, max_total, &mut tuple, 0, &mut raw);
        raw.sort_by(|a, b| {
            a.total_freq()
                .cmp(&b.total_freq())
                .then_with(|| wave_lex_key(a).cmp(&wave_lex_key(b)))
        });
        max_total += 1;
        if max_total > 8192 {
            return Err(BasisError::UnsupportedDimension { requested: n, dim });
        }
    }
    raw.truncate(n);

    let res = normalization_resolution(dim);
    let mut funcs = Vec::with_capacity(n);
    let mut lip_norms = Vec::with_capacity(n);
    for f in raw {
        let est = estimate_lipschitz_norm(dim, |x| f.eval(x), res);
        let normalized = BasisFunction {
            waves: f.waves.clone(),
            amplitude: f.amplitude / est,
        };
        let check = estimate_lipschitz_norm(dim, |x| normalized.eval(x), res);
        funcs.push(normalized);
        lip_norms.push(check);
    }
    Ok(BasisSet {
        n,
        dim_s: dim,
        funcs,
        lip_norms,
        rho_n: (n as f64).sqrt(),
        qu_cache: DashMap::new(),
    })
}

fn wave_lex_key(f: &BasisFunction) -> Vec<u32> {
    f.waves
        .iter()
        .flat_map(|w| [w.freq, if w.phase == Phase::Cos { 0 } else { 1 }])
        .collect()
}

fn enumerate_waves(
    dim: usize,
    max_total: u32,
    tuple: &mut Vec<AxisWave>,
    axis: usize,
    out: &mut Vec<BasisFunction>,
) {
    if axis == dim {
        if tuple.iter().map(|w| w.freq).sum::<u32>() > 0 {
            out.push(BasisFunction {
                waves: tuple.clone(),
                amplitude: 1.0,
            });
        }
        return;
    }
    let used: u32 = tuple[..axis].iter().map(|w| w.freq).sum();
    tuple[axis] = AxisWave {
        freq: 0,
        phase: Phase::Cos,
    };
    enumerate_waves(dim, max_total, tuple, axis + 1, out);
    for k in 1..=(max_total - used) {
        for phase in [Phase::Cos, Phase::Sin] {
            tuple[axis] = AxisWave { freq: k, phase };
            enumerate_waves(dim, max_total, tuple, axis + 1, out);
        }
    }
    tuple[axis] = AxisWave {
        freq: 0,
        phase: Phase::Cos,
    };
}
