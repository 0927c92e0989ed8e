//! Primal-dual interior-point solver for linear objectives under many linear
//! inequalities plus one l2-ball constraint on a trailing block of the
//! variables, with a cutting-plane fallback.
//!
//! The Newton systems are condensed to dense normal equations of the
//! variable dimension (the scenario constraints enter through a Schur
//! complement accumulation), so a solve costs O(N m^2) per iteration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("problem infeasible: primal residual {residual} after {iterations} iterations")]
    Infeasible { residual: f64, iterations: usize },
    #[error("iteration limit reached: kkt = {kkt:?}")]
    MaxIterations {
        kkt: KktResiduals,
        best: Box<IpmSolution>,
    },
    #[error("normal equations singular beyond repair")]
    SingularSystem,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub complementarity: f64,
}

/// min c.x  s.t.  rows[j].x <= rhs[j],  ||x[ball_start..]|| <= radius.
pub struct ConeLp<'a> {
    pub c: &'a [f64],
    /// row-major N x m
    pub rows: &'a [f64],
    pub rhs: &'a [f64],
    pub m: usize,
    pub ball: Option<Ball>,
}

#[derive(Debug, Clone, Copy)]
pub struct Ball {
    pub start: usize,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub x: Vec<f64>,
    /// one multiplier per linear row
    pub z: Vec<f64>,
    /// multiplier of the ball constraint (0 when absent/inactive)
    pub ball_multiplier: f64,
    pub iterations: usize,
    pub kkt: KktResiduals,
    /// -rhs.z - radius * ||(c + G^T z) restricted to the ball block||
    pub dual_objective: f64,
    pub fallback_used: bool,
}

fn n_rows(p: &ConeLp) -> usize {
    if p.m == 0 {
        0
    } else {
        p.rows.len() / p.m
    }
}

/// Forward/backward substitution with an in-place lower Cholesky factor.
fn chol_substitute(l: &[f64], b: &mut [f64], m: usize) {
    for i in 0..m {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * m + k] * b[k];
        }
        b[i] = v / l[i * m + i];
    }
    for i in (0..m).rev() {
        let mut v = b[i];
        for k in (i + 1)..m {
            v -= l[k * m + i] * b[k];
        }
        b[i] = v / l[i * m + i];
    }
}

fn chol_in_place(a: &mut [f64], m: usize) -> bool {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let dj = d.sqrt();
        a[j * m + j] = dj;
        for i in (j + 1)..m {
            let mut v = a[i * m + j];
            for k in 0..j {
                v -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = v / dj;
        }
    }
    true
}

struct State {
    x: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    s_b: f64,
    lam: f64,
}

/// Mehrotra predictor-corrector on the condensed KKT system.
pub fn solve_ipm(p: &ConeLp, tol: f64, max_iter: usize) -> Result<IpmSolution, SolverError> {
    let m = p.m;
    let n = n_rows(p);
    let radius = p.ball.map(|b| b.radius);
    let ball_start = p.ball.map(|b| b.start).unwrap_or(m);

    // scaled ball constraint g0(x) = (||xb||^2 - r^2) / (2r) <= 0
    let g0 = |x: &[f64]| -> f64 {
        let r = radius.unwrap();
        let nb: f64 = x[ball_start..].iter().map(|v| v * v).sum();
        (nb - r * r) / (2.0 * r)
    };

    let mut st = State {
        x: vec![0.0; m],
        s: p.rhs.iter().map(|&h| h.abs().max(1.0)).collect(),
        z: vec![1.0 / (n.max(1) as f64); n],
        s_b: radius.map(|r| r / 2.0).unwrap_or(1.0),
        lam: radius.map(|r| 1.0 / r.max(1.0)).unwrap_or(0.0),
    };
    let has_ball = radius.is_some();
    let denom = (n + usize::from(has_ball)) as f64;

    let c_scale = 1.0 + p.c.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let h_scale = 1.0 + p.rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);

    let kkt_of = |st: &State| -> KktResiduals {
        // r_d = c + G^T z + lam * grad g0
        let mut rd = p.c.to_vec();
        for j in 0..n {
            let zj = st.z[j];
            if zj != 0.0 {
                let row = &p.rows[j * m..(j + 1) * m];
                for i in 0..m {
                    rd[i] += zj * row[i];
                }
            }
        }
        if has_ball {
            let r = radius.unwrap();
            for i in ball_start..m {
                rd[i] += st.lam * st.x[i] / r;
            }
        }
        let stat = rd.iter().map(|v| v.abs()).fold(0.0, f64::max) / c_scale;
        let mut prim: f64 = 0.0;
        for j in 0..n {
            let row = &p.rows[j * m..(j + 1) * m];
            let gx: f64 = row.iter().zip(&st.x).map(|(a, b)| a * b).sum();
            prim = prim.max(gx - p.rhs[j]);
        }
        if has_ball {
            prim = prim.max(g0(&st.x));
        }
        let comp = (st.s.iter().zip(&st.z).map(|(s, z)| s * z).sum::<f64>()
            + st.s_b * st.lam * f64::from(u8::from(has_ball)))
            / denom;
        KktResiduals {
            stationarity: stat,
            primal_feasibility: prim.max(0.0) / h_scale,
            complementarity: comp / h_scale,
        }
    };

    let mut best: Option<(f64, IpmSolution)> = None;
    for iter in 0..max_iter {
        let kkt = kkt_of(&st);
        let score = kkt.stationarity + kkt.primal_feasibility + kkt.complementarity;
        let sol_now = |fallback| IpmSolution {
            x: st.x.clone(),
            z: st.z.clone(),
            ball_multiplier: st.lam,
            iterations: iter,
            kkt,
            dual_objective: dual_value(p, &st.z),
            fallback_used: fallback,
        };
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((score, sol_now(false)));
        }
        if kkt.stationarity <= tol && kkt.primal_feasibility <= tol && kkt.complementarity <= tol {
            return Ok(sol_now(false));
        }

        // residuals in unscaled form
        let mut rd = p.c.to_vec();
        for j in 0..n {
            let row = &p.rows[j * m..(j + 1) * m];
            let zj = st.z[j];
            for i in 0..m {
                rd[i] += zj * row[i];
            }
        }
        let r = radius.unwrap_or(1.0);
        if has_ball {
            for i in ball_start..m {
                rd[i] += st.lam * st.x[i] / r;
            }
        }
        let mut rp = vec![0.0; n];
        for j in 0..n {
            let row = &p.rows[j * m..(j + 1) * m];
            let gx: f64 = row.iter().zip(&st.x).map(|(a, b)| a * b).sum();
            rp[j] = gx + st.s[j] - p.rhs[j];
        }
        let rb = if has_ball { g0(&st.x) + st.s_b } else { 0.0 };
        let mu = (st.s.iter().zip(&st.z).map(|(s, z)| s * z).sum::<f64>()
            + if has_ball { st.s_b * st.lam } else { 0.0 })
            / denom;

        // normal matrix: lam/r * J + G^T W G + (lam/s_b) a a^T (+ tiny reg.)
        // weights are capped so near-active rows cannot overflow the
        // factorization at tight tolerances
        const W_CAP: f64 = 1e14;
        let mut mmat = vec![0.0; m * m];
        for j in 0..n {
            let w = (st.z[j] / st.s[j]).min(W_CAP);
            let row = &p.rows[j * m..(j + 1) * m];
            for i in 0..m {
                let wi = w * row[i];
                for l in 0..=i {
                    mmat[i * m + l] += wi * row[l];
                }
            }
        }
        let mut grad0 = vec![0.0; m];
        if has_ball {
            for i in ball_start..m {
                grad0[i] = st.x[i] / r;
                mmat[i * m + i] += st.lam / r;
            }
            let w0 = (st.lam / st.s_b).min(W_CAP);
            for i in ball_start..m {
                for l in ball_start..=i {
                    mmat[i * m + l] += w0 * grad0[i] * grad0[l];
                }
            }
        }
        for i in 0..m {
            for l in (i + 1)..m {
                mmat[i * m + l] = mmat[l * m + i];
            }
        }

        // factor the normal matrix once per iteration; every direction solve
        // reuses it with a different complementarity target
        let mut factor = mmat.clone();
        {
            let base: f64 = (0..m).map(|i| factor[i * m + i].abs()).fold(0.0, f64::max);
            let mut jitter = base.max(1.0) * 1e-14;
            let mut ok = chol_in_place(&mut factor, m);
            while !ok && jitter < base.max(1.0) {
                factor.copy_from_slice(&mmat);
                for i in 0..m {
                    factor[i * m + i] += jitter;
                }
                ok = chol_in_place(&mut factor, m);
                jitter *= 100.0;
            }
            if !ok {
                return Err(SolverError::SingularSystem);
            }
        }

        // rhs complementarity targets: direction solves for S dz + Z ds =
        // target - S Z e (affine: target = 0; corrector: sigma mu - ds dz)
        let solve_dir =
            |targets_lin: &[f64], target_ball: f64| -> (Vec<f64>, Vec<f64>, Vec<f64>, f64, f64) {
                let mut rhs = vec![0.0; m];
                for i in 0..m {
                    rhs[i] = -rd[i];
                }
                for j in 0..n {
                    let row = &p.rows[j * m..(j + 1) * m];
                    let t = (targets_lin[j] - st.s[j] * st.z[j] + st.z[j] * rp[j]) / st.s[j];
                    for i in 0..m {
                        rhs[i] -= t * row[i];
                    }
                }
                if has_ball {
                    let t = (target_ball - st.s_b * st.lam + st.lam * rb) / st.s_b;
                    for i in ball_start..m {
                        rhs[i] -= t * grad0[i];
                    }
                }
                chol_substitute(&factor, &mut rhs, m);
                let dx = rhs;
                let mut ds = vec![0.0; n];
                let mut dz = vec![0.0; n];
                for j in 0..n {
                    let row = &p.rows[j * m..(j + 1) * m];
                    let gdx: f64 = row.iter().zip(&dx).map(|(a, b)| a * b).sum();
                    ds[j] = -rp[j] - gdx;
                    dz[j] = (targets_lin[j] - st.s[j] * st.z[j] - st.z[j] * ds[j]) / st.s[j];
                }
                let (ds_b, dlam) = if has_ball {
                    let adx: f64 = (ball_start..m).map(|i| grad0[i] * dx[i]).sum();
                    let ds_b = -rb - adx;
                    let dlam = (target_ball - st.s_b * st.lam - st.lam * ds_b) / st.s_b;
                    (ds_b, dlam)
                } else {
                    (0.0, 0.0)
                };
                (dx, ds, dz, ds_b, dlam)
            };

        let step = |s: &[f64], ds: &[f64], sb: f64, dsb: f64| -> f64 {
            let mut a = 1.0f64;
            for (si, di) in s.iter().zip(ds) {
                if *di < 0.0 {
                    a = a.min(-si / di);
                }
            }
            if has_ball && dsb < 0.0 {
                a = a.min(-sb / dsb);
            }
            a
        };

        // affine predictor
        let zeros = vec![0.0; n];
        let (_dx_a, ds_a, dz_a, dsb_a, dlam_a) = solve_dir(&zeros, 0.0);
        let ap = step(&st.s, &ds_a, st.s_b, dsb_a);
        let ad = step(&st.z, &dz_a, st.lam, dlam_a);
        let mu_aff = {
            let mut acc = 0.0;
            for j in 0..n {
                acc += (st.s[j] + ap * ds_a[j]) * (st.z[j] + ad * dz_a[j]);
            }
            if has_ball {
                acc += (st.s_b + ap * dsb_a) * (st.lam + ad * dlam_a);
            }
            acc / denom
        };
        let sigma = if mu > 0.0 {
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.1
        };

        // Mehrotra corrector
        let mut targets: Vec<f64> = (0..n).map(|j| sigma * mu - ds_a[j] * dz_a[j]).collect();
        let mut target_b = sigma * mu - dsb_a * dlam_a;
        let (mut dx, mut ds, mut dz, mut dsb, mut dlam) = solve_dir(&targets, target_b);

        // extra centrality correctors (Gondzio): pull outlier complementarity
        // products toward the center, keeping a refinement only when it
        // lengthens the blocked step
        let mu_t = (sigma * mu).max(1e-2 * mu);
        for _extra in 0..2 {
            let ap = step(&st.s, &ds, st.s_b, dsb);
            let ad = step(&st.z, &dz, st.lam, dlam);
            if ap.min(ad) >= 0.85 {
                break;
            }
            let trial_p = (ap + 0.1).min(1.0);
            let trial_d = (ad + 0.1).min(1.0);
            let lo = 0.1 * mu_t;
            let hi = 10.0 * mu_t;
            let mut cand_targets = targets.clone();
            let mut cand_target_b = target_b;
            let mut changed = false;
            for j in 0..n {
                let v = (st.s[j] + trial_p * ds[j]) * (st.z[j] + trial_d * dz[j]);
                if v < lo {
                    cand_targets[j] += lo - v;
                    changed = true;
                } else if v > hi {
                    cand_targets[j] += hi - v;
                    changed = true;
                }
            }
            if has_ball {
                let v = (st.s_b + trial_p * dsb) * (st.lam + trial_d * dlam);
                if v < lo {
                    cand_target_b += lo - v;
                    changed = true;
                } else if v > hi {
                    cand_target_b += hi - v;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let refined = solve_dir(&cand_targets, cand_target_b);
            let ap2 = step(&st.s, &refined.1, st.s_b, refined.3);
            let ad2 = step(&st.z, &refined.2, st.lam, refined.4);
            if ap2.min(ad2) > ap.min(ad) {
                targets = cand_targets;
                target_b = cand_target_b;
                dx = refined.0;
                ds = refined.1;
                dz = refined.2;
                dsb = refined.3;
                dlam = refined.4;
            } else {
                break;
            }
        }

        let tau_step = 1.0 - 5e-4f64.max(mu.min(0.1));
        let ap = (tau_step * step(&st.s, &ds, st.s_b, dsb)).min(1.0);
        let ad = (tau_step * step(&st.z, &dz, st.lam, dlam)).min(1.0);
        for i in 0..m {
            st.x[i] += ap * dx[i];
        }
        for j in 0..n {
            st.s[j] += ap * ds[j];
            st.z[j] += ad * dz[j];
        }
        if has_ball {
            st.s_b += ap * dsb;
            st.lam += ad * dlam;
        }
    }

    let (_, best_sol) = best.ok_or(SolverError::SingularSystem)?;
    // a genuinely infeasible program diverges with O(1) primal residual;
    // near-feasible stalls stay classified as iteration-limit exits so the
    // caller can fall back or accept the best iterate
    if best_sol.kkt.primal_feasibility > 1e-3 {
        return Err(SolverError::Infeasible {
            residual: best_sol.kkt.primal_feasibility,
            iterations: max_iter,
        });
    }
    Err(SolverError::MaxIterations {
        kkt: best_sol.kkt,
        best: Box::new(best_sol),
    })
}

/// Lagrangian dual value at multipliers z (ball multiplier optimized out):
/// -rhs.z - radius ||(c + G^T z) on the ball block||.
pub fn dual_value(p: &ConeLp, z: &[f64]) -> f64 {
    let m = p.m;
    let n = n_rows(p);
    let mut g = p.c.to_vec();
    for j in 0..n {
        let row = &p.rows[j * m..(j + 1) * m];
        for i in 0..m {
            g[i] += z[j] * row[i];
        }
    }
    let mut v: f64 = -p.rhs.iter().zip(z).map(|(h, zj)| h * zj).sum::<f64>();
    if let Some(b) = p.ball {
        let nb: f64 = g[b.start..].iter().map(|x| x * x).sum::<f64>();
        v -= b.radius * nb.sqrt();
    }
    v
}

/// Kelley cutting-plane outer approximation of the ball, each relaxation
/// solved by the same interior-point core without the cone block.
pub fn solve_cutting_plane(
    p: &ConeLp,
    tol: f64,
    max_iter: usize,
) -> Result<IpmSolution, SolverError> {
    let ball = match p.ball {
        Some(b) => b,
        None => return solve_ipm(p, tol, max_iter),
    };
    let m = p.m;
    let nb = m - ball.start;
    let n = n_rows(p);
    let mut rows: Vec<f64> = p.rows.to_vec();
    let mut rhs: Vec<f64> = p.rhs.to_vec();
    // initial box cuts +-alpha_i <= radius keep the relaxation bounded
    for i in 0..nb {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; m];
            row[ball.start + i] = sign;
            rows.extend_from_slice(&row);
            rhs.push(ball.radius);
        }
    }
    let mut last = None;
    for _cut in 0..120 {
        let relaxed = ConeLp {
            c: p.c,
            rows: &rows,
            rhs: &rhs,
            m,
            ball: None,
        };
        let sol = solve_ipm(&relaxed, tol, max_iter)?;
        let norm: f64 = sol.x[ball.start..]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm <= ball.radius * (1.0 + 1e-9) {
            let mut out = sol;
            out.z.truncate(n);
            out.fallback_used = true;
            out.dual_objective = dual_value(p, &out.z);
            return Ok(out);
        }
        let mut row = vec![0.0; m];
        for i in ball.start..m {
            row[i] = sol.x[i] / norm;
        }
        rows.extend_from_slice(&row);
        rhs.push(ball.radius);
        last = Some(sol);
    }
    let best = last.ok_or(SolverError::SingularSystem)?;
    Err(SolverError::MaxIterations {
        kkt: best.kkt,
        best: Box::new(best),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_lp() {
        // max rho s.t. rho <= 2, rho <= 5  ->  min -rho
        let c = [-1.0];
        let rows = [1.0, 1.0];
        let rhs = [2.0, 5.0];
        let p = ConeLp {
            c: &c,
            rows: &rows,
            rhs: &rhs,
            m: 1,
            ball: None,
        };
        let sol = solve_ipm(&p, 1e-9, 100).unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-7);
        assert!((sol.dual_objective - -2.0).abs() < 1e-6);
    }

    #[test]
    fn ball_active_projection() {
        // min -x1 subject to ||x|| <= 1 (no linear rows beyond a loose one)
        let c = [0.0, -1.0];
        let rows = [1.0, 0.0];
        let rhs = [100.0];
        let p = ConeLp {
            c: &c,
            rows: &rows,
            rhs: &rhs,
            m: 2,
            ball: Some(Ball {
                start: 1,
                radius: 1.0,
            }),
        };
        let sol = solve_ipm(&p, 1e-10, 100).unwrap();
        assert!((sol.x[1] - 1.0).abs() < 1e-7, "{:?}", sol.x);
    }

    #[test]
    fn cutting_plane_agrees_with_cone() {
        let c = [-1.0, 0.3, -0.8];
        let rows = [1.0, 0.5, -0.2, 1.0, -0.4, 0.9, 1.0, 0.1, 0.3];
        let rhs = [1.0, 2.0, 1.5];
        let p = ConeLp {
            c: &c,
            rows: &rows,
            rhs: &rhs,
            m: 3,
            ball: Some(Ball {
                start: 1,
                radius: 0.7,
            }),
        };
        let a = solve_ipm(&p, 1e-10, 200).unwrap();
        let b = solve_cutting_plane(&p, 1e-10, 200).unwrap();
        let oa: f64 = c.iter().zip(&a.x).map(|(u, v)| u * v).sum();
        let ob: f64 = c.iter().zip(&b.x).map(|(u, v)| u * v).sum();
        assert!((oa - ob).abs() < 1e-6, "{oa} vs {ob}");
    }
}
