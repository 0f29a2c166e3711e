//! Slow-but-simple reference implementations used by tests and the CLI
//! verdicts: adaptive quadrature of defining integrals, common-random-number
//! finite differences, closed-form linear flows, and a method-of-steps delay
//! integrator.
//!
//! None of these share quadrature or stepping code with the modules they
//! validate: the quadrature here is adaptive Simpson (not product
//! integration) and the delay integrator is dense RK4 (not the Euler
//! scheme). The finite-difference comparator deliberately shares the path
//! solver and noise with the estimator it cross-checks; that is what common
//! random numbers mean.

use crate::error::{Error, Result};
use crate::fbm::VolterraSampler;
use crate::grid::Grid;
use crate::mc::{mean_and_se, path_seed};
use crate::model::ModelSpec;
use crate::sde::solve_euler;
use crate::special::gamma;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    Quad,
    FdCrn,
    Closed,
    Steps,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub error: f64,
    pub method: OracleMethod,
}

fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<(f64, f64)> {
    let m = 0.5 * (lo + hi);
    let lm = 0.5 * (lo + m);
    let rm = 0.5 * (m + hi);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - lo) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (hi - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok((left + right + delta / 15.0, delta.abs() / 15.0));
    }
    if depth == 0 {
        return Err(Error::QuadratureFailure(
            "adaptive refinement limit reached".into(),
        ));
    }
    let (lv, le) = adaptive_simpson(f, lo, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let (rv, re) = adaptive_simpson(f, m, hi, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok((lv + rv, le + re))
}

/// Adaptive Simpson integral of `f` over [lo, hi] to tolerance `tol`.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let m = 0.5 * (lo + hi);
    let (fa, fm, fb) = (f(lo), f(m), f(hi));
    let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_simpson(&f, lo, hi, fa, fm, fb, whole, tol, 40)
}

/// Left fractional integral I_{a+}^alpha f(x) by adaptive quadrature of the
/// defining integral, with the endpoint singularity removed by the
/// substitution u = (x-y)^alpha / alpha (so the weight becomes du exactly).
pub fn quad_frac_integral(
    f: impl Fn(f64) -> f64,
    alpha: f64,
    a: f64,
    x: f64,
    tol: f64,
) -> Result<OracleResult> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidOrder("alpha must be positive".into()));
    }
    if x <= a {
        return Ok(OracleResult {
            value: 0.0,
            error: 0.0,
            method: OracleMethod::Quad,
        });
    }
    let upper = (x - a).powf(alpha) / alpha;
    let g = |u: f64| {
        let y = x - (alpha * u).powf(1.0 / alpha);
        f(y.clamp(a, x))
    };
    let (v, e) = integrate_adaptive(g, 0.0, upper, tol)?;
    Ok(OracleResult {
        value: v / gamma(alpha),
        error: e / gamma(alpha),
        method: OracleMethod::Quad,
    })
}

/// Central finite difference of the semigroup gradient with common random
/// numbers: both legs see identical driving noise per path.
pub fn fd_gradient(
    model: &ModelSpec,
    payoff: impl Fn(&[f64]) -> f64 + Sync,
    v: &[f64],
    step: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<OracleResult> {
    if !(1e-5..=0.1).contains(&step) {
        return Err(Error::InvalidArgument(format!(
            "fd step must lie in [1e-5, 0.1], got {step}"
        )));
    }
    let grid = Grid::on_horizon(model.horizon, n_steps)?;
    let sampler = VolterraSampler::new(grid, model.hurst)?;
    let d = model.dim();
    let values: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let noise = sampler.sample(d, path_seed(seed, i as u64));
            let mut up = model.clone();
            up.x0 = model.x0.iter().zip(v).map(|(x, vi)| x + step * vi).collect();
            let mut dn = model.clone();
            dn.x0 = model.x0.iter().zip(v).map(|(x, vi)| x - step * vi).collect();
            let xu = solve_euler(&up, &noise)?;
            let xd = solve_euler(&dn, &noise)?;
            let last = xu.grid.len() - 1;
            Ok((payoff(xu.node(last)) - payoff(xd.node(last))) / (2.0 * step))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, se) = mean_and_se(&values);
    Ok(OracleResult {
        value: mean,
        // second-order bias proxy on top of the MC error
        error: se + step * step * mean.abs(),
        method: OracleMethod::FdCrn,
    })
}

/// Closed-form mean flow for linear drift b(x) = A x and centered noise:
/// E X(T) = exp(A T) x0.
pub fn linear_model_flow(a_matrix: &[f64], x0: &[f64], t: f64) -> Vec<f64> {
    let d = x0.len();
    let e = matrix_exp(a_matrix, d, t);
    (0..d)
        .map(|i| (0..d).map(|j| e[i * d + j] * x0[j]).sum())
        .collect()
}

/// exp(A t) by scaling-and-squaring with a [6/6] Pade core.
pub fn matrix_exp(a: &[f64], d: usize, t: f64) -> Vec<f64> {
    let mut m: Vec<f64> = a.iter().map(|v| v * t).collect();
    let norm: f64 = (0..d)
        .map(|i| (0..d).map(|j| m[i * d + j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings as i32);
    for v in m.iter_mut() {
        *v *= scale;
    }

    // Pade [6/6] coefficients c_k = (12-k)! 6! / (12! k! (6-k)!)
    let b = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    // powers
    let id = identity(d);
    let m2 = mat_mul(&m, &m, d);
    let m4 = mat_mul(&m2, &m2, d);
    let m6 = mat_mul(&m4, &m2, d);
    // U = M (b1 I + b3 M2 + b5 M4), V = b0 I + b2 M2 + b4 M4 + b6 M6
    let mut u_in = lin_comb(&[(b[1], &id), (b[3], &m2), (b[5], &m4)], d);
    u_in = mat_mul(&m, &u_in, d);
    let v = lin_comb(&[(b[0], &id), (b[2], &m2), (b[4], &m4), (b[6], &m6)], d);
    // solve (V - U) X = (V + U)
    let lhs: Vec<f64> = v.iter().zip(&u_in).map(|(a, b)| a - b).collect();
    let rhs: Vec<f64> = v.iter().zip(&u_in).map(|(a, b)| a + b).collect();
    let mut res = solve_dense(&lhs, &rhs, d);
    for _ in 0..squarings {
        res = mat_mul(&res, &res, d);
    }
    res
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn mat_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn lin_comb(terms: &[(f64, &Vec<f64>)], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for (c, m) in terms {
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o += c * v;
        }
    }
    out
}

/// Gaussian elimination solve of A X = B for d x d matrices.
fn solve_dense(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..d {
        // partial pivot
        let mut piv = col;
        for r in col + 1..d {
            if a[r * d + col].abs() > a[piv * d + col].abs() {
                piv = r;
            }
        }
        if piv != col {
            for j in 0..d {
                a.swap(col * d + j, piv * d + j);
                x.swap(col * d + j, piv * d + j);
            }
        }
        let p = a[col * d + col];
        for r in 0..d {
            if r == col {
                continue;
            }
            let f = a[r * d + col] / p;
            for j in 0..d {
                a[r * d + j] -= f * a[col * d + j];
                x[r * d + j] -= f * x[col * d + j];
            }
        }
    }
    for i in 0..d {
        let p = a[i * d + i];
        for j in 0..d {
            x[i * d + j] /= p;
        }
    }
    x
}

/// Deterministic delay ODE x'(t) = f(t, x(t), x(t - r0)) with history
/// function for t <= 0; independent reference for the SFDE solver.
pub struct DelayOde<'a> {
    pub dim: usize,
    pub delay: f64,
    pub rhs: &'a dyn Fn(f64, &[f64], &[f64], &mut [f64]),
    pub history: &'a dyn Fn(f64, &mut [f64]),
}

/// Method-of-steps solution on [0, T]: dense RK4 within each delay
/// interval, history values linearly interpolated from the dense store.
/// Returns the values at `samples + 1` uniform output times on [0, T].
pub fn method_of_steps(ode: &DelayOde<'_>, horizon: f64, samples: usize) -> Vec<Vec<f64>> {
    let d = ode.dim;
    let refine = 16usize;
    let n_dense = samples * refine;
    let h = horizon / n_dense as f64;
    let m = (ode.delay / h).round() as usize;
    // dense store over [-r0, T]
    let mut dense = vec![vec![0.0; d]; n_dense + m + 1];
    for (k, slot) in dense.iter_mut().enumerate().take(m + 1) {
        let t = -ode.delay + k as f64 * h;
        (ode.history)(t.min(0.0), slot);
    }
    let lookup = |dense: &Vec<Vec<f64>>, t: f64, out: &mut [f64]| {
        let x = (t + ode.delay) / h;
        let k = (x.floor().max(0.0) as usize).min(dense.len() - 1);
        let w = (x - k as f64).clamp(0.0, 1.0);
        if k + 1 >= dense.len() || w == 0.0 {
            out.copy_from_slice(&dense[k]);
        } else {
            for (o, (a, b)) in out.iter_mut().zip(dense[k].iter().zip(&dense[k + 1])) {
                *o = a * (1.0 - w) + b * w;
            }
        }
    };
    let mut xdel = vec![0.0; d];
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    for step in 0..n_dense {
        let t = step as f64 * h;
        let idx = m + step;
        let x = dense[idx].clone();
        lookup(&dense, t - ode.delay, &mut xdel);
        (ode.rhs)(t, &x, &xdel, &mut k1);
        let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
        lookup(&dense, t + 0.5 * h - ode.delay, &mut xdel);
        (ode.rhs)(t + 0.5 * h, &x2, &xdel, &mut k2);
        let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
        (ode.rhs)(t + 0.5 * h, &x3, &xdel, &mut k3);
        let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
        lookup(&dense, t + h - ode.delay, &mut xdel);
        (ode.rhs)(t + h, &x4, &xdel, &mut k4);
        let next: Vec<f64> = (0..d)
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        dense[idx + 1] = next;
    }
    (0..=samples).map(|k| dense[m + k * refine].clone()).collect()
}
