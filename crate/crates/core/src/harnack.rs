//! Empirical verification of the Harnack-type inequalities and of the
//! exponential-moment structure of the weight functional.
//!
//! The inequality constants are not numerically explicit (they trace
//! through generic constants), so FITTED mode reports the smallest constant
//! that makes the inequality hold and checks its stability; SUPPLIED mode
//! checks the inequality directly. Left and right sides always use common
//! random numbers across x and x + v.

use crate::bismut::{malliavin_weight, shift_density, WeightOp};
use crate::error::{Error, Result};
use crate::fbm::VolterraSampler;
use crate::grid::Grid;
use crate::mc::{mean_and_se, path_seed, pairwise_sum};
use crate::model::ModelSpec;
use crate::sde::solve_euler;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub enum ConstantsMode {
    /// Report the smallest constant making the inequality hold.
    Fitted,
    /// Check the inequality with the given (c', c'') directly.
    Supplied { c1: f64, c2: f64 },
}

#[derive(Debug, Clone)]
pub struct HarnackConfig {
    pub v: Vec<f64>,
    pub p: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub mode: ConstantsMode,
}

#[derive(Debug, Clone)]
pub struct HarnackReport {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub v_norm: f64,
    /// Smallest admissible constant (FITTED mode), floored at 0.
    pub fitted_constant: Option<f64>,
    /// Inequality verdict within the 3-SE band (SUPPLIED mode, and the
    /// Jensen baseline when v = 0).
    pub holds: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-path payoffs on the two coupled legs (x and x + v, same noise).
fn coupled_payoffs(
    model: &ModelSpec,
    payoff: &(impl Fn(&[f64]) -> f64 + Sync),
    cfg: &HarnackConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = Grid::on_horizon(model.horizon, cfg.n_steps)?;
    let sampler = VolterraSampler::new(grid.clone(), model.hurst)?;
    let d = model.dim();
    let mut shifted = model.clone();
    shifted.x0 = model.x0.iter().zip(&cfg.v).map(|(x, v)| x + v).collect();
    let pairs: Vec<(f64, f64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let noise = sampler.sample(d, path_seed(cfg.seed, i as u64));
            let xa = solve_euler(model, &noise)?;
            let xb = solve_euler(&shifted, &noise)?;
            let last = xa.grid.len() - 1;
            Ok((payoff(xa.node(last)), payoff(xb.node(last))))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Power-Harnack check: (P_T f(x))^p <= P_T f^p(x+v) exp[p/(p-1) c |v|^2].
pub fn harnack_power_check(
    model: &ModelSpec,
    payoff: impl Fn(&[f64]) -> f64 + Sync,
    cfg: &HarnackConfig,
) -> Result<HarnackReport> {
    if !(cfg.p > 1.0) {
        return Err(Error::InvalidArgument("power-Harnack needs p > 1".into()));
    }
    let (fa, fb) = coupled_payoffs(model, &payoff, cfg)?;
    if fa.iter().chain(&fb).any(|&x| x <= 0.0) {
        return Err(Error::InvalidArgument(
            "harnack check requires a strictly positive f".into(),
        ));
    }
    let (mean_a, se_a) = mean_and_se(&fa);
    let fbp: Vec<f64> = fb.iter().map(|x| x.powf(cfg.p)).collect();
    let (rhs, rhs_se) = mean_and_se(&fbp);
    // delta method for (mean)^p
    let lhs = mean_a.powf(cfg.p);
    let lhs_se = cfg.p * mean_a.powf(cfg.p - 1.0) * se_a;
    let v_norm = norm(&cfg.v);
    let (fitted, holds) = match cfg.mode {
        ConstantsMode::Fitted => {
            let c = if v_norm > 0.0 {
                ((lhs / rhs).ln() * (cfg.p - 1.0) / (cfg.p * v_norm * v_norm)).max(0.0)
            } else {
                0.0
            };
            (Some(c), lhs <= rhs + 3.0 * (lhs_se + rhs_se) || c > 0.0)
        }
        ConstantsMode::Supplied { c1, c2 } => {
            let envelope = if v_norm > 0.0 {
                let amp = (1.0f64).max(cfg.p * v_norm / (cfg.p - 1.0));
                let expo = 2.0 * model.grad_holder_beta / (1.0 - model.grad_holder_beta).max(1e-9);
                (cfg.p / (cfg.p - 1.0) * (c1 + c2 * amp.powf(expo)) * v_norm * v_norm).exp()
            } else {
                1.0
            };
            (None, lhs <= rhs * envelope + 3.0 * (lhs_se + rhs_se * envelope))
        }
    };
    Ok(HarnackReport {
        lhs,
        lhs_se,
        rhs,
        rhs_se,
        v_norm,
        fitted_constant: fitted,
        holds,
    })
}

/// Log-Harnack check: P_T(log f)(x) <= log P_T f(x+v) + c |v|^2.
pub fn log_harnack_check(
    model: &ModelSpec,
    payoff: impl Fn(&[f64]) -> f64 + Sync,
    cfg: &HarnackConfig,
) -> Result<HarnackReport> {
    let (fa, fb) = coupled_payoffs(model, &payoff, cfg)?;
    if fa.iter().chain(&fb).any(|&x| x <= 0.0) {
        return Err(Error::InvalidArgument(
            "log-harnack requires a strictly positive f".into(),
        ));
    }
    let la: Vec<f64> = fa.iter().map(|x| x.ln()).collect();
    let (lhs, lhs_se) = mean_and_se(&la);
    let (mean_b, se_b) = mean_and_se(&fb);
    let rhs = mean_b.ln();
    let rhs_se = se_b / mean_b;
    let v_norm = norm(&cfg.v);
    let (fitted, holds) = match cfg.mode {
        ConstantsMode::Fitted => {
            let c = if v_norm > 0.0 {
                ((lhs - rhs) / (v_norm * v_norm)).max(0.0)
            } else {
                0.0
            };
            (Some(c), lhs <= rhs + 3.0 * (lhs_se + rhs_se) || c > 0.0)
        }
        ConstantsMode::Supplied { c1, c2 } => {
            let bound = rhs + (c1 + c2) * v_norm * v_norm;
            (None, lhs <= bound + 3.0 * (lhs_se + rhs_se))
        }
    };
    Ok(HarnackReport {
        lhs,
        lhs_se,
        rhs,
        rhs_se,
        v_norm,
        fitted_constant: fitted,
        holds,
    })
}

#[derive(Debug, Clone)]
pub struct MomentRow {
    pub v_norm: f64,
    pub lambda: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Largest single-path share of the sample sum; above 1/2 the row is
    /// flagged inconclusive rather than failed.
    pub max_share: f64,
    pub conclusive: bool,
}

#[derive(Debug, Clone)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    /// Regression slope of ln E exp(M_T/lambda) against |v|^2/lambda^2.
    pub slope: f64,
}

/// Scan of E exp(M_T / lambda) over |v| and lambda grids. M_T is the
/// Malliavin weight delta(h) itself, which is linear in v, so one weight
/// sample per path serves the whole |v| grid.
pub fn exponential_moment_scan(
    model: &ModelSpec,
    direction: &[f64],
    v_norms: &[f64],
    lambdas: &[f64],
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<MomentReport> {
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument("lambda grid must be positive".into()));
    }
    model.validate()?;
    let grid = Grid::on_horizon(model.horizon, n_steps)?;
    let sampler = VolterraSampler::new(grid.clone(), model.hurst)?;
    let op = WeightOp::for_model(model, &grid)?;
    let d = model.dim();
    let unit: Vec<f64> = {
        let n = norm(direction);
        if n == 0.0 {
            return Err(Error::InvalidArgument("direction must be nonzero".into()));
        }
        direction.iter().map(|x| x / n).collect()
    };
    let deltas: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let noise = sampler.sample(d, path_seed(seed, i as u64));
            let wiener = noise.wiener.as_ref().ok_or(Error::MissingWienerPath)?;
            let x = solve_euler(model, &noise)?;
            let density = shift_density(model, &x, &unit)?;
            let integrand = op.integrand(&density)?;
            malliavin_weight(&integrand, wiener)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut rows = Vec::new();
    let mut zs = Vec::new();
    let mut lns = Vec::new();
    for &vn in v_norms {
        for &lambda in lambdas {
            let scale = vn / lambda;
            let exps: Vec<f64> = deltas.iter().map(|&dl| (scale * dl).exp()).collect();
            let (est, se) = mean_and_se(&exps);
            let total = pairwise_sum(&exps);
            let max_share = exps.iter().cloned().fold(0.0, f64::max) / total;
            let conclusive = max_share <= 0.5 && est.is_finite();
            if conclusive && vn > 0.0 {
                zs.push(vn * vn / (lambda * lambda));
                lns.push(est.ln());
            }
            rows.push(MomentRow {
                v_norm: vn,
                lambda,
                estimate: est,
                std_error: se,
                max_share,
                conclusive,
            });
        }
    }
    let slope = if zs.is_empty() {
        0.0
    } else {
        let num: f64 = zs.iter().zip(&lns).map(|(z, l)| z * l).sum();
        let den: f64 = zs.iter().map(|z| z * z).sum();
        num / den
    };
    Ok(MomentReport { rows, slope })
}

#[derive(Debug, Clone)]
pub struct GradientBoundRow {
    pub offset: f64,
    pub difference: f64,
    pub bound: f64,
}

/// Demonstration table: |P_T f(x + s v) - P_T f(x)| against the integrated
/// Bismut-gradient bound along the segment. No pass/fail semantics.
pub fn gradient_bound_demo(
    model: &ModelSpec,
    payoff: impl Fn(&[f64]) -> f64 + Sync + Copy,
    v: &[f64],
    offsets: &[f64],
    cfg: &crate::bismut::GradientConfig,
) -> Result<Vec<GradientBoundRow>> {
    let mut rows = Vec::new();
    let base = semigroup_value(model, payoff, cfg)?;
    for &s in offsets {
        let mut moved = model.clone();
        moved.x0 = model.x0.iter().zip(v).map(|(x, vi)| x + s * vi).collect();
        let val = semigroup_value(&moved, payoff, cfg)?;
        // two-point bound: s * max |grad| at the endpoints of the segment
        let g0 = crate::bismut::bismut_gradient(model, payoff, v, cfg)?;
        let g1 = crate::bismut::bismut_gradient(&moved, payoff, v, cfg)?;
        let bound = s.abs() * g0.estimate.abs().max(g1.estimate.abs())
            + 3.0 * (g0.std_error + g1.std_error);
        rows.push(GradientBoundRow {
            offset: s,
            difference: (val.0 - base.0).abs(),
            bound,
        });
    }
    Ok(rows)
}

fn semigroup_value(
    model: &ModelSpec,
    payoff: impl Fn(&[f64]) -> f64 + Sync,
    cfg: &crate::bismut::GradientConfig,
) -> Result<(f64, f64)> {
    let grid = Grid::on_horizon(model.horizon, cfg.n_steps)?;
    let sampler = VolterraSampler::new(grid.clone(), model.hurst)?;
    let d = model.dim();
    let vals: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let noise = sampler.sample(d, path_seed(cfg.seed, i as u64));
            let x = solve_euler(model, &noise)?;
            Ok(payoff(x.node(x.grid.len() - 1)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::Hurst;
    use crate::model::{IdentitySigma, LinearDrift, ModelSpec, ZeroDrift};
    use std::sync::Arc;

    fn linear_model(hurst: f64, x0: f64) -> ModelSpec {
        linear_model_t(hurst, x0, 1.0)
    }

    fn linear_model_t(hurst: f64, x0: f64, horizon: f64) -> ModelSpec {
        ModelSpec {
            drift: Arc::new(LinearDrift::scalar(1, 1.0)),
            sigma: Arc::new(IdentitySigma { dim: 1 }),
            lipschitz_k: 1.0,
            grad_holder_beta: 0.9,
            hurst: Hurst::new(hurst).unwrap(),
            horizon,
            x0: vec![x0],
            lambda0_override: None,
        }
    }

    fn cfg(v: f64, p: f64, paths: usize) -> HarnackConfig {
        HarnackConfig {
            v: vec![v],
            p,
            n_steps: 32,
            n_paths: paths,
            seed: 24_601,
            mode: ConstantsMode::Fitted,
        }
    }

    #[test]
    fn constant_payoff_gives_equal_sides() {
        let m = linear_model(0.7, 0.2);
        let r = harnack_power_check(&m, |_| 2.0, &cfg(0.3, 2.0, 200)).unwrap();
        assert!((r.lhs - 4.0).abs() < 1e-12);
        assert!((r.rhs - 4.0).abs() < 1e-12);
        assert!(r.holds);
        let r = log_harnack_check(&m, |_| 2.0, &cfg(0.3, 2.0, 200)).unwrap();
        assert!((r.lhs - 2.0f64.ln()).abs() < 1e-12);
        assert!((r.rhs - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn jensen_baseline_at_zero_shift() {
        let m = linear_model(0.7, 0.3);
        let f = |x: &[f64]| 1.0 + x[0].tanh();
        let r = harnack_power_check(&m, f, &cfg(0.0, 2.0, 4000)).unwrap();
        // (E f)^2 <= E f^2 up to MC noise
        assert!(r.lhs <= r.rhs + 3.0 * (r.lhs_se + r.rhs_se), "{r:?}");
        assert!(r.holds);
        let r = log_harnack_check(&m, f, &cfg(0.0, 2.0, 4000)).unwrap();
        assert!(r.lhs <= r.rhs + 3.0 * (r.lhs_se + r.rhs_se), "{r:?}");
    }

    #[test]
    fn fitted_constant_positive_and_stable_on_short_horizon() {
        // at T = 0.25 the shift sensitivity dominates the Jensen slack, so
        // the fitted constants are positive and comparable across |v|
        let m = linear_model_t(0.7, 0.0, 0.25);
        let f = |x: &[f64]| 1.0 + x[0].tanh();
        let mut cs = Vec::new();
        for &vn in &[0.1, 0.2, 0.4] {
            let mut c = cfg(-vn, 2.0, 20_000);
            c.n_steps = 64;
            let r = log_harnack_check(&m, f, &c).unwrap();
            cs.push(r.fitted_constant.unwrap());
        }
        let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = cs.iter().cloned().fold(0.0f64, f64::max);
        assert!(lo > 0.0, "constants {cs:?}");
        assert!(hi / lo < 2.0, "constants {cs:?}");
    }

    #[test]
    fn supplied_mode_with_generous_constants_holds() {
        let m = linear_model(0.7, 0.3);
        let f = |x: &[f64]| 1.0 + x[0].tanh();
        let mut c = cfg(-0.3, 2.0, 3000);
        c.mode = ConstantsMode::Supplied { c1: 50.0, c2: 50.0 };
        let r = harnack_power_check(&m, f, &c).unwrap();
        assert!(r.holds, "{r:?}");
    }

    #[test]
    fn rejects_nonpositive_payoff_and_bad_p() {
        let m = linear_model(0.7, 0.0);
        assert!(harnack_power_check(&m, |x| x[0], &cfg(0.1, 2.0, 50)).is_err());
        assert!(harnack_power_check(&m, |_| 1.0, &cfg(0.1, 1.0, 50)).is_err());
    }

    #[test]
    fn gradient_bound_demo_shrinks_with_offset() {
        // Lipschitz payoff: the semigroup difference goes to zero linearly
        // with the offset and stays under the integrated gradient bound
        let m = linear_model(0.7, 0.2);
        let cfg = crate::bismut::GradientConfig {
            n_steps: 32,
            n_paths: 3000,
            seed: 11,
        };
        let rows =
            gradient_bound_demo(&m, |x: &[f64]| x[0].tanh(), &[1.0], &[0.05, 0.1, 0.2], &cfg)
                .unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].difference < rows[2].difference);
        for r in &rows {
            assert!(
                r.difference <= r.bound + 5e-3,
                "offset {}: diff {} bound {}",
                r.offset,
                r.difference,
                r.bound
            );
        }
    }

    #[test]
    fn moment_scan_zero_direction_errors_and_gaussian_case_matches_mgf() {
        let m = ModelSpec {
            drift: Arc::new(ZeroDrift { dim: 1 }),
            sigma: Arc::new(IdentitySigma { dim: 1 }),
            lipschitz_k: 0.0,
            grad_holder_beta: 1.0,
            hurst: Hurst::new(0.7).unwrap(),
            horizon: 1.0,
            x0: vec![0.0],
            lambda0_override: None,
        };
        assert!(exponential_moment_scan(&m, &[0.0], &[0.1], &[1.0], 32, 10, 1).is_err());

        // b == 0: M_T is Gaussian with variance ||integrand||^2 (discrete)
        let grid = Grid::on_horizon(1.0, 32).unwrap();
        let op = WeightOp::for_model(&m, &grid).unwrap();
        let sampler = VolterraSampler::new(grid.clone(), m.hurst).unwrap();
        let noise = sampler.sample(1, 1);
        let x = solve_euler(&m, &noise).unwrap();
        let density = shift_density(&m, &x, &[1.0]).unwrap();
        let integrand = op.integrand(&density).unwrap();
        let dt = grid.spacing();
        let var: f64 = (0..32).map(|k| integrand.node(k)[0].powi(2) * dt).sum();

        let rep = exponential_moment_scan(&m, &[1.0], &[0.5], &[1.0], 32, 8000, 5).unwrap();
        let row = &rep.rows[0];
        let want = (0.25 * var / 2.0).exp();
        assert!(row.conclusive);
        assert!(
            (row.estimate - want).abs() <= 3.0 * row.std_error,
            "estimate {} +- {} vs {want}",
            row.estimate,
            row.std_error
        );
        // v = 0 row is exactly 1
        let rep0 = exponential_moment_scan(&m, &[1.0], &[0.0], &[1.0], 32, 200, 5).unwrap();
        assert_eq!(rep0.rows[0].estimate, 1.0);
        assert!(rep.slope > 0.0);
    }
}
