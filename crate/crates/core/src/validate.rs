//! Criterion-level validation drivers shared by the acceptance suite and
//! the CLI. Each function produces rows with an estimate, its uncertainty,
//! the oracle it is judged against and a PASS/FAIL/NA verdict.

use crate::bismut::{
    bismut_gradient, khstar_explicit, sfde_bismut_gradient, shift_defect_table, shift_density,
    CutoffGamma, GradientConfig, WeightOp,
};
use crate::error::Result;
use crate::fbm::{covariance, kernel, CovFactorSampler, Hurst, VolterraSampler};
use crate::fractional::{left_frac_derivative, left_frac_integral};
use crate::grid::{Grid, GridFunction, VecSeries};
use crate::harnack::{
    exponential_moment_scan, harnack_power_check, log_harnack_check, ConstantsMode, HarnackConfig,
};
use crate::mc::{mean_and_se, path_seed};
use crate::model::{
    DelayLinearDrift, DiagHolderSigma, FunctionalModelSpec, IdentitySigma, LinearDrift, ModelSpec,
    TanhDrift, ZeroDrift,
};
use crate::oracle::{fd_gradient, linear_model_flow};
use crate::sde::{solve_euler, solve_sfde};
use crate::transforms::{pair_singular, KhStarOp};
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Na,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "PASS"),
            Verdict::Fail => write!(f, "FAIL"),
            Verdict::Na => write!(f, "NA"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationRow {
    pub id: String,
    pub params: String,
    pub estimate: f64,
    pub std_error: f64,
    pub oracle: f64,
    pub oracle_error: f64,
    pub verdict: Verdict,
}

impl ValidationRow {
    fn deterministic(id: &str, params: String, got: f64, want: f64, tol: f64) -> Self {
        Self {
            id: id.into(),
            params,
            estimate: got,
            std_error: 0.0,
            oracle: want,
            oracle_error: tol,
            verdict: if (got - want).abs() <= tol {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    }

    fn three_se(id: &str, params: String, est: f64, se: f64, want: f64, want_err: f64) -> Self {
        Self {
            id: id.into(),
            params,
            estimate: est,
            std_error: se,
            oracle: want,
            oracle_error: want_err,
            verdict: if (est - want).abs() <= 3.0 * (se + want_err) {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

/// The six (t, s) node pairs used by the covariance-level checks, as
/// fractions of the horizon.
const PAIR_FRACTIONS: [(f64, f64); 6] = [
    (0.25, 0.25),
    (0.5, 0.5),
    (1.0, 1.0),
    (0.25, 0.5),
    (0.5, 1.0),
    (0.25, 1.0),
];

// ---------------------------------------------------------------------------
// criterion 1: operator identities
// ---------------------------------------------------------------------------

/// Isometry, kernel reconstruction, inversion and composition rows at one
/// Hurst value. Convergence orders are measured on the bulk window t >= T/10
/// (pointwise recovery at the origin cusp is interpolation-limited).
pub fn operator_identity_rows(hv: f64, n: usize, tol_rel: f64) -> Result<Vec<ValidationRow>> {
    let h = Hurst::new(hv)?;
    let grid = Grid::on_horizon(1.0, n)?;
    let mut rows = Vec::new();

    // isometry through K_H* on exact indicator inputs
    let op = KhStarOp::new(grid.clone(), h)?;
    let r_tt = covariance(h, 1.0, 1.0)?;
    for &(ft, fs) in &PAIR_FRACTIONS {
        let j = ((ft * n as f64).round() as usize).min(n);
        let k = ((fs * n as f64).round() as usize).min(n);
        let (j, k) = (j.min(k), j.max(k));
        let fj = op.apply_indicator(j)?;
        let fk = op.apply_indicator(k)?;
        let right_exp = if j == k { 2.0 * hv - 1.0 } else { hv - 0.5 };
        let got = pair_singular(&fj, &fk, j, -(2.0 * hv - 1.0f64).abs(), right_exp);
        let want = covariance(h, grid.node(j), grid.node(k))?;
        rows.push(ValidationRow::deterministic(
            "isometry",
            format!("H={hv};t={};s={}", grid.node(j), grid.node(k)),
            got,
            want,
            tol_rel * r_tt.max(want),
        ));
    }

    // kernel reconstruction from raw kernel evaluations
    for &(ft, fs) in &PAIR_FRACTIONS {
        let t = ft.max(fs);
        let s = ft.min(fs);
        let m = ((s * n as f64).round() as usize).min(n);
        let sub = Grid::on_horizon(1.0, n)?;
        let mut f = vec![0.0; n + 1];
        let mut g = vec![0.0; n + 1];
        for i in 1..m {
            let r = sub.node(i);
            f[i] = kernel(h, t, r)?; // r < s <= t on i < m
            g[i] = kernel(h, s, r)?;
        }
        let ff = GridFunction::new(sub.clone(), f)?;
        let gg = GridFunction::new(sub, g)?;
        let right_exp = if (t - s).abs() < 1e-12 {
            2.0 * hv - 1.0
        } else {
            hv - 0.5
        };
        let got = pair_singular(&ff, &gg, m, -(2.0 * hv - 1.0f64).abs(), right_exp);
        let want = covariance(h, t, s)?;
        rows.push(ValidationRow::deterministic(
            "kernel_reconstruction",
            format!("H={hv};t={t};s={s}"),
            got,
            want,
            tol_rel * r_tt.max(want),
        ));
    }

    // inversion D^a (I^a f) = f: observed order across three refinements
    let alpha = hv;
    let mut errs = Vec::new();
    for &m in &[n / 4, n / 2, n] {
        let g = Grid::on_horizon(1.0, m)?;
        let f = GridFunction::from_fn(g, |y| (1.5 * y).sin() + 0.5 * y)?;
        let i = left_frac_integral(&f, alpha)?;
        let d = left_frac_derivative(&i, alpha)?;
        let err: f64 = (m / 10..=m)
            .map(|j| (d.values[j] - f.values[j]).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    let order = (errs[0] / errs[2]).log2() / 2.0;
    rows.push(ValidationRow {
        id: "inversion_order".into(),
        params: format!("H={hv};alpha={alpha};n={n}"),
        estimate: order,
        std_error: 0.0,
        oracle: 1.0,
        oracle_error: 0.0,
        verdict: if order >= 1.0 { Verdict::Pass } else { Verdict::Fail },
    });

    // first composition I^a I^b = I^(a+b): observed order
    let (ca, cb) = (hv / 2.0, hv / 3.0);
    let mut errs = Vec::new();
    for &m in &[n / 4, n / 2, n] {
        let g = Grid::on_horizon(1.0, m)?;
        let f = GridFunction::from_fn(g, |y| (1.2 * y).cos())?;
        let nested = left_frac_integral(&left_frac_integral(&f, cb)?, ca)?;
        let direct = left_frac_integral(&f, ca + cb)?;
        let err: f64 = (m / 10..=m)
            .map(|j| (nested.values[j] - direct.values[j]).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    let order = (errs[0] / errs[2]).log2() / 2.0;
    rows.push(ValidationRow {
        id: "composition_order".into(),
        params: format!("H={hv};alpha={ca};beta={cb};n={n}"),
        estimate: order,
        std_error: 0.0,
        oracle: 1.0,
        oracle_error: 0.0,
        verdict: if order >= 1.0 { Verdict::Pass } else { Verdict::Fail },
    });

    Ok(rows)
}

// ---------------------------------------------------------------------------
// criterion 2: fBm sampler covariances
// ---------------------------------------------------------------------------

pub fn sampler_covariance_rows(
    hv: f64,
    n: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ValidationRow>> {
    let h = Hurst::new(hv)?;
    let grid = Grid::on_horizon(1.0, n)?;
    let vol = VolterraSampler::new(grid.clone(), h)?;
    let cf = CovFactorSampler::new(grid.clone(), h)?;

    let node_pairs: Vec<(usize, usize)> = PAIR_FRACTIONS
        .iter()
        .map(|&(a, b)| {
            (
                ((a * n as f64).round() as usize).min(n),
                ((b * n as f64).round() as usize).min(n),
            )
        })
        .collect();

    // per-path products for each pair, both samplers
    let prods: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let pv = vol.sample(1, path_seed(seed, i as u64));
            let pc = cf.sample(1, path_seed(seed ^ 0xABCD_EF01, i as u64));
            let v: Vec<f64> = node_pairs
                .iter()
                .map(|&(j, k)| pv.values.node(j)[0] * pv.values.node(k)[0])
                .collect();
            let c: Vec<f64> = node_pairs
                .iter()
                .map(|&(j, k)| pc.values.node(j)[0] * pc.values.node(k)[0])
                .collect();
            (v, c)
        })
        .collect();

    let mut rows = Vec::new();
    for (idx, &(j, k)) in node_pairs.iter().enumerate() {
        let vv: Vec<f64> = prods.iter().map(|(v, _)| v[idx]).collect();
        let cc: Vec<f64> = prods.iter().map(|(_, c)| c[idx]).collect();
        let (mv, sv) = mean_and_se(&vv);
        let (mc, sc) = mean_and_se(&cc);
        let want = covariance(h, grid.node(j), grid.node(k))?;
        rows.push(ValidationRow::three_se(
            "volterra_covariance",
            format!("H={hv};t={};s={}", grid.node(j), grid.node(k)),
            mv,
            sv,
            want,
            0.0,
        ));
        rows.push(ValidationRow::three_se(
            "covfactor_covariance",
            format!("H={hv};t={};s={}", grid.node(j), grid.node(k)),
            mc,
            sc,
            want,
            0.0,
        ));
        rows.push(ValidationRow::three_se(
            "sampler_agreement",
            format!("H={hv};t={};s={}", grid.node(j), grid.node(k)),
            mv,
            sv,
            mc,
            sc,
        ));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

/// Drift preset names exposed by the CLI and used in the acceptance runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftPreset {
    Zero,
    Linear,
    TanhBounded,
}

pub fn sde_model(
    drift: DriftPreset,
    kappa: f64,
    hv: f64,
    horizon: f64,
    x0: f64,
    holder_sigma: bool,
) -> Result<ModelSpec> {
    let (drift, k, beta0): (Arc<dyn crate::model::Drift>, f64, f64) = match drift {
        DriftPreset::Zero => (Arc::new(ZeroDrift { dim: 1 }), 0.0, 1.0),
        DriftPreset::Linear => (Arc::new(LinearDrift::scalar(1, kappa)), kappa.abs(), 1.0),
        DriftPreset::TanhBounded => (
            Arc::new(TanhDrift {
                amp: kappa,
                slope: 1.0,
                dim: 1,
            }),
            kappa.abs(),
            1.0,
        ),
    };
    let sigma: Arc<dyn crate::model::Sigma> = if holder_sigma {
        Arc::new(DiagHolderSigma {
            dim: 1,
            eps: 0.5,
            alpha0: 0.6,
        })
    } else {
        Arc::new(IdentitySigma { dim: 1 })
    };
    let m = ModelSpec {
        drift,
        sigma,
        lipschitz_k: k,
        grad_holder_beta: beta0,
        hurst: Hurst::new(hv)?,
        horizon,
        x0: vec![x0],
        lambda0_override: None,
    };
    m.validate()?;
    Ok(m)
}

pub fn delay_model(
    kappa: f64,
    hv: f64,
    horizon: f64,
    delay: f64,
    xi0: f64,
    seg_intervals: usize,
) -> Result<FunctionalModelSpec> {
    let seg_grid = Grid::new(-delay, 0.0, seg_intervals)?;
    let mut xi = VecSeries::zeros(seg_grid, 1);
    for k in 0..=seg_intervals {
        xi.set_node(k, &[xi0]);
    }
    let m = FunctionalModelSpec {
        drift: Arc::new(DelayLinearDrift { kappa, dim: 1 }),
        sigma: Arc::new(IdentitySigma { dim: 1 }),
        lipschitz_k: kappa.abs(),
        hurst: Hurst::new(hv)?,
        horizon,
        delay,
        initial_segment: xi,
    };
    m.validate()?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// criterion 3: route equivalence
// ---------------------------------------------------------------------------

/// Relative L2 gap between the five-term and generic realizations of
/// K_H* h along one path. On the zero-noise (smooth) path the routes agree
/// to the quadrature floor; along a rough fBm path their different
/// interpolants of the path-dependent gradient leave an O(n^-lambda) gap,
/// so that comparison carries a wider tolerance.
pub fn route_equivalence_rows(
    preset: DriftPreset,
    holder_sigma: bool,
    n: usize,
    seed: u64,
) -> Result<Vec<ValidationRow>> {
    let model = sde_model(preset, 1.0, 0.7, 1.0, 0.5, holder_sigma)?;
    let grid = Grid::on_horizon(1.0, n)?;
    let op = WeightOp::for_model(&model, &grid)?;
    let dt = grid.spacing();

    let gap = |noise: &crate::fbm::FbmPath| -> Result<f64> {
        let x = solve_euler(&model, noise)?;
        let (explicit, _) = khstar_explicit(&model, &x, &[1.0])?;
        let density = shift_density(&model, &x, &[1.0])?;
        let generic = op.integrand(&density)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 1..=n {
            num += (explicit.node(k)[0] - generic.node(k)[0]).powi(2) * dt;
            den += generic.node(k)[0].powi(2) * dt;
        }
        Ok((num / den).sqrt())
    };

    let zero_noise = crate::fbm::FbmPath {
        values: VecSeries::zeros(grid.clone(), 1),
        provenance: crate::fbm::Provenance::Volterra,
        wiener: None,
    };
    let smooth = gap(&zero_noise)?;
    let rough = gap(&VolterraSampler::new(grid.clone(), model.hurst)?.sample(1, seed))?;
    Ok(vec![
        ValidationRow::deterministic(
            "route_equivalence_smooth",
            format!("preset={preset:?};holder_sigma={holder_sigma};n={n}"),
            smooth,
            0.0,
            1e-3,
        ),
        ValidationRow::deterministic(
            "route_equivalence_path",
            format!("preset={preset:?};holder_sigma={holder_sigma};n={n};seed={seed}"),
            rough,
            0.0,
            1e-2,
        ),
    ])
}

// ---------------------------------------------------------------------------
// criterion 4: Cameron-Martin shift test
// ---------------------------------------------------------------------------

/// Richardson rows for the shift test. A defect pair below the roundoff
/// floor certifies the identity exactly (affine drift makes the defect
/// vanish to machine precision); such rows PASS with the ratio reported
/// as NaN.
pub fn shift_test_rows(
    preset: DriftPreset,
    hv: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<ValidationRow>> {
    let model = sde_model(preset, 1.0, hv, 1.0, 0.3, false)?;
    let eps = [0.01, 0.005, 0.0025];
    let table = shift_defect_table(&model, &[1.0], n, seed, &eps)?;
    let floor = 1e-10 * (1.0 + model.x0[0].abs());
    let mut rows = Vec::new();
    for w in table.windows(2) {
        let (e0, d0) = w[0];
        let (e1, d1) = w[1];
        let degenerate = d0 <= floor && d1 <= floor;
        let ratio = d0 / d1;
        let verdict = if degenerate || (3.2..=4.8).contains(&ratio) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        rows.push(ValidationRow {
            id: "shift_richardson".into(),
            params: format!("preset={preset:?};H={hv};eps={e0}/{e1};defect={d0:.3e}"),
            estimate: if degenerate { f64::NAN } else { ratio },
            std_error: 0.0,
            oracle: 4.0,
            oracle_error: 0.8,
            verdict,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// criteria 5-6: gradient formula
// ---------------------------------------------------------------------------

pub fn gradient_closed_form_rows(
    hv: f64,
    n: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ValidationRow>> {
    let cfg = GradientConfig {
        n_steps: n,
        n_paths,
        seed,
    };
    let x0 = 0.5;
    let mut rows = Vec::new();

    // ZERO drift, coordinate payoff: gradient is v exactly
    let m = sde_model(DriftPreset::Zero, 0.0, hv, 1.0, x0, false)?;
    let rep = bismut_gradient(&m, |x| x[0], &[1.0], &cfg)?;
    rows.push(ValidationRow::three_se(
        "gradient_zero_coordinate",
        format!("H={hv};n={n};N={n_paths}"),
        rep.estimate,
        rep.std_error,
        1.0,
        0.0,
    ));

    // LINEAR kappa = 1, coordinate payoff: gradient is e^(-T) v
    let m = sde_model(DriftPreset::Linear, 1.0, hv, 1.0, x0, false)?;
    let rep = bismut_gradient(&m, |x| x[0], &[1.0], &cfg)?;
    let want = linear_model_flow(&[-1.0], &[1.0], 1.0)[0];
    rows.push(ValidationRow::three_se(
        "gradient_linear_coordinate",
        format!("H={hv};n={n};N={n_paths}"),
        rep.estimate,
        rep.std_error,
        want,
        0.0,
    ));

    // ZERO drift, square payoff: gradient is 2 x v
    let m = sde_model(DriftPreset::Zero, 0.0, hv, 1.0, x0, false)?;
    let rep = bismut_gradient(&m, |x| x[0] * x[0], &[1.0], &cfg)?;
    rows.push(ValidationRow::three_se(
        "gradient_zero_square",
        format!("H={hv};n={n};N={n_paths}"),
        rep.estimate,
        rep.std_error,
        2.0 * x0,
        0.0,
    ));
    Ok(rows)
}

pub fn gradient_fd_row(
    hv: f64,
    holder_sigma: bool,
    n: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ValidationRow> {
    let m = sde_model(DriftPreset::TanhBounded, 1.0, hv, 1.0, 0.3, holder_sigma)?;
    let cfg = GradientConfig {
        n_steps: n,
        n_paths,
        seed,
    };
    let payoff = |x: &[f64]| x[0];
    let rep = bismut_gradient(&m, payoff, &[1.0], &cfg)?;
    let fd = fd_gradient(&m, payoff, &[1.0], 1e-3, n, n_paths, seed ^ 0x5151)?;
    Ok(ValidationRow::three_se(
        "gradient_vs_fd_tanh",
        format!("H={hv};holder_sigma={holder_sigma};n={n};N={n_paths}"),
        rep.estimate,
        rep.std_error,
        fd.value,
        fd.error,
    ))
}

// ---------------------------------------------------------------------------
// criterion 7: SFDE gradient
// ---------------------------------------------------------------------------

pub fn sfde_gradient_rows(n: usize, n_paths: usize, seed: u64) -> Result<Vec<ValidationRow>> {
    let seg = n / 4; // nodes of the delay window at the main resolution
    let model = delay_model(1.0, 0.7, 1.0, 0.25, 1.0, seg)?;
    let gamma = CutoffGamma::new(0.25, 1.0)?;
    let eta_grid = Grid::new(-0.25, 0.0, seg)?;
    let mut eta = VecSeries::zeros(eta_grid, 1);
    for k in 0..=seg {
        eta.set_node(k, &[1.0]);
    }
    let cfg = GradientConfig {
        n_steps: n,
        n_paths,
        seed,
    };
    let rep = sfde_bismut_gradient(&model, |x| x[0], &eta, &gamma, &cfg)?;

    // CRN finite difference in the eta direction
    let grid = Grid::on_horizon(model.horizon, n)?;
    let sampler = VolterraSampler::new(grid, model.hurst)?;
    let step = 1e-3;
    let vals: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let noise = sampler.sample(1, path_seed(seed ^ 0x7F7F, i as u64));
            let mut up = model.clone();
            let mut dn = model.clone();
            let mut xu = model.initial_segment.clone();
            let mut xd = model.initial_segment.clone();
            for k in 0..=seg {
                let e = eta.node(k)[0];
                let base = model.initial_segment.node(k)[0];
                xu.set_node(k, &[base + step * e]);
                xd.set_node(k, &[base - step * e]);
            }
            up.initial_segment = xu;
            dn.initial_segment = xd;
            let su = solve_sfde(&up, &noise)?;
            let sd = solve_sfde(&dn, &noise)?;
            Ok((su.terminal()[0] - sd.terminal()[0]) / (2.0 * step))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (fd_mean, fd_se) = mean_and_se(&vals);

    let mut rows = vec![ValidationRow::three_se(
        "sfde_gradient_vs_fd",
        format!("H=0.7;n={n};N={n_paths}"),
        rep.estimate,
        rep.std_error,
        fd_mean,
        fd_se,
    )];

    // Gamma terminal nulling: exact zeros on [T - r0, T]
    let mut worst: f64 = 0.0;
    for k in 0..=400 {
        let t = 0.75 + 0.25 * k as f64 / 400.0;
        worst = worst.max(gamma.value(t).abs());
    }
    rows.push(ValidationRow::deterministic(
        "sfde_terminal_nulling",
        "gamma on [T-r0, T]".into(),
        worst,
        0.0,
        0.0,
    ));
    Ok(rows)
}

// ---------------------------------------------------------------------------
// criterion 8: Harnack suite
// ---------------------------------------------------------------------------

pub fn harnack_rows(n_paths: usize, seed: u64) -> Result<Vec<ValidationRow>> {
    let mut rows = Vec::new();
    let payoff = |x: &[f64]| 1.0 + x[0].tanh();

    // Jensen baselines at v = 0 for both drift presets
    for preset in [DriftPreset::Linear, DriftPreset::TanhBounded] {
        let m = sde_model(preset, 1.0, 0.7, 1.0, 0.3, false)?;
        let cfg = HarnackConfig {
            v: vec![0.0],
            p: 2.0,
            n_steps: 64,
            n_paths,
            seed,
            mode: ConstantsMode::Fitted,
        };
        let r = harnack_power_check(&m, payoff, &cfg)?;
        rows.push(ValidationRow {
            id: "jensen_power".into(),
            params: format!("preset={preset:?};p=2;v=0"),
            estimate: r.lhs,
            std_error: r.lhs_se,
            oracle: r.rhs,
            oracle_error: r.rhs_se,
            verdict: if r.lhs <= r.rhs + 3.0 * (r.lhs_se + r.rhs_se) {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        });
        let r = log_harnack_check(&m, payoff, &cfg)?;
        rows.push(ValidationRow {
            id: "jensen_log".into(),
            params: format!("preset={preset:?};v=0"),
            estimate: r.lhs,
            std_error: r.lhs_se,
            oracle: r.rhs,
            oracle_error: r.rhs_se,
            verdict: if r.lhs <= r.rhs + 3.0 * (r.lhs_se + r.rhs_se) {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        });
    }

    // Gaussian specialization of the exponential moment (b == 0)
    let m0 = sde_model(DriftPreset::Zero, 0.0, 0.7, 1.0, 0.0, false)?;
    let n_steps = 64;
    let grid = Grid::on_horizon(1.0, n_steps)?;
    let op = WeightOp::for_model(&m0, &grid)?;
    let noise = VolterraSampler::new(grid.clone(), m0.hurst)?.sample(1, 1);
    let x = solve_euler(&m0, &noise)?;
    let density = shift_density(&m0, &x, &[1.0])?;
    let integrand = op.integrand(&density)?;
    let dt = grid.spacing();
    let var: f64 = (0..n_steps).map(|k| integrand.node(k)[0].powi(2) * dt).sum();
    let (vn, lambda) = (0.5, 1.0);
    let scan = exponential_moment_scan(
        &m0,
        &[1.0],
        &[vn],
        &[lambda],
        n_steps,
        n_paths.min(20_000),
        seed ^ 0x99,
    )?;
    let row = &scan.rows[0];
    let want = (vn * vn * var / (2.0 * lambda * lambda)).exp();
    rows.push(ValidationRow::three_se(
        "gaussian_exponential_moment",
        format!("|v|={vn};lambda={lambda}"),
        row.estimate,
        row.std_error,
        want,
        0.0,
    ));

    // fitted log-Harnack stability across the |v| grid (short horizon keeps
    // the Jensen slack subdominant; see the harnack module tests)
    let m = sde_model(DriftPreset::Linear, 1.0, 0.7, 0.25, 0.0, false)?;
    let mut constants = Vec::new();
    for &vnorm in &[0.1, 0.2, 0.4] {
        let cfg = HarnackConfig {
            v: vec![-vnorm],
            p: 2.0,
            n_steps: 64,
            n_paths,
            seed: seed ^ 0x1111,
            mode: ConstantsMode::Fitted,
        };
        let r = log_harnack_check(&m, payoff, &cfg)?;
        constants.push(r.fitted_constant.unwrap_or(0.0));
    }
    let lo = constants.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = constants.iter().cloned().fold(0.0f64, f64::max);
    let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    rows.push(ValidationRow {
        id: "log_harnack_fitted_stability".into(),
        params: format!("T=0.25;|v|=0.1/0.2/0.4;c={constants:?}"),
        estimate: ratio,
        std_error: 0.0,
        oracle: 1.0,
        oracle_error: 1.0, // stability window [lo, 2 lo]
        verdict: if lo > 0.0 && ratio <= 2.0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    });

    Ok(rows)
}

/// Fitted power-Harnack constants across p, for the monotonicity invariant.
pub fn harnack_p_scan(n_paths: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let m = sde_model(DriftPreset::Linear, 1.0, 0.7, 0.25, 0.0, false)?;
    let payoff = |x: &[f64]| 1.0 + x[0].tanh();
    let mut out = Vec::new();
    for &p in &[1.5, 2.0, 4.0] {
        let cfg = HarnackConfig {
            v: vec![-0.3],
            p,
            n_steps: 64,
            n_paths,
            seed,
            mode: ConstantsMode::Fitted,
        };
        let r = harnack_power_check(&m, payoff, &cfg)?;
        out.push((p, r.fitted_constant.unwrap_or(0.0)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_rows_pass_at_modest_resolution() {
        for &hv in &[0.3, 0.7] {
            // looser tolerance at n = 128; the acceptance suite runs n = 512
            let rows = operator_identity_rows(hv, 128, 4e-3).unwrap();
            for r in &rows {
                assert!(r.passed(), "H={hv}: {r:?}");
            }
        }
    }

    #[test]
    fn sampler_rows_pass_at_small_scale() {
        let rows = sampler_covariance_rows(0.7, 32, 4000, 99).unwrap();
        for r in &rows {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn shift_rows_degenerate_for_linear_and_quadratic_for_tanh() {
        let rows = shift_test_rows(DriftPreset::Linear, 0.7, 64, 3).unwrap();
        assert!(rows.iter().all(|r| r.passed()));
        assert!(rows.iter().all(|r| r.estimate.is_nan()));
        let rows = shift_test_rows(DriftPreset::TanhBounded, 0.7, 64, 3).unwrap();
        assert!(rows.iter().all(|r| r.passed()), "{rows:?}");
        assert!(rows.iter().all(|r| !r.estimate.is_nan()));
    }

    #[test]
    fn closed_form_gradient_rows_pass_at_reduced_budget() {
        let rows = gradient_closed_form_rows(0.7, 64, 6000, 2024).unwrap();
        for r in &rows {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn route_equivalence_below_tolerance() {
        let rows = route_equivalence_rows(DriftPreset::Linear, false, 128, 5).unwrap();
        for r in &rows {
            assert!(r.passed(), "{r:?}");
        }
    }
}
