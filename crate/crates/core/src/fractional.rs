//! Discrete left/right fractional Riemann-Liouville integrals and
//! derivatives on uniform grids.
//!
//! All four operators use product integration: the integrand data is taken
//! piecewise-linear between nodes and integrated exactly against the power
//! weight of the defining integral, so the endpoint singularities carry no
//! discretization error beyond interpolation. Right-sided operators are
//! real-valued: the complex phase of the classical right-sided definition is
//! dropped, and right- and left-sided operators are never composed with each
//! other in this crate.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::special::gamma;

/// Any intermediate above this magnitude is treated as a diverging Weyl
/// integral rather than roundoff.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Exact moments of the weight u^(gamma-1) over the cells of a uniform grid,
/// u measured as the distance from the evaluation node.
///
/// `a[m]` = Int_{(m-1)h}^{mh} u^(gamma-1) du, `b[m]` the same with an extra
/// factor u. For gamma < 0 the m = 1 entry of `a` diverges and is stored as
/// NaN; callers must use the vanishing-factor closed form for that cell.
pub(crate) struct PowerMoments {
    pub h: f64,
    pub gamma: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PowerMoments {
    pub fn new(h: f64, gamma: f64, n: usize) -> Self {
        assert!(gamma > -1.0 && gamma != 0.0);
        let mut a = vec![0.0; n + 1];
        let mut b = vec![0.0; n + 1];
        for m in 1..=n {
            let lo = (m - 1) as f64 * h;
            let hi = m as f64 * h;
            a[m] = if m == 1 && gamma < 0.0 {
                f64::NAN
            } else {
                (hi.powf(gamma) - lo.powf(gamma)) / gamma
            };
            b[m] = (hi.powf(gamma + 1.0) - lo.powf(gamma + 1.0)) / (gamma + 1.0);
        }
        Self { h, gamma, a, b }
    }

    /// Node weights w such that convolve_left(values, j) = sum_k w[k] values[k].
    /// Only valid for gamma > 0.
    pub fn row_weights(&self, j: usize) -> Vec<f64> {
        assert!(self.gamma > 0.0);
        let mut w = vec![0.0; j + 1];
        for m in 1..=j {
            let i = j - m;
            let hat = m as f64 * self.a[m] - self.b[m] / self.h;
            w[i] += self.a[m] - hat;
            w[i + 1] += hat;
        }
        w
    }

    /// Int_a^{t_j} f(y) (t_j - y)^(gamma-1) dy for piecewise-linear f given
    /// by `values[0..=j]`. For gamma <= 0 the data must vanish at the node:
    /// values[j] = 0.
    pub fn convolve_left(&self, values: &[f64], j: usize) -> f64 {
        debug_assert!(values.len() > j);
        let mut s = 0.0;
        for m in 1..=j {
            let i = j - m; // cell [t_i, t_{i+1}]
            let fi = values[i];
            let df = values[i + 1] - fi;
            if m == 1 && self.gamma < 0.0 {
                debug_assert!(values[j] == 0.0, "singular weight needs vanishing data");
                // linear-vanishing factor against u^(gamma-1)
                s += values[j - 1] * self.h.powf(self.gamma) / (self.gamma + 1.0);
            } else {
                s += fi * self.a[m] + df * (m as f64 * self.a[m] - self.b[m] / self.h);
            }
        }
        s
    }
}

fn check_order_integral(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidOrder(format!(
            "integral order must be positive, got {alpha}"
        )));
    }
    Ok(())
}

fn check_order_derivative(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidOrder(format!(
            "derivative order must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Left-sided fractional integral I_{a+}^alpha f on the grid of `f`.
///
/// Node t_0 maps to 0.
pub fn left_frac_integral(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    check_order_integral(alpha)?;
    let n = f.grid.intervals();
    let moments = PowerMoments::new(f.grid.spacing(), alpha, n);
    let inv_gamma = 1.0 / gamma(alpha);
    let mut out = vec![0.0; n + 1];
    for (j, o) in out.iter_mut().enumerate().skip(1) {
        *o = inv_gamma * moments.convolve_left(&f.values, j);
    }
    GridFunction::new(f.grid.clone(), out)
}

/// Right-sided fractional integral (real-valued convention), node t_n -> 0.
pub fn right_frac_integral(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    let reversed = reverse(f);
    let mut res = left_frac_integral(&reversed, alpha)?;
    res.values.reverse();
    Ok(res)
}

/// Left-sided fractional derivative via the Weyl representation:
///
/// D^alpha f(x) = [f(x)/(x-a)^alpha
///                 + alpha Int_a^x (f(x)-f(y))/(x-y)^(alpha+1) dy] / Gamma(1-alpha)
///
/// The value at t_0 is reported as 0; it is the true limit when f(a) = 0 and
/// a plain convention otherwise (the boundary term diverges there). Interior
/// values beyond [`OVERFLOW_GUARD`] signal a diverging Weyl integral.
pub fn left_frac_derivative(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    check_order_derivative(alpha)?;
    let n = f.grid.intervals();
    let h = f.grid.spacing();
    let moments = PowerMoments::new(h, -alpha, n);
    let inv_gamma = 1.0 / gamma(1.0 - alpha);
    let mut out = vec![0.0; n + 1];
    let mut diff = vec![0.0; n + 1];
    for j in 1..=n {
        let fj = f.values[j];
        for i in 0..=j {
            diff[i] = fj - f.values[i];
        }
        diff[j] = 0.0;
        let boundary = fj / (j as f64 * h).powf(alpha);
        let tail = alpha * moments.convolve_left(&diff[..=j], j);
        let v = inv_gamma * (boundary + tail);
        if !v.is_finite() || v.abs() > OVERFLOW_GUARD {
            return Err(Error::InsufficientRegularity(format!(
                "Weyl integral diverges at node {j} (t = {})",
                f.grid.node(j)
            )));
        }
        out[j] = v;
    }
    GridFunction::new(f.grid.clone(), out)
}

/// Right-sided Weyl derivative (real-valued convention), singular side y > x.
pub fn right_frac_derivative(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    let reversed = reverse(f);
    let mut res = left_frac_derivative(&reversed, alpha)?;
    res.values.reverse();
    Ok(res)
}

fn reverse(f: &GridFunction) -> GridFunction {
    let mut values = f.values.clone();
    values.reverse();
    GridFunction {
        grid: f.grid.clone(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn unit_grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn order_one_integral_is_plain_integration() {
        let f = GridFunction::from_fn(unit_grid(64), |_| 1.0).unwrap();
        let out = left_frac_integral(&f, 1.0).unwrap();
        for (k, &t) in f.grid.nodes().iter().enumerate() {
            assert!((out.values[k] - t).abs() < 1e-14);
        }
        let out = right_frac_integral(&f, 1.0).unwrap();
        for (k, &t) in f.grid.nodes().iter().enumerate() {
            assert!((out.values[k] - (1.0 - t)).abs() < 1e-14);
        }
    }

    #[test]
    fn half_integral_of_constant_and_linear_is_exact() {
        // product integration is exact on piecewise-linear integrands
        let g = unit_grid(32);
        let one = GridFunction::from_fn(g.clone(), |_| 1.0).unwrap();
        let out = left_frac_integral(&one, 0.5).unwrap();
        // I^{1/2} 1 (1) = 1/Gamma(1.5)
        let expected = 1.128_379_167_095_512_6;
        assert!((out.values[32] - expected).abs() < 1e-12);

        let lin = GridFunction::from_fn(g, |y| y).unwrap();
        let out = left_frac_integral(&lin, 0.5).unwrap();
        // I^{1/2} y (1) = Gamma(2)/Gamma(2.5)
        let expected = 1.0 / (0.75 * std::f64::consts::PI.sqrt());
        assert!((out.values[32] - expected).abs() < 1e-12);
    }

    #[test]
    fn right_integral_mirrors_left() {
        let g = unit_grid(32);
        let one = GridFunction::from_fn(g.clone(), |_| 1.0).unwrap();
        let out = right_frac_integral(&one, 0.5).unwrap();
        assert!((out.values[0] - 1.128_379_167_095_512_6).abs() < 1e-12);
        assert_eq!(out.values[32], 0.0);

        let zero = GridFunction::zero(g);
        let out = right_frac_integral(&zero, 0.5).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn derivative_of_constant_matches_weyl_boundary_term() {
        let g = unit_grid(40);
        let c = 2.5;
        let f = GridFunction::from_fn(g, |_| c).unwrap();
        for &alpha in &[0.2, 0.5, 0.8] {
            let out = left_frac_derivative(&f, alpha).unwrap();
            for (j, &t) in f.grid.nodes().iter().enumerate().skip(1) {
                let expected = c * t.powf(-alpha) / gamma(1.0 - alpha);
                assert!(
                    (out.values[j] - expected).abs() < 1e-11 * expected.abs(),
                    "alpha={alpha} node {j}"
                );
            }
            assert_eq!(out.values[0], 0.0);

            let back = right_frac_derivative(&f, alpha).unwrap();
            for (j, &t) in f.grid.nodes().iter().enumerate().take(40).skip(1) {
                let expected = c * (1.0 - t).powf(-alpha) / gamma(1.0 - alpha);
                assert!((back.values[j] - expected).abs() < 1e-11 * expected.abs());
            }
        }
    }

    /// Sup distance over the bulk window t >= 0.1; pointwise recovery right
    /// at the origin cusp of I^alpha data is interpolation-limited and is
    /// not what the convergence claims are about.
    fn bulk_sup_distance(a: &GridFunction, b: &GridFunction) -> f64 {
        let n = a.grid.intervals();
        (n / 10..=n)
            .map(|j| (a.values[j] - b.values[j]).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn derivative_inverts_integral() {
        // D^alpha (I^alpha g) = g for g == 1 and a smooth g
        for &alpha in &[0.3, 0.5, 0.7] {
            let g = unit_grid(256);
            let one = GridFunction::from_fn(g.clone(), |_| 1.0).unwrap();
            let i = left_frac_integral(&one, alpha).unwrap();
            let d = left_frac_derivative(&i, alpha).unwrap();
            let err = bulk_sup_distance(&d, &one);
            assert!(err < 2e-2, "alpha={alpha}: bulk error {err}");

            let smooth = GridFunction::from_fn(g, |y| (2.0 * y).cos()).unwrap();
            let i = left_frac_integral(&smooth, alpha).unwrap();
            let d = left_frac_derivative(&i, alpha).unwrap();
            let err = bulk_sup_distance(&d, &smooth);
            assert!(err < 2e-2, "alpha={alpha}: bulk error {err}");
        }
    }

    #[test]
    fn inversion_error_decays_with_observed_order_at_least_one() {
        let alpha = 0.6;
        let mut errors = Vec::new();
        for &n in &[64usize, 128, 256, 512] {
            let g = unit_grid(n);
            let smooth = GridFunction::from_fn(g, |y| (1.5 * y).sin() + 0.5 * y).unwrap();
            let i = left_frac_integral(&smooth, alpha).unwrap();
            let d = left_frac_derivative(&i, alpha).unwrap();
            errors.push(bulk_sup_distance(&d, &smooth));
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.0, "observed order {order} in {errors:?}");
        }
    }

    #[test]
    fn first_composition_formula_converges() {
        let (a, b) = (0.4, 0.35);
        let mut errors = Vec::new();
        for &n in &[64usize, 128, 256] {
            let g = unit_grid(n);
            let f = GridFunction::from_fn(g, |y| (y * 1.2).cos()).unwrap();
            let nested = left_frac_integral(&left_frac_integral(&f, b).unwrap(), a).unwrap();
            let direct = left_frac_integral(&f, a + b).unwrap();
            errors.push(bulk_sup_distance(&nested, &direct));
        }
        for w in errors.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.0, "errors {errors:?}");
        }
        // right-sided branch at one resolution, measured away from the
        // mirrored cusp at t = b
        let g = unit_grid(128);
        let f = GridFunction::from_fn(g, |y| y * y).unwrap();
        let nested = right_frac_integral(&right_frac_integral(&f, b).unwrap(), a).unwrap();
        let direct = right_frac_integral(&f, a + b).unwrap();
        let err: f64 = (0..=115)
            .map(|j| (nested.values[j] - direct.values[j]).abs())
            .fold(0.0, f64::max);
        assert!(err < 2e-3, "right-sided composition error {err}");
    }

    #[test]
    fn second_composition_formula_on_regular_data() {
        // f = I^{a+b} smooth, then D^a D^b f = D^{a+b} f
        let (a, b) = (0.3, 0.25);
        let g = unit_grid(256);
        let smooth = GridFunction::from_fn(g, |y| 1.0 + 0.5 * (y * 2.0).sin()).unwrap();
        let f = left_frac_integral(&smooth, a + b).unwrap();
        let nested =
            left_frac_derivative(&left_frac_derivative(&f, b).unwrap(), a).unwrap();
        let direct = left_frac_derivative(&f, a + b).unwrap();
        let err: f64 = (4..=256)
            .map(|j| (nested.values[j] - direct.values[j]).abs())
            .fold(0.0, f64::max);
        assert!(err < 3e-2, "sup error {err}");
    }

    #[test]
    fn operators_are_linear() {
        let g = unit_grid(48);
        let f1 = GridFunction::from_fn(g.clone(), |y| y.exp() - 1.0).unwrap();
        let f2 = GridFunction::from_fn(g.clone(), |y| (3.0 * y).sin()).unwrap();
        let (c1, c2) = (1.7, -0.4);
        let combo = GridFunction::from_fn(g, |y| c1 * (y.exp() - 1.0) + c2 * (3.0 * y).sin()).unwrap();
        let alpha = 0.45;

        let lhs = left_frac_integral(&combo, alpha).unwrap();
        let r1 = left_frac_integral(&f1, alpha).unwrap();
        let r2 = left_frac_integral(&f2, alpha).unwrap();
        for j in 0..=48 {
            let rhs = c1 * r1.values[j] + c2 * r2.values[j];
            assert!((lhs.values[j] - rhs).abs() < 1e-13);
        }

        let lhs = left_frac_derivative(&combo, alpha).unwrap();
        let r1 = left_frac_derivative(&f1, alpha).unwrap();
        let r2 = left_frac_derivative(&f2, alpha).unwrap();
        for j in 0..=48 {
            let rhs = c1 * r1.values[j] + c2 * r2.values[j];
            assert!((lhs.values[j] - rhs).abs() < 1e-11 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn invalid_orders_are_rejected() {
        let f = GridFunction::from_fn(unit_grid(8), |y| y).unwrap();
        assert!(left_frac_integral(&f, 0.0).is_err());
        assert!(left_frac_integral(&f, -0.5).is_err());
        assert!(left_frac_derivative(&f, 1.0).is_err());
        assert!(left_frac_derivative(&f, 0.0).is_err());
    }

    #[test]
    fn overflow_guard_flags_divergent_weyl_values() {
        let f = GridFunction::from_fn(unit_grid(8), |y| 1e14 * y).unwrap();
        match left_frac_derivative(&f, 0.5) {
            Err(crate::error::Error::InsufficientRegularity(_)) => {}
            other => panic!("expected insufficient-regularity, got {other:?}"),
        }
    }
}
