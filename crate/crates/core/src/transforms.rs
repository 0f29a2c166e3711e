//! The kernel transforms K_H*, K_H and K_H^{-1} on grid functions.
//!
//! K_H* maps Cameron-Martin directions of the fBm to L2 densities against
//! the underlying Wiener process; K_H^{-1} inverts the kernel integral
//! operator. Outputs of these transforms blow up like a power at t = 0 (and
//! for H < 1/2 on approach to jump points); node values at such points are
//! reported as 0 by convention and the singular-aware pairing below never
//! reads them.

use crate::error::{Error, Result};
use crate::fbm::{kernel, kernel_dt, Hurst, HurstRegime};
use crate::fractional::{left_frac_derivative, PowerMoments};
use crate::grid::{Grid, GridFunction, VecSeries};
use crate::special::{
    beta, c0_constant, gamma, gauss_legendre_unit, gl_integrate, gl_integrate_pow_hi,
    gl_integrate_pow_lo,
};

const GL_ORDER: usize = 8;

/// Precomputed cell tables for the operator
/// (K_H* phi)(s) = K_H(T,s) phi(s) + Int_s^T (phi(r) - phi(s)) dK_H/dr (r,s) dr.
///
/// `pa[k][m-k]`/`pb[k][m-k]` hold the integrals of the two linear hat pieces
/// of cell m against dK/dr(., t_k); the apply keeps the phi-difference form
/// so the non-integrable part of dK/dr at r = s never appears alone.
pub struct KhStarOp {
    pub grid: Grid,
    pub hurst: Hurst,
    k_terminal: Vec<f64>,
    pa: Vec<Vec<f64>>,
    pb: Vec<Vec<f64>>,
    /// H > 1/2 only: full first-cell weight of the reduced form.
    qa: Vec<f64>,
}

impl KhStarOp {
    pub fn new(grid: Grid, hurst: Hurst) -> Result<Self> {
        let n = grid.intervals();
        let big_t = grid.end();
        let brownian = hurst.regime() == HurstRegime::Brownian;
        let (gx, gw) = gauss_legendre_unit(GL_ORDER);
        let mut k_terminal = vec![0.0; n + 1];
        let mut pa = vec![Vec::new(); n + 1];
        let mut pb = vec![Vec::new(); n + 1];
        let mut qa = vec![0.0; n + 1];
        if brownian {
            return Ok(Self {
                grid,
                hurst,
                k_terminal,
                pa,
                pb,
                qa,
            });
        }
        let h = grid.spacing();
        let high = hurst.regime() == HurstRegime::High;
        for k in 1..n {
            let s = grid.node(k);
            k_terminal[k] = kernel(hurst, big_t, s)?;
            let cells = n - k;
            let mut row_a = vec![0.0; cells];
            let mut row_b = vec![0.0; cells];
            for m in k..n {
                let lo = grid.node(m);
                let hi = grid.node(m + 1);
                let xi = |r: f64| (r - lo) / h;
                if m == k {
                    // (1 - xi) dK/dr is non-integrable alone; only the
                    // xi-weighted piece is ever used for this cell
                    row_b[0] = gl_integrate_pow_lo(
                        |r| xi(r) * kernel_dt(hurst, r, s).unwrap(),
                        lo,
                        hi,
                        hurst.value() - 0.5,
                        &gx,
                        &gw,
                    );
                    if high {
                        qa[k] = gl_integrate_pow_lo(
                            |r| (1.0 - xi(r)) * kernel_dt(hurst, r, s).unwrap(),
                            lo,
                            hi,
                            hurst.value() - 1.5,
                            &gx,
                            &gw,
                        );
                    }
                } else {
                    row_a[m - k] =
                        gl_integrate(|r| (1.0 - xi(r)) * kernel_dt(hurst, r, s).unwrap(), lo, hi, &gx, &gw);
                    row_b[m - k] =
                        gl_integrate(|r| xi(r) * kernel_dt(hurst, r, s).unwrap(), lo, hi, &gx, &gw);
                }
            }
            pa[k] = row_a;
            pb[k] = row_b;
        }
        Ok(Self {
            grid,
            hurst,
            k_terminal,
            pa,
            pb,
            qa,
        })
    }

    /// Apply to a piecewise-linear phi. Nodes 0 and n are conventions (0
    /// unless H = 1/2): the true transform diverges at s = 0.
    pub fn apply(&self, phi: &GridFunction) -> Result<GridFunction> {
        let n = self.grid.intervals();
        if phi.grid != self.grid {
            return Err(Error::DimensionMismatch("phi grid differs from operator grid".into()));
        }
        if self.hurst.regime() == HurstRegime::Brownian {
            return Ok(phi.clone());
        }
        let mut out = vec![0.0; n + 1];
        for k in 1..n {
            let pk = phi.values[k];
            let mut acc = self.k_terminal[k] * pk;
            for m in k..n {
                let i = m - k;
                if m > k {
                    acc += self.pa[k][i] * (phi.values[m] - pk);
                }
                acc += self.pb[k][i] * (phi.values[m + 1] - pk);
            }
            out[k] = acc;
        }
        GridFunction::new(self.grid.clone(), out)
    }

    /// Exact step-function input: K_H* I_[0, t_j].
    ///
    /// The jump is handled analytically instead of smearing it over one
    /// cell, which matters for the isometry check when H < 1/2.
    pub fn apply_indicator(&self, j: usize) -> Result<GridFunction> {
        let n = self.grid.intervals();
        if j == 0 || j > n {
            return Err(Error::InvalidArgument(format!(
                "indicator endpoint index {j} out of range 1..={n}"
            )));
        }
        if self.hurst.regime() == HurstRegime::Brownian {
            let mut v = vec![0.0; n + 1];
            for x in v.iter_mut().take(j + 1) {
                *x = 1.0;
            }
            return GridFunction::new(self.grid.clone(), v);
        }
        let mut out = vec![0.0; n + 1];
        for k in 1..j.min(n) {
            // phi == 1 on [0, t_j]: difference integral collapses to the
            // plain tail integral of dK/dr over [t_j, T]
            let mut tail = 0.0;
            for m in j..n {
                let i = m - k;
                tail += self.pa[k][i] + self.pb[k][i];
            }
            out[k] = self.k_terminal[k] - tail;
        }
        GridFunction::new(self.grid.clone(), out)
    }

    /// Reduced H > 1/2 form (K_H* phi)(s) = Int_s^T phi(r) dK/dr (r,s) dr,
    /// used as a cross-check of the general formula.
    pub fn apply_reduced(&self, phi: &GridFunction) -> Result<GridFunction> {
        if self.hurst.regime() != HurstRegime::High {
            return Err(Error::HurstRegime(
                "reduced K_H* form needs H > 1/2".into(),
            ));
        }
        let n = self.grid.intervals();
        let mut out = vec![0.0; n + 1];
        for k in 1..n {
            let mut acc = 0.0;
            for m in k..n {
                let i = m - k;
                let a = if m == k { self.qa[k] } else { self.pa[k][i] };
                acc += a * phi.values[m] + self.pb[k][i] * phi.values[m + 1];
            }
            out[k] = acc;
        }
        GridFunction::new(self.grid.clone(), out)
    }
}

/// Precomputed linear operator realizing K_H^{-1} for H > 1/2 on a density
/// q = h' (Weyl-derivative route):
///
/// (K_H^{-1} h)(t) = [t^-a (1 - a c0) q(t)
///                    + a t^a Int_0^t y^-a (q(t) - q(y)) (t-y)^(-a-1) dy] / Gamma(1-a)
///
/// with a = H - 1/2. Rows are lower-triangular weights on the density
/// nodes, so the transform preserves adaptedness.
pub struct KhInverseHighOp {
    pub grid: Grid,
    pub hurst: Hurst,
    rows: Vec<Vec<f64>>,
    /// First-cell average of the t^-a boundary head per unit density value
    /// at t = 0. Stored at node 0 so that left-point Riemann sums (the
    /// adapted divergence rule) integrate the spike to first order; the
    /// pointwise value there diverges. Depends only on the density at 0,
    /// so adaptedness is preserved.
    head_coeff: f64,
}

impl KhInverseHighOp {
    pub fn new(grid: Grid, hurst: Hurst) -> Result<Self> {
        if hurst.regime() != HurstRegime::High {
            return Err(Error::HurstRegime(format!(
                "the Weyl-derivative inverse route needs H > 1/2, got {}",
                hurst.value()
            )));
        }
        let alpha = hurst.alpha();
        let n = grid.intervals();
        let h = grid.spacing();
        let c0 = c0_constant(alpha);
        // the classical Weyl-form display inverts the unnormalized kernel
        let inv_g = crate::fbm::kernel_norm(hurst) / gamma(1.0 - alpha);
        let (gx, gw) = gauss_legendre_unit(GL_ORDER);
        let mut rows = vec![Vec::new(); n + 1];
        for j in 1..=n {
            let tj = grid.node(j);
            let mut row = vec![0.0; j + 1];
            row[j] += tj.powf(-alpha) * (1.0 - alpha * c0) * inv_g;
            let s2 = alpha * tj.powf(alpha) * inv_g;
            if j == 1 {
                let s_last = tj.powf(-2.0 * alpha) * beta(1.0 - alpha, 1.0 - alpha);
                row[1] += s2 * s_last;
                row[0] -= s2 * s_last;
            } else {
                for k in 0..j {
                    let lo = grid.node(k);
                    let hi = grid.node(k + 1);
                    if k == j - 1 {
                        // psi = (q_j - q_{j-1}) (t_j - y)/h on the last cell:
                        // net integrand y^-a u^-a / h in u = t_j - y
                        let s_last = gl_integrate_pow_lo(
                            |u: f64| u.powf(-alpha) * (tj - u).powf(-alpha) / h,
                            0.0,
                            h,
                            -alpha,
                            &gx,
                            &gw,
                        );
                        row[j] += s2 * s_last;
                        row[j - 1] -= s2 * s_last;
                    } else {
                        let xi = |y: f64| (y - lo) / h;
                        let (m0, m1) = if k == 0 {
                            (
                                gl_integrate_pow_lo(
                                    |y: f64| {
                                        (1.0 - xi(y)) * y.powf(-alpha) * (tj - y).powf(-alpha - 1.0)
                                    },
                                    lo,
                                    hi,
                                    -alpha,
                                    &gx,
                                    &gw,
                                ),
                                gl_integrate_pow_lo(
                                    |y: f64| xi(y) * y.powf(-alpha) * (tj - y).powf(-alpha - 1.0),
                                    lo,
                                    hi,
                                    -alpha,
                                    &gx,
                                    &gw,
                                ),
                            )
                        } else {
                            (
                                gl_integrate(
                                    |y: f64| {
                                        (1.0 - xi(y)) * y.powf(-alpha) * (tj - y).powf(-alpha - 1.0)
                                    },
                                    lo,
                                    hi,
                                    &gx,
                                    &gw,
                                ),
                                gl_integrate(
                                    |y: f64| xi(y) * y.powf(-alpha) * (tj - y).powf(-alpha - 1.0),
                                    lo,
                                    hi,
                                    &gx,
                                    &gw,
                                ),
                            )
                        };
                        row[j] += s2 * (m0 + m1);
                        row[k] -= s2 * m0;
                        row[k + 1] -= s2 * m1;
                    }
                }
            }
            rows[j] = row;
        }
        let head_coeff = h.powf(-alpha) * (1.0 - alpha * c0) * inv_g / (1.0 - alpha);
        Ok(Self {
            grid,
            hurst,
            rows,
            head_coeff,
        })
    }

    pub fn apply(&self, density: &GridFunction) -> Result<GridFunction> {
        if density.grid != self.grid {
            return Err(Error::DimensionMismatch(
                "density grid differs from operator grid".into(),
            ));
        }
        let n = self.grid.intervals();
        let mut out = vec![0.0; n + 1];
        out[0] = self.head_coeff * density.values[0];
        for j in 1..=n {
            let row = &self.rows[j];
            let mut acc = 0.0;
            for (k, w) in row.iter().enumerate() {
                acc += w * density.values[k];
            }
            out[j] = acc;
        }
        GridFunction::new(self.grid.clone(), out)
    }

    pub fn apply_series(&self, density: &VecSeries) -> Result<VecSeries> {
        let mut out = VecSeries::zeros(self.grid.clone(), density.dim);
        for c in 0..density.dim {
            let comp = self.apply(&density.component(c))?;
            out.set_component(c, &comp);
        }
        Ok(out)
    }
}

/// K_H^{-1} for H < 1/2 on an absolutely continuous input with known
/// density (fractional-integral route):
/// t^(H-1/2) I^(1/2-H) [ y^(1/2-H) q(y) ] (t).
pub struct KhInverseLowOp {
    pub grid: Grid,
    pub hurst: Hurst,
    rows: Vec<Vec<f64>>,
}

impl KhInverseLowOp {
    pub fn new(grid: Grid, hurst: Hurst) -> Result<Self> {
        if hurst.regime() != HurstRegime::Low {
            return Err(Error::HurstRegime(format!(
                "the fractional-integral inverse route needs H < 1/2, got {}",
                hurst.value()
            )));
        }
        let b = -hurst.alpha(); // 1/2 - H > 0
        let n = grid.intervals();
        let moments = PowerMoments::new(grid.spacing(), b, n);
        let inv_g = crate::fbm::kernel_norm(hurst) / gamma(b);
        let mut rows = vec![Vec::new(); n + 1];
        for j in 1..=n {
            let scale = grid.node(j).powf(-b) * inv_g;
            let mut row = moments.row_weights(j);
            for (k, w) in row.iter_mut().enumerate() {
                *w *= scale * grid.node(k).powf(b);
            }
            rows[j] = row;
        }
        Ok(Self { grid, hurst, rows })
    }

    pub fn apply(&self, density: &GridFunction) -> Result<GridFunction> {
        if density.grid != self.grid {
            return Err(Error::DimensionMismatch(
                "density grid differs from operator grid".into(),
            ));
        }
        let n = self.grid.intervals();
        let mut out = vec![0.0; n + 1];
        for j in 1..=n {
            out[j] = self.rows[j]
                .iter()
                .zip(&density.values)
                .map(|(w, q)| w * q)
                .sum();
        }
        GridFunction::new(self.grid.clone(), out)
    }

    pub fn apply_series(&self, density: &VecSeries) -> Result<VecSeries> {
        let mut out = VecSeries::zeros(self.grid.clone(), density.dim);
        for c in 0..density.dim {
            let comp = self.apply(&density.component(c))?;
            out.set_component(c, &comp);
        }
        Ok(out)
    }
}

/// One-shot K_H* application; builds the operator tables for this call.
/// Reuse [`KhStarOp`] directly when applying to many inputs.
pub fn apply_kh_star(h: Hurst, phi: &GridFunction) -> Result<GridFunction> {
    KhStarOp::new(phi.grid.clone(), h)?.apply(phi)
}

/// K_H^{-1} h for a grid function h with h(0) = 0.
///
/// Route selection: H > 1/2 uses the Weyl-derivative form and needs
/// `derivative` = h'; H < 1/2 uses the fractional-integral form when the
/// density is supplied and the composite two-derivative form otherwise;
/// H = 1/2 returns the density.
pub fn apply_kh_inverse(
    h: Hurst,
    fn_: &GridFunction,
    derivative: Option<&GridFunction>,
) -> Result<GridFunction> {
    if fn_.values[0].abs() > 1e-9 * (1.0 + fn_.sup_norm()) {
        return Err(Error::InvalidArgument(format!(
            "K_H^-1 input must vanish at 0, got {}",
            fn_.values[0]
        )));
    }
    match h.regime() {
        HurstRegime::Brownian => derivative.cloned().ok_or(Error::MissingDerivative),
        HurstRegime::High => {
            let q = derivative.ok_or(Error::MissingDerivative)?;
            KhInverseHighOp::new(fn_.grid.clone(), h)?.apply(q)
        }
        HurstRegime::Low => match derivative {
            Some(q) => KhInverseLowOp::new(fn_.grid.clone(), h)?.apply(q),
            None => apply_kh_inverse_composite(h, fn_),
        },
    }
}

/// Composite two-derivative form for H < 1/2:
/// s^(1/2-H) D^(1/2-H) [ y^(H-1/2) D^(2H) h ] (s).
fn apply_kh_inverse_composite(h: Hurst, fn_: &GridFunction) -> Result<GridFunction> {
    let b = -h.alpha();
    let norm = crate::fbm::kernel_norm(h);
    let d1 = left_frac_derivative(fn_, 2.0 * h.value())?;
    let mut inner = vec![0.0; d1.values.len()];
    for (k, v) in inner.iter_mut().enumerate().skip(1) {
        *v = fn_.grid.node(k).powf(-b) * d1.values[k];
    }
    let inner = GridFunction::new(fn_.grid.clone(), inner)?;
    let d2 = left_frac_derivative(&inner, b)?;
    let mut out = vec![0.0; d2.values.len()];
    for (k, v) in out.iter_mut().enumerate().skip(1) {
        *v = norm * fn_.grid.node(k).powf(b) * d2.values[k];
    }
    GridFunction::new(fn_.grid.clone(), out)
}

/// Forward kernel operator (K_H f)(t) = Int_0^t K_H(t,s) f(s) ds by
/// singularity-aware cell quadrature. Test oracle for the inverse routes.
pub fn apply_kh_forward(h: Hurst, density: &GridFunction) -> Result<GridFunction> {
    let grid = &density.grid;
    let n = grid.intervals();
    let step = grid.spacing();
    let hv = h.value();
    if h.regime() == HurstRegime::Brownian {
        // plain cumulative trapezoid
        let mut out = vec![0.0; n + 1];
        for j in 1..=n {
            out[j] = out[j - 1] + 0.5 * step * (density.values[j - 1] + density.values[j]);
        }
        return GridFunction::new(grid.clone(), out);
    }
    let (gx, gw) = gauss_legendre_unit(GL_ORDER);
    let sing = -(hv - 0.5).abs();
    let mut out = vec![0.0; n + 1];
    for j in 1..=n {
        let tj = grid.node(j);
        let mut acc = 0.0;
        for i in 0..j {
            let lo = grid.node(i);
            let hi = grid.node(i + 1);
            let f = |s: f64| kernel(h, tj, s).unwrap() * density.interpolate(s);
            acc += if j == 1 {
                let mid = 0.5 * (lo + hi);
                gl_integrate_pow_lo(f, lo, mid, sing, &gx, &gw)
                    + gl_integrate_pow_hi(f, mid, hi, hv - 0.5, &gx, &gw)
            } else if i + 1 == j {
                gl_integrate_pow_hi(f, lo, hi, hv - 0.5, &gx, &gw)
            } else if i == 0 {
                gl_integrate_pow_lo(f, lo, hi, sing, &gx, &gw)
            } else {
                gl_integrate(f, lo, hi, &gx, &gw)
            };
        }
        out[j] = acc;
    }
    GridFunction::new(grid.clone(), out)
}

/// d/dt of the forward operator for H > 1/2 (where K(t,t) = 0):
/// (K_H f)'(t) = Int_0^t dK/dt (t,s) f(s) ds.
pub fn apply_kh_forward_derivative(h: Hurst, density: &GridFunction) -> Result<GridFunction> {
    if h.regime() != HurstRegime::High {
        return Err(Error::HurstRegime(
            "forward derivative is implemented for H > 1/2".into(),
        ));
    }
    let grid = &density.grid;
    let n = grid.intervals();
    let hv = h.value();
    let (gx, gw) = gauss_legendre_unit(GL_ORDER);
    let mut out = vec![0.0; n + 1];
    for j in 1..=n {
        let tj = grid.node(j);
        let mut acc = 0.0;
        for i in 0..j {
            let lo = grid.node(i);
            let hi = grid.node(i + 1);
            let f = |s: f64| kernel_dt(h, tj, s).unwrap() * density.interpolate(s);
            acc += if j == 1 {
                let mid = 0.5 * (lo + hi);
                gl_integrate_pow_lo(f, lo, mid, 0.5 - hv, &gx, &gw)
                    + gl_integrate_pow_hi(f, mid, hi, hv - 1.5, &gx, &gw)
            } else if i + 1 == j {
                gl_integrate_pow_hi(f, lo, hi, hv - 1.5, &gx, &gw)
            } else if i == 0 {
                gl_integrate_pow_lo(f, lo, hi, 0.5 - hv, &gx, &gw)
            } else {
                gl_integrate(f, lo, hi, &gx, &gw)
            };
        }
        out[j] = acc;
    }
    GridFunction::new(grid.clone(), out)
}

/// Integral of f*g over [0, t_upto] for node data whose product behaves
/// like s^left_exp near 0 and (t_upto - s)^right_exp near t_upto (both
/// exponents > -1).
///
/// The desingularized factor is taken piecewise-linear and integrated
/// against exact power moments; the endpoint node values are never read
/// (linear extrapolation in the desingularized variable).
pub fn pair_singular(
    f: &GridFunction,
    g: &GridFunction,
    upto: usize,
    left_exp: f64,
    right_exp: f64,
) -> f64 {
    let grid = &f.grid;
    let h = grid.spacing();
    assert!(upto >= 4, "pairing needs at least 4 cells");
    let mid = upto / 2;
    let mut total = 0.0;

    // left half: G(s) = f g s^(-left_exp), weight s^left_exp
    let gval = |k: usize| f.values[k] * g.values[k] * grid.node(k).powf(-left_exp);
    let g0 = 2.0 * gval(1) - gval(2);
    let ga = left_exp + 1.0;
    for k in 0..mid {
        let (v0, v1) = (if k == 0 { g0 } else { gval(k) }, gval(k + 1));
        let (lo, hi) = (grid.node(k), grid.node(k + 1));
        let i0 = (hi.powf(ga) - lo.powf(ga)) / ga;
        let i1 = (hi.powf(ga + 1.0) - lo.powf(ga + 1.0)) / (ga + 1.0);
        total += v0 * i0 + (v1 - v0) * (i1 - lo * i0) / h;
    }

    // right half: G(u) = f g u^(-right_exp), u = t_upto - s, weight u^right_exp
    let a = grid.node(upto);
    let hval = |k: usize| f.values[k] * g.values[k] * (a - grid.node(k)).powf(-right_exp);
    let hlast = 2.0 * hval(upto - 1) - hval(upto - 2);
    let gb = right_exp + 1.0;
    for k in mid..upto {
        let (v_lo_u, v_hi_u) = (
            if k + 1 == upto { hlast } else { hval(k + 1) }, // at u = a - t_{k+1}
            hval(k),                                         // at u = a - t_k
        );
        let (ulo, uhi) = (a - grid.node(k + 1), a - grid.node(k));
        let j0 = (uhi.powf(gb) - ulo.powf(gb)) / gb;
        let j1 = (uhi.powf(gb + 1.0) - ulo.powf(gb + 1.0)) / (gb + 1.0);
        total += v_lo_u * j0 + (v_hi_u - v_lo_u) * (j1 - ulo * j0) / h;
    }
    total
}
