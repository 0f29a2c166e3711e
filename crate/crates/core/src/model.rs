//! Model specifications: drift and diffusion callables with analytic
//! gradients, their functional (delay) counterparts, and the named presets
//! the CLI exposes.

use crate::error::{Error, Result};
use crate::fbm::{Hurst, HurstRegime};
use crate::grid::VecSeries;
use std::sync::Arc;

/// Drift b: R^d -> R^d with caller-supplied analytic gradient.
///
/// Implementations must be stateless: they are invoked concurrently from
/// the Monte Carlo worker pool.
pub trait Drift: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// Jacobian, row-major: out[i*d + j] = d b_i / d x_j.
    fn grad(&self, x: &[f64], out: &mut [f64]);
}

/// Deterministic diffusion schedule sigma(t) with supplied inverse.
pub trait Sigma: Send + Sync {
    fn dim(&self) -> usize;
    /// sigma(t), row-major d x d.
    fn eval(&self, t: f64, out: &mut [f64]);
    /// sigma(t)^-1, row-major d x d.
    fn inverse(&self, t: f64, out: &mut [f64]);
    /// Hoelder exponent of t -> sigma^-1(t).
    fn holder_exponent(&self) -> f64;
    fn is_identity(&self) -> bool {
        false
    }
}

/// View of a path segment [t - r0, t], node-aligned.
///
/// `back` counts nodes into the past: offset(0) is the current value,
/// offset(m) the value at t - r0.
pub struct Segment<'a> {
    path: &'a VecSeries,
    end_node: usize,
    pub nodes_back: usize,
}

impl<'a> Segment<'a> {
    pub fn new(path: &'a VecSeries, end_node: usize, nodes_back: usize) -> Self {
        debug_assert!(end_node >= nodes_back);
        Self {
            path,
            end_node,
            nodes_back,
        }
    }

    pub fn dim(&self) -> usize {
        self.path.dim
    }

    pub fn offset(&self, back: usize) -> &[f64] {
        debug_assert!(back <= self.nodes_back);
        self.path.node(self.end_node - back)
    }

    /// Linear interpolation at relative time s in [-r0, 0]. Off-node
    /// history reads are supported but discouraged; drifts should stay
    /// node-aligned.
    pub fn value_at(&self, s_rel: f64, out: &mut [f64]) {
        let h = self.path.grid.spacing();
        let x = -s_rel / h;
        let k = (x.floor() as usize).min(self.nodes_back);
        let w = (x - k as f64).clamp(0.0, 1.0);
        let lo = self.offset(k);
        if w == 0.0 || k == self.nodes_back {
            out.copy_from_slice(lo);
            return;
        }
        let hi = self.offset(k + 1);
        for (o, (a, b)) in out.iter_mut().zip(lo.iter().zip(hi)) {
            *o = a * (1.0 - w) + b * w;
        }
    }
}

/// Drift on path segments, Frechet-differentiable with a supplied
/// directional derivative (grad_psi b)(phi).
pub trait FunctionalDrift: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, segment: &Segment<'_>, out: &mut [f64]);
    fn directional(&self, phi: &Segment<'_>, psi: &Segment<'_>, out: &mut [f64]);
}

/// SDE model dX = b(X) dt + sigma(t) dB^H, X(0) = x0.
#[derive(Clone)]
pub struct ModelSpec {
    pub drift: Arc<dyn Drift>,
    pub sigma: Arc<dyn Sigma>,
    /// Bound on |grad b| (hypothesis constant).
    pub lipschitz_k: f64,
    /// Hoelder order of grad b (used by weight diagnostics only).
    pub grad_holder_beta: f64,
    pub hurst: Hurst,
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Optional override of the path-norm Hoelder exponent; the default
    /// rule of [`ModelSpec::lambda0`] applies when absent.
    pub lambda0_override: Option<f64>,
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Spot-checks the hypothesis constants: |grad b| <= K on a probe box
    /// around x0, sigma sigma^-1 = Id at a few times, and the Hoelder
    /// exponent constraint alpha0 > H - 1/2 for H > 1/2.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.drift.dim() != d || self.sigma.dim() != d {
            return Err(Error::DimensionMismatch(
                "drift/sigma dimension differs from x0".into(),
            ));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidModel("horizon must be positive".into()));
        }
        let mut g = vec![0.0; d * d];
        let mut probe = vec![0.0; d];
        for trial in 0..32 {
            for (i, p) in probe.iter_mut().enumerate() {
                // deterministic probe cloud around x0
                let u = ((trial * d + i) as f64 * 0.618_033_988_749_895).fract();
                *p = self.x0[i] + 6.0 * (u - 0.5);
            }
            self.drift.grad(&probe, &mut g);
            let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > self.lipschitz_k * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "|grad b| = {norm} exceeds the declared bound {}",
                    self.lipschitz_k
                )));
            }
        }
        let mut s = vec![0.0; d * d];
        let mut si = vec![0.0; d * d];
        for k in 0..=16 {
            let t = self.horizon * k as f64 / 16.0;
            self.sigma.eval(t, &mut s);
            self.sigma.inverse(t, &mut si);
            for i in 0..d {
                for j in 0..d {
                    let mut prod = 0.0;
                    for l in 0..d {
                        prod += s[i * d + l] * si[l * d + j];
                    }
                    let want = if i == j { 1.0 } else { 0.0 };
                    if (prod - want).abs() > 1e-10 {
                        return Err(Error::InvalidModel(format!(
                            "sigma sigma^-1 != Id at t = {t} (entry {i},{j}: {prod})"
                        )));
                    }
                }
            }
        }
        if self.hurst.regime() == HurstRegime::High
            && self.sigma.holder_exponent() <= self.hurst.alpha()
        {
            return Err(Error::InvalidModel(format!(
                "sigma^-1 Hoelder exponent {} must exceed H - 1/2 = {}",
                self.sigma.holder_exponent(),
                self.hurst.alpha()
            )));
        }
        Ok(())
    }

    /// Default Hoelder exponent for path-norm diagnostics:
    /// max(1 - alpha0, (H - 1/2)/beta0) + 0.01, clamped into (0, H - 0.01].
    pub fn lambda0(&self) -> f64 {
        if let Some(l) = self.lambda0_override {
            return l;
        }
        let h = self.hurst.value();
        let from_sigma = 1.0 - self.sigma.holder_exponent();
        let from_beta = if h > 0.5 {
            (h - 0.5) / self.grad_holder_beta
        } else {
            0.0
        };
        (from_sigma.max(from_beta) + 0.01).clamp(0.01, (h - 0.01).max(0.01))
    }
}

/// SFDE model dX = b(X_t) dt + sigma(t) dB^H on [0, T], X_0 = xi on [-r0, 0].
#[derive(Clone)]
pub struct FunctionalModelSpec {
    pub drift: Arc<dyn FunctionalDrift>,
    pub sigma: Arc<dyn Sigma>,
    pub lipschitz_k: f64,
    pub hurst: Hurst,
    pub horizon: f64,
    pub delay: f64,
    /// Initial segment on [-r0, 0]; its grid spacing fixes the solver step.
    pub initial_segment: VecSeries,
}

impl FunctionalModelSpec {
    pub fn dim(&self) -> usize {
        self.initial_segment.dim
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay > 0.0 && self.horizon > self.delay) {
            return Err(Error::InvalidModel(
                "need 0 < r0 < T for the delay model".into(),
            ));
        }
        let seg_grid = &self.initial_segment.grid;
        if (seg_grid.start() + self.delay).abs() > 1e-12 || seg_grid.end().abs() > 1e-12 {
            return Err(Error::InvalidModel(
                "initial segment must live on [-r0, 0]".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

/// b == 0.
pub struct ZeroDrift {
    pub dim: usize,
}

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn grad(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// b(x) = A x (LINEAR(kappa) is A = -kappa Id).
pub struct LinearDrift {
    pub matrix: Vec<f64>,
    pub dim: usize,
}

impl LinearDrift {
    pub fn scalar(dim: usize, kappa: f64) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = -kappa;
        }
        Self { matrix, dim }
    }
}

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            out[i] = (0..d).map(|j| self.matrix[i * d + j] * x[j]).sum();
        }
    }
    fn grad(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matrix);
    }
}

/// b_i(x) = amp * tanh(slope * x_i): bounded drift with bounded, Lipschitz
/// gradient, the (H1)+(H2) smooth preset.
pub struct TanhDrift {
    pub amp: f64,
    pub slope: f64,
    pub dim: usize,
}

impl Drift for TanhDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = self.amp * (self.slope * xi).tanh();
        }
    }
    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            let c = (self.slope * xi).cosh();
            out[i * d + i] = self.amp * self.slope / (c * c);
        }
    }
}

/// Delay drift b(phi) = -kappa phi(-r0).
pub struct DelayLinearDrift {
    pub kappa: f64,
    pub dim: usize,
}

impl FunctionalDrift for DelayLinearDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, segment: &Segment<'_>, out: &mut [f64]) {
        let past = segment.offset(segment.nodes_back);
        for (o, &p) in out.iter_mut().zip(past) {
            *o = -self.kappa * p;
        }
    }
    fn directional(&self, _phi: &Segment<'_>, psi: &Segment<'_>, out: &mut [f64]) {
        let past = psi.offset(psi.nodes_back);
        for (o, &p) in out.iter_mut().zip(past) {
            *o = -self.kappa * p;
        }
    }
}

/// sigma = Id.
pub struct IdentitySigma {
    pub dim: usize,
}

impl Sigma for IdentitySigma {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: f64, out: &mut [f64]) {
        identity(out, self.dim);
    }
    fn inverse(&self, _t: f64, out: &mut [f64]) {
        identity(out, self.dim);
    }
    fn holder_exponent(&self) -> f64 {
        1.0
    }
    fn is_identity(&self) -> bool {
        true
    }
}

/// Diagonal schedule sigma_ii(t) = 1 + eps t^alpha0 with analytic inverse;
/// sigma^-1 is Hoelder of order alpha0.
pub struct DiagHolderSigma {
    pub dim: usize,
    pub eps: f64,
    pub alpha0: f64,
}

impl Sigma for DiagHolderSigma {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        let v = 1.0 + self.eps * t.powf(self.alpha0);
        for i in 0..self.dim {
            out[i * self.dim + i] = v;
        }
    }
    fn inverse(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        let v = 1.0 / (1.0 + self.eps * t.powf(self.alpha0));
        for i in 0..self.dim {
            out[i * self.dim + i] = v;
        }
    }
    fn holder_exponent(&self) -> f64 {
        self.alpha0
    }
}

fn identity(out: &mut [f64], d: usize) {
    out.fill(0.0);
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn linear_model(kappa: f64) -> ModelSpec {
        ModelSpec {
            drift: Arc::new(LinearDrift::scalar(1, kappa)),
            sigma: Arc::new(IdentitySigma { dim: 1 }),
            lipschitz_k: kappa.abs(),
            grad_holder_beta: 1.0,
            hurst: Hurst::new(0.7).unwrap(),
            horizon: 1.0,
            x0: vec![0.5],
            lambda0_override: None,
        }
    }

    #[test]
    fn validate_accepts_consistent_model() {
        assert!(linear_model(1.0).validate().is_ok());
    }

    #[test]
    fn validate_rejects_understated_lipschitz_bound() {
        let mut m = linear_model(1.0);
        m.lipschitz_k = 0.5;
        assert!(m.validate().is_err());
    }

    #[test]
    fn validate_rejects_bad_holder_exponent() {
        let mut m = linear_model(1.0);
        m.sigma = Arc::new(DiagHolderSigma {
            dim: 1,
            eps: 0.5,
            alpha0: 0.1,
        });
        // H = 0.7 needs alpha0 > 0.2
        assert!(m.validate().is_err());
    }

    #[test]
    fn lambda0_default_obeys_constraints() {
        let m = linear_model(1.0);
        let l = m.lambda0();
        // 1 - alpha0 < lambda0 < H and lambda0 beta0 > H - 1/2
        assert!(l > 1.0 - m.sigma.holder_exponent());
        assert!(l < m.hurst.value());
        assert!(l * m.grad_holder_beta > m.hurst.alpha());
    }

    #[test]
    fn tanh_gradient_is_consistent() {
        let d = TanhDrift {
            amp: 0.8,
            slope: 1.3,
            dim: 2,
        };
        let x = [0.4, -1.1];
        let mut g = [0.0; 4];
        d.grad(&x, &mut g);
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        let eps = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            xp[j] += eps;
            d.eval(&xp, &mut hi);
            xp[j] -= 2.0 * eps;
            d.eval(&xp, &mut lo);
            for i in 0..2 {
                let fd = (hi[i] - lo[i]) / (2.0 * eps);
                assert!((g[i * 2 + j] - fd).abs() < 1e-8, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn segment_reads_node_aligned_history() {
        let grid = Grid::new(-0.5, 1.0, 6).unwrap();
        let mut path = VecSeries::zeros(grid, 1);
        for k in 0..=6 {
            path.set_node(k, &[k as f64]);
        }
        // segment ending at node 4 (t = 0.5), reaching 2 nodes back
        let seg = Segment::new(&path, 4, 2);
        assert_eq!(seg.offset(0), &[4.0]);
        assert_eq!(seg.offset(2), &[2.0]);
        let mut v = [0.0];
        seg.value_at(-0.125, &mut v);
        assert!((v[0] - 3.5).abs() < 1e-12);
    }
}
