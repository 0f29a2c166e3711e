//! Fractional Brownian motion: covariance, the square-integrable Volterra
//! kernel K_H linking fBm to an ordinary Wiener process, and path sampling.
//!
//! `B^H(t) = Int_0^t K_H(t,s) dW(s)`; the Volterra sampler discretizes this
//! representation with cell-averaged kernel weights (and keeps the Wiener
//! increments, which the Malliavin-weight estimators integrate against),
//! while the covariance-factor sampler works directly from a Cholesky root
//! of the covariance matrix.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, VecSeries};
use crate::special::{
    gamma, gauss_legendre_unit, gl_integrate, gl_integrate_pow_hi, gl_integrate_pow_lo,
    hyp2f1_nonpos,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HurstRegime {
    /// H < 1/2: rough paths, negatively correlated increments.
    Low,
    /// H = 1/2: ordinary Brownian motion (degenerate validation case).
    Brownian,
    /// H > 1/2: long memory, positively correlated increments.
    High,
}

/// Hurst parameter in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hurst(f64);

impl Hurst {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Hurst parameter must lie in (0, 1), got {h}"
            )));
        }
        Ok(Self(h))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// Signed offset H - 1/2.
    pub fn alpha(&self) -> f64 {
        self.0 - 0.5
    }

    pub fn regime(&self) -> HurstRegime {
        if self.0 < 0.5 {
            HurstRegime::Low
        } else if self.0 > 0.5 {
            HurstRegime::High
        } else {
            HurstRegime::Brownian
        }
    }
}

/// fBm covariance R_H(t,s) = (t^2H + s^2H - |t-s|^2H)/2.
pub fn covariance(h: Hurst, t: f64, s: f64) -> Result<f64> {
    if t < 0.0 || s < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "covariance needs nonnegative times, got ({t}, {s})"
        )));
    }
    let two_h = 2.0 * h.value();
    Ok(0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

fn check_kernel_args(t: f64, s: f64) -> Result<()> {
    if !(s > 0.0 && s < t) {
        return Err(Error::InvalidArgument(format!(
            "kernel needs 0 < s < t, got (t, s) = ({t}, {s})"
        )));
    }
    Ok(())
}

/// Normalization constant of the hypergeometric kernel form: the bare
/// expression reproduces the covariance only up to
/// V_H = Gamma(2-2H) cos(pi H) / (pi H (1-2H)), continuous at H = 1/2 with
/// value 1. Dividing the kernel by sqrt(V_H) makes
/// Int_0^(t^s) K(t,r) K(s,r) dr = R_H(t,s) exact for the standard
/// covariance R_H. The classical K_H^{-1} displays invert the unnormalized
/// kernel, so the inverse operators multiply by this same factor.
pub(crate) fn kernel_norm(h: Hurst) -> f64 {
    let x = 0.5 - h.value();
    // cos(pi H)/(1 - 2H) = sin(pi x)/(2x), removable at x = 0
    let ratio = if x.abs() < 1e-9 {
        0.5 * std::f64::consts::PI
    } else {
        (std::f64::consts::PI * x).sin() / (2.0 * x)
    };
    let vh = gamma(2.0 - 2.0 * h.value()) * ratio / (std::f64::consts::PI * h.value());
    vh.sqrt()
}

/// Volterra kernel K_H(t,s) for 0 < s < t.
///
/// Hypergeometric form: (t-s)^(H-1/2) 2F1(H-1/2, 1/2-H; H+1/2; 1-t/s)
/// divided by Gamma(H+1/2). The kernel diverges like s^(-|H-1/2|) as s -> 0
/// and like (t-s)^(H-1/2) on the diagonal when H < 1/2.
pub fn kernel(h: Hurst, t: f64, s: f64) -> Result<f64> {
    check_kernel_args(t, s)?;
    if h.regime() == HurstRegime::Brownian {
        return Ok(1.0);
    }
    let hv = h.value();
    let (a, b, c) = (hv - 0.5, 0.5 - hv, hv + 0.5);
    let z = 1.0 - t / s;
    Ok((t - s).powf(hv - 0.5) * hyp2f1_nonpos(a, b, c, z) / (gamma(hv + 0.5) * kernel_norm(h)))
}

/// Time derivative of the kernel, dK_H/dt, by term-wise differentiation of
/// the hypergeometric form:
///
/// dK/dt = [(H-1/2)(t-s)^(H-3/2) F(a,b;c;z)
///          - (t-s)^(H-1/2) (ab/c) F(a+1,b+1;c+1;z) / s] / Gamma(H+1/2)
pub fn kernel_dt(h: Hurst, t: f64, s: f64) -> Result<f64> {
    check_kernel_args(t, s)?;
    if h.regime() == HurstRegime::Brownian {
        return Ok(0.0);
    }
    let hv = h.value();
    let (a, b, c) = (hv - 0.5, 0.5 - hv, hv + 0.5);
    let z = 1.0 - t / s;
    let f = hyp2f1_nonpos(a, b, c, z);
    let fp = hyp2f1_nonpos(a + 1.0, b + 1.0, c + 1.0, z);
    let dt = (hv - 0.5) * (t - s).powf(hv - 1.5) * f
        - (t - s).powf(hv - 0.5) * (a * b / c) * fp / s;
    Ok(dt / (gamma(hv + 0.5) * kernel_norm(h)))
}

/// Discrete Hoelder seminorm: sup over node pairs of |f(t)-f(s)|/|t-s|^lambda.
pub fn holder_norm(f: &GridFunction, lambda0: f64) -> f64 {
    assert!(lambda0 > 0.0 && lambda0 < 1.0 + 1e-12);
    let nodes = f.grid.nodes();
    let mut sup: f64 = 0.0;
    for j in 1..nodes.len() {
        for i in 0..j {
            let r = (f.values[j] - f.values[i]).abs() / (nodes[j] - nodes[i]).powf(lambda0);
            sup = sup.max(r);
        }
    }
    sup
}

/// Hoelder seminorm of a vector-valued series (Euclidean increments).
pub fn holder_norm_series(x: &VecSeries, lambda0: f64) -> f64 {
    let nodes = x.grid.nodes();
    let mut sup: f64 = 0.0;
    for j in 1..nodes.len() {
        for i in 0..j {
            let d2: f64 = x
                .node(j)
                .iter()
                .zip(x.node(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sup = sup.max(d2.sqrt() / (nodes[j] - nodes[i]).powf(lambda0));
        }
    }
    sup
}

/// Wiener increments on a grid, reconstructible as a cumulative sum from 0.
#[derive(Debug, Clone)]
pub struct WienerPath {
    pub grid: Grid,
    pub dim: usize,
    /// Step-major: increments[k * dim + j] is component j of step k.
    increments: Vec<f64>,
    pub seed: u64,
}

impl WienerPath {
    pub fn sample(grid: Grid, dim: usize, seed: u64) -> Self {
        let n = grid.intervals();
        let sqrt_dt = grid.spacing().sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut increments = vec![0.0; n * dim];
        for v in increments.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * sqrt_dt;
        }
        Self {
            grid,
            dim,
            increments,
            seed,
        }
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increment_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn steps(&self) -> usize {
        self.grid.intervals()
    }
}

/// Which sampler produced an [`FbmPath`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Volterra,
    CovFactor,
}

/// Sampled fBm path: values at the grid nodes, starting at 0.
#[derive(Debug, Clone)]
pub struct FbmPath {
    pub values: VecSeries,
    pub provenance: Provenance,
    /// Present iff provenance is Volterra.
    pub wiener: Option<WienerPath>,
}

impl FbmPath {
    pub fn grid(&self) -> &Grid {
        &self.values.grid
    }

    pub fn dim(&self) -> usize {
        self.values.dim
    }

    /// Increment B(t_{k+1}) - B(t_k), component-wise into `out`.
    pub fn increment_into(&self, k: usize, out: &mut [f64]) {
        let a = self.values.node(k);
        let b = self.values.node(k + 1);
        for (o, (x, y)) in out.iter_mut().zip(b.iter().zip(a)) {
            *o = x - y;
        }
    }
}

/// Cell-averaged Volterra weights: B(t_j) = sum_{i<j} w[j][i] dW_i with
/// w[j][i] = (1/h) Int_{t_i}^{t_{i+1}} K_H(t_j, s) ds.
///
/// The diagonal cell integrates the (t_j - s)^(H-1/2) singularity exactly
/// against a linear factor; the first cell and the j = 1 cell absorb the
/// s^(-|H-1/2|) endpoint divergence by power substitution.
pub struct VolterraSampler {
    pub grid: Grid,
    pub hurst: Hurst,
    weights: Vec<Vec<f64>>,
}

impl VolterraSampler {
    pub fn new(grid: Grid, hurst: Hurst) -> Result<Self> {
        let n = grid.intervals();
        let h = grid.spacing();
        let hv = hurst.value();
        let (gl_x, gl_w) = gauss_legendre_unit(8);
        let mut weights = Vec::with_capacity(n + 1);
        weights.push(Vec::new()); // j = 0: B(0) = 0
        let brownian = hurst.regime() == HurstRegime::Brownian;
        let sing = -(hv - 0.5).abs(); // endpoint exponent of K at s -> 0

        for j in 1..=n {
            let tj = grid.node(j);
            let mut row = vec![0.0; j];
            if brownian {
                row.iter_mut().for_each(|w| *w = 1.0);
                weights.push(row);
                continue;
            }
            for (i, w) in row.iter_mut().enumerate() {
                let lo = grid.node(i);
                let hi = grid.node(i + 1);
                let integral = if j == 1 {
                    // single cell, both endpoints singular: split at midpoint
                    let mid = 0.5 * (lo + hi);
                    let f = |s: f64| kernel(hurst, tj, s).unwrap();
                    gl_integrate_pow_lo(f, lo, mid, sing, &gl_x, &gl_w)
                        + gl_integrate_pow_hi(f, mid, hi, hv - 0.5, &gl_x, &gl_w)
                } else if i + 1 == j {
                    // diagonal cell: product integration of the
                    // desingularized factor Phi = K (t_j - s)^(1/2 - H)
                    let gamma_w = hv + 0.5;
                    let phi_lo = kernel(hurst, tj, lo).unwrap() * (tj - lo).powf(0.5 - hv);
                    let phi_hi = 1.0 / (gamma(hv + 0.5) * kernel_norm(hurst)); // 2F1 at z = 0
                    h.powf(gamma_w)
                        * (phi_lo / (gamma_w + 1.0) + phi_hi / (gamma_w * (gamma_w + 1.0)))
                } else if i == 0 {
                    gl_integrate_pow_lo(
                        |s| kernel(hurst, tj, s).unwrap(),
                        lo,
                        hi,
                        sing,
                        &gl_x,
                        &gl_w,
                    )
                } else {
                    gl_integrate(|s| kernel(hurst, tj, s).unwrap(), lo, hi, &gl_x, &gl_w)
                };
                *w = integral / h;
            }
            weights.push(row);
        }
        Ok(Self {
            grid,
            hurst,
            weights,
        })
    }

    /// Drive the weights with the given Wiener increments.
    pub fn sample_from(&self, wiener: WienerPath) -> FbmPath {
        let dim = wiener.dim;
        let mut values = VecSeries::zeros(self.grid.clone(), dim);
        for (j, row) in self.weights.iter().enumerate().skip(1) {
            let mut acc = vec![0.0; dim];
            for (i, w) in row.iter().enumerate() {
                let dw = wiener.increment(i);
                for (a, x) in acc.iter_mut().zip(dw) {
                    *a += w * x;
                }
            }
            values.set_node(j, &acc);
        }
        FbmPath {
            values,
            provenance: Provenance::Volterra,
            wiener: Some(wiener),
        }
    }

    pub fn sample(&self, dim: usize, seed: u64) -> FbmPath {
        self.sample_from(WienerPath::sample(self.grid.clone(), dim, seed))
    }
}

/// Sampler from a Cholesky root of the node covariance matrix.
pub struct CovFactorSampler {
    pub grid: Grid,
    pub hurst: Hurst,
    /// Lower-triangular root over nodes 1..=n.
    root: Vec<Vec<f64>>,
}

impl CovFactorSampler {
    pub fn new(grid: Grid, hurst: Hurst) -> Result<Self> {
        let n = grid.intervals();
        let mut cov = vec![vec![0.0; n]; n];
        for j in 0..n {
            for k in 0..=j {
                let c = covariance(hurst, grid.node(j + 1), grid.node(k + 1))?;
                cov[j][k] = c;
                cov[k][j] = c;
            }
        }
        let root = match cholesky(&cov) {
            Ok(r) => r,
            Err(_) => {
                // one retry with diagonal jitter, then hard failure
                let jitter = 1e-12 * covariance(hurst, grid.end(), grid.end())?;
                for (j, row) in cov.iter_mut().enumerate() {
                    row[j] += jitter;
                }
                cholesky(&cov).map_err(|_| {
                    Error::FactorizationFailed(
                        "covariance not numerically positive definite even with jitter; \
                         use a coarser grid or the Volterra sampler"
                            .into(),
                    )
                })?
            }
        };
        Ok(Self { grid, hurst, root })
    }

    pub fn sample(&self, dim: usize, seed: u64) -> FbmPath {
        let n = self.grid.intervals();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut z = vec![0.0; n * dim];
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let mut values = VecSeries::zeros(self.grid.clone(), dim);
        for j in 0..n {
            let mut acc = vec![0.0; dim];
            for (i, lj) in self.root[j].iter().enumerate().take(j + 1) {
                for (a, d) in acc.iter_mut().enumerate() {
                    *d += lj * z[i * dim + a];
                }
            }
            values.set_node(j + 1, &acc);
        }
        FbmPath {
            values,
            provenance: Provenance::CovFactor,
            wiener: None,
        }
    }
}

/// One-shot fBm sample; builds the sampler for this call. Reuse
/// [`VolterraSampler`]/[`CovFactorSampler`] across paths in Monte Carlo.
pub fn sample_fbm(
    h: Hurst,
    grid: Grid,
    dim: usize,
    seed: u64,
    method: Provenance,
) -> Result<FbmPath> {
    Ok(match method {
        Provenance::Volterra => VolterraSampler::new(grid, h)?.sample(dim, seed),
        Provenance::CovFactor => CovFactorSampler::new(grid, h)?.sample(dim, seed),
    })
}

fn cholesky(m: &[Vec<f64>]) -> std::result::Result<Vec<Vec<f64>>, ()> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(());
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn covariance_closed_forms() {
        let h7 = Hurst::new(0.7).unwrap();
        let h5 = Hurst::new(0.5).unwrap();
        assert!((covariance(h7, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((covariance(h5, 0.3, 0.8).unwrap() - 0.3).abs() < 1e-15);
        assert!((covariance(h7, 0.5, 0.5).unwrap() - 0.5f64.powf(1.4)).abs() < 1e-15);
        assert!(covariance(h7, -0.1, 0.5).is_err());
    }

    #[test]
    fn brownian_kernel_is_one() {
        let h = Hurst::new(0.5).unwrap();
        for &(t, s) in &[(1.0, 0.2), (0.9, 0.899), (2.0, 0.001)] {
            assert_eq!(kernel(h, t, s).unwrap(), 1.0);
            assert_eq!(kernel_dt(h, t, s).unwrap(), 0.0);
        }
        assert!(kernel(h, 0.5, 0.5).is_err());
        assert!(kernel(h, 0.5, 0.0).is_err());
    }

    #[test]
    fn kernel_diagonal_blowup_exponent_low_hurst() {
        // K(1, s) ~ (1-s)^(H-1/2) as s -> 1: log-log slope ~ -0.2 for H=0.3
        let h = Hurst::new(0.3).unwrap();
        let mut pts = Vec::new();
        for k in 3..10 {
            let eps = 2.0_f64.powi(-k);
            let v = kernel(h, 1.0, 1.0 - eps).unwrap();
            assert!(v > 0.0);
            pts.push((eps.ln(), v.ln()));
        }
        let slope = (pts.last().unwrap().1 - pts[0].1) / (pts.last().unwrap().0 - pts[0].0);
        assert!((slope - (-0.2)).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn kernel_dt_matches_central_differences() {
        let step = 1e-5;
        for &hv in &[0.3, 0.7] {
            let h = Hurst::new(hv).unwrap();
            for &(t, s) in &[(1.0, 0.4), (0.8, 0.1), (1.5, 1.2)] {
                let fd = (kernel(h, t + step, s).unwrap() - kernel(h, t - step, s).unwrap())
                    / (2.0 * step);
                let an = kernel_dt(h, t, s).unwrap();
                assert!(
                    (an - fd).abs() <= 1e-5 * an.abs().max(1e-12),
                    "H={hv} (t,s)=({t},{s}): {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn kernel_dt_signs() {
        let h7 = Hurst::new(0.7).unwrap();
        let h3 = Hurst::new(0.3).unwrap();
        for &s in &[0.1, 0.5, 0.9] {
            assert!(kernel_dt(h7, 1.0, s).unwrap() > 0.0);
        }
        // for H < 1/2 the kernel decreases in t near the diagonal
        for &s in &[0.9, 0.95, 0.99] {
            assert!(kernel_dt(h3, 1.0, s).unwrap() < 0.0);
        }
    }

    #[test]
    fn volterra_at_half_is_cumulative_sum() {
        let g = grid(64);
        let sampler = VolterraSampler::new(g.clone(), Hurst::new(0.5).unwrap()).unwrap();
        let path = sampler.sample(1, 99);
        let wiener = path.wiener.as_ref().unwrap();
        let mut acc = 0.0;
        for k in 0..64 {
            acc += wiener.increment(k)[0];
            assert!((path.values.node(k + 1)[0] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn volterra_weights_reproduce_variance() {
        // sum of squared row weights times dt approximates R_H(t_j, t_j)
        for &hv in &[0.3, 0.7] {
            let g = grid(64);
            let sampler = VolterraSampler::new(g.clone(), Hurst::new(hv).unwrap()).unwrap();
            let dt = g.spacing();
            for &j in &[16usize, 32, 64] {
                let var: f64 = sampler.weights[j].iter().map(|w| w * w * dt).sum();
                let exact = covariance(Hurst::new(hv).unwrap(), g.node(j), g.node(j)).unwrap();
                assert!(
                    (var - exact).abs() < 0.02 * exact,
                    "H={hv} j={j}: {var} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn samplers_agree_on_second_moments() {
        let g = grid(32);
        let h = Hurst::new(0.7).unwrap();
        let vol = VolterraSampler::new(g.clone(), h).unwrap();
        let cf = CovFactorSampler::new(g.clone(), h).unwrap();
        let n_paths = 4000;
        let (mut m_v, mut m_c) = (0.0, 0.0);
        for i in 0..n_paths {
            let pv = vol.sample(1, 1000 + i);
            let pc = cf.sample(1, 50_000 + i);
            m_v += pv.values.node(32)[0].powi(2);
            m_c += pc.values.node(32)[0].powi(2);
        }
        m_v /= n_paths as f64;
        m_c /= n_paths as f64;
        // E B(1)^2 = 1; each estimator has SE ~ sqrt(2/N) ~ 0.022
        assert!((m_v - 1.0).abs() < 0.12, "volterra variance {m_v}");
        assert!((m_c - 1.0).abs() < 0.12, "covfactor variance {m_c}");
    }

    #[test]
    fn increment_scaling_law() {
        // E|B(t) - B(s)|^2 = |t-s|^(2H) within MC error
        let g = grid(32);
        let h = Hurst::new(0.3).unwrap();
        let vol = VolterraSampler::new(g.clone(), h).unwrap();
        let (j, k) = (8, 24); // t = 0.25, s = 0.75
        let mut m = 0.0;
        let n_paths = 4000;
        for i in 0..n_paths {
            let p = vol.sample(1, 777 + i);
            m += (p.values.node(k)[0] - p.values.node(j)[0]).powi(2);
        }
        m /= n_paths as f64;
        let exact = 0.5f64.powf(0.6);
        assert!((m - exact).abs() < 5.0 * exact * (2.0 / n_paths as f64).sqrt() + 0.01 * exact);
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let g = grid(16);
        let h = Hurst::new(0.7).unwrap();
        let vol = VolterraSampler::new(g.clone(), h).unwrap();
        let a = vol.sample(2, 42);
        let b = vol.sample(2, 42);
        assert_eq!(a.values, b.values);
        let c = vol.sample(2, 43);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn holder_norm_closed_cases() {
        let g = grid(32);
        let lin = GridFunction::from_fn(g.clone(), |t| t).unwrap();
        assert!((holder_norm(&lin, 1.0) - 1.0).abs() < 1e-12);
        let con = GridFunction::from_fn(g, |_| 3.3).unwrap();
        assert_eq!(holder_norm(&con, 0.5), 0.0);
    }

    #[test]
    fn holder_norm_stable_under_refinement() {
        let h = Hurst::new(0.7).unwrap();
        let lambda = 0.65;
        let mut medians = Vec::new();
        for &n in &[64usize, 128] {
            let g = grid(n);
            let vol = VolterraSampler::new(g.clone(), h).unwrap();
            let mut norms: Vec<f64> = (0..48)
                .map(|i| {
                    let p = vol.sample(1, 9000 + i);
                    holder_norm(&p.values.component(0), lambda)
                })
                .collect();
            norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(norms[24]);
        }
        let ratio = medians[1] / medians[0];
        assert!(
            (0.5..=2.0).contains(&ratio),
            "medians {medians:?} ratio {ratio}"
        );
    }
}
