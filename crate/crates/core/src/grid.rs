//! Uniform time grids and functions sampled on them.
//!
//! Every operator in this crate works on a uniform discretization of an
//! interval `[a, b]`. `Grid` holds the discretization, `GridFunction` a
//! scalar sample per node and `VecSeries` a d-vector sample per node.

use crate::error::{Error, Result};

/// Uniform partition of `[a, b]` into `n` intervals (`n + 1` nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    a: f64,
    b: f64,
    n: usize,
}

impl Grid {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::InvalidGrid(format!("need a < b, got [{a}, {b}]")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need n >= 2 intervals, got {n}")));
        }
        Ok(Self { a, b, n })
    }

    /// Grid on `[0, horizon]`.
    pub fn on_horizon(horizon: f64, n: usize) -> Result<Self> {
        Self::new(0.0, horizon, n)
    }

    pub fn start(&self) -> f64 {
        self.a
    }

    pub fn end(&self) -> f64 {
        self.b
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.n
    }

    /// Number of nodes (`intervals + 1`).
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / self.n as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n);
        self.a + (self.b - self.a) * k as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.node(k)).collect()
    }

    /// Index of the node equal to `t`, if `t` is node-aligned.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let h = self.spacing();
        let k = ((t - self.a) / h).round();
        if k < 0.0 || k > self.n as f64 {
            return None;
        }
        let k = k as usize;
        if (self.node(k) - t).abs() <= 1e-9 * (1.0 + t.abs()) {
            Some(k)
        } else {
            None
        }
    }
}

/// Scalar-valued function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} nodes but {} values were supplied",
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: k,
                context: "grid function values".into(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn zero(grid: Grid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    /// Piecewise-linear interpolation at `t` (clamped to the grid range).
    pub fn interpolate(&self, t: f64) -> f64 {
        let h = self.grid.spacing();
        let x = (t - self.grid.start()) / h;
        if x <= 0.0 {
            return self.values[0];
        }
        let n = self.grid.intervals();
        if x >= n as f64 {
            return self.values[n];
        }
        let k = x.floor() as usize;
        let w = x - k as f64;
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Discrete L2 norm: sqrt of the trapezoid integral of the square.
    pub fn l2_norm(&self) -> f64 {
        let h = self.grid.spacing();
        let n = self.grid.intervals();
        let mut s = 0.5 * (self.values[0].powi(2) + self.values[n].powi(2));
        for v in &self.values[1..n] {
            s += v * v;
        }
        (s * h).sqrt()
    }
}

/// d-vector-valued series on a grid, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VecSeries {
    pub grid: Grid,
    pub dim: usize,
    values: Vec<f64>,
}

impl VecSeries {
    pub fn zeros(grid: Grid, dim: usize) -> Self {
        let values = vec![0.0; grid.len() * dim];
        Self { grid, dim, values }
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn set_node(&mut self, k: usize, v: &[f64]) {
        self.node_mut(k).copy_from_slice(v);
    }

    /// Extract one coordinate as a scalar grid function.
    pub fn component(&self, j: usize) -> GridFunction {
        let values = (0..self.grid.len())
            .map(|k| self.values[k * self.dim + j])
            .collect();
        GridFunction {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn set_component(&mut self, j: usize, f: &GridFunction) {
        for k in 0..self.grid.len() {
            self.values[k * self.dim + j] = f.values[k];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_degenerate_intervals() {
        assert!(Grid::new(1.0, 1.0, 4).is_err());
        assert!(Grid::new(0.0, 1.0, 1).is_err());
        assert!(Grid::new(0.0, f64::NAN, 4).is_err());
    }

    #[test]
    fn nodes_are_uniform_and_increasing() {
        let g = Grid::new(0.0, 1.0, 4).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes.len(), 5);
        for w in nodes.windows(2) {
            assert!((w[1] - w[0] - 0.25).abs() < 1e-15);
        }
        assert_eq!(g.index_of(0.5), Some(2));
        assert_eq!(g.index_of(0.3), None);
    }

    #[test]
    fn grid_function_checks_finiteness_and_length() {
        let g = Grid::new(0.0, 1.0, 2).unwrap();
        assert!(GridFunction::new(g.clone(), vec![0.0, 1.0]).is_err());
        assert!(GridFunction::new(g.clone(), vec![0.0, f64::INFINITY, 1.0]).is_err());
        let f = GridFunction::from_fn(g, |t| t * t).unwrap();
        assert!((f.interpolate(0.25) - 0.125).abs() < 1e-15);
    }
}
