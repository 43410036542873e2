//! Scalar fields sampled at cell centers, zero-extended outside the domain,
//! with their discrete norms.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, Point, MAX_DIM};

#[derive(Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl std::fmt::Debug for GridFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridFunction")
            .field("mode", &self.grid.mode())
            .field("values", &self.values)
            .finish()
    }
}

impl PartialEq for GridFunction {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) && self.values == other.values
    }
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        GridFunction { grid, values: vec![0.0; n] }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&Point) -> f64) -> Self {
        let values = grid.cells().iter().map(|c| f(&c.center)).collect();
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        GridFunction::new(self.grid.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        GridFunction { grid: self.grid.clone(), values }
    }

    pub fn sub(&self, other: &GridFunction) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Forward-difference gradient at `cell`, reading zero past the
    /// boundary. Norms and energies average this with the other one-sided
    /// stencils, see [`Stencil`].
    pub fn gradient_at(&self, cell: usize) -> [f64; MAX_DIM] {
        gradient_of(&self.grid, &self.values, cell)
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        norm(self, kind)
    }
}

pub(crate) fn gradient_of(grid: &Grid, values: &[f64], cell: usize) -> [f64; MAX_DIM] {
    let u = values[cell];
    let nb = grid.forward(cell);
    let st = grid.steps(cell);
    let mut g = [0.0; MAX_DIM];
    for k in 0..grid.axes() {
        let next = nb[k].map_or(0.0, |j| values[j]);
        g[k] = (next - u) / st[k];
    }
    g
}

/// Forward and backward differences at one cell. Choosing forward or
/// backward independently per axis gives `2^axes` one-sided gradients; the
/// discrete `|Du|` terms average over all of them, which makes every norm
/// and energy invariant under the grid's reflections.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub forward: [f64; MAX_DIM],
    pub backward: [f64; MAX_DIM],
    pub axes: usize,
}

impl Stencil {
    pub fn at(grid: &Grid, values: &[f64], cell: usize) -> Self {
        let u = values[cell];
        let fw = grid.forward(cell);
        let bw = grid.backward(cell);
        let st = grid.steps(cell);
        let mut forward = [0.0; MAX_DIM];
        let mut backward = [0.0; MAX_DIM];
        for k in 0..grid.axes() {
            forward[k] = (fw[k].map_or(0.0, |j| values[j]) - u) / st[k];
            backward[k] = (u - bw[k].map_or(0.0, |j| values[j])) / st[k];
        }
        Stencil { forward, backward, axes: grid.axes() }
    }

    pub fn count(&self) -> usize {
        1 << self.axes
    }

    /// Gradient for combination `c`: bit `k` set means backward on axis `k`.
    pub fn combo(&self, c: usize) -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        for k in 0..self.axes {
            g[k] = if c >> k & 1 == 1 { self.backward[k] } else { self.forward[k] };
        }
        g
    }

    /// Mean of `|ξ_c|^p` over the combinations.
    pub fn mean_pow(&self, p: f64) -> f64 {
        let k = self.count();
        (0..k).map(|c| euclid(&self.combo(c)).powf(p)).sum::<f64>() / k as f64
    }
}

pub(crate) fn euclid(g: &[f64; MAX_DIM]) -> f64 {
    (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "exponent")]
pub enum NormKind {
    Lq(f64),
    Linf,
    /// `∫ |Du|`, with `|Du|` averaged over the one-sided stencils
    W11,
    /// `(∫ |Du|^p)^{1/p}`, same averaging
    W1p(f64),
}

/// Cell-measure weighted discrete norms.
pub fn norm(u: &GridFunction, kind: NormKind) -> f64 {
    let grid = u.grid();
    let cells = grid.cells();
    match kind {
        NormKind::Linf => u.values.iter().fold(0.0, |m, v| m.max(v.abs())),
        NormKind::Lq(q) => {
            assert!(q >= 1.0, "L^q norm needs q >= 1");
            let s: f64 = u.values.iter().zip(cells).map(|(v, c)| v.abs().powf(q) * c.measure).sum();
            s.powf(1.0 / q)
        }
        NormKind::W11 => (0..u.len()).map(|i| Stencil::at(grid, &u.values, i).mean_pow(1.0) * cells[i].measure).sum(),
        NormKind::W1p(p) => {
            assert!(p >= 1.0, "W^{{1,p}} seminorm needs p >= 1");
            let s: f64 = (0..u.len()).map(|i| Stencil::at(grid, &u.values, i).mean_pow(p) * cells[i].measure).sum();
            s.powf(1.0 / p)
        }
    }
}

/// `‖u - v‖_{W^{1,1}_0}` without allocating the difference twice.
pub fn w11_distance(u: &GridFunction, v: &GridFunction) -> f64 {
    norm(&u.sub(v), NormKind::W11)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;

    fn disk(n: usize) -> Arc<Grid> {
        Arc::new(Grid::cartesian(DomainSpec::ball(2, 1.0).unwrap(), n).unwrap())
    }

    #[test]
    fn zero_has_zero_norms() {
        let u = GridFunction::zeros(disk(16));
        for k in [NormKind::Lq(1.0), NormKind::Lq(2.0), NormKind::Linf, NormKind::W11, NormKind::W1p(1.5)] {
            assert_eq!(u.norm(k), 0.0);
        }
    }

    #[test]
    fn constant_linf() {
        let u = GridFunction::from_fn(disk(16), |_| -2.5);
        assert_eq!(u.norm(NormKind::Linf), 2.5);
    }

    #[test]
    fn l1_matches_direct_sum() {
        let g = disk(32);
        let u = GridFunction::from_fn(g.clone(), |x| if x[0] > 0.2 && x[1] < 0.1 { 1.0 } else { 0.0 });
        let mut direct = 0.0;
        for (i, c) in g.cells().iter().enumerate() {
            direct += u.values()[i].abs() * c.measure;
        }
        assert!((u.norm(NormKind::Lq(1.0)) - direct).abs() < 1e-14);
    }

    #[test]
    fn gradient_of_linear_field_is_exact_in_interior() {
        let g = disk(32);
        let u = GridFunction::from_fn(g.clone(), |x| 2.0 * x[0] - x[1]);
        for i in 0..g.len() {
            let nb = g.forward(i);
            if nb[0].is_some() && nb[1].is_some() {
                let d = u.gradient_at(i);
                assert!((d[0] - 2.0).abs() < 1e-9 && (d[1] + 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn length_checked() {
        assert!(GridFunction::new(disk(8), vec![0.0; 3]).is_err());
    }
}
