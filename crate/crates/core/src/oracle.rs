//! Brute-force reference implementations for small instances. Nothing here
//! calls into the rearrangement or Ekeland code it is compared against:
//! mirror pairs are found by searching all cell pairs, symmetrization is
//! rebuilt level by level, and the Ekeland condition is checked over every
//! lattice point with a separately written `W^{1,1}` distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridFunction;
use crate::functional::DiscreteFunctional;
use crate::geometry::{Grid, GridMode, HalfSpace, Shape};

/// Relative tolerance for matching cell centers and radii.
const MATCH_TOL: f64 = 1e-9;

/// A finite lattice: every cell takes one of `levels`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub cell_count: usize,
    pub levels: Vec<f64>,
}

impl LatticeSpec {
    pub const MAX_CELLS: usize = 6;
    pub const MAX_LEVELS: usize = 6;
    pub const MAX_STATES: u64 = 50_000;

    pub fn new(cell_count: usize, levels: Vec<f64>) -> Result<Self> {
        let spec = LatticeSpec { cell_count, levels };
        spec.validate()?;
        Ok(spec)
    }

    /// `count` evenly spaced levels `0, step, 2·step, …`.
    pub fn uniform(cell_count: usize, count: usize, step: f64) -> Result<Self> {
        Self::new(cell_count, (0..count).map(|i| i as f64 * step).collect())
    }

    pub fn states(&self) -> u64 {
        (self.levels.len() as u64).saturating_pow(self.cell_count as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_count == 0 || self.cell_count > Self::MAX_CELLS {
            return Err(Error::Precondition(format!("lattice needs 1..={} cells, got {}", Self::MAX_CELLS, self.cell_count)));
        }
        if self.levels.is_empty() || self.levels.len() > Self::MAX_LEVELS {
            return Err(Error::Precondition(format!("lattice needs 1..={} levels, got {}", Self::MAX_LEVELS, self.levels.len())));
        }
        if self.levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Precondition("lattice levels must be finite and nonnegative".into()));
        }
        if self.states() > Self::MAX_STATES {
            return Err(Error::Precondition(format!("{} states exceed {}", self.states(), Self::MAX_STATES)));
        }
        Ok(())
    }

    /// Point number `idx` in lexicographic order (cell 0 most significant).
    pub fn point(&self, mut idx: u64) -> Vec<f64> {
        let k = self.levels.len() as u64;
        let mut vals = vec![0.0; self.cell_count];
        for slot in vals.iter_mut().rev() {
            *slot = self.levels[(idx % k) as usize];
            idx /= k;
        }
        vals
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.cell_count && values.iter().all(|v| self.levels.contains(v))
    }
}

fn close(a: &[f64; 3], b: &[f64; 3], scale: f64) -> bool {
    (0..3).all(|k| (a[k] - b[k]).abs() <= MATCH_TOL * scale)
}

/// Polarization by explicit pair search: for each cell, scan all cells for
/// the one sitting at its mirror image; keep the larger of the two values
/// on the `H` side and the smaller on the other. A cell whose mirror lies
/// outside the domain is compared with zero.
pub fn oracle_polarize(u: &GridFunction, h: &HalfSpace) -> Result<GridFunction> {
    let grid = u.grid();
    let cells = grid.cells();
    let scale = grid.domain().outer_radius;
    let abs: Vec<f64> = u.values().iter().map(|v| v.abs()).collect();
    let e = h.normal;
    let mut out = Vec::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        let x = c.center;
        let side = x[0] * e[0] + x[1] * e[1] + x[2] * e[2] - h.offset;
        let m = [x[0] - 2.0 * side * e[0], x[1] - 2.0 * side * e[1], x[2] - 2.0 * side * e[2]];
        let partner = cells.iter().position(|d| close(&d.center, &m, scale));
        let mirror = match partner {
            Some(j) => abs[j],
            None => {
                let r = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                let dom = grid.domain();
                if r <= dom.outer_radius && r >= dom.inner_radius {
                    return Err(Error::Precondition(format!("half-space is not grid-compatible at cell {i}")));
                }
                0.0
            }
        };
        out.push(if side <= 1e-14 { abs[i].max(mirror) } else { abs[i].min(mirror) });
    }
    u.with_values(out)
}

/// Cells grouped into blocks (values move only within a block) and, inside
/// each block, into shells of equal distance from the symmetry center,
/// nearest shell first.
fn shells(grid: &Grid) -> Vec<Vec<Vec<usize>>> {
    let cells = grid.cells();
    let scale = grid.domain().outer_radius;
    let radius = |i: usize| {
        let x = cells[i].center;
        (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
    };
    let angle = |i: usize| cells[i].center[1].atan2(cells[i].center[0]).abs();
    let group = |mut idx: Vec<usize>, key: &dyn Fn(usize) -> f64, tol: f64| -> Vec<Vec<usize>> {
        idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in idx {
            match out.last_mut() {
                Some(g) if (key(g[0]) - key(i)).abs() <= tol => g.push(i),
                _ => out.push(vec![i]),
            }
        }
        out
    };
    match grid.domain().shape {
        Shape::Ball => vec![group((0..cells.len()).collect(), &radius, MATCH_TOL * scale)],
        Shape::Annulus => group((0..cells.len()).collect(), &radius, MATCH_TOL * scale)
            .into_iter()
            .map(|ring| group(ring, &angle, MATCH_TOL))
            .collect(),
    }
}

/// Layer-cake symmetrization. For each distinct level `t_k` of `|u|`
/// (descending), the super-level set `{|u| ≥ t_k}` is replaced by the
/// centered shells of the same measure, the outermost shell covered
/// fractionally; the result at a cell is `Σ_k (t_k − t_{k+1})·coverage_k`.
pub fn oracle_symmetrize(u: &GridFunction) -> Result<GridFunction> {
    let grid = u.grid();
    if grid.domain().shape == Shape::Annulus && !matches!(grid.mode(), GridMode::Polar { .. }) {
        return Err(Error::GridMismatch { expected: "polar" });
    }
    let cells = grid.cells();
    let abs: Vec<f64> = u.values().iter().map(|v| v.abs()).collect();
    let mut out = vec![0.0; cells.len()];
    for block in shells(grid) {
        let members: Vec<usize> = block.iter().flatten().copied().collect();
        let mut levels: Vec<f64> = members.iter().map(|&i| abs[i]).filter(|v| *v > 0.0).collect();
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();
        for (k, &t) in levels.iter().enumerate() {
            let below = levels.get(k + 1).copied().unwrap_or(0.0);
            let thickness = t - below;
            let mut remaining: f64 = members.iter().filter(|&&i| abs[i] >= t).map(|&i| cells[i].measure).sum();
            for shell in &block {
                if remaining <= 0.0 {
                    break;
                }
                let mass: f64 = shell.iter().map(|&i| cells[i].measure).sum();
                let coverage = (remaining / mass).min(1.0);
                for &i in shell {
                    out[i] += thickness * coverage;
                }
                remaining -= mass;
            }
        }
    }
    u.with_values(out)
}

/// `∫|Dw|` with `|Dw|` averaged over forward/backward choices per axis,
/// zero outside the domain; neighbors found by searching cell centers.
/// Cartesian grids only.
pub fn oracle_w11(u: &GridFunction) -> Result<f64> {
    let grid = u.grid();
    let GridMode::Cartesian { per_axis } = grid.mode() else {
        return Err(Error::GridMismatch { expected: "Cartesian" });
    };
    let dim = grid.dim();
    let step = 2.0 * grid.domain().outer_radius / per_axis as f64;
    let cells = grid.cells();
    let v = u.values();
    let at = |x: [f64; 3]| cells.iter().position(|c| close(&c.center, &x, step)).map_or(0.0, |j| v[j]);
    let mut total = 0.0;
    for (i, c) in cells.iter().enumerate() {
        let mut diffs = Vec::with_capacity(dim);
        for k in 0..dim {
            let mut fw = c.center;
            let mut bw = c.center;
            fw[k] += step;
            bw[k] -= step;
            diffs.push(((at(fw) - v[i]) / step, (v[i] - at(bw)) / step));
        }
        let combos = 1usize << dim;
        let mut sum = 0.0;
        for mask in 0..combos {
            let sq: f64 = (0..dim)
                .map(|k| {
                    let d = if mask & (1 << k) != 0 { diffs[k].1 } else { diffs[k].0 };
                    d * d
                })
                .sum();
            sum += sq.sqrt();
        }
        total += sum / combos as f64 * c.measure;
    }
    Ok(total)
}

/// All lattice points `v` with `J(v) ≤ J(u)` and `J(w) ≥ J(v) − σ‖w − v‖`
/// for every lattice point `w`, in lexicographic order. Fails with
/// [`Error::EmptyAdmissible`] when `J(u)` exceeds the lattice minimum by
/// more than `ρσ`.
pub fn oracle_ekeland(
    j: &DiscreteFunctional,
    u: &GridFunction,
    rho: f64,
    sigma: f64,
    lattice: &LatticeSpec,
) -> Result<Vec<GridFunction>> {
    lattice.validate()?;
    if u.len() != lattice.cell_count {
        return Err(Error::LengthMismatch { expected: lattice.cell_count, got: u.len() });
    }
    if !lattice.contains(u.values()) {
        return Err(Error::Precondition("start point is not on the lattice".into()));
    }
    let points: Vec<GridFunction> =
        (0..lattice.states()).map(|s| u.with_values(lattice.point(s))).collect::<Result<_>>()?;
    let energy: Vec<f64> = points.iter().map(|p| j.evaluate(p)).collect::<Result<_>>()?;
    let f_u = j.evaluate(u)?;
    let inf = energy.iter().copied().fold(f64::INFINITY, f64::min);
    if f_u > inf + rho * sigma {
        return Err(Error::EmptyAdmissible(format!("J(u) − min J = {} exceeds ρσ = {}", f_u - inf, rho * sigma)));
    }
    let n = points.len();
    let mut dist = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let d = oracle_w11(&points[a].zip_map(&points[b], |x, y| x - y))?;
            dist[a * n + b] = d;
            dist[b * n + a] = d;
        }
    }
    let admissible: Vec<GridFunction> = (0..n)
        .filter(|&a| energy[a] <= f_u && (0..n).all(|b| energy[b] >= energy[a] - sigma * dist[a * n + b]))
        .map(|a| points[a].clone())
        .collect();
    if admissible.is_empty() {
        return Err(Error::EmptyAdmissible("no lattice point satisfies the Ekeland conditions".into()));
    }
    Ok(admissible)
}
