//! Domains (ball or annulus), their discretization, and the admissible
//! half-space classes together with the reflections that act on them.
//!
//! Half-spaces use the closed convention `H = {x : x·e <= t}`. For a ball
//! the admissible class is every `H` containing the origin (`t >= 0`); for
//! an annulus it is every `H` whose boundary passes through the origin and
//! which contains the positive `x1` axis (`t = 0`, `e1 <= 0`).

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// A point in `R^N`, `N <= 3`; unused trailing coordinates are zero.
pub type Point = [f64; MAX_DIM];

const CONTAINS_TOL: f64 = 1e-14;
const LATTICE_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Ball,
    Annulus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub shape: Shape,
    pub dimension: usize,
    pub outer_radius: f64,
    pub inner_radius: f64,
}

impl DomainSpec {
    pub fn ball(dimension: usize, radius: f64) -> Result<Self> {
        let d = DomainSpec { shape: Shape::Ball, dimension, outer_radius: radius, inner_radius: 0.0 };
        d.validate()?;
        Ok(d)
    }

    pub fn annulus(dimension: usize, inner_radius: f64, outer_radius: f64) -> Result<Self> {
        let d = DomainSpec { shape: Shape::Annulus, dimension, outer_radius, inner_radius };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::InvalidDomain(format!("dimension N = {} must be >= 2", self.dimension)));
        }
        if self.dimension > MAX_DIM {
            return Err(Error::InvalidDomain(format!("dimension N = {} exceeds the supported maximum 3", self.dimension)));
        }
        if !(self.outer_radius > 0.0 && self.outer_radius.is_finite()) {
            return Err(Error::InvalidDomain("outer radius must be positive and finite".into()));
        }
        match self.shape {
            Shape::Ball if self.inner_radius != 0.0 => {
                Err(Error::InvalidDomain("a ball has inner radius 0".into()))
            }
            Shape::Annulus if !(self.inner_radius > 0.0 && self.inner_radius < self.outer_radius) => {
                Err(Error::InvalidDomain("an annulus needs 0 < inner radius < outer radius".into()))
            }
            _ => Ok(()),
        }
    }

    /// Closed-domain membership.
    pub fn contains(&self, x: &Point) -> bool {
        let r = norm(x);
        r <= self.outer_radius && r >= self.inner_radius
    }

    /// Lebesgue measure of the continuum domain.
    pub fn measure(&self) -> f64 {
        let unit_ball = match self.dimension {
            2 => PI,
            3 => 4.0 * PI / 3.0,
            _ => unreachable!("validated dimension"),
        };
        let n = self.dimension as i32;
        unit_ball * (self.outer_radius.powi(n) - self.inner_radius.powi(n))
    }
}

pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

/// Closed half-space `{x : x·normal <= offset}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Point,
    pub offset: f64,
}

impl HalfSpace {
    /// Builds a half-space from any nonzero normal; the normal is rescaled
    /// to unit length and coordinates below 1e-15 are flushed to zero.
    pub fn new(normal: &[f64], offset: f64) -> Result<Self> {
        if normal.is_empty() || normal.len() > MAX_DIM {
            return Err(Error::ClassViolation(format!("normal must have 1..=3 components, got {}", normal.len())));
        }
        let mut e = [0.0; MAX_DIM];
        e[..normal.len()].copy_from_slice(normal);
        let len = norm(&e);
        if !(len > 0.0 && len.is_finite()) || !offset.is_finite() {
            return Err(Error::ClassViolation("normal must be nonzero and finite".into()));
        }
        for c in e.iter_mut() {
            *c /= len;
            if c.abs() < 1e-15 {
                *c = 0.0;
            }
        }
        // renormalize after flushing
        let len = norm(&e);
        for c in e.iter_mut() {
            *c /= len;
        }
        Ok(HalfSpace { normal: e, offset })
    }

    pub fn contains(&self, x: &Point) -> bool {
        dot(x, &self.normal) <= self.offset + CONTAINS_TOL
    }

    /// Mirror image across the boundary hyperplane.
    pub fn reflect(&self, x: &Point) -> Point {
        let s = 2.0 * (dot(x, &self.normal) - self.offset);
        [x[0] - s * self.normal[0], x[1] - s * self.normal[1], x[2] - s * self.normal[2]]
    }

    /// Checks membership in the admissible class of `domain`.
    pub fn check_class(&self, domain: &DomainSpec) -> Result<()> {
        if (norm(&self.normal) - 1.0).abs() > 1e-12 {
            return Err(Error::ClassViolation("normal is not a unit vector".into()));
        }
        if self.normal[domain.dimension..].iter().any(|&c| c != 0.0) {
            return Err(Error::ClassViolation("normal has components beyond the domain dimension".into()));
        }
        match domain.shape {
            Shape::Ball if self.offset < 0.0 => Err(Error::ClassViolation(format!(
                "ball class needs the origin in H (offset t = {} < 0)",
                self.offset
            ))),
            Shape::Annulus if self.offset.abs() > CONTAINS_TOL => Err(Error::ClassViolation(format!(
                "annulus class needs the origin on the boundary of H (offset t = {})",
                self.offset
            ))),
            Shape::Annulus if self.normal[0] > 1e-12 => Err(Error::ClassViolation(
                "annulus class needs the positive x1 axis inside H (e·e1 <= 0)".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn in_class(&self, domain: &DomainSpec) -> bool {
        self.check_class(domain).is_ok()
    }
}

/// Draws a random admissible half-space: uniform normal on the sphere
/// (folded onto `e1 <= 0` for the annulus), offset uniform on `[0, R)` for
/// the ball and zero for the annulus.
pub fn sample_halfspace(domain: &DomainSpec, seed: u64) -> HalfSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_halfspace_with(domain, &mut rng)
}

pub fn sample_halfspace_with<R: Rng>(domain: &DomainSpec, rng: &mut R) -> HalfSpace {
    let n = domain.dimension;
    loop {
        let mut e = [0.0; MAX_DIM];
        for c in e.iter_mut().take(n) {
            *c = rng.sample(StandardNormal);
        }
        if norm(&e) < 1e-9 {
            continue;
        }
        let (e, t) = match domain.shape {
            Shape::Ball => (e, rng.random_range(0.0..domain.outer_radius)),
            Shape::Annulus => {
                e[0] = -e[0].abs();
                (e, 0.0)
            }
        };
        if let Ok(h) = HalfSpace::new(&e[..n], t) {
            return h;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GridMode {
    /// `per_axis` cells of side `2R / per_axis` along every axis.
    Cartesian { per_axis: usize },
    /// Rings × sectors; two-dimensional annuli only.
    Polar { radial: usize, angular: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub center: Point,
    pub measure: f64,
    /// Cartesian: per-axis indices. Polar: `[ring, sector, 0]`.
    pub lattice: [usize; MAX_DIM],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarLayout {
    pub radial: usize,
    pub angular: usize,
    pub dr: f64,
    pub dtheta: f64,
}

/// Outcome of snapping a point onto the grid lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Locate {
    Cell(usize),
    /// A lattice node whose center lies outside the domain.
    Outside,
    OffLattice,
}

/// Discretization of a domain into cells with centers inside the closed
/// domain. Immutable once built.
#[derive(Clone, Debug)]
pub struct Grid {
    domain: DomainSpec,
    mode: GridMode,
    cells: Vec<Cell>,
    lookup: Vec<u32>,
    forward: Vec<[Option<usize>; MAX_DIM]>,
    backward: Vec<[Option<usize>; MAX_DIM]>,
    steps: Vec<[f64; MAX_DIM]>,
    spacing: f64,
    polar: Option<PolarLayout>,
    layout: OnceLock<Vec<Vec<Vec<usize>>>>,
    rank: OnceLock<Vec<(usize, usize)>>,
}

const NO_CELL: u32 = u32::MAX;

impl Grid {
    pub fn new(domain: DomainSpec, mode: GridMode) -> Result<Self> {
        match mode {
            GridMode::Cartesian { per_axis } => Self::cartesian(domain, per_axis),
            GridMode::Polar { radial, angular } => Self::polar(domain, radial, angular),
        }
    }

    pub fn cartesian(domain: DomainSpec, per_axis: usize) -> Result<Self> {
        domain.validate()?;
        if per_axis < 2 {
            return Err(Error::InvalidGrid("need at least 2 cells per axis".into()));
        }
        let n = domain.dimension;
        let r = domain.outer_radius;
        let h = 2.0 * r / per_axis as f64;
        let total = per_axis.pow(n as u32);
        if total > 50_000_000 {
            return Err(Error::InvalidGrid("grid too large".into()));
        }
        let coord = |a: usize| -r + (a as f64 + 0.5) * h;
        let mut lookup = vec![NO_CELL; total];
        let mut cells = Vec::new();
        let measure = h.powi(n as i32);
        for flat in 0..total {
            let lattice = unflatten(flat, per_axis, n);
            let mut center = [0.0; MAX_DIM];
            for k in 0..n {
                center[k] = coord(lattice[k]);
            }
            if domain.contains(&center) {
                lookup[flat] = cells.len() as u32;
                cells.push(Cell { center, measure, lattice });
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidGrid("no cell center lies in the domain".into()));
        }
        let mut forward = Vec::with_capacity(cells.len());
        for cell in &cells {
            let mut nb = [None; MAX_DIM];
            for (k, slot) in nb.iter_mut().enumerate().take(n) {
                if cell.lattice[k] + 1 < per_axis {
                    let mut l = cell.lattice;
                    l[k] += 1;
                    let idx = lookup[flatten(&l, per_axis, n)];
                    if idx != NO_CELL {
                        *slot = Some(idx as usize);
                    }
                }
            }
            forward.push(nb);
        }
        let steps = vec![[h; MAX_DIM]; cells.len()];
        Ok(Grid {
            domain,
            mode: GridMode::Cartesian { per_axis },
            cells,
            lookup,
            backward: invert(&forward),
            forward,
            steps,
            spacing: h,
            polar: None,
            layout: OnceLock::new(),
            rank: OnceLock::new(),
        })
    }

    pub fn polar(domain: DomainSpec, radial: usize, angular: usize) -> Result<Self> {
        domain.validate()?;
        if domain.dimension != 2 {
            return Err(Error::InvalidGrid("polar grids are two-dimensional".into()));
        }
        if domain.shape != Shape::Annulus {
            return Err(Error::InvalidGrid(
                "polar grids discretize annuli; use a Cartesian grid for the ball".into(),
            ));
        }
        if radial < 1 || angular < 2 {
            return Err(Error::InvalidGrid("need radial >= 1 and angular >= 2".into()));
        }
        let r0 = domain.inner_radius;
        let dr = (domain.outer_radius - r0) / radial as f64;
        let dtheta = 2.0 * PI / angular as f64;
        let mut cells = Vec::with_capacity(radial * angular);
        let mut lookup = Vec::with_capacity(radial * angular);
        let mut forward = Vec::with_capacity(radial * angular);
        let mut steps = Vec::with_capacity(radial * angular);
        for i in 0..radial {
            let rho = r0 + (i as f64 + 0.5) * dr;
            for j in 0..angular {
                let theta = polar_angle(j, dtheta);
                lookup.push(cells.len() as u32);
                cells.push(Cell {
                    center: [rho * theta.cos(), rho * theta.sin(), 0.0],
                    measure: rho * dr * dtheta,
                    lattice: [i, j, 0],
                });
                let outward = if i + 1 < radial { Some((i + 1) * angular + j) } else { None };
                let around = Some(i * angular + (j + 1) % angular);
                forward.push([outward, around, None]);
                steps.push([dr, rho * dtheta, 0.0]);
            }
        }
        let spacing = dr.max(domain.outer_radius * dtheta);
        Ok(Grid {
            domain,
            mode: GridMode::Polar { radial, angular },
            cells,
            lookup,
            backward: invert(&forward),
            forward,
            steps,
            spacing,
            polar: Some(PolarLayout { radial, angular, dr, dtheta }),
            layout: OnceLock::new(),
            rank: OnceLock::new(),
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.domain.dimension
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Characteristic mesh size `h` (cell side, or the coarser of the
    /// radial and outer-arc steps on polar grids).
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn polar_layout(&self) -> Option<&PolarLayout> {
        self.polar.as_ref()
    }

    /// Forward neighbor of `cell` along axis `k` (radial/angular on polar
    /// grids), `None` past the boundary.
    pub fn forward(&self, cell: usize) -> &[Option<usize>; MAX_DIM] {
        &self.forward[cell]
    }

    /// Backward neighbor along axis `k`, `None` past the boundary.
    pub fn backward(&self, cell: usize) -> &[Option<usize>; MAX_DIM] {
        &self.backward[cell]
    }

    pub fn steps(&self, cell: usize) -> &[f64; MAX_DIM] {
        &self.steps[cell]
    }

    /// Number of difference directions per cell.
    pub fn axes(&self) -> usize {
        self.dim()
    }

    pub fn total_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    /// Relative deviation of the summed cell measure from the continuum
    /// domain measure.
    pub fn measure_error(&self) -> f64 {
        let exact = self.domain.measure();
        (self.total_measure() - exact).abs() / exact
    }

    /// Integer key ordering cells by distance from the origin; equal keys
    /// mean equal radii exactly.
    pub fn radial_key(&self, cell: usize) -> u64 {
        let c = &self.cells[cell];
        match self.mode {
            GridMode::Cartesian { per_axis } => (0..self.dim())
                .map(|k| {
                    let o = 2 * c.lattice[k] as i64 - per_axis as i64 + 1;
                    (o * o) as u64
                })
                .sum(),
            GridMode::Polar { .. } => c.lattice[0] as u64,
        }
    }

    /// Rearrangement layout: a list of blocks whose values are permuted
    /// among themselves (the whole domain on Cartesian grids, one ring per
    /// block on polar grids). Each block is a list of tie groups ordered by
    /// increasing distance from the symmetry center (radius, or `|θ|` from
    /// the positive `x1` axis); inside a group cells follow the tie-break
    /// order (cell index, or positive angle first).
    pub fn rearrangement_layout(&self) -> &[Vec<Vec<usize>>] {
        self.layout.get_or_init(|| match self.mode {
            GridMode::Cartesian { .. } => {
                let mut order: Vec<usize> = (0..self.len()).collect();
                order.sort_by_key(|&i| (self.radial_key(i), i));
                vec![group_by_key(&order, |i| self.radial_key(i))]
            }
            GridMode::Polar { radial, angular } => {
                let key = |j: usize| (2 * j as i64 + 1 - angular as i64).unsigned_abs();
                let mut sectors: Vec<usize> = (0..angular).collect();
                // |θ| ascending, positive angle first
                sectors.sort_by_key(|&j| (key(j), 2 * j + 1 < angular));
                (0..radial)
                    .map(|i| {
                        let order: Vec<usize> = sectors.iter().map(|&j| i * angular + j).collect();
                        group_by_key(&order, |c| key(c % angular))
                    })
                    .collect()
            }
        })
    }

    /// `(block, tie group)` position of every cell in
    /// [`Grid::rearrangement_layout`].
    pub fn layout_rank(&self) -> &[(usize, usize)] {
        self.rank.get_or_init(|| {
            let mut rank = vec![(0, 0); self.len()];
            for (b, block) in self.rearrangement_layout().iter().enumerate() {
                for (g, group) in block.iter().enumerate() {
                    for &i in group {
                        rank[i] = (b, g);
                    }
                }
            }
            rank
        })
    }

    /// Cell whose lattice node is nearest to `x` (by rounding lattice
    /// coordinates), if that node is a cell.
    pub fn nearest(&self, x: &Point) -> Option<usize> {
        match self.mode {
            GridMode::Cartesian { .. } => {
                let r = self.domain.outer_radius;
                let mut l = [0i64; MAX_DIM];
                for k in 0..self.dim() {
                    l[k] = ((x[k] + r) / self.spacing - 0.5).round() as i64;
                }
                self.node(l)
            }
            GridMode::Polar { .. } => {
                let p = self.polar.as_ref().expect("polar layout");
                let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let i = ((rho - self.domain.inner_radius) / p.dr - 0.5).round() as i64;
                let j = ((x[1].atan2(x[0]) + PI) / p.dtheta - 0.5).round() as i64;
                self.node([i, j, 0])
            }
        }
    }

    /// Cell at an integer lattice position (sector index wraps on polar
    /// grids); `None` outside the lattice or the domain.
    pub fn node(&self, lattice: [i64; MAX_DIM]) -> Option<usize> {
        match self.mode {
            GridMode::Cartesian { per_axis } => {
                let n = self.dim();
                let mut l = [0usize; MAX_DIM];
                for k in 0..n {
                    if lattice[k] < 0 || lattice[k] >= per_axis as i64 {
                        return None;
                    }
                    l[k] = lattice[k] as usize;
                }
                match self.lookup[flatten(&l, per_axis, n)] {
                    NO_CELL => None,
                    idx => Some(idx as usize),
                }
            }
            GridMode::Polar { radial, angular } => {
                if lattice[0] < 0 || lattice[0] >= radial as i64 {
                    return None;
                }
                let j = lattice[1].rem_euclid(angular as i64) as usize;
                Some(lattice[0] as usize * angular + j)
            }
        }
    }

    /// Snaps a point onto a lattice node.
    pub fn locate(&self, x: &Point) -> Locate {
        match self.mode {
            GridMode::Cartesian { per_axis } => {
                let n = self.dim();
                let r = self.domain.outer_radius;
                let mut l = [0usize; MAX_DIM];
                let mut outside = false;
                for k in 0..n {
                    let f = (x[k] + r) / self.spacing - 0.5;
                    let a = f.round();
                    if (f - a).abs() > LATTICE_TOL {
                        return Locate::OffLattice;
                    }
                    if a < 0.0 || a >= per_axis as f64 {
                        outside = true;
                    } else {
                        l[k] = a as usize;
                    }
                }
                if x[n..].iter().any(|c| c.abs() > LATTICE_TOL * self.spacing) {
                    return Locate::OffLattice;
                }
                if outside {
                    return Locate::Outside;
                }
                match self.lookup[flatten(&l, per_axis, n)] {
                    NO_CELL => Locate::Outside,
                    idx => Locate::Cell(idx as usize),
                }
            }
            GridMode::Polar { radial, angular } => {
                let p = self.polar.as_ref().expect("polar layout");
                let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let f = (rho - self.domain.inner_radius) / p.dr - 0.5;
                let a = f.round();
                if (f - a).abs() > LATTICE_TOL {
                    return Locate::OffLattice;
                }
                if a < 0.0 || a >= radial as f64 {
                    return Locate::Outside;
                }
                let theta = x[1].atan2(x[0]);
                let g = (theta + PI) / p.dtheta - 0.5;
                let b = g.round();
                if (g - b).abs() > LATTICE_TOL {
                    return Locate::OffLattice;
                }
                let j = (b as i64).rem_euclid(angular as i64) as usize;
                Locate::Cell(self.lookup[a as usize * angular + j] as usize)
            }
        }
    }

    /// For a lattice-compatible half-space, the image cell of every cell
    /// under the reflection (`None` when the image leaves the domain).
    /// Returns `None` if some image is not a lattice node.
    pub fn reflection_map(&self, h: &HalfSpace) -> Option<Vec<Option<usize>>> {
        let mut map = Vec::with_capacity(self.cells.len());
        for cell in &self.cells {
            match self.locate(&h.reflect(&cell.center)) {
                Locate::Cell(i) => map.push(Some(i)),
                Locate::Outside => map.push(None),
                Locate::OffLattice => return None,
            }
        }
        Some(map)
    }

    /// Admissible half-spaces whose reflections map lattice nodes to lattice
    /// nodes, so polarization needs no interpolation.
    pub fn compatible_halfspaces(&self) -> Result<Vec<HalfSpace>> {
        let n = self.dim();
        let r = self.domain.outer_radius;
        let mut candidates = Vec::new();
        match self.mode {
            GridMode::Cartesian { .. } => {
                let h = self.spacing;
                for k in 0..n {
                    for sign in [1.0, -1.0] {
                        let mut e = [0.0; MAX_DIM];
                        e[k] = sign;
                        let mut m = 0;
                        loop {
                            let t = m as f64 * h / 2.0;
                            if t >= r {
                                break;
                            }
                            candidates.push(HalfSpace::new(&e[..n], t)?);
                            m += 1;
                        }
                    }
                }
                let step = h / 2f64.sqrt();
                for i in 0..n {
                    for j in (i + 1)..n {
                        for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                            let mut e = [0.0; MAX_DIM];
                            e[i] = si;
                            e[j] = sj;
                            let mut m = 0;
                            loop {
                                let t = m as f64 * step;
                                if t >= r {
                                    break;
                                }
                                candidates.push(HalfSpace::new(&e[..n], t)?);
                                m += 1;
                            }
                        }
                    }
                }
            }
            GridMode::Polar { angular, .. } => {
                let half = PI / angular as f64;
                for k in 0..(2 * angular) {
                    let psi = k as f64 * half;
                    candidates.push(HalfSpace::new(&[psi.cos(), psi.sin()], 0.0)?);
                }
            }
        }
        let out: Vec<HalfSpace> = candidates
            .into_iter()
            .filter(|h| h.in_class(&self.domain) && self.reflection_map(h).is_some())
            .collect();
        if out.is_empty() {
            return Err(Error::EmptyClass);
        }
        Ok(out)
    }
}

/// Free-function form of [`Grid::compatible_halfspaces`].
pub fn grid_compatible_halfspaces(grid: &Grid) -> Result<Vec<HalfSpace>> {
    grid.compatible_halfspaces()
}

fn group_by_key<K: PartialEq>(order: &[usize], key: impl Fn(usize) -> K) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last: Option<K> = None;
    for &i in order {
        let k = key(i);
        match (&last, groups.last_mut()) {
            (Some(prev), Some(g)) if *prev == k => g.push(i),
            _ => groups.push(vec![i]),
        }
        last = Some(k);
    }
    groups
}

/// Angle of sector `j`, measured from the positive `x1` axis in `(-π, π)`.
fn invert(forward: &[[Option<usize>; MAX_DIM]]) -> Vec<[Option<usize>; MAX_DIM]> {
    let mut back = vec![[None; MAX_DIM]; forward.len()];
    for (i, nb) in forward.iter().enumerate() {
        for (k, j) in nb.iter().enumerate() {
            if let Some(j) = *j {
                back[j][k] = Some(i);
            }
        }
    }
    back
}

pub fn polar_angle(j: usize, dtheta: f64) -> f64 {
    -PI + (j as f64 + 0.5) * dtheta
}

fn unflatten(mut flat: usize, per_axis: usize, n: usize) -> [usize; MAX_DIM] {
    let mut l = [0; MAX_DIM];
    for slot in l.iter_mut().take(n) {
        *slot = flat % per_axis;
        flat /= per_axis;
    }
    l
}

fn flatten(l: &[usize; MAX_DIM], per_axis: usize, n: usize) -> usize {
    let mut flat = 0;
    for k in (0..n).rev() {
        flat = flat * per_axis + l[k];
    }
    flat
}
