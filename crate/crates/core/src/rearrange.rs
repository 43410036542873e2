//! Polarization, Schwarz and spherical-cap symmetrization, and the
//! symmetry defect.
//!
//! Symmetrizations sort the values of a block (the whole ball, or one ring
//! of the annulus) in decreasing order and hand them out along the
//! layout's distance order. Cells tied at the same distance then share the
//! mean of the values they received, so the result is constant on every
//! tie group. That is what makes the symmetric function a fixed point of
//! every admissible polarization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{norm, GridFunction, NormKind};
use crate::geometry::{dot, sample_halfspace_with, DomainSpec, Grid, GridMode, HalfSpace, Point, Shape, MAX_DIM};

/// Default polarization count; the hard cap of a defect-driven run is ten
/// times this.
pub const DEFAULT_POLARIZATIONS: usize = 500;
pub const POLARIZATION_CAP: usize = 10 * DEFAULT_POLARIZATIONS;

/// Pointwise absolute value.
pub fn theta(u: &GridFunction) -> GridFunction {
    u.map(f64::abs)
}

/// How the mirror value `u(σx)` is read when the reflection does not map
/// lattice nodes onto lattice nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MirrorRule {
    /// Pair each cell with the cell nearest to its mirror image (see
    /// [`pairing`]); keeps the rearrangement exact.
    #[default]
    Snap,
    /// Multilinear interpolation of the zero-extended field, clamped to be
    /// nonnegative.
    Interpolate,
}

/// Two-point rearrangement of `|u|` with respect to `h`: inside `h` the
/// larger of `u(x)`, `u(σx)`, outside the smaller, reading `u` as zero
/// outside the domain.
pub fn polarize(u: &GridFunction, h: &HalfSpace) -> Result<GridFunction> {
    polarize_with(u, h, MirrorRule::Snap)
}

pub fn polarize_with(u: &GridFunction, h: &HalfSpace, rule: MirrorRule) -> Result<GridFunction> {
    let grid = u.grid();
    h.check_class(grid.domain())?;
    let v = theta(u);
    let vals = v.values();
    let cells = grid.cells();
    let two_point = |i: usize, mirror: f64| {
        if h.contains(&cells[i].center) {
            vals[i].max(mirror)
        } else {
            vals[i].min(mirror)
        }
    };
    let out: Vec<f64> = match (grid.reflection_map(h), rule) {
        (Some(map), _) => (0..cells.len()).map(|i| two_point(i, map[i].map_or(0.0, |j| vals[j]))).collect(),
        (None, MirrorRule::Snap) => {
            let pairs = snapped_pairs(grid, h);
            (0..cells.len())
                .map(|i| match pairs[i] {
                    Some(j) => two_point(i, vals[j]),
                    None => vals[i],
                })
                .collect()
        }
        (None, MirrorRule::Interpolate) => (0..cells.len())
            .map(|i| two_point(i, interpolate(&v, &h.reflect(&cells[i].center)).max(0.0)))
            .collect(),
    };
    v.with_values(out)
}

/// Involutive cell pairing used by [`polarize`]: exact mirror cells when
/// the reflection is lattice-compatible, otherwise snapped pairs. `None`
/// marks a cell left unchanged (its mirror leaves the domain, or no valid
/// partner exists).
pub fn pairing(grid: &Grid, h: &HalfSpace) -> Vec<Option<usize>> {
    match grid.reflection_map(h) {
        Some(map) => map,
        None => snapped_pairs(grid, h),
    }
}

/// Cells strictly inside `h` (in index order) are matched with the free
/// cell nearest their mirror image, provided that cell lies strictly
/// outside `h`, in the same rearrangement block, and no closer to the
/// symmetry center. Each matched pair then obeys the ordering that the
/// symmetrized function already satisfies.
fn snapped_pairs(grid: &Grid, h: &HalfSpace) -> Vec<Option<usize>> {
    let cells = grid.cells();
    let rank = grid.layout_rank();
    let mut partner: Vec<Option<usize>> = vec![None; cells.len()];
    for i in 0..cells.len() {
        let x = &cells[i].center;
        if dot(x, &h.normal) >= h.offset {
            continue;
        }
        let image = h.reflect(x);
        if !grid.domain().contains(&image) {
            continue;
        }
        let Some(j) = grid.nearest(&image) else { continue };
        if partner[j].is_some() || dot(&cells[j].center, &h.normal) <= h.offset {
            continue;
        }
        let (bi, gi) = rank[i];
        let (bj, gj) = rank[j];
        if bi != bj || gi > gj {
            continue;
        }
        partner[i] = Some(j);
        partner[j] = Some(i);
    }
    partner
}

/// Multilinear interpolation of the zero-extended lattice field (linear in
/// radius and angle on polar grids).
pub fn interpolate(u: &GridFunction, x: &Point) -> f64 {
    let grid = u.grid();
    let vals = u.values();
    let at = |l: [i64; MAX_DIM]| grid.node(l).map_or(0.0, |i| vals[i]);
    match grid.mode() {
        GridMode::Cartesian { .. } => {
            let n = grid.dim();
            let r = grid.domain().outer_radius;
            let mut base = [0i64; MAX_DIM];
            let mut frac = [0.0; MAX_DIM];
            for k in 0..n {
                let f = (x[k] + r) / grid.spacing() - 0.5;
                base[k] = f.floor() as i64;
                frac[k] = f - f.floor();
            }
            let mut acc = 0.0;
            for corner in 0..(1usize << n) {
                let mut l = [0i64; MAX_DIM];
                let mut w = 1.0;
                for k in 0..n {
                    let up = (corner >> k) & 1 == 1;
                    l[k] = base[k] + up as i64;
                    w *= if up { frac[k] } else { 1.0 - frac[k] };
                }
                if w != 0.0 {
                    acc += w * at(l);
                }
            }
            acc
        }
        GridMode::Polar { .. } => {
            let p = grid.polar_layout().expect("polar layout");
            let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let fr = (rho - grid.domain().inner_radius) / p.dr - 0.5;
            let fa = (x[1].atan2(x[0]) + std::f64::consts::PI) / p.dtheta - 0.5;
            let (i0, j0) = (fr.floor(), fa.floor());
            let (tr, ta) = (fr - i0, fa - j0);
            let (i0, j0) = (i0 as i64, j0 as i64);
            (1.0 - tr) * ((1.0 - ta) * at([i0, j0, 0]) + ta * at([i0, j0 + 1, 0]))
                + tr * ((1.0 - ta) * at([i0 + 1, j0, 0]) + ta * at([i0 + 1, j0 + 1, 0]))
        }
    }
}

/// Hands sorted values out along the layout and averages each tie group.
fn rearrange_blocks(u: &GridFunction) -> Result<GridFunction> {
    let grid = u.grid();
    let src = theta(u);
    let vals = src.values();
    let mut out = vec![0.0; vals.len()];
    let mut buf = Vec::new();
    for block in grid.rearrangement_layout() {
        buf.clear();
        buf.extend(block.iter().flatten().map(|&i| vals[i]));
        buf.sort_by(|a, b| b.total_cmp(a));
        let mut pos = 0;
        for group in block {
            let share = &buf[pos..pos + group.len()];
            let level = tie_level(share);
            for &i in group {
                out[i] = level;
            }
            pos += group.len();
        }
    }
    src.with_values(out)
}

/// Common value of a tie group: the shared value when all agree, else the
/// mean kept inside `[min, max]`.
fn tie_level(share: &[f64]) -> f64 {
    let first = share[0];
    if share.iter().all(|&v| v == first) {
        return first;
    }
    let (lo, hi) = share.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    (share.iter().sum::<f64>() / share.len() as f64).clamp(lo, hi)
}

/// Radially non-increasing equimeasurable rearrangement on a ball.
pub fn schwarz_symmetrize(u: &GridFunction) -> Result<GridFunction> {
    let grid = u.grid();
    if grid.domain().shape != Shape::Ball {
        return Err(Error::DomainMismatch { expected: "ball" });
    }
    rearrange_blocks(u)
}

/// Ring-by-ring rearrangement non-increasing in the angle from the
/// positive `x1` axis, on a polar annulus grid.
pub fn cap_symmetrize(u: &GridFunction) -> Result<GridFunction> {
    let grid = u.grid();
    if grid.domain().shape != Shape::Annulus {
        return Err(Error::DomainMismatch { expected: "annulus" });
    }
    if !matches!(grid.mode(), GridMode::Polar { .. }) {
        return Err(Error::GridMismatch { expected: "polar" });
    }
    rearrange_blocks(u)
}

/// `|u|*`: Schwarz on the ball, cap symmetrization on the annulus.
pub fn symmetrize(u: &GridFunction) -> Result<GridFunction> {
    match u.grid().domain().shape {
        Shape::Ball => schwarz_symmetrize(u),
        Shape::Annulus => cap_symmetrize(u),
    }
}

/// Exponent `N/(N-1)` of the space the defect is measured in.
pub fn defect_exponent(dimension: usize) -> f64 {
    dimension as f64 / (dimension as f64 - 1.0)
}

/// `‖|u| − |u|*‖` in `L^{N/(N-1)}`.
pub fn symmetry_defect(u: &GridFunction) -> Result<f64> {
    let sym = symmetrize(u)?;
    let q = defect_exponent(u.grid().dim());
    Ok(norm(&theta(u).sub(&sym), NormKind::Lq(q)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Stopping {
    FixedCount(usize),
    DefectBelow(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationSchedule {
    pub halfspaces: Vec<HalfSpace>,
    pub stopping: Stopping,
    pub rng_seed: u64,
}

impl PolarizationSchedule {
    /// Draws half-spaces uniformly from `pool`: `m` of them for
    /// `FixedCount(m)`, the hard cap for `DefectBelow`.
    pub fn sampled(pool: &[HalfSpace], stopping: Stopping, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let count = match stopping {
            Stopping::FixedCount(m) => m,
            Stopping::DefectBelow(_) => POLARIZATION_CAP,
        };
        let halfspaces = if pool.is_empty() {
            Vec::new()
        } else {
            (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        };
        PolarizationSchedule { halfspaces, stopping, rng_seed }
    }

    /// `count` random admissible half-spaces for `domain` (any direction,
    /// polarized through snapped pairs when not lattice-compatible). Ball
    /// offsets are drawn as `R·U²`, which favors planes near the origin.
    pub fn random(domain: &DomainSpec, stopping: Stopping, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let count = match stopping {
            Stopping::FixedCount(m) => m,
            Stopping::DefectBelow(_) => POLARIZATION_CAP,
        };
        let halfspaces = (0..count)
            .map(|_| {
                let mut h = sample_halfspace_with(domain, &mut rng);
                if domain.shape == Shape::Ball {
                    let x: f64 = rng.random();
                    h.offset = domain.outer_radius * x * x;
                }
                h
            })
            .collect();
        PolarizationSchedule { halfspaces, stopping, rng_seed }
    }
}

#[derive(Clone, Debug)]
pub struct PolarizationRun {
    pub result: GridFunction,
    /// Defect before the first step, then after each applied step.
    pub trace: Vec<f64>,
    /// Steps that changed the function.
    pub effective_steps: usize,
    /// `DefectBelow` target not reached within the schedule.
    pub exhausted: bool,
}

/// Applies the schedule's polarizations in order. A `DefectBelow(ρ)` run
/// stops once the defect drops below `ρ`; running out of half-spaces first
/// sets `exhausted` and returns the last iterate.
pub fn iterate_polarizations(u: &GridFunction, schedule: &PolarizationSchedule) -> Result<PolarizationRun> {
    let domain = *u.grid().domain();
    for h in &schedule.halfspaces {
        h.check_class(&domain)?;
    }
    let mut cur = theta(u);
    let mut defect = symmetry_defect(&cur)?;
    let mut trace = vec![defect];
    let mut effective_steps = 0;
    let target = match schedule.stopping {
        Stopping::DefectBelow(rho) => Some(rho),
        Stopping::FixedCount(_) => None,
    };
    let limit = match schedule.stopping {
        Stopping::FixedCount(m) => m.min(schedule.halfspaces.len()),
        Stopping::DefectBelow(_) => schedule.halfspaces.len().min(POLARIZATION_CAP),
    };
    for h in &schedule.halfspaces[..limit] {
        if target.is_some_and(|rho| defect < rho) {
            break;
        }
        let next = polarize(&cur, h)?;
        if next.values() != cur.values() {
            effective_steps += 1;
            cur = next;
            defect = symmetry_defect(&cur)?;
        }
        trace.push(defect);
    }
    let exhausted = target.is_some_and(|rho| defect >= rho);
    Ok(PolarizationRun { result: cur, trace, effective_steps, exhausted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, Grid};
    use rand::Rng;
    use std::sync::Arc;

    fn disk(n: usize) -> Arc<Grid> {
        Arc::new(Grid::cartesian(DomainSpec::ball(2, 1.0).unwrap(), n).unwrap())
    }

    fn ring(radial: usize, angular: usize) -> Arc<Grid> {
        Arc::new(Grid::polar(DomainSpec::annulus(2, 0.5, 1.0).unwrap(), radial, angular).unwrap())
    }

    fn random(g: &Arc<Grid>, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..g.len()).map(|_| rng.random::<f64>()).collect();
        GridFunction::new(g.clone(), vals).unwrap()
    }

    #[test]
    fn theta_examples() {
        let g = disk(2);
        let u = GridFunction::new(g.clone(), vec![-1.0, 2.0, 0.0, 4.0]).unwrap();
        assert_eq!(theta(&u).values(), &[1.0, 2.0, 0.0, 4.0]);
        let pos = random(&disk(8), 1);
        assert_eq!(theta(&pos), pos);
    }

    #[test]
    fn theta_is_l2_lipschitz() {
        let g = disk(16);
        for s in 0..50 {
            let u = random(&g, s).map(|v| 2.0 * v - 1.0);
            let v = random(&g, s + 100).map(|v| 2.0 * v - 1.0);
            let lhs = norm(&theta(&u).sub(&theta(&v)), NormKind::Lq(2.0));
            let rhs = norm(&u.sub(&v), NormKind::Lq(2.0));
            assert!(lhs <= rhs + 1e-15);
        }
    }

    #[test]
    fn polarize_two_point_example() {
        let g = disk(4); // centers at ±0.25, ±0.75
        let h = HalfSpace::new(&[1.0, 0.0], 0.0).unwrap();
        let mut vals = vec![0.0; g.len()];
        let left = g.cells().iter().position(|c| c.center[0] == -0.25 && c.center[1] == 0.25).unwrap();
        let right = g.cells().iter().position(|c| c.center[0] == 0.25 && c.center[1] == 0.25).unwrap();
        vals[left] = 1.0;
        vals[right] = 3.0;
        let u = GridFunction::new(g.clone(), vals).unwrap();
        let p = polarize(&u, &h).unwrap();
        assert_eq!(p.values()[left], 3.0);
        assert_eq!(p.values()[right], 1.0);
        // already ordered: fixed
        assert_eq!(polarize(&p, &h).unwrap(), p);
    }

    #[test]
    fn polarize_rejects_foreign_class() {
        let u = random(&disk(8), 3);
        let h = HalfSpace::new(&[1.0, 0.0], -0.2).unwrap();
        assert!(matches!(polarize(&u, &h), Err(Error::ClassViolation(_))));
    }

    #[test]
    fn polarize_interpolated_is_nonnegative_and_bounded() {
        let g = disk(32);
        let u = random(&g, 4);
        let h = HalfSpace::new(&[0.3, 0.7], 0.11).unwrap();
        assert!(g.reflection_map(&h).is_none());
        let p = polarize_with(&u, &h, MirrorRule::Interpolate).unwrap();
        assert!(p.is_nonnegative());
        assert!(p.norm(NormKind::Linf) <= u.norm(NormKind::Linf) + 1e-15);
    }

    #[test]
    fn schwarz_three_radii_example() {
        // cells along the diagonal of an 8x8 disk grid sit at distinct radii
        let g = disk(8);
        let u = random(&g, 9);
        let s = schwarz_symmetrize(&u).unwrap();
        let layout = &g.rearrangement_layout()[0];
        let levels: Vec<f64> = layout.iter().map(|grp| s.values()[grp[0]]).collect();
        assert!(levels.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn schwarz_distinct_radii_sorting() {
        // Three equal-size shells holding 1, 3, 2 come out as 3, 2, 1.
        let g = disk(8);
        let layout = g.rearrangement_layout()[0].clone();
        let picks: Vec<usize> = (0..layout.len()).filter(|&k| layout[k].len() == 8).take(3).collect();
        assert_eq!(picks.len(), 3);
        let mut vals = vec![0.0; g.len()];
        for (&k, v) in picks.iter().zip([1.0, 3.0, 2.0]) {
            for &i in &layout[k] {
                vals[i] = v + 10.0;
            }
        }
        let s = schwarz_symmetrize(&GridFunction::new(g.clone(), vals).unwrap()).unwrap();
        // the 24 large values fill the innermost 24 cells in decreasing order
        let mut seen = Vec::new();
        let mut filled = 0;
        for grp in &layout {
            if filled >= 24 {
                break;
            }
            seen.push((s.values()[grp[0]], grp.len()));
            filled += grp.len();
        }
        let mut flat = Vec::new();
        for (v, n) in seen {
            flat.extend(std::iter::repeat_n(v, n));
        }
        let mut expected = vec![13.0; 8];
        expected.extend([12.0; 8]);
        expected.extend([11.0; 8]);
        // innermost groups have sizes 4, 8, 4, 8, ... so averages straddle
        let group_sizes: Vec<usize> = layout.iter().map(|g| g.len()).collect();
        let mut pos = 0;
        let mut avg = Vec::new();
        for n in group_sizes {
            if pos >= 24 {
                break;
            }
            let m = expected[pos..(pos + n).min(24)].iter().sum::<f64>() / n as f64;
            avg.extend(std::iter::repeat_n(m, n));
            pos += n;
        }
        assert_eq!(flat, avg);
        assert!(flat.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn radial_function_is_fixed() {
        let g = disk(32);
        let u = GridFunction::from_fn(g.clone(), |x| (1.0 - (x[0] * x[0] + x[1] * x[1])).max(0.0));
        assert_eq!(schwarz_symmetrize(&u).unwrap(), u);
        assert_eq!(symmetry_defect(&u).unwrap(), 0.0);
        let r = ring(6, 16);
        let vals = r.cells().iter().map(|c| c.lattice[0] as f64).collect();
        let w = GridFunction::new(r.clone(), vals).unwrap();
        assert_eq!(cap_symmetrize(&w).unwrap(), w);
    }

    #[test]
    fn schwarz_preserves_group_sums() {
        let g = disk(16);
        let u = random(&g, 11);
        let s = schwarz_symmetrize(&u).unwrap();
        let l1 = |f: &GridFunction| f.values().iter().sum::<f64>();
        assert!((l1(&s) - l1(&u)).abs() < 1e-10);
    }

    #[test]
    fn cap_example_three_angles() {
        // angular = 4 puts sectors at ±π/4, ±3π/4; ring values (2,1,3,...)
        let r = ring(1, 4);
        // sector order: j = 0 (-3π/4), 1 (-π/4), 2 (π/4), 3 (3π/4)
        let u = GridFunction::new(r.clone(), vec![1.0, 2.0, 3.0, 3.0]).unwrap();
        let s = cap_symmetrize(&u).unwrap();
        // the ±π/4 pair receives 3 and 3, the ±3π/4 pair 2 and 1 → 1.5 each
        assert_eq!(s.values(), &[1.5, 3.0, 3.0, 1.5]);
    }

    #[test]
    fn cap_odd_sectors_positive_first() {
        // angular = 3: sectors at -2π/3, 0, 2π/3; exact values (no ties)
        let r = ring(1, 3);
        let u = GridFunction::new(r.clone(), vec![2.0, 1.0, 3.0]).unwrap();
        let s = cap_symmetrize(&u).unwrap();
        assert_eq!(s.values()[1], 3.0);
        assert_eq!(s.values()[0], 1.5);
        assert_eq!(s.values()[2], 1.5);
    }

    #[test]
    fn dispatch_errors() {
        let u = random(&disk(8), 1);
        assert!(matches!(cap_symmetrize(&u), Err(Error::DomainMismatch { .. })));
        let w = random(&ring(4, 8), 1);
        assert!(matches!(schwarz_symmetrize(&w), Err(Error::DomainMismatch { .. })));
        let cart_ann = Arc::new(Grid::cartesian(DomainSpec::annulus(2, 0.5, 1.0).unwrap(), 16).unwrap());
        let c = random(&cart_ann, 2);
        assert!(matches!(cap_symmetrize(&c), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn symmetrize_of_nonpositive_is_schwarz_of_negation() {
        let g = disk(16);
        let u = random(&g, 5).map(|v| -v);
        assert_eq!(symmetrize(&u).unwrap(), schwarz_symmetrize(&u.map(|v| -v)).unwrap());
        let z = GridFunction::zeros(g);
        assert_eq!(symmetrize(&z).unwrap(), z);
    }

    #[test]
    fn symmetric_input_gives_zero_trace() {
        let g = disk(16);
        let s = symmetrize(&random(&g, 6)).unwrap();
        let pool = g.compatible_halfspaces().unwrap();
        let sched = PolarizationSchedule::sampled(&pool, Stopping::FixedCount(40), 1);
        let run = iterate_polarizations(&s, &sched).unwrap();
        assert_eq!(run.effective_steps, 0);
        assert!(run.trace.iter().all(|&d| d == 0.0));
        assert_eq!(run.result, s);
    }

    #[test]
    fn defect_target_or_budget() {
        let g = disk(16);
        let u = random(&g, 8);
        let pool = g.compatible_halfspaces().unwrap();
        let d0 = symmetry_defect(&u).unwrap();
        let sched = PolarizationSchedule::sampled(&pool, Stopping::DefectBelow(0.5 * d0), 3);
        let run = iterate_polarizations(&u, &sched).unwrap();
        assert!(!run.exhausted);
        assert!(*run.trace.last().unwrap() < 0.5 * d0);
        let tiny = PolarizationSchedule { halfspaces: pool[..2].to_vec(), stopping: Stopping::DefectBelow(1e-9), rng_seed: 0 };
        assert!(iterate_polarizations(&u, &tiny).unwrap().exhausted);
    }
}
