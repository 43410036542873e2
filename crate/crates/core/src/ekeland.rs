//! Finite-dimensional Ekeland selection: descend along cone-admissible steps
//! `J(w) < J(v) − σ‖w − v‖_{W^{1,1}}` until none is found, then certify the
//! stopping point by probing. The symmetric variant first polarizes the
//! start toward its symmetrization and keeps polarizing while descending.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{norm, w11_distance, GridFunction, NormKind};
use crate::functional::{polarization_tolerance, random_bump_field, DiscreteFunctional};
use crate::optim::Lbfgs;
use crate::rearrange::{polarize, symmetry_defect, theta, PolarizationSchedule, Stopping};

pub const DEFAULT_PROBES: usize = 256;
pub const DEFAULT_STEP_BUDGET: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EkelandParams {
    pub rho: f64,
    pub sigma: f64,
    /// Set when `ρ = σ = √ε`.
    pub eps: Option<f64>,
    pub probe_count: usize,
    pub step_budget: usize,
    /// Reference value for the slack precondition `J(u) − inf ≤ ρσ`; the
    /// check is skipped when absent.
    pub inf_estimate: Option<f64>,
    pub rng_seed: u64,
}

impl EkelandParams {
    pub fn new(rho: f64, sigma: f64) -> Self {
        EkelandParams {
            rho,
            sigma,
            eps: None,
            probe_count: DEFAULT_PROBES,
            step_budget: DEFAULT_STEP_BUDGET,
            inf_estimate: None,
            rng_seed: 0,
        }
    }

    /// The coupling `ρ = σ = √ε`.
    pub fn from_eps(eps: f64) -> Self {
        let r = eps.sqrt();
        EkelandParams { eps: Some(eps), ..Self::new(r, r) }
    }

    pub fn with_inf_estimate(mut self, inf: f64) -> Self {
        self.inf_estimate = Some(inf);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    fn check(&self, f_u: f64) -> Result<()> {
        if !(self.rho > 0.0 && self.sigma > 0.0) {
            return Err(Error::Precondition(format!("ρ = {} and σ = {} must be positive", self.rho, self.sigma)));
        }
        if let Some(inf) = self.inf_estimate {
            let slack = f_u - inf;
            let cap = self.rho * self.sigma;
            if slack > cap * (1.0 + 1e-12) + 1e-15 {
                return Err(Error::Precondition(format!("J(u) − inf = {slack} exceeds ρσ = {cap}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CertificateFlags {
    /// `defect(v) ≤ (½ + 2C_V)ρ`, the constant of the symmetric argument.
    pub a_ok: bool,
    /// `‖v − u‖ ≤ ρ + ‖T_ρu − u‖ + 1e-9`
    pub b_ok: bool,
    /// `J(v) ≤ J(u) + 1e-12`
    pub c_ok: bool,
    /// Worst probed slope at most `σ(1 + 1e-6)`.
    pub d_probe_ok: bool,
    /// The descent stopped on its step budget rather than on probe failure.
    pub budget_exhausted: bool,
    /// Polarization could not push the defect below `ρ/2` without raising
    /// the energy.
    pub stage1_exhausted: bool,
}

impl CertificateFlags {
    pub fn all_ok(&self) -> bool {
        self.a_ok && self.b_ok && self.c_ok && self.d_probe_ok
    }

    /// Compact form for trace files, e.g. `abcd` or `abc-|budget`.
    pub fn label(&self) -> String {
        let mut s: String = [(self.a_ok, 'a'), (self.b_ok, 'b'), (self.c_ok, 'c'), (self.d_probe_ok, 'd')]
            .iter()
            .map(|&(ok, c)| if ok { c } else { '-' })
            .collect();
        if self.budget_exhausted {
            s.push_str("|budget");
        }
        if self.stage1_exhausted {
            s.push_str("|stage1");
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct EkelandCertificate {
    pub v: GridFunction,
    /// `T_ρu`, the polarized start of the descent (`u` itself for the
    /// classic selection).
    pub t_rho_u: GridFunction,
    pub f_u: f64,
    pub f_v: f64,
    pub defect_v: f64,
    pub defect_t: f64,
    pub dist_to_input: f64,
    /// `‖T_ρu − u‖_{W^{1,1}}`
    pub t_rho_dist: f64,
    /// `ρ + ‖T_ρu − u‖_{W^{1,1}}`
    pub dist_bound: f64,
    /// Worst `(J(v) − J(w)) / ‖w − v‖` over the final probe round.
    pub slope_probe: f64,
    /// `defect(v)/ρ`
    pub c_meas: f64,
    pub steps: usize,
    pub repolarizations: usize,
    /// Largest change of the `W^{1,1}` seminorm over one polarization.
    pub polarization_w11_drift: f64,
    pub schedule_used: PolarizationSchedule,
    /// Probes of the final round, each passing (d) at the returned point.
    pub probes: Vec<GridFunction>,
    pub flags: CertificateFlags,
}

/// Constant of the discrete embedding `‖u‖_{L^{N/(N−1)}} ≤ C_V‖u‖_{W^{1,1}}`.
pub fn embedding_constant_v(dimension: usize) -> f64 {
    0.5 / (dimension as f64).sqrt()
}

/// The constant `C` in `defect(v) ≤ Cρ` that the selection guarantees when
/// the polarization stage reaches `ρ/2`.
pub fn defect_constant(dimension: usize) -> f64 {
    0.5 + 2.0 * embedding_constant_v(dimension)
}

struct Probe {
    w: GridFunction,
    f: f64,
    dist: f64,
}

impl Probe {
    fn slope(&self, f_v: f64) -> f64 {
        if self.dist > 0.0 {
            (f_v - self.f) / self.dist
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// The cone test `J(w) < J(v) − σ‖w − v‖`.
pub fn admissible(f_v: f64, f_w: f64, dist: f64, sigma: f64) -> bool {
    f_w < f_v - sigma * dist
}

/// Runs L-BFGS from `v` and backtracks toward `v` until the result is a
/// cone-admissible step.
fn descent_step(j: &DiscreteFunctional, v: &GridFunction, f_v: f64, sigma: f64) -> Result<Option<Probe>> {
    let opt = Lbfgs { max_iter: 40, gtol: 1e-13, ftol: 0.0, ..Lbfgs::default() };
    let m = opt.minimize(|x| j.value_and_gradient(x), v.values().to_vec(), None)?;
    if !(m.value < f_v) {
        return Ok(None);
    }
    let d: Vec<f64> = m.x.iter().zip(v.values()).map(|(a, b)| a - b).collect();
    let mut t = 1.0;
    for _ in 0..40 {
        let w = v.with_values(v.values().iter().zip(&d).map(|(a, b)| a + t * b).collect())?;
        let f = j.evaluate(&w)?;
        let dist = w11_distance(&w, v);
        if admissible(f_v, f, dist, sigma) {
            return Ok(Some(Probe { w, f, dist }));
        }
        t *= 0.5;
    }
    Ok(None)
}

fn unit_w11(values: Vec<f64>, like: &GridFunction) -> Result<Option<GridFunction>> {
    let d = like.with_values(values)?;
    let n = norm(&d, NormKind::W11);
    if !(n > 0.0 && n.is_finite()) {
        return Ok(None);
    }
    Ok(Some(d.scale(1.0 / n)))
}

/// `count` probes around `v`: steepest-descent points at five radii, then
/// signed random bumps at log-uniform radii in `[1e-4ρ, ρ]`.
fn probe_round<R: Rng>(
    j: &DiscreteFunctional,
    v: &GridFunction,
    rho: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Probe>> {
    let mut out = Vec::with_capacity(count);
    let (_, g) = j.value_and_gradient(v.values())?;
    let steepest = unit_w11(g.iter().map(|x| -x).collect(), v)?;
    let mut radii = (0..5).map(|k| rho * 10f64.powi(-k));
    while out.len() < count {
        let (dir, r) = match (&steepest, radii.next()) {
            (Some(d), Some(r)) => (d.clone(), r),
            _ => {
                let a = random_bump_field(j.grid(), rng);
                let b = random_bump_field(j.grid(), rng);
                let sb = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let sa = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let vals = a.values().iter().zip(b.values()).map(|(x, y)| sa * x + sb * y).collect();
                let Some(d) = unit_w11(vals, v)? else { continue };
                (d, rho * 10f64.powf(-4.0 * rng.random::<f64>()))
            }
        };
        let w = v.zip_map(&dir, |a, b| a + r * b);
        let f = j.evaluate(&w)?;
        let dist = w11_distance(&w, v);
        out.push(Probe { w, f, dist });
    }
    Ok(out)
}

struct Descent {
    v: GridFunction,
    f_v: f64,
    steps: usize,
    repolarizations: usize,
    slope_probe: f64,
    probes: Vec<GridFunction>,
    budget_exhausted: bool,
    drift: f64,
}

/// Shared descent loop. When `repolarize` is set every accepted point is
/// polarized by the next half-space from `halfspaces` if that keeps the
/// step cone-admissible and strictly lowers `J`.
fn descend<R: Rng>(
    j: &DiscreteFunctional,
    start: GridFunction,
    f_start: f64,
    params: &EkelandParams,
    rng: &mut R,
    mut repolarize: Option<&mut dyn FnMut(&mut R) -> crate::geometry::HalfSpace>,
    used: &mut Vec<crate::geometry::HalfSpace>,
) -> Result<Descent> {
    let sigma = params.sigma;
    let mut v = start;
    let mut f_v = f_start;
    let mut steps = 0;
    let mut repolarizations = 0;
    let mut drift: f64 = 0.0;
    loop {
        if steps >= params.step_budget {
            let probes = probe_round(j, &v, params.rho, params.probe_count, rng)?;
            let slope = probes.iter().map(|p| p.slope(f_v)).fold(f64::NEG_INFINITY, f64::max);
            return Ok(Descent {
                v,
                f_v,
                steps,
                repolarizations,
                slope_probe: slope,
                probes: probes.into_iter().map(|p| p.w).collect(),
                budget_exhausted: true,
                drift,
            });
        }
        let mut next = descent_step(j, &v, f_v, sigma)?;
        let mut slope_probe = f64::NEG_INFINITY;
        let mut probes = Vec::new();
        if next.is_none() {
            let round = probe_round(j, &v, params.rho, params.probe_count, rng)?;
            let best = round
                .iter()
                .enumerate()
                .map(|(i, p)| (i, p.slope(f_v)))
                .fold((usize::MAX, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            slope_probe = best.1;
            if best.0 != usize::MAX && admissible(f_v, round[best.0].f, round[best.0].dist, sigma) {
                next = round.into_iter().nth(best.0);
            } else {
                probes = round.into_iter().map(|p| p.w).collect();
            }
        }
        let Some(step) = next else {
            return Ok(Descent { v, f_v, steps, repolarizations, slope_probe, probes, budget_exhausted: false, drift });
        };
        let mut w = step.w;
        let mut f_w = step.f;
        if let Some(draw) = repolarize.as_mut() {
            let h = draw(rng);
            let abs = theta(&w);
            let wh = polarize(&abs, &h)?;
            let f_h = j.evaluate(&wh)?;
            if f_h < f_w && admissible(f_v, f_h, w11_distance(&wh, &v), sigma) {
                drift = drift.max((norm(&wh, NormKind::W11) - norm(&abs, NormKind::W11)).abs());
                w = wh;
                f_w = f_h;
                repolarizations += 1;
                used.push(h);
            }
        }
        v = w;
        f_v = f_w;
        steps += 1;
    }
}

fn certify(
    u: &GridFunction,
    f_u: f64,
    t_rho_u: GridFunction,
    params: &EkelandParams,
    d: Descent,
    schedule_used: PolarizationSchedule,
    stage1_exhausted: bool,
    stage1_drift: f64,
) -> Result<EkelandCertificate> {
    let defect_v = symmetry_defect(&d.v)?;
    let defect_t = symmetry_defect(&t_rho_u)?;
    let dist_to_input = w11_distance(&d.v, u);
    let t_rho_dist = w11_distance(&t_rho_u, u);
    let dist_bound = params.rho + t_rho_dist;
    let dim = u.grid().dim();
    let flags = CertificateFlags {
        a_ok: defect_v <= defect_constant(dim) * params.rho,
        b_ok: dist_to_input <= dist_bound + 1e-9,
        c_ok: d.f_v <= f_u + 1e-12,
        d_probe_ok: d.slope_probe <= params.sigma * (1.0 + 1e-6),
        budget_exhausted: d.budget_exhausted,
        stage1_exhausted,
    };
    Ok(EkelandCertificate {
        v: d.v,
        t_rho_u,
        f_u,
        f_v: d.f_v,
        defect_v,
        defect_t,
        dist_to_input,
        t_rho_dist,
        dist_bound,
        slope_probe: d.slope_probe,
        c_meas: defect_v / params.rho,
        steps: d.steps,
        repolarizations: d.repolarizations,
        polarization_w11_drift: stage1_drift.max(d.drift),
        schedule_used,
        probes: d.probes,
        flags,
    })
}

/// Classic selection from `u`. Conclusion (c) holds exactly; (d) is
/// certified by the final probe round.
pub fn ekeland_select(j: &DiscreteFunctional, u: &GridFunction, params: &EkelandParams) -> Result<EkelandCertificate> {
    let f_u = j.evaluate(u)?;
    params.check(f_u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut used = Vec::new();
    let d = descend(j, u.clone(), f_u, params, &mut rng, None, &mut used)?;
    let schedule = PolarizationSchedule { halfspaces: Vec::new(), stopping: Stopping::FixedCount(0), rng_seed: params.rng_seed };
    certify(u, f_u, u.clone(), params, d, schedule, false, 0.0)
}

/// Selection with polarization. Stage 1 builds `T_ρu` by polarizing with
/// random admissible half-spaces until the defect drops below `ρ/2`,
/// skipping any polarization that raises `J`; a rise larger than
/// `10·h·(1 + |J|)` means the integrand violates the polarization
/// inequality and aborts. Stage 2 descends from `T_ρu` as in
/// [`ekeland_select`], polarizing accepted points when that lowers `J`.
pub fn symmetric_ekeland_select(
    j: &DiscreteFunctional,
    u: &GridFunction,
    params: &EkelandParams,
) -> Result<EkelandCertificate> {
    if !u.is_nonnegative() {
        return Err(Error::Precondition("symmetric selection starts from a nonnegative field".into()));
    }
    let f_u = j.evaluate(u)?;
    params.check(f_u)?;
    let target = params.rho / 2.0;
    let pool = PolarizationSchedule::random(j.grid().domain(), Stopping::DefectBelow(target), params.rng_seed);
    let mut z = u.clone();
    let mut f_z = f_u;
    let mut defect = symmetry_defect(&z)?;
    let mut used = Vec::new();
    let mut drift: f64 = 0.0;
    for h in &pool.halfspaces {
        if defect < target {
            break;
        }
        let w = polarize(&z, h)?;
        let f_w = j.evaluate(&w)?;
        let tol = polarization_tolerance(j.grid(), f_z);
        if f_w > f_z + tol {
            return Err(Error::PolarAssumptionViolated { excess: f_w - f_z, tol });
        }
        if f_w <= f_z {
            drift = drift.max((norm(&w, NormKind::W11) - norm(&z, NormKind::W11)).abs());
            z = w;
            f_z = f_w;
            defect = symmetry_defect(&z)?;
            used.push(*h);
        }
    }
    let stage1_exhausted = defect >= target;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let domain = *j.grid().domain();
    let mut draw = |r: &mut ChaCha8Rng| {
        let s = PolarizationSchedule::random(&domain, Stopping::FixedCount(1), r.random());
        s.halfspaces[0]
    };
    let d = descend(j, z.clone(), f_z, params, &mut rng, Some(&mut draw), &mut used)?;
    let schedule = PolarizationSchedule { halfspaces: used, stopping: Stopping::DefectBelow(target), rng_seed: params.rng_seed };
    certify(u, f_u, z, params, d, schedule, stage1_exhausted, drift)
}

/// Exhaustive selection on a tiny lattice: every cell takes one of
/// `levels`. From `u`, repeatedly moves to the lowest-energy lattice point
/// in the cone `J(w) < J(v) − σ‖w − v‖`, so the result satisfies (c) and
/// (d) against all lattice points.
pub fn ekeland_select_lattice(
    j: &DiscreteFunctional,
    u: &GridFunction,
    sigma: f64,
    levels: &[f64],
) -> Result<EkelandCertificate> {
    ekeland_select_lattice_with(j, u, sigma, levels, &admissible)
}

/// [`ekeland_select_lattice`] with a replaceable cone test
/// `accept(J(v), J(w), ‖w − v‖, σ)`.
pub fn ekeland_select_lattice_with(
    j: &DiscreteFunctional,
    u: &GridFunction,
    sigma: f64,
    levels: &[f64],
    accept: &dyn Fn(f64, f64, f64, f64) -> bool,
) -> Result<EkelandCertificate> {
    let cells = u.len();
    let states = (levels.len() as u64).checked_pow(cells as u32).filter(|&s| s <= 50_000);
    let Some(states) = states else {
        return Err(Error::Precondition(format!("{} levels on {cells} cells is too many states", levels.len())));
    };
    if u.values().iter().any(|x| !levels.contains(x)) {
        return Err(Error::Precondition("start point is not on the lattice".into()));
    }
    let points: Vec<GridFunction> = (0..states)
        .map(|mut idx| {
            let mut vals = vec![0.0; cells];
            for slot in vals.iter_mut().rev() {
                *slot = levels[(idx % levels.len() as u64) as usize];
                idx /= levels.len() as u64;
            }
            u.with_values(vals)
        })
        .collect::<Result<_>>()?;
    let energies: Vec<f64> = points.iter().map(|p| j.evaluate(p)).collect::<Result<_>>()?;
    let f_u = j.evaluate(u)?;
    let mut v = u.clone();
    let mut f_v = f_u;
    let mut steps = 0;
    loop {
        let mut best: Option<usize> = None;
        for (i, p) in points.iter().enumerate() {
            if accept(f_v, energies[i], w11_distance(p, &v), sigma) && best.is_none_or(|b| energies[i] < energies[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        v = points[b].clone();
        f_v = energies[b];
        steps += 1;
    }
    let slope_probe = points
        .iter()
        .zip(&energies)
        .filter_map(|(p, &f)| {
            let d = w11_distance(p, &v);
            (d > 0.0).then(|| (f_v - f) / d)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let params = EkelandParams::new(f64::INFINITY, sigma);
    let d = Descent { v, f_v, steps, repolarizations: 0, slope_probe, probes: points, budget_exhausted: false, drift: 0.0 };
    let schedule = PolarizationSchedule { halfspaces: Vec::new(), stopping: Stopping::FixedCount(0), rng_seed: 0 };
    certify(u, f_u, u.clone(), &params, d, schedule, false, 0.0)
}

/// Pointwise clamp to `[−k, k]`.
pub fn truncate(u: &GridFunction, k: f64) -> GridFunction {
    let k = k.max(0.0);
    u.map(|x| x.clamp(-k, k))
}

#[derive(Clone, Debug, Serialize)]
pub struct VariationalReport {
    pub tested: usize,
    pub passed: usize,
    /// Smallest `J(w) − J(v) + √ε‖Dw − Dv‖_{L¹}`; nonnegative on a pass.
    pub worst_margin: f64,
    pub failures: Vec<usize>,
}

impl VariationalReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.tested
    }

    fn push(&mut self, index: usize, margin: f64, scale: f64) {
        self.tested += 1;
        self.worst_margin = self.worst_margin.min(margin);
        if margin >= -1e-12 * (1.0 + scale) {
            self.passed += 1;
        } else {
            self.failures.push(index);
        }
    }

    fn new() -> Self {
        VariationalReport { tested: 0, passed: 0, worst_margin: f64::INFINITY, failures: Vec::new() }
    }
}

/// Checks `J(v) ≤ J(w) + √ε‖Dw − Dv‖_{L¹}` for every `w` in `test_set`.
pub fn variational_inequality_check(
    j: &DiscreteFunctional,
    v: &GridFunction,
    eps: f64,
    test_set: &[GridFunction],
) -> Result<VariationalReport> {
    let f_v = j.evaluate(v)?;
    let mut report = VariationalReport::new();
    for (i, w) in test_set.iter().enumerate() {
        let f_w = j.evaluate(w)?;
        let margin = f_w - f_v + eps.sqrt() * w11_distance(w, v);
        report.push(i, margin, f_v.abs().max(f_w.abs()));
    }
    Ok(report)
}

/// Cells whose energy term changes when `phi` is added: the support of
/// `phi` and its stencil neighbors.
pub fn influence_set(phi: &GridFunction) -> Vec<usize> {
    let grid = phi.grid();
    let mut mark = vec![false; phi.len()];
    for (i, &x) in phi.values().iter().enumerate() {
        if x != 0.0 {
            mark[i] = true;
            for nb in grid.forward(i).iter().chain(grid.backward(i)).flatten() {
                mark[*nb] = true;
            }
        }
    }
    (0..phi.len()).filter(|&i| mark[i]).collect()
}

/// Localized form: for each `φ`, both energies are summed over the cells
/// `φ` influences only.
pub fn variational_inequality_local(
    j: &DiscreteFunctional,
    v: &GridFunction,
    eps: f64,
    phis: &[GridFunction],
) -> Result<VariationalReport> {
    let mut report = VariationalReport::new();
    for (i, phi) in phis.iter().enumerate() {
        let cells = influence_set(phi);
        let w = v.zip_map(phi, |a, b| a + b);
        let f_v = j.evaluate_on(v, &cells)?;
        let f_w = j.evaluate_on(&w, &cells)?;
        let margin = f_w - f_v + eps.sqrt() * norm(phi, NormKind::W11);
        report.push(i, margin, f_v.abs().max(f_w.abs()));
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct TruncationRow {
    pub k: f64,
    pub j_v: f64,
    pub j_w: f64,
    /// `√ε‖Dw − Dv‖_{L¹}`
    pub slack: f64,
    /// `J(w) − J(v) + slack`, nonnegative when the inequality holds.
    pub margin: f64,
    /// Measure of `{|v| > k}`.
    pub level_measure: f64,
}

/// Tests the variational inequality at `w = truncate(v, k)` for each `k`.
pub fn truncation_scan(j: &DiscreteFunctional, v: &GridFunction, eps: f64, ks: &[f64]) -> Result<Vec<TruncationRow>> {
    let j_v = j.evaluate(v)?;
    ks.iter()
        .map(|&k| {
            let w = truncate(v, k);
            let j_w = j.evaluate(&w)?;
            let slack = eps.sqrt() * w11_distance(&w, v);
            let level_measure = v
                .values()
                .iter()
                .zip(v.grid().cells())
                .filter(|(x, _)| x.abs() > k)
                .map(|(_, c)| c.measure)
                .sum();
            Ok(TruncationRow { k, j_v, j_w, slack, margin: j_w - j_v + slack, level_measure })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::functional::{CustomIntegrand, GrowthParams, PowerIntegrand, WiggleIntegrand};
    use crate::geometry::{DomainSpec, Grid};
    use crate::rearrange::symmetrize;

    fn disk(n: usize) -> Arc<Grid> {
        Arc::new(Grid::cartesian(DomainSpec::ball(2, 1.0).unwrap(), n).unwrap())
    }

    fn minimizer(j: &DiscreteFunctional) -> GridFunction {
        let m = Lbfgs::default().minimize(|x| j.value_and_gradient(x), vec![0.0; j.grid().len()], None).unwrap();
        GridFunction::new(j.grid().clone(), m.x).unwrap()
    }

    #[test]
    fn minimizer_is_kept() {
        let g = disk(12);
        let growth = GrowthParams::pure(2, 1.5, 1.0, 1.0);
        let quad = CustomIntegrand::new("quad", growth, true, |_, s, xi| {
            xi.iter().map(|v| v * v).sum::<f64>() + (s - 0.3).powi(2)
        });
        let j = DiscreteFunctional::new(Arc::new(quad), g).unwrap();
        let u0 = minimizer(&j);
        let c = ekeland_select(&j, &u0, &EkelandParams::new(0.1, 0.1)).unwrap();
        assert_eq!(c.steps, 0);
        assert_eq!(c.v, u0);
        assert!(c.flags.c_ok && c.flags.d_probe_ok);
    }

    #[test]
    fn large_sigma_accepts_start() {
        let g = disk(12);
        let j = DiscreteFunctional::new(Arc::new(WiggleIntegrand::new(2, 1.5, 0.5)), g.clone()).unwrap();
        let u = random_bump_field(&g, &mut ChaCha8Rng::seed_from_u64(1));
        let c = ekeland_select(&j, &u, &EkelandParams::new(1.0, 1e6)).unwrap();
        assert_eq!(c.steps, 0);
        assert!(c.flags.c_ok && c.flags.d_probe_ok && c.flags.b_ok);
    }

    #[test]
    fn descent_lowers_energy_and_stays_in_the_ball() {
        let g = disk(16);
        let j = DiscreteFunctional::new(Arc::new(PowerIntegrand::new(2, 1.5, 1.0)), g.clone()).unwrap();
        let inf = j.evaluate(&minimizer(&j)).unwrap();
        let u = random_bump_field(&g, &mut ChaCha8Rng::seed_from_u64(2)).scale(0.05);
        let eps = j.evaluate(&u).unwrap() - inf;
        let c = ekeland_select(&j, &u, &EkelandParams::from_eps(eps).with_inf_estimate(inf)).unwrap();
        assert!(c.f_v < c.f_u);
        assert!(c.flags.b_ok && c.flags.c_ok && c.flags.d_probe_ok, "{:?}", c.flags);
    }

    #[test]
    fn symmetric_start_is_a_fixed_point() {
        let g = disk(16);
        let j = DiscreteFunctional::new(Arc::new(PowerIntegrand::new(2, 1.5, 0.0)), g.clone()).unwrap();
        let u = GridFunction::zeros(g);
        let c = symmetric_ekeland_select(&j, &u, &EkelandParams::new(0.5, 0.5)).unwrap();
        assert_eq!(c.v, u);
        assert_eq!(c.defect_v, 0.0);
        assert!(c.flags.all_ok());
    }

    #[test]
    fn symmetric_selection_on_baseline() {
        let g = disk(16);
        let j = DiscreteFunctional::new(Arc::new(PowerIntegrand::new(2, 1.5, 1.0)), g.clone()).unwrap();
        let inf = j.evaluate(&minimizer(&j)).unwrap();
        let u = theta(&random_bump_field(&g, &mut ChaCha8Rng::seed_from_u64(4)).scale(0.05));
        let eps = j.evaluate(&u).unwrap() - inf;
        let params = EkelandParams::from_eps(eps).with_inf_estimate(inf).with_seed(3);
        let c = symmetric_ekeland_select(&j, &u, &params).unwrap();
        assert!(c.defect_v <= symmetry_defect(&u).unwrap());
        assert!(c.f_v <= c.f_u);
        assert!(c.flags.c_ok && c.flags.b_ok);
    }

    #[test]
    fn lattice_selection_satisfies_d_everywhere() {
        let g = disk(2);
        assert_eq!(g.len(), 4);
        let j = DiscreteFunctional::new(Arc::new(WiggleIntegrand::new(2, 1.5, 1.0)), g.clone()).unwrap();
        let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
        let u = GridFunction::new(g, vec![1.0, 0.0, 0.75, 0.25]).unwrap();
        let c = ekeland_select_lattice(&j, &u, 0.3, &levels).unwrap();
        assert!(c.flags.c_ok && c.flags.d_probe_ok);
        assert_eq!(c.probes.len(), 625);
    }

    #[test]
    fn truncation() {
        let g = disk(8);
        let u = GridFunction::from_fn(g, |x| x[0] - 0.3 * x[1]);
        assert_eq!(truncate(&u, 10.0), u);
        assert!(truncate(&u, 0.0).values().iter().all(|&x| x == 0.0));
        let mut a: Vec<f64> = u.values().iter().map(|x| x.abs()).collect();
        a.sort_by(f64::total_cmp);
        let k = a[a.len() / 2];
        for (t, x) in truncate(&u, k).values().iter().zip(u.values()) {
            assert_eq!(*t, if *x > k { k } else if *x < -k { -k } else { *x });
        }
    }

    #[test]
    fn identical_point_has_zero_margin() {
        let g = disk(8);
        let j = DiscreteFunctional::new(Arc::new(PowerIntegrand::new(2, 1.5, 0.2)), g.clone()).unwrap();
        let v = symmetrize(&random_bump_field(&g, &mut ChaCha8Rng::seed_from_u64(5))).unwrap();
        let r = variational_inequality_check(&j, &v, 0.01, std::slice::from_ref(&v)).unwrap();
        assert_eq!(r.worst_margin, 0.0);
        assert!(r.all_passed());
    }

    #[test]
    fn localized_matches_global() {
        let g = disk(16);
        let j = DiscreteFunctional::new(Arc::new(WiggleIntegrand::new(2, 1.5, 0.2)), g.clone()).unwrap();
        let v = random_bump_field(&g, &mut ChaCha8Rng::seed_from_u64(6));
        let mut phi = vec![0.0; g.len()];
        phi[g.len() / 2] = 0.1;
        phi[g.len() / 2 + 1] = -0.05;
        let phi = v.with_values(phi).unwrap();
        let w = v.zip_map(&phi, |a, b| a + b);
        let global = variational_inequality_check(&j, &v, 0.01, &[w]).unwrap();
        let local = variational_inequality_local(&j, &v, 0.01, &[phi]).unwrap();
        assert!((global.worst_margin - local.worst_margin).abs() < 1e-12);
    }
}
