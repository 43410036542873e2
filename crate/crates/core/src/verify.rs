//! Invariant suites behind `symmin verify`. Each suite runs against a set of
//! [`Operators`], so the same checks can be pointed at deliberately broken
//! variants to confirm that they catch the breakage.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{bundled, BUNDLED};
use crate::ekeland::{admissible, ekeland_select_lattice_with, embedding_constant_v};
use crate::error::{Error, Result};
use crate::field::{GridFunction, NormKind};
use crate::functional::{random_bump_field, DiscreteFunctional, IntegrandRegistry, WiggleIntegrand};
use crate::geometry::{DomainSpec, Grid, GridMode, HalfSpace};
use crate::oracle::{oracle_ekeland, oracle_polarize, oracle_symmetrize, oracle_w11, LatticeSpec};
use crate::pipeline::minimizing_sequence_pipeline;
use crate::rearrange::{defect_exponent, pairing, polarize, symmetrize, theta, PolarizationSchedule, Stopping};

/// The operations the suites exercise.
pub trait Operators: Sync {
    fn name(&self) -> &str;
    fn polarize(&self, u: &GridFunction, h: &HalfSpace) -> Result<GridFunction>;
    fn symmetrize(&self, u: &GridFunction) -> Result<GridFunction>;
    /// The Ekeland cone test `accept(J(v), J(w), ‖w − v‖, σ)`.
    fn accept(&self, f_v: f64, f_w: f64, dist: f64, sigma: f64) -> bool;
}

/// The library's own operators.
pub struct Reference;

impl Operators for Reference {
    fn name(&self) -> &str {
        "reference"
    }
    fn polarize(&self, u: &GridFunction, h: &HalfSpace) -> Result<GridFunction> {
        polarize(u, h)
    }
    fn symmetrize(&self, u: &GridFunction) -> Result<GridFunction> {
        symmetrize(u)
    }
    fn accept(&self, f_v: f64, f_w: f64, dist: f64, sigma: f64) -> bool {
        admissible(f_v, f_w, dist, sigma)
    }
}

/// Broken variants, each differing from [`Reference`] in one operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutant {
    /// Polarization keeps the smaller value inside `H`.
    SwapMaxMin,
    /// Symmetrization hands sorted values out in layout order without
    /// settling ties.
    BrokenTieBreak,
    /// The cone test loses its `σ‖w − v‖` term.
    DropSigma,
}

impl Mutant {
    pub const ALL: [Mutant; 3] = [Mutant::SwapMaxMin, Mutant::BrokenTieBreak, Mutant::DropSigma];
}

impl Operators for Mutant {
    fn name(&self) -> &str {
        match self {
            Mutant::SwapMaxMin => "swap-max-min",
            Mutant::BrokenTieBreak => "broken-tie-break",
            Mutant::DropSigma => "drop-sigma",
        }
    }

    fn polarize(&self, u: &GridFunction, h: &HalfSpace) -> Result<GridFunction> {
        if *self != Mutant::SwapMaxMin {
            return polarize(u, h);
        }
        h.check_class(u.grid().domain())?;
        let v = theta(u);
        let pairs = pairing(u.grid(), h);
        let cells = u.grid().cells();
        let vals = v.values();
        let out = (0..vals.len())
            .map(|i| {
                let m = pairs[i].map_or(0.0, |j| vals[j]);
                if h.contains(&cells[i].center) {
                    vals[i].min(m)
                } else {
                    vals[i].max(m)
                }
            })
            .collect();
        v.with_values(out)
    }

    fn symmetrize(&self, u: &GridFunction) -> Result<GridFunction> {
        if *self != Mutant::BrokenTieBreak {
            return symmetrize(u);
        }
        symmetrize(u)?; // same preconditions as the reference
        let v = theta(u);
        let mut out = vec![0.0; v.len()];
        for block in u.grid().rearrangement_layout() {
            let order: Vec<usize> = block.iter().flatten().copied().collect();
            let mut vals: Vec<f64> = order.iter().map(|&i| v.values()[i]).collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            for (&i, x) in order.iter().zip(vals) {
                out[i] = x;
            }
        }
        v.with_values(out)
    }

    fn accept(&self, f_v: f64, f_w: f64, dist: f64, sigma: f64) -> bool {
        match self {
            Mutant::DropSigma => f_w < f_v,
            _ => admissible(f_v, f_w, dist, sigma),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Axioms,
    Oracle,
    Pipeline,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axioms" => Ok(Suite::Axioms),
            "oracle" => Ok(Suite::Oracle),
            "pipeline" => Ok(Suite::Pipeline),
            other => Err(Error::Config(format!("unknown suite `{other}` (axioms, oracle, pipeline)"))),
        }
    }
}

/// One named check: how many cases ran, how many failed, and the worst
/// observed excess (positive on failure).
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub worst: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        CheckResult { name: name.to_string(), cases: 0, failures: 0, worst: f64::NEG_INFINITY, detail: String::new() }
    }

    /// Records one case; `excess > 0` is a failure.
    fn record(&mut self, excess: f64) {
        self.cases += 1;
        if excess > 0.0 || excess.is_nan() {
            self.failures += 1;
        }
        if excess > self.worst || excess.is_nan() {
            self.worst = excess;
        }
    }

    fn exact(&mut self, equal: bool) {
        self.record(if equal { 0.0 } else { 1.0 });
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub operators: String,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut s = format!("suite {:?} ({})\n", self.suite, self.operators);
        for c in &self.checks {
            let status = if c.passed() { "PASS" } else { "FAIL" };
            s.push_str(&format!("  {status} {}: {} cases, {} failures", c.name, c.cases, c.failures));
            if !c.detail.is_empty() {
                s.push_str(&format!(" ({})", c.detail));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct AxiomSettings {
    pub functions: usize,
    pub disk_cells: usize,
    pub annulus: (usize, usize),
    pub convergence_runs: usize,
    pub convergence_steps: usize,
    /// Final defect must drop below this fraction of the initial one ...
    pub convergence_ratio: f64,
    /// ... in at least this fraction of runs.
    pub convergence_quota: f64,
    pub seed: u64,
}

impl Default for AxiomSettings {
    fn default() -> Self {
        AxiomSettings {
            functions: 1000,
            disk_cells: 64,
            annulus: (32, 64),
            convergence_runs: 100,
            convergence_steps: 500,
            convergence_ratio: 0.05,
            convergence_quota: 0.95,
            seed: 0,
        }
    }
}

impl AxiomSettings {
    /// Small sizes for quick runs.
    pub fn quick() -> Self {
        AxiomSettings { functions: 60, annulus: (8, 16), convergence_runs: 4, ..Default::default() }
    }
}

/// A random nonnegative field: i.i.d. uniform, quantized to a few levels
/// (many ties), a smooth bump field, or the indicator of a random disk.
pub fn random_field<R: Rng>(grid: &Arc<Grid>, rng: &mut R) -> GridFunction {
    match rng.random_range(0..4) {
        0 => {
            let vals = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
            GridFunction::new(grid.clone(), vals).expect("length matches")
        }
        1 => {
            let levels = rng.random_range(2..6) as f64;
            let vals = (0..grid.len()).map(|_| (rng.random::<f64>() * levels).floor() / levels).collect();
            GridFunction::new(grid.clone(), vals).expect("length matches")
        }
        2 => random_bump_field(grid, rng),
        _ => {
            let r = grid.domain().outer_radius;
            let c = [rng.random_range(-0.5..0.5) * r, rng.random_range(-0.5..0.5) * r];
            let rad = rng.random_range(0.1..0.5) * r;
            GridFunction::from_fn(grid.clone(), |x| f64::from(((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt() <= rad))
        }
    }
}

/// A generic (continuous-valued) random field: i.i.d. uniform or a bump
/// field. Few-valued fields converge under polarization only up to a lattice
/// staircase, so convergence is measured on these.
pub fn generic_field<R: Rng>(grid: &Arc<Grid>, rng: &mut R) -> GridFunction {
    if rng.random::<bool>() {
        let vals = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
        GridFunction::new(grid.clone(), vals).expect("length matches")
    } else {
        random_bump_field(grid, rng)
    }
}

fn sorted(u: &GridFunction) -> Vec<f64> {
    let mut v = u.values().to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn lq_distance(a: &GridFunction, b: &GridFunction, q: f64) -> f64 {
    a.sub(b).norm(NormKind::Lq(q))
}

/// Properties (1)–(5) of the abstract framework, plus equimeasurability and
/// defect monotonicity, on a Cartesian disk and a polar annulus.
pub fn axiom_suite(ops: &dyn Operators, settings: &AxiomSettings) -> Result<SuiteReport> {
    let disk = Arc::new(Grid::cartesian(DomainSpec::ball(2, 1.0)?, settings.disk_cells)?);
    let annulus = Arc::new(Grid::polar(DomainSpec::annulus(2, 0.5, 1.0)?, settings.annulus.0, settings.annulus.1)?);
    let mut embed = CheckResult::new("property (1) embedding");
    let mut cont = CheckResult::new("property (2) continuity");
    let mut idem = CheckResult::new("property (3) idempotence");
    let mut fixed = CheckResult::new("property (3) symmetric fixed point");
    let mut comm = CheckResult::new("property (3) commutation");
    let mut conv = CheckResult::new("property (4) convergence");
    let mut contr = CheckResult::new("property (5) contraction");
    let mut equi = CheckResult::new("equimeasurability");
    let mut mono = CheckResult::new("defect monotonicity");
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for grid in [&disk, &annulus] {
        let pool = grid.compatible_halfspaces()?;
        let q = defect_exponent(grid.dim());
        let cartesian = matches!(grid.mode(), GridMode::Cartesian { .. });
        let c_v = embedding_constant_v(grid.dim());
        for _ in 0..settings.functions {
            let u = random_field(grid, &mut rng);
            let v = random_field(grid, &mut rng);
            let h = pool[rng.random_range(0..pool.len())];
            let uh = ops.polarize(&u, &h)?;
            let us = ops.symmetrize(&u)?;
            if cartesian {
                embed.record(u.norm(NormKind::Lq(q)) - c_v * u.norm(NormKind::W11));
            }
            let signed = v.map(|x| 2.0 * x - 1.0);
            let signed_u = u.map(|x| 1.0 - 2.0 * x);
            cont.record(
                lq_distance(&ops.polarize(&signed_u, &h)?, &ops.polarize(&signed, &h)?, q)
                    - lq_distance(&signed_u, &signed, q)
                    - 1e-12,
            );
            idem.exact(ops.polarize(&uh, &h)? == uh);
            fixed.exact(ops.polarize(&us, &h)? == us);
            comm.exact(ops.symmetrize(&uh)? == us);
            contr.record(lq_distance(&uh, &ops.polarize(&v, &h)?, q) - lq_distance(&u, &v, q) - 1e-12);
            equi.exact(sorted(&uh) == sorted(&u));
            let d_u = lq_distance(&theta(&u), &us, q);
            let d_uh = lq_distance(&uh, &ops.symmetrize(&uh)?, q);
            mono.record(d_uh - d_u - 1e-12);
        }
    }
    let mut reached = 0;
    let mut worst_ratio = 0.0f64;
    let mut monotone = true;
    for run in 0..settings.convergence_runs {
        let u = generic_field(&disk, &mut rng);
        let sched = PolarizationSchedule::random(
            disk.domain(),
            Stopping::FixedCount(settings.convergence_steps),
            settings.seed.wrapping_add(run as u64),
        );
        let q = defect_exponent(disk.dim());
        let mut cur = theta(&u);
        let first = lq_distance(&cur, &ops.symmetrize(&cur)?, q);
        let mut prev = first;
        for h in &sched.halfspaces {
            cur = ops.polarize(&cur, h)?;
            let d = lq_distance(&cur, &ops.symmetrize(&cur)?, q);
            if d > prev + 1e-12 {
                monotone = false;
            }
            prev = d;
        }
        let ratio = if first > 0.0 { prev / first } else { 0.0 };
        worst_ratio = worst_ratio.max(ratio);
        if ratio < settings.convergence_ratio {
            reached += 1;
        }
    }
    if settings.convergence_runs > 0 {
        let quota = (settings.convergence_quota * settings.convergence_runs as f64).ceil() as usize;
        conv.cases = settings.convergence_runs;
        conv.failures = if reached >= quota && monotone { 0 } else { (settings.convergence_runs - reached).max(1) };
        conv.worst = worst_ratio;
        conv.detail = format!(
            "{reached}/{} runs below {} of the initial defect (need {quota}), monotone: {monotone}, worst ratio {worst_ratio:.4}",
            settings.convergence_runs, settings.convergence_ratio
        );
    }
    embed.detail = format!("C_V = {:.4}, Cartesian grid only", embedding_constant_v(2));
    Ok(SuiteReport {
        suite: Suite::Axioms,
        operators: ops.name().to_string(),
        checks: vec![embed, cont, idem, fixed, comm, conv, contr, equi, mono],
    })
}

#[derive(Clone, Debug)]
pub struct OracleSettings {
    pub polarize_cases: usize,
    pub symmetrize_cases: usize,
    pub lattice_runs: usize,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings { polarize_cases: 1000, symmetrize_cases: 1000, lattice_runs: 100, seed: 0 }
    }
}

impl OracleSettings {
    pub fn quick() -> Self {
        OracleSettings { polarize_cases: 100, symmetrize_cases: 100, lattice_runs: 10, seed: 0 }
    }
}

fn close_rel(a: &GridFunction, b: &GridFunction, tol: f64) -> bool {
    a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
}

/// Main operators against the brute-force oracles: polarization on an 8×8
/// disk, symmetrization on a 16×16 disk and an 8×16 polar annulus, and the
/// lattice Ekeland selection on a 4-cell grid with 5 levels.
pub fn oracle_suite(ops: &dyn Operators, settings: &OracleSettings) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut pol = CheckResult::new("oracle_polarize equivalence");
    let small = Arc::new(Grid::cartesian(DomainSpec::ball(2, 1.0)?, 8)?);
    let pool = small.compatible_halfspaces()?;
    for _ in 0..settings.polarize_cases {
        let u = random_field(&small, &mut rng);
        let h = pool[rng.random_range(0..pool.len())];
        pol.exact(ops.polarize(&u, &h)? == oracle_polarize(&u, &h)?);
    }
    pol.detail = format!("8×8 disk, {} compatible half-spaces", pool.len());

    let mut sym = CheckResult::new("oracle_symmetrize equivalence");
    let disk = Arc::new(Grid::cartesian(DomainSpec::ball(2, 1.0)?, 16)?);
    let ring = Arc::new(Grid::polar(DomainSpec::annulus(2, 0.5, 1.0)?, 8, 16)?);
    for k in 0..settings.symmetrize_cases {
        let g = if k % 2 == 0 { &disk } else { &ring };
        let u = random_field(g, &mut rng);
        sym.exact(close_rel(&ops.symmetrize(&u)?, &oracle_symmetrize(&u)?, 1e-12));
    }
    sym.detail = "16×16 disk and 8×16 polar annulus, 1e-12 relative".into();

    let (c, d, b) = lattice_checks(ops, settings.lattice_runs, &mut rng)?;
    Ok(SuiteReport { suite: Suite::Oracle, operators: ops.name().to_string(), checks: vec![pol, sym, c, d, b] })
}

/// Runs the lattice selection with the operators' cone test and checks the
/// result exhaustively: (c) `J(v) ≤ J(u)`; (d) `v` is in the oracle's
/// admissible set; (b) `‖v − u‖ ≤ ρ` with `ρ = (J(u) − min J)/σ`, the
/// smallest radius the principle allows.
fn lattice_checks(
    ops: &dyn Operators,
    runs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(CheckResult, CheckResult, CheckResult)> {
    let grid = Arc::new(Grid::cartesian(DomainSpec::ball(2, 1.0)?, 2)?);
    let j = DiscreteFunctional::new(Arc::new(WiggleIntegrand::new(2, 1.5, 1.0)), grid.clone())?;
    let lattice = LatticeSpec::uniform(grid.len(), 5, 0.25)?;
    let energies: Vec<f64> = (0..lattice.states())
        .map(|s| j.evaluate(&GridFunction::new(grid.clone(), lattice.point(s))?))
        .collect::<Result<_>>()?;
    let inf = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mut c = CheckResult::new("conclusion (c)");
    let mut d = CheckResult::new("conclusion (d)");
    let mut b = CheckResult::new("conclusion (b)");
    let accept = |f_v: f64, f_w: f64, dist: f64, sigma: f64| ops.accept(f_v, f_w, dist, sigma);
    for _ in 0..runs {
        let u = GridFunction::new(grid.clone(), lattice.point(rng.random_range(0..lattice.states())))?;
        let sigma = 10f64.powf(rng.random_range(-2.0..0.5));
        let f_u = j.evaluate(&u)?;
        let rho = ((f_u - inf) / sigma).max(0.0) * (1.0 + 1e-12) + 1e-15;
        let cert = ekeland_select_lattice_with(&j, &u, sigma, &lattice.levels, &accept)?;
        let adm = oracle_ekeland(&j, &u, rho, sigma, &lattice)?;
        c.record(cert.f_v - f_u);
        d.exact(adm.contains(&cert.v));
        b.record(oracle_w11(&cert.v.sub(&u))? - rho - 1e-12);
    }
    for r in [&mut c, &mut d, &mut b] {
        r.detail = format!("4 cells × 5 levels, {runs} runs, exhaustive");
    }
    Ok((c, d, b))
}

/// Runs the pipeline on every bundled config and checks its hard
/// invariants; the baseline must also show a strictly positive defect that
/// decreases in `h`.
pub fn pipeline_suite() -> Result<SuiteReport> {
    let registry = IntegrandRegistry::with_builtins();
    let mut checks = Vec::new();
    for (name, _) in BUNDLED {
        let exp = bundled(name)?.build(&registry)?;
        let trace = minimizing_sequence_pipeline(&exp.functional, &exp.config.pipeline)?;
        for check in &trace.meta.checks {
            if check.hard {
                let mut r = CheckResult::new(&format!("{name}: {}", check.name));
                r.exact(check.passed);
                r.detail = check.detail.clone();
                checks.push(r);
            }
        }
        if exp.config.integrand.name == "baseline" {
            let mut r = CheckResult::new(&format!("{name}: defect positive and decreasing"));
            let defects: Vec<f64> = trace.rows.iter().map(|row| row.defect).collect();
            r.exact(defects.iter().all(|d| *d > 0.0) && defects.windows(2).all(|w| w[1] < w[0]));
            r.detail = defects.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", ");
            checks.push(r);
        }
    }
    Ok(SuiteReport { suite: Suite::Pipeline, operators: Reference.name().to_string(), checks })
}

/// Runs a suite on the reference operators; `quick` shrinks the axiom and
/// oracle case counts (the pipeline suite has no reduced form).
pub fn run_suite(suite: Suite, quick: bool) -> Result<SuiteReport> {
    match suite {
        Suite::Axioms if quick => axiom_suite(&Reference, &AxiomSettings::quick()),
        Suite::Axioms => axiom_suite(&Reference, &AxiomSettings::default()),
        Suite::Oracle if quick => oracle_suite(&Reference, &OracleSettings::quick()),
        Suite::Oracle => oracle_suite(&Reference, &OracleSettings::default()),
        Suite::Pipeline => pipeline_suite(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suites_pass_on_reference() {
        let a = axiom_suite(&Reference, &AxiomSettings::quick()).unwrap();
        assert!(a.passed(), "{}", a.render());
        let o = oracle_suite(&Reference, &OracleSettings::quick()).unwrap();
        assert!(o.passed(), "{}", o.render());
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!("oracle".parse::<Suite>().unwrap(), Suite::Oracle);
        assert!("nope".parse::<Suite>().is_err());
    }
}
