//! The minimizing-sequence driver: build a crude minimizing sequence by
//! descent, pass each member through the symmetric Ekeland selection with
//! `ρ = σ = √ε_h`, and record energies, defects and norms per step.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ekeland::{defect_constant, symmetric_ekeland_select, truncation_scan, EkelandParams, TruncationRow};
use crate::error::{Error, Result};
use crate::field::{GridFunction, NormKind};
use crate::functional::{
    apriori_gradient_bound, check_polarization_monotone, random_bump_field, AprioriBound, DiscreteFunctional,
    PolarizationReport,
};
use crate::geometry::{DomainSpec, GridMode};
use crate::optim::Lbfgs;
use crate::rearrange::{symmetry_defect, theta};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub seq_len: usize,
    /// `ε_h`, strictly decreasing. Empty means `4^{−h}`.
    pub eps_schedule: Vec<f64>,
    pub rng_seed: u64,
    pub probe_count: usize,
    pub step_budget: usize,
    /// Random trials of the polarization inequality run before anything
    /// else.
    pub polarization_trials: usize,
    /// Multiples of `p` at which `‖Dv_h‖_{L^q}` is monitored.
    pub q_factors: Vec<f64>,
    /// Random starts of the warm-up descent, besides the zero start.
    pub warmup_starts: usize,
    /// Levels `k` of the truncation scan (bounded regime only).
    pub truncation_levels: usize,
    /// Ratio allowed between the largest and smallest `C_meas` over the
    /// last three steps.
    pub c_meas_stability: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            seq_len: 6,
            eps_schedule: Vec::new(),
            rng_seed: 0,
            probe_count: crate::ekeland::DEFAULT_PROBES,
            step_budget: crate::ekeland::DEFAULT_STEP_BUDGET,
            polarization_trials: 20,
            q_factors: vec![1.1, 1.25, 1.5],
            warmup_starts: 3,
            truncation_levels: 8,
            c_meas_stability: 2.0,
        }
    }
}

impl PipelineSettings {
    pub fn geometric(seq_len: usize, rng_seed: u64) -> Self {
        PipelineSettings { seq_len, rng_seed, ..Default::default() }
    }

    pub fn eps(&self) -> Vec<f64> {
        if self.eps_schedule.is_empty() {
            (1..=self.seq_len).map(|h| 4f64.powi(-(h as i32))).collect()
        } else {
            self.eps_schedule.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eps = self.eps();
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be at least 1".into()));
        }
        if eps.len() != self.seq_len {
            return Err(Error::Config(format!("eps_schedule has {} entries but seq_len is {}", eps.len(), self.seq_len)));
        }
        if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Config("eps_schedule entries must be positive".into()));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("eps_schedule must be strictly decreasing".into()));
        }
        if self.probe_count == 0 || self.step_budget == 0 {
            return Err(Error::Config("probe_count and step_budget must be positive".into()));
        }
        if self.q_factors.iter().any(|q| *q <= 1.0) {
            return Err(Error::Config("q_factors must exceed 1 (q > p)".into()));
        }
        if self.c_meas_stability < 1.0 {
            return Err(Error::Config("c_meas_stability must be at least 1".into()));
        }
        Ok(())
    }
}

/// One CSV row per sequence index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub h: usize,
    pub eps: f64,
    #[serde(rename = "J_u")]
    pub j_u: f64,
    #[serde(rename = "J_v")]
    pub j_v: f64,
    pub defect: f64,
    pub grad_p_norm: f64,
    pub linf_norm: f64,
    /// `‖Dv_h‖_{L^q}` at the middle of the `q` ladder.
    pub w1q_norm: f64,
    pub dist_w11: f64,
    pub dist_bound: f64,
    #[serde(rename = "C_meas")]
    pub c_meas: f64,
    pub flags: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Hard checks are invariants of the construction; the others are
    /// measured quantities.
    pub hard: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepDetail {
    pub h: usize,
    pub defect_u: f64,
    pub defect_t: f64,
    pub t_rho_dist: f64,
    pub slope_probe: f64,
    pub descent_steps: usize,
    pub polarizations: usize,
    pub repolarizations: usize,
    pub polarization_w11_drift: f64,
    pub apriori: AprioriBound,
    /// `(q, ‖Dv_h‖_{L^q})` for the whole ladder.
    pub q_norms: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceMeta {
    pub domain: DomainSpec,
    pub grid: GridMode,
    pub cells: usize,
    pub integrand: String,
    pub p: f64,
    pub settings: PipelineSettings,
    pub eps: Vec<f64>,
    pub inf_estimate: f64,
    pub inf_restarts: usize,
    /// Smallest `C` with `defect(v_h) ≤ C√ε_h` for every `h`.
    pub c_meas_fit: f64,
    /// The same fit restricted to `h ≤ H`, for each `H`.
    pub c_meas_fit_history: Vec<f64>,
    /// `max/min` of the fit history over the last three `H`.
    pub c_meas_fit_spread: f64,
    /// `max/min` of the per-step ratios `defect(v_h)/√ε_h` over the last
    /// three steps. Informational: on a fixed grid it also grows once the
    /// defect settles at the discrete minimizer's own asymmetry.
    pub c_meas_spread: f64,
    /// The constant the selection guarantees for conclusion (a).
    pub c_theory: f64,
    pub polarization_check: PolarizationReport,
    pub steps: Vec<StepDetail>,
    pub truncation: Vec<TruncationRow>,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug)]
pub struct ExperimentTrace {
    pub rows: Vec<TraceRow>,
    pub meta: TraceMeta,
    /// The selected `v_h`.
    pub selected: Vec<GridFunction>,
    /// The crude `u_h`.
    pub crude: Vec<GridFunction>,
}

impl ExperimentTrace {
    pub fn all_passed(&self) -> bool {
        self.meta.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.meta.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn invariants_hold(&self) -> bool {
        self.meta.checks.iter().all(|c| c.passed || !c.hard)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn meta_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)?)
    }

    /// Writes `<stem>.csv` and `<stem>.meta.json` into `dir`, each through a
    /// temporary file and a rename.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv()?.as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.meta.json")), self.meta_json()?.as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn lbfgs_long() -> Lbfgs {
    Lbfgs { max_iter: 20_000, ..Lbfgs::default() }
}

/// Long descents from zero and from `starts` random fields; the lowest
/// value found and the point attaining it.
pub fn warmup(j: &DiscreteFunctional, starts: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    let n = j.grid().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut best = lbfgs_long().minimize(|x| j.value_and_gradient(x), vec![0.0; n], None)?;
    for _ in 0..starts {
        let x0 = random_bump_field(j.grid(), &mut rng).scale(0.1).into_values();
        let m = lbfgs_long().minimize(|x| j.value_and_gradient(x), x0, None)?;
        if m.value < best.value {
            best = m;
        }
    }
    let refined = lbfgs_long().minimize(|x| j.value_and_gradient(x), best.x.clone(), None)?;
    if refined.value < best.value {
        best = refined;
    }
    Ok((best.value, best.x))
}

/// `θ(base + δ·kick)` with the largest `δ` (to bisection precision) whose
/// energy stays within `inf + ε/2`. `base` comes from the warm-up descent;
/// the kick keeps the member asymmetric at the scale `√ε` instead of at the
/// grid's own floor.
fn crude_member(j: &DiscreteFunctional, base: &GridFunction, kick: &GridFunction, inf: f64, eps: f64) -> Result<GridFunction> {
    let level = inf + 0.5 * eps;
    let at = |d: f64| theta(&base.zip_map(kick, |b, k| b + d * k));
    let energy = |d: f64| j.evaluate(&at(d));
    if energy(0.0)? > level {
        return Err(Error::BudgetExhausted(format!("warm-up point lies above inf + {}", 0.5 * eps)));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while energy(hi)? <= level {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(at(lo));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if energy(mid)? <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(lo))
}

/// Runs the pipeline. The polarization inequality is tested first and a
/// failure aborts with [`Error::PolarAssumptionViolated`]. If a member
/// beats the inf estimate by more than `ε_h` the estimate is lowered and
/// the run restarts once.
pub fn minimizing_sequence_pipeline(j: &DiscreteFunctional, settings: &PipelineSettings) -> Result<ExperimentTrace> {
    settings.validate()?;
    let polar = check_polarization_monotone(j, settings.polarization_trials.max(1), settings.rng_seed)?;
    if !polar.passed {
        let tol = polar.worst_increase / polar.worst_ratio;
        return Err(Error::PolarAssumptionViolated { excess: polar.worst_increase, tol });
    }
    let (inf, best) = warmup(j, settings.warmup_starts, settings.rng_seed)?;
    let best = theta(&GridFunction::new(j.grid().clone(), best)?);
    let mut inf = inf.min(j.evaluate(&best)?);
    let mut restarts = 0;
    loop {
        match run_sequence(j, settings, inf, &best, &polar, restarts) {
            Err(Error::InfEstimateDrift { value, .. }) if restarts == 0 => {
                inf = value;
                restarts += 1;
            }
            other => return other,
        }
    }
}

fn run_sequence(
    j: &DiscreteFunctional,
    settings: &PipelineSettings,
    inf: f64,
    best: &GridFunction,
    polar: &PolarizationReport,
    restarts: usize,
) -> Result<ExperimentTrace> {
    let grid = j.grid();
    let p = j.p_space();
    let eps_all = settings.eps();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.rng_seed);
    // One asymmetric direction shared by every member.
    let kick = random_bump_field(grid, &mut rng);
    let mut rows = Vec::new();
    let mut steps = Vec::new();
    let mut selected = Vec::new();
    let mut crude = Vec::new();
    for (idx, &eps) in eps_all.iter().enumerate() {
        let h = idx + 1;
        let u = crude_member(j, best, &kick, inf, eps)?;
        let j_u = j.evaluate(&u)?;
        if j_u < inf - eps {
            return Err(Error::InfEstimateDrift { value: j_u, estimate: inf, eps });
        }
        let params = EkelandParams {
            probe_count: settings.probe_count,
            step_budget: settings.step_budget,
            ..EkelandParams::from_eps(eps).with_inf_estimate(inf).with_seed(settings.rng_seed.wrapping_add(h as u64))
        };
        let cert = symmetric_ekeland_select(j, &u, &params)?;
        if cert.f_v < inf - eps {
            return Err(Error::InfEstimateDrift { value: cert.f_v, estimate: inf, eps });
        }
        let apriori = apriori_gradient_bound(j, &cert.v, inf, eps)?;
        let q_norms: Vec<(f64, f64)> =
            settings.q_factors.iter().map(|f| (f * p, cert.v.norm(NormKind::W1p(f * p)))).collect();
        let w1q = q_norms.get(q_norms.len() / 2).map_or(f64::NAN, |x| x.1);
        rows.push(TraceRow {
            h,
            eps,
            j_u,
            j_v: cert.f_v,
            defect: cert.defect_v,
            grad_p_norm: cert.v.norm(NormKind::W1p(p)),
            linf_norm: cert.v.norm(NormKind::Linf),
            w1q_norm: w1q,
            dist_w11: cert.dist_to_input,
            dist_bound: cert.dist_bound,
            c_meas: cert.c_meas,
            flags: cert.flags.label(),
        });
        steps.push(StepDetail {
            h,
            defect_u: symmetry_defect(&u)?,
            defect_t: cert.defect_t,
            t_rho_dist: cert.t_rho_dist,
            slope_probe: cert.slope_probe,
            descent_steps: cert.steps,
            polarizations: cert.schedule_used.halfspaces.len(),
            repolarizations: cert.repolarizations,
            polarization_w11_drift: cert.polarization_w11_drift,
            apriori,
            q_norms,
        });
        crude.push(u);
        selected.push(cert.v);
    }

    let truncation = match selected.last() {
        Some(v) if j.integrand().growth().bounded_regime(grid.dim()) => {
            let mut mags: Vec<f64> = v.values().iter().map(|x| x.abs()).collect();
            mags.sort_by(f64::total_cmp);
            let levels = settings.truncation_levels.max(1);
            let ks: Vec<f64> = (0..levels).map(|i| mags[(mags.len() - 1) * i / levels]).collect();
            truncation_scan(j, v, *eps_all.last().unwrap(), &ks)?
        }
        _ => Vec::new(),
    };

    let history = fit_history(&rows);
    let checks = summarize(&rows, &steps, &history, settings);
    let tail = &rows[rows.len().saturating_sub(3)..];
    let meta = TraceMeta {
        domain: *grid.domain(),
        grid: grid.mode(),
        cells: grid.len(),
        integrand: j.integrand().name().to_string(),
        p,
        settings: settings.clone(),
        eps: eps_all,
        inf_estimate: inf,
        inf_restarts: restarts,
        c_meas_fit: history.last().copied().unwrap_or(0.0),
        c_meas_fit_spread: spread(tail_of(&history).iter().copied()),
        c_meas_fit_history: history,
        c_meas_spread: spread(tail.iter().map(|r| r.c_meas)),
        c_theory: defect_constant(grid.dim()),
        polarization_check: polar.clone(),
        steps,
        truncation,
        checks,
    };
    Ok(ExperimentTrace { rows, meta, selected, crude })
}

/// Running maxima of `defect(v_h)/√ε_h`.
fn fit_history(rows: &[TraceRow]) -> Vec<f64> {
    rows.iter()
        .scan(0.0f64, |fit, r| {
            *fit = fit.max(r.defect / r.eps.sqrt());
            Some(*fit)
        })
        .collect()
}

fn tail_of(v: &[f64]) -> &[f64] {
    &v[v.len().saturating_sub(3)..]
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, 0.0f64), |(lo, hi), c| (lo.min(c), hi.max(c)));
    if lo > 0.0 {
        hi / lo
    } else if hi == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

fn summarize(rows: &[TraceRow], steps: &[StepDetail], history: &[f64], settings: &PipelineSettings) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name: &str, hard: bool, passed: bool, detail: String| {
        checks.push(Check { name: name.to_string(), passed, hard, detail });
    };
    let bad_c: Vec<usize> = rows.iter().filter(|r| r.j_v > r.j_u).map(|r| r.h).collect();
    push("(c) J(v_h) <= J(u_h)", true, bad_c.is_empty(), format!("violations at h = {bad_c:?}"));
    let bad_b: Vec<usize> = rows.iter().filter(|r| r.dist_w11 > r.dist_bound + 1e-9).map(|r| r.h).collect();
    push("(b) distance bound", true, bad_b.is_empty(), format!("violations at h = {bad_b:?}"));
    let bad_d: Vec<usize> = rows.iter().filter(|r| !r.flags.contains('d')).map(|r| r.h).collect();
    push("(d) probe slope <= sigma", false, bad_d.is_empty(), format!("violations at h = {bad_d:?}"));
    let s = spread(tail_of(history).iter().copied());
    push(
        "(a) fitted C_meas stable over the last three h",
        false,
        s <= settings.c_meas_stability,
        format!("fits {:?}, max/min = {s:.3} (allowed {})", tail_of(history), settings.c_meas_stability),
    );
    let sup = rows.iter().map(|r| r.grad_p_norm).fold(0.0, f64::max);
    let within = steps.iter().all(|s| s.apriori.measured <= s.apriori.bound);
    push("a-priori gradient bound", true, within && sup.is_finite(), format!("sup ||Dv_h||_p = {sup:.6}"));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_validation() {
        let mut s = PipelineSettings::geometric(3, 0);
        assert_eq!(s.eps(), vec![0.25, 0.0625, 0.015625]);
        s.validate().unwrap();
        s.eps_schedule = vec![0.1, 0.2, 0.05];
        assert!(s.validate().is_err());
        s.eps_schedule = vec![0.1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn fit_history_is_running_max() {
        let row = |h: usize, eps: f64, defect: f64| TraceRow {
            h,
            eps,
            j_u: 0.0,
            j_v: 0.0,
            defect,
            grad_p_norm: 0.0,
            linf_norm: 0.0,
            w1q_norm: 0.0,
            dist_w11: 0.0,
            dist_bound: 0.0,
            c_meas: 0.0,
            flags: String::new(),
        };
        let rows = [row(1, 0.25, 0.1), row(2, 0.0625, 0.01), row(3, 0.015625, 0.1)];
        assert_eq!(fit_history(&rows), vec![0.2, 0.2, 0.8]);
    }

    #[test]
    fn spread_handles_zero() {
        assert_eq!(spread([0.0, 0.0].into_iter()), 1.0);
        assert_eq!(spread([1.0, 2.0].into_iter()), 2.0);
        assert!(spread([0.0, 2.0].into_iter()).is_infinite());
    }
}
