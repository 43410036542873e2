//! Integrands `j(x, s, ξ)` with two-sided growth data, the discrete energy
//! `J(u) = Σ j(x, u, Du)·|cell|`, and the structural checks run before any
//! selection procedure trusts them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{euclid, GridFunction, NormKind, Stencil};
use crate::geometry::{Grid, HalfSpace, Point, MAX_DIM};
use crate::rearrange::polarize;

/// Gradients are clamped to this magnitude before the integrand sees them.
pub const XI_CLAMP: f64 = 1e8;
pub const GROWTH_S_MAX: f64 = 10.0;
pub const GROWTH_XI_MAX: f64 = 10.0;

/// A nonnegative weight `φ`, either constant or sampled per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Constant(f64),
    Sampled(Vec<f64>),
}

impl Default for Weight {
    fn default() -> Self {
        Weight::Constant(0.0)
    }
}

impl Weight {
    pub fn at(&self, cell: usize) -> f64 {
        match self {
            Weight::Constant(c) => *c,
            Weight::Sampled(v) => v[cell],
        }
    }

    pub fn check(&self, grid: &Grid, name: &str) -> Result<()> {
        match self {
            Weight::Constant(c) if !(c.is_finite() && *c >= 0.0) => {
                Err(Error::InvalidGrowth(format!("{name} must be a finite nonnegative weight, got {c}")))
            }
            Weight::Sampled(v) if v.len() != grid.len() => Err(Error::InvalidGrowth(format!(
                "{name} has {} samples but the grid has {} cells",
                v.len(),
                grid.len()
            ))),
            Weight::Sampled(v) if v.iter().any(|w| !(w.is_finite() && *w >= 0.0)) => {
                Err(Error::InvalidGrowth(format!("{name} has a negative or non-finite sample")))
            }
            _ => Ok(()),
        }
    }

    /// Discrete `L^r` norm over the grid.
    pub fn lr_norm(&self, grid: &Grid, r: f64) -> f64 {
        let s: f64 = grid.cells().iter().enumerate().map(|(i, c)| self.at(i).powf(r) * c.measure).sum();
        s.powf(1.0 / r)
    }

    fn is_zero(&self) -> bool {
        match self {
            Weight::Constant(c) => *c == 0.0,
            Weight::Sampled(v) => v.iter().all(|&w| w == 0.0),
        }
    }
}

/// Data of the two-sided bound
/// `α|ξ|^p − φ₂|s|^γ₂ ≤ j(x,s,ξ) ≤ β|ξ|^p + φ₀ + φ₁|s|^γ₁`
/// plus the integrability exponents of the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    #[serde(default)]
    pub gamma1: f64,
    #[serde(default)]
    pub gamma2: f64,
    #[serde(default)]
    pub phi0: Weight,
    #[serde(default)]
    pub phi1: Weight,
    #[serde(default)]
    pub phi2: Weight,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
}

impl GrowthParams {
    /// `α|ξ|^p ≤ j ≤ β|ξ|^p` with zero weights and admissible default
    /// exponents `r₀ = 2N/p`, `r₁ = N/p + 1`, `r₂ = 2N`.
    pub fn pure(dimension: usize, p: f64, alpha: f64, beta: f64) -> Self {
        let n = dimension as f64;
        GrowthParams {
            alpha,
            beta,
            p,
            gamma1: 0.0,
            gamma2: 0.0,
            phi0: Weight::default(),
            phi1: Weight::default(),
            phi2: Weight::default(),
            r0: 2.0 * n / p,
            r1: n / p + 1.0,
            r2: 2.0 * n,
        }
    }

    pub fn with_lower(mut self, phi2: Weight, gamma2: f64) -> Self {
        self.phi2 = phi2;
        self.gamma2 = gamma2;
        self
    }

    pub fn with_upper(mut self, phi0: Weight, phi1: Weight, gamma1: f64) -> Self {
        self.phi0 = phi0;
        self.phi1 = phi1;
        self.gamma1 = gamma1;
        self
    }

    pub fn p_star(&self, dimension: usize) -> f64 {
        let n = dimension as f64;
        n * self.p / (n - self.p)
    }

    pub fn r1_conj(&self) -> f64 {
        self.r1 / (self.r1 - 1.0)
    }

    pub fn r2_conj(&self) -> f64 {
        self.r2 / (self.r2 - 1.0)
    }

    /// `r₀ < N/p` selects the higher-integrability regime, `r₀ > N/p` the
    /// bounded one.
    pub fn bounded_regime(&self, dimension: usize) -> bool {
        self.r0 > dimension as f64 / self.p
    }

    /// Checks every scalar constraint; the error names the violated one.
    pub fn validate(&self, dimension: usize) -> Result<()> {
        let n = dimension as f64;
        let bad = |msg: String| Err(Error::InvalidGrowth(msg));
        let finite = [self.alpha, self.beta, self.p, self.gamma1, self.gamma2, self.r0, self.r1, self.r2];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all growth parameters must be finite".into());
        }
        if self.alpha <= 0.0 {
            return bad(format!("α = {} must be > 0", self.alpha));
        }
        if self.beta <= 0.0 {
            return bad(format!("β = {} must be > 0", self.beta));
        }
        if self.beta < self.alpha {
            return bad(format!("β = {} must be ≥ α = {}", self.beta, self.alpha));
        }
        if !(self.p > 1.0 && self.p < n) {
            return bad(format!("p = {} must satisfy 1 < p < N = {dimension}", self.p));
        }
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 {
            return bad(format!("γ₁ = {}, γ₂ = {} must be ≥ 0", self.gamma1, self.gamma2));
        }
        if self.r0 <= 1.0 {
            return bad(format!("r₀ = {} must be > 1", self.r0));
        }
        if self.r0 == n / self.p {
            return bad(format!("r₀ = N/p = {} is excluded (the two regimes r₀ < N/p and r₀ > N/p are separate)", self.r0));
        }
        if self.r1 <= n / self.p {
            return bad(format!("r₁ = {} must be > N/p = {}", self.r1, n / self.p));
        }
        if self.r2 <= n {
            return bad(format!("r₂ = {} must be > N = {dimension}", self.r2));
        }
        let g1_max = self.p_star(dimension) * (self.r1 - 1.0) / self.r1;
        if self.gamma1 >= g1_max {
            return bad(format!("γ₁ = {} must be < p*·(r₁−1)/r₁ = {g1_max}", self.gamma1));
        }
        let g2_max = self.p.min(n / (n - 1.0) * (self.r2 - 1.0) / self.r2);
        if self.gamma2 >= g2_max {
            return bad(format!("γ₂ = {} must be < min{{p, N/(N−1)·(r₂−1)/r₂}} = {g2_max}", self.gamma2));
        }
        Ok(())
    }

    pub fn validate_on(&self, grid: &Grid) -> Result<()> {
        self.validate(grid.dim())?;
        self.phi0.check(grid, "φ₀")?;
        self.phi1.check(grid, "φ₁")?;
        self.phi2.check(grid, "φ₂")
    }

    pub fn lower(&self, cell: usize, s: f64, xi_norm: f64) -> f64 {
        self.alpha * xi_norm.powf(self.p) - self.phi2.at(cell) * s.abs().powf(self.gamma2)
    }

    pub fn upper(&self, cell: usize, s: f64, xi_norm: f64) -> f64 {
        self.beta * xi_norm.powf(self.p) + self.phi0.at(cell) + self.phi1.at(cell) * s.abs().powf(self.gamma1)
    }
}

/// A Carathéodory integrand. `xi` has one entry per grid axis.
pub trait Integrand: Send + Sync {
    fn name(&self) -> &str;
    fn growth(&self) -> &GrowthParams;
    /// True when `j(x,s,ξ) = j₀(s,|ξ|)`.
    fn radial(&self) -> bool;
    fn eval(&self, x: &Point, s: f64, xi: &[f64]) -> f64;

    /// Returns `∂j/∂s` and writes `∂j/∂ξ` into `dxi`. The default uses
    /// central differences.
    fn partials(&self, x: &Point, s: f64, xi: &[f64], dxi: &mut [f64]) -> f64 {
        let hs = 1e-6 * (1.0 + s.abs());
        let ds = (self.eval(x, s + hs, xi) - self.eval(x, s - hs, xi)) / (2.0 * hs);
        let mut probe = [0.0; MAX_DIM];
        probe[..xi.len()].copy_from_slice(xi);
        for k in 0..xi.len() {
            let h = 1e-6 * (1.0 + xi[k].abs());
            probe[k] = xi[k] + h;
            let up = self.eval(x, s, &probe[..xi.len()]);
            probe[k] = xi[k] - h;
            let down = self.eval(x, s, &probe[..xi.len()]);
            probe[k] = xi[k];
            dxi[k] = (up - down) / (2.0 * h);
        }
        ds
    }
}

impl fmt::Debug for dyn Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Integrand").field("name", &self.name()).field("radial", &self.radial()).finish()
    }
}

fn slice_norm(xi: &[f64]) -> f64 {
    xi.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Writes `g'(t)·ξ/|ξ|` into `dxi`.
fn radial_chain(xi: &[f64], t: f64, dg: f64, dxi: &mut [f64]) {
    for k in 0..xi.len() {
        dxi[k] = if t > 0.0 { dg * xi[k] / t } else { 0.0 };
    }
}

/// Convex baseline `|ξ|^p − λs`.
#[derive(Clone, Debug)]
pub struct PowerIntegrand {
    pub p: f64,
    pub lambda: f64,
    growth: GrowthParams,
}

impl PowerIntegrand {
    pub fn new(dimension: usize, p: f64, lambda: f64) -> Self {
        let mut growth = GrowthParams::pure(dimension, p, 1.0, 1.0);
        if lambda != 0.0 {
            let w = Weight::Constant(lambda.abs());
            growth = growth.with_lower(w.clone(), 1.0).with_upper(Weight::default(), w, 1.0);
        }
        PowerIntegrand { p, lambda, growth }
    }
}

impl Integrand for PowerIntegrand {
    fn name(&self) -> &str {
        "baseline"
    }
    fn growth(&self) -> &GrowthParams {
        &self.growth
    }
    fn radial(&self) -> bool {
        true
    }
    fn eval(&self, _x: &Point, s: f64, xi: &[f64]) -> f64 {
        slice_norm(xi).powf(self.p) - self.lambda * s
    }
    fn partials(&self, _x: &Point, _s: f64, xi: &[f64], dxi: &mut [f64]) -> f64 {
        let t = slice_norm(xi);
        radial_chain(xi, t, self.p * t.powf(self.p - 1.0), dxi);
        -self.lambda
    }
}

/// Non-convex `|ξ|^p(1 + ½sin²(π|ξ|)) − λs`.
#[derive(Clone, Debug)]
pub struct WiggleIntegrand {
    pub p: f64,
    pub lambda: f64,
    growth: GrowthParams,
    witness: Option<MidpointWitness>,
}

impl WiggleIntegrand {
    pub fn new(dimension: usize, p: f64, lambda: f64) -> Self {
        let mut growth = GrowthParams::pure(dimension, p, 1.0, 1.5);
        if lambda != 0.0 {
            let w = Weight::Constant(lambda.abs());
            growth = growth.with_lower(w.clone(), 1.0).with_upper(Weight::default(), w, 1.0);
        }
        let witness = midpoint_convexity_witness(|t| Self::profile(p, t), 0.0, 3.0, 300);
        WiggleIntegrand { p, lambda, growth, witness }
    }

    /// `t ↦ t^p(1 + ½sin²(πt))`, the ξ-section at `s = 0`.
    pub fn profile(p: f64, t: f64) -> f64 {
        let sn = (PI * t).sin();
        t.powf(p) * (1.0 + 0.5 * sn * sn)
    }

    /// A midpoint-convexity violation of the ξ-section, found when the
    /// integrand was built.
    pub fn nonconvexity_witness(&self) -> Option<MidpointWitness> {
        self.witness
    }
}

impl Integrand for WiggleIntegrand {
    fn name(&self) -> &str {
        "wiggle"
    }
    fn growth(&self) -> &GrowthParams {
        &self.growth
    }
    fn radial(&self) -> bool {
        true
    }
    fn eval(&self, _x: &Point, s: f64, xi: &[f64]) -> f64 {
        Self::profile(self.p, slice_norm(xi)) - self.lambda * s
    }
    fn partials(&self, _x: &Point, _s: f64, xi: &[f64], dxi: &mut [f64]) -> f64 {
        let t = slice_norm(xi);
        let sn = (PI * t).sin();
        let dg = self.p * t.powf(self.p - 1.0) * (1.0 + 0.5 * sn * sn) + t.powf(self.p) * 0.5 * PI * (2.0 * PI * t).sin();
        radial_chain(xi, t, dg, dxi);
        -self.lambda
    }
}

pub type IntegrandFn = dyn Fn(&Point, f64, &[f64]) -> f64 + Send + Sync;

/// User-supplied integrand; derivatives fall back to finite differences.
#[derive(Clone)]
pub struct CustomIntegrand {
    name: String,
    growth: GrowthParams,
    radial: bool,
    f: Arc<IntegrandFn>,
}

impl CustomIntegrand {
    pub fn new(
        name: impl Into<String>,
        growth: GrowthParams,
        radial: bool,
        f: impl Fn(&Point, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CustomIntegrand { name: name.into(), growth, radial, f: Arc::new(f) }
    }
}

impl Integrand for CustomIntegrand {
    fn name(&self) -> &str {
        &self.name
    }
    fn growth(&self) -> &GrowthParams {
        &self.growth
    }
    fn radial(&self) -> bool {
        self.radial
    }
    fn eval(&self, x: &Point, s: f64, xi: &[f64]) -> f64 {
        (self.f)(x, s, xi)
    }
}

/// `(1 − κx₁)|ξ|^p`: depends on `x` through a weight that is not
/// symmetric, so polarization can raise the energy.
pub fn tilted_integrand(dimension: usize, p: f64, kappa: f64) -> CustomIntegrand {
    let kappa = kappa.clamp(0.0, 0.95);
    let growth = GrowthParams::pure(dimension, p, 1.0 - kappa, 1.0 + kappa);
    CustomIntegrand::new("tilted", growth, false, move |x, _s, xi| (1.0 - kappa * x[0]) * slice_norm(xi).powf(p))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MidpointWitness {
    pub a: f64,
    pub b: f64,
    /// `f((a+b)/2) − (f(a)+f(b))/2 > 0`
    pub gap: f64,
}

/// Scans all pairs of an `steps`-point grid on `[lo, hi]` and returns the
/// largest midpoint-convexity violation, if any exceeds `1e-12`.
pub fn midpoint_convexity_witness(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> Option<MidpointWitness> {
    let ts: Vec<f64> = (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect();
    let fs: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    let mut best: Option<MidpointWitness> = None;
    for i in 0..ts.len() {
        for j in i + 1..ts.len() {
            let gap = f(0.5 * (ts[i] + ts[j])) - 0.5 * (fs[i] + fs[j]);
            if gap > 1e-12 && best.is_none_or(|w| gap > w.gap) {
                best = Some(MidpointWitness { a: ts[i], b: ts[j], gap });
            }
        }
    }
    best
}

/// Baseline, wiggle and tilted integrands for dimension `N`, exponent `p`
/// and load `λ`.
pub fn builtin_integrands(dimension: usize, p: f64, lambda: f64) -> Vec<Arc<dyn Integrand>> {
    vec![
        Arc::new(PowerIntegrand::new(dimension, p, lambda)),
        Arc::new(WiggleIntegrand::new(dimension, p, lambda)),
        Arc::new(tilted_integrand(dimension, p, 0.9)),
    ]
}

/// How a config names an integrand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandSpec {
    pub name: String,
    pub p: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Strength of the `x`-dependence for integrands that have one.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Replaces the growth data the integrand ships with.
    #[serde(default)]
    pub growth: Option<GrowthParams>,
}

type Factory = dyn Fn(usize, &IntegrandSpec) -> Result<Arc<dyn Integrand>> + Send + Sync;

/// Name-to-constructor table. Custom integrands are added with
/// [`IntegrandRegistry::register`].
pub struct IntegrandRegistry {
    factories: BTreeMap<String, (String, Box<Factory>)>,
}

impl IntegrandRegistry {
    pub fn empty() -> Self {
        IntegrandRegistry { factories: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("baseline", "convex |ξ|^p − λs", |n, s| Ok(Arc::new(PowerIntegrand::new(n, s.p, s.lambda))));
        r.register("wiggle", "non-convex |ξ|^p(1 + ½sin²(π|ξ|)) − λs", |n, s| {
            Ok(Arc::new(WiggleIntegrand::new(n, s.p, s.lambda)))
        });
        r.register("tilted", "(1 − κx₁)|ξ|^p, not polarization-monotone", |n, s| {
            Ok(Arc::new(tilted_integrand(n, s.p, s.kappa.unwrap_or(0.9))))
        });
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        description: &str,
        factory: impl Fn(usize, &IntegrandSpec) -> Result<Arc<dyn Integrand>> + Send + Sync + 'static,
    ) {
        self.factories.insert(name.to_string(), (description.to_string(), Box::new(factory)));
    }

    pub fn names(&self) -> Vec<(&str, &str)> {
        self.factories.iter().map(|(k, (d, _))| (k.as_str(), d.as_str())).collect()
    }

    pub fn build(&self, dimension: usize, spec: &IntegrandSpec) -> Result<Arc<dyn Integrand>> {
        let (_, factory) = self.factories.get(&spec.name).ok_or_else(|| Error::UnknownIntegrand(spec.name.clone()))?;
        let base = factory(dimension, spec)?;
        let Some(growth) = spec.growth.clone() else { return Ok(base) };
        Ok(Arc::new(Regrown { inner: base, growth }))
    }
}

/// An integrand with replaced growth data.
struct Regrown {
    inner: Arc<dyn Integrand>,
    growth: GrowthParams,
}

impl Integrand for Regrown {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn growth(&self) -> &GrowthParams {
        &self.growth
    }
    fn radial(&self) -> bool {
        self.inner.radial()
    }
    fn eval(&self, x: &Point, s: f64, xi: &[f64]) -> f64 {
        self.inner.eval(x, s, xi)
    }
    fn partials(&self, x: &Point, s: f64, xi: &[f64], dxi: &mut [f64]) -> f64 {
        self.inner.partials(x, s, xi, dxi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// Cells whose gradient was clamped to [`XI_CLAMP`].
    pub clamped: usize,
}

/// `J(u) = Σ_cells j(x, u, Du)·|cell|` on a fixed grid.
pub struct DiscreteFunctional {
    integrand: Arc<dyn Integrand>,
    grid: Arc<Grid>,
    p_space: f64,
    embedding: OnceLock<EmbeddingConstants>,
}

impl fmt::Debug for DiscreteFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteFunctional")
            .field("integrand", &self.integrand.name())
            .field("cells", &self.grid.len())
            .field("p_space", &self.p_space)
            .finish()
    }
}

impl DiscreteFunctional {
    pub fn new(integrand: Arc<dyn Integrand>, grid: Arc<Grid>) -> Result<Self> {
        integrand.growth().validate_on(&grid)?;
        let p_space = integrand.growth().p;
        Ok(DiscreteFunctional { integrand, grid, p_space, embedding: OnceLock::new() })
    }

    pub fn integrand(&self) -> &Arc<dyn Integrand> {
        &self.integrand
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn p_space(&self) -> f64 {
        self.p_space
    }

    fn check(&self, u: &GridFunction) -> Result<()> {
        if u.len() != self.grid.len() {
            return Err(Error::LengthMismatch { expected: self.grid.len(), got: u.len() });
        }
        Ok(())
    }

    fn cell_term(&self, values: &[f64], i: usize, clamped: &mut usize) -> Result<f64> {
        let c = &self.grid.cells()[i];
        let st = Stencil::at(&self.grid, values, i);
        let mut sum = 0.0;
        for combo in 0..st.count() {
            let (xi, _) = clamp_xi(st.combo(combo), clamped);
            sum += self.integrand.eval(&c.center, values[i], &xi[..st.axes]);
        }
        if !sum.is_finite() {
            return Err(Error::NonFinite { cell: i });
        }
        Ok(sum * c.measure / st.count() as f64)
    }

    pub fn evaluate(&self, u: &GridFunction) -> Result<f64> {
        Ok(self.evaluate_detailed(u)?.value)
    }

    pub fn evaluate_detailed(&self, u: &GridFunction) -> Result<Evaluation> {
        self.check(u)?;
        let mut clamped = 0;
        let mut value = 0.0;
        for i in 0..self.grid.len() {
            value += self.cell_term(u.values(), i, &mut clamped)?;
        }
        Ok(Evaluation { value, clamped })
    }

    /// The energy restricted to the listed cells.
    pub fn evaluate_on(&self, u: &GridFunction, cells: &[usize]) -> Result<f64> {
        self.check(u)?;
        let mut clamped = 0;
        let mut value = 0.0;
        for &i in cells {
            value += self.cell_term(u.values(), i, &mut clamped)?;
        }
        Ok(value)
    }

    /// `J` and its gradient with respect to the cell values.
    pub fn value_and_gradient(&self, values: &[f64]) -> Result<(f64, Vec<f64>)> {
        if values.len() != self.grid.len() {
            return Err(Error::LengthMismatch { expected: self.grid.len(), got: values.len() });
        }
        let mut grad = vec![0.0; values.len()];
        let mut value = 0.0;
        let mut clamped = 0;
        let mut dxi = [0.0; MAX_DIM];
        for (i, c) in self.grid.cells().iter().enumerate() {
            let st = Stencil::at(&self.grid, values, i);
            let w = c.measure / st.count() as f64;
            let mut cell = 0.0;
            for combo in 0..st.count() {
                let (xi, scale) = clamp_xi(st.combo(combo), &mut clamped);
                cell += self.integrand.eval(&c.center, values[i], &xi[..st.axes]);
                let ds = self.integrand.partials(&c.center, values[i], &xi[..st.axes], &mut dxi[..st.axes]);
                grad[i] += ds * w;
                dxi.iter_mut().for_each(|d| *d *= scale);
                scatter(&self.grid, i, combo, &dxi, w, &mut grad);
            }
            if !cell.is_finite() {
                return Err(Error::NonFinite { cell: i });
            }
            value += cell * w;
        }
        Ok((value, grad))
    }

    pub fn embedding(&self) -> &EmbeddingConstants {
        self.embedding.get_or_init(|| EmbeddingConstants::estimate(&self.grid))
    }
}

fn clamp_xi(mut xi: [f64; MAX_DIM], clamped: &mut usize) -> ([f64; MAX_DIM], f64) {
    let n = euclid(&xi);
    if n > XI_CLAMP {
        *clamped += 1;
        let s = XI_CLAMP / n;
        xi.iter_mut().for_each(|v| *v *= s);
        return (xi, s);
    }
    (xi, 1.0)
}

/// Adds `w·Σ_k dxi[k]·∂ξ_k/∂u` for stencil combination `combo` at `cell`.
fn scatter(grid: &Grid, cell: usize, combo: usize, dxi: &[f64; MAX_DIM], w: f64, grad: &mut [f64]) {
    let fw = grid.forward(cell);
    let bw = grid.backward(cell);
    let st = grid.steps(cell);
    for k in 0..grid.axes() {
        let d = w * dxi[k] / st[k];
        if combo >> k & 1 == 1 {
            grad[cell] += d;
            if let Some(j) = bw[k] {
                grad[j] -= d;
            }
        } else {
            grad[cell] -= d;
            if let Some(j) = fw[k] {
                grad[j] += d;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthSample {
    pub cell: usize,
    pub s: f64,
    pub xi: [f64; MAX_DIM],
    pub lower_margin: f64,
    pub upper_margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub passed: bool,
    /// Smallest of `j − lower` and `upper − j` over all samples.
    pub worst_margin: f64,
    pub worst: Option<GrowthSample>,
    /// First sample that violates either bound.
    pub violation: Option<GrowthSample>,
}

/// Samples `(x, s, ξ)` with `x` a cell center, `|s| ≤ 10`, `|ξ| ≤ 10` and
/// checks both growth inequalities.
pub fn check_growth(j: &dyn Integrand, grid: &Grid, samples: usize, rng_seed: u64) -> GrowthReport {
    let g = j.growth();
    let axes = grid.axes();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst_margin = f64::INFINITY;
    let mut worst = None;
    let mut violation = None;
    for _ in 0..samples.max(1) {
        let cell = rng.random_range(0..grid.len());
        let s = rng.random_range(-GROWTH_S_MAX..=GROWTH_S_MAX);
        let mut xi = [0.0; MAX_DIM];
        for v in xi.iter_mut().take(axes) {
            *v = rng.sample(StandardNormal);
        }
        let len = euclid(&xi).max(1e-300);
        let r = rng.random_range(0.0..=GROWTH_XI_MAX);
        xi.iter_mut().for_each(|v| *v *= r / len);
        let t = euclid(&xi);
        let val = j.eval(&grid.cells()[cell].center, s, &xi[..axes]);
        let lo = g.lower(cell, s, t);
        let hi = g.upper(cell, s, t);
        let sample = GrowthSample { cell, s, xi, lower_margin: val - lo, upper_margin: hi - val };
        let margin = sample.lower_margin.min(sample.upper_margin);
        let scale = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if margin < -scale && violation.is_none() {
            violation = Some(sample);
        }
        if margin < worst_margin {
            worst_margin = margin;
            worst = Some(sample);
        }
    }
    GrowthReport { samples: samples.max(1), passed: violation.is_none(), worst_margin, worst, violation }
}

/// A smooth nonnegative field: one to three Gaussian bumps at random
/// centers inside the domain, damped to vanish on the boundary.
pub fn random_bump_field<R: Rng>(grid: &Arc<Grid>, rng: &mut R) -> GridFunction {
    let dom = grid.domain();
    let r = dom.outer_radius;
    let count = rng.random_range(1..=3);
    let mut bumps = Vec::with_capacity(count);
    for _ in 0..count {
        let center = loop {
            let mut c = [0.0; MAX_DIM];
            for v in c.iter_mut().take(dom.dimension) {
                *v = rng.random_range(-r..r);
            }
            if dom.contains(&c) {
                break c;
            }
        };
        let amp = rng.random_range(0.2..2.0);
        let width = rng.random_range(0.15..0.5) * r;
        bumps.push((center, amp, width));
    }
    let (a, b) = (dom.inner_radius, dom.outer_radius);
    GridFunction::from_fn(grid.clone(), |x| {
        // Cutoff vanishing on the boundary, so the zero extension carries no
        // jump for a reflection to move into the interior.
        let rad = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cutoff = if a > 0.0 { 4.0 * (rad - a) * (b - rad) / ((b - a) * (b - a)) } else { 1.0 - (rad / b).powi(2) };
        let sum: f64 = bumps
            .iter()
            .map(|(c, a, w)| {
                let d2: f64 = (0..MAX_DIM).map(|k| (x[k] - c[k]).powi(2)).sum();
                a * (-d2 / (w * w)).exp()
            })
            .sum();
        sum * cutoff.max(0.0)
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PolarizationReport {
    pub trials: usize,
    pub violations: usize,
    pub passed: bool,
    /// Largest `(J(u^H) − J(u)) / tol_pol` seen; at most 1 on a pass.
    pub worst_ratio: f64,
    pub worst_increase: f64,
    pub worst_halfspace: Option<HalfSpace>,
}

/// Slack for polarization steps: `10·h·(1 + |J(u)|)`.
pub fn polarization_tolerance(grid: &Grid, j_u: f64) -> f64 {
    10.0 * grid.spacing() * (1.0 + j_u.abs())
}

/// Tests `J(u^H) ≤ J(u) + tol_pol` on random smooth `u ≥ 0` and random
/// grid-compatible `H`.
pub fn check_polarization_monotone(j: &DiscreteFunctional, trials: usize, rng_seed: u64) -> Result<PolarizationReport> {
    let pool = j.grid().compatible_halfspaces()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut report = PolarizationReport {
        trials: trials.max(1),
        violations: 0,
        passed: true,
        worst_ratio: f64::NEG_INFINITY,
        worst_increase: f64::NEG_INFINITY,
        worst_halfspace: None,
    };
    for _ in 0..report.trials {
        let u = random_bump_field(j.grid(), &mut rng);
        let h = pool[rng.random_range(0..pool.len())];
        let ju = j.evaluate(&u)?;
        let jh = j.evaluate(&polarize(&u, &h)?)?;
        let tol = polarization_tolerance(j.grid(), ju);
        let ratio = (jh - ju) / tol;
        if jh > ju + tol {
            report.violations += 1;
        }
        if ratio > report.worst_ratio {
            report.worst_ratio = ratio;
            report.worst_increase = jh - ju;
            report.worst_halfspace = Some(h);
        }
    }
    report.passed = report.violations == 0;
    Ok(report)
}

/// Constants of the discrete chain
/// `‖u‖_{L^s} ≤ A_s‖u‖_{L²} ≤ A_s λ₁^{-1/2}‖Du‖_{L²} ≤ A_s λ₁^{-1/2} B_p ‖Du‖_{L^p}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EmbeddingConstants {
    /// Lower estimate of the first discrete Dirichlet eigenvalue.
    pub lambda1: f64,
    pub min_measure: f64,
    /// Smallest atom of the measure carrying `Du` (a cell split over its
    /// stencil combinations).
    pub gradient_min_measure: f64,
    pub total_measure: f64,
}

impl EmbeddingConstants {
    pub fn estimate(grid: &Grid) -> Self {
        let (lambda, resid) = first_eigenvalue(grid);
        let min_measure = grid.cells().iter().map(|c| c.measure).fold(f64::INFINITY, f64::min);
        EmbeddingConstants {
            lambda1: ((lambda - resid) * (1.0 - 1e-9)).max(f64::MIN_POSITIVE),
            min_measure,
            gradient_min_measure: min_measure / (1usize << grid.axes()) as f64,
            total_measure: grid.total_measure(),
        }
    }

    /// `‖f‖_{L^b} ≤ C‖f‖_{L^a}` on the grid's measure space.
    fn lebesgue(&self, atom: f64, from: f64, to: f64) -> f64 {
        if to <= from {
            self.total_measure.powf(1.0 / to - 1.0 / from)
        } else {
            atom.powf(1.0 / to - 1.0 / from)
        }
    }

    /// `C` with `‖u‖_{L^s} ≤ C‖Du‖_{L^p}` for every grid function.
    pub fn sobolev(&self, s: f64, p: f64) -> f64 {
        self.lebesgue(self.min_measure, 2.0, s) / self.lambda1.sqrt() * self.lebesgue(self.gradient_min_measure, p, 2.0)
    }
}

fn apply_laplacian(grid: &Grid, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, c) in grid.cells().iter().enumerate() {
        let st = Stencil::at(grid, x, i);
        let w = c.measure / st.count() as f64;
        for combo in 0..st.count() {
            scatter(grid, i, combo, &st.combo(combo), w, out);
        }
    }
}

fn conjugate_gradient(grid: &Grid, b: &[f64], x: &mut [f64]) {
    let n = b.len();
    let mut ax = vec![0.0; n];
    apply_laplacian(grid, x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let target = 1e-26 * b.iter().map(|v| v * v).sum::<f64>();
    let mut ap = vec![0.0; n];
    for _ in 0..20 * n {
        if rr <= target {
            break;
        }
        apply_laplacian(grid, &p, &mut ap);
        let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
}

/// Inverse iteration for the smallest `λ` in `DᵀMD x = λ M x`. Returns the
/// Rayleigh quotient and a residual radius that contains an eigenvalue.
fn first_eigenvalue(grid: &Grid) -> (f64, f64) {
    let n = grid.len();
    let m: Vec<f64> = grid.cells().iter().map(|c| c.measure).collect();
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut ax = vec![0.0; n];
    let mut lambda = 0.0;
    let mut resid = f64::INFINITY;
    for _ in 0..60 {
        let b: Vec<f64> = x.iter().zip(&m).map(|(a, b)| a * b).collect();
        y.iter_mut().for_each(|v| *v = 0.0);
        conjugate_gradient(grid, &b, &mut y);
        let mnorm = y.iter().zip(&m).map(|(a, b)| a * a * b).sum::<f64>().sqrt();
        x.iter_mut().zip(&y).for_each(|(a, b)| *a = b / mnorm);
        apply_laplacian(grid, &x, &mut ax);
        let next: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
        resid = (0..n).map(|i| (ax[i] - next * m[i] * x[i]).powi(2) / m[i]).sum::<f64>().sqrt();
        let done = (next - lambda).abs() <= 1e-13 * next;
        lambda = next;
        if done {
            break;
        }
    }
    (lambda, resid)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AprioriBound {
    pub bound: f64,
    /// `‖Du‖_{L^p}` of the tested field.
    pub measured: f64,
    pub c1: f64,
    pub c2: f64,
    pub embedding: f64,
}

impl AprioriBound {
    pub fn slack(&self) -> f64 {
        self.bound - self.measured
    }
}

/// Bound `B` on `‖Du‖_{L^p}` over the sublevel set `{J ≤ inf + ε}`, from
/// `α‖Du‖^p ≤ C₁ + C₂‖Du‖^γ₂` with `C₁ = inf + ε` and
/// `C₂ = ‖φ₂‖_{L^{r₂}}·C_emb^γ₂`. Asserts it for `u`.
pub fn apriori_gradient_bound(j: &DiscreteFunctional, u: &GridFunction, inf_estimate: f64, eps: f64) -> Result<AprioriBound> {
    let g = j.integrand().growth();
    let grid = j.grid();
    let ju = j.evaluate(u)?;
    let level = inf_estimate + eps;
    if ju > level + 1e-12 * (1.0 + level.abs()) {
        return Err(Error::Precondition(format!("J(u) = {ju} exceeds inf estimate + eps = {level}")));
    }
    let (c2, embedding) = if g.phi2.is_zero() {
        (0.0, 0.0)
    } else if g.gamma2 == 0.0 {
        (g.phi2.lr_norm(grid, g.r2) * grid.total_measure().powf(1.0 / g.r2_conj()), 0.0)
    } else {
        let s = g.gamma2 * g.r2_conj();
        let emb = j.embedding().sobolev(s, g.p);
        (g.phi2.lr_norm(grid, g.r2) * emb.powf(g.gamma2), emb)
    };
    let c1 = level;
    let bound = largest_root(g.alpha, g.p, c1, c2, g.gamma2);
    let measured = u.norm(NormKind::W1p(g.p));
    let result = AprioriBound { bound, measured, c1, c2, embedding };
    if measured > bound * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::AssertionFailure { measured, bound });
    }
    Ok(result)
}

/// Largest root of `αB^p = C₁ + C₂B^γ` (γ < p), or 0 when the right side
/// never reaches the left.
pub fn largest_root(alpha: f64, p: f64, c1: f64, c2: f64, gamma: f64) -> f64 {
    if c2 == 0.0 || gamma == 0.0 {
        return ((c1 + c2).max(0.0) / alpha).powf(1.0 / p);
    }
    let g = |b: f64| alpha * b.powf(p) - c2 * b.powf(gamma) - c1;
    // αB^p − C₂B^γ has a single minimum at b*; the largest root is beyond it.
    let b_star = (gamma * c2 / (p * alpha)).powf(1.0 / (p - gamma));
    if g(b_star) > 0.0 {
        return 0.0;
    }
    let mut lo = b_star;
    let mut hi = b_star.max(1.0);
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;

    fn disk(n: usize) -> Arc<Grid> {
        Arc::new(Grid::cartesian(DomainSpec::ball(2, 1.0).unwrap(), n).unwrap())
    }

    fn annulus() -> Arc<Grid> {
        Arc::new(Grid::polar(DomainSpec::annulus(2, 0.5, 1.0).unwrap(), 8, 16).unwrap())
    }

    #[test]
    fn builtin_growth_is_valid() {
        for n in [2, 3] {
            let p = if n == 2 { 1.5 } else { 2.0 };
            for j in builtin_integrands(n, p, 0.1) {
                j.growth().validate(n).unwrap();
            }
        }
    }

    #[test]
    fn validation_names_the_constraint() {
        let mut g = GrowthParams::pure(2, 1.5, 1.0, 1.0);
        g.gamma2 = 1.5;
        let msg = g.validate(2).unwrap_err().to_string();
        assert!(msg.contains("γ₂"), "{msg}");
        let mut g = GrowthParams::pure(2, 1.5, 1.0, 1.0);
        g.r0 = 2.0 / 1.5;
        assert!(g.validate(2).unwrap_err().to_string().contains("r₀"));
        assert!(GrowthParams::pure(2, 2.0, 1.0, 1.0).validate(2).is_err());
    }

    #[test]
    fn baseline_zero_and_homogeneity() {
        let g = disk(16);
        let j = DiscreteFunctional::new(Arc::new(PowerIntegrand::new(2, 1.5, 0.0)), g.clone()).unwrap();
        assert_eq!(j.evaluate(&GridFunction::zeros(g.clone())).unwrap(), 0.0);
        let u = GridFunction::from_fn(g, |x| (1.0 - x[0] * x[0] - x[1] * x[1]) * (1.0 + x[0]));
        let a = j.evaluate(&u).unwrap();
        let b = j.evaluate(&u.scale(3.0)).unwrap();
        assert!((b - 3f64.powf(1.5) * a).abs() < 1e-12 * b);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = disk(8);
        let u = GridFunction::from_fn(g.clone(), |x| 1.0 + x[0] + 0.5 * x[1] * x[1]);
        for integrand in builtin_integrands(2, 1.5, 0.3) {
            let j = DiscreteFunctional::new(integrand, g.clone()).unwrap();
            let (v, grad) = j.value_and_gradient(u.values()).unwrap();
            assert!((v - j.evaluate(&u).unwrap()).abs() < 1e-12);
            for i in [0, 7, g.len() / 2, g.len() - 1] {
                let mut up = u.values().to_vec();
                let mut dn = up.clone();
                up[i] += 1e-6;
                dn[i] -= 1e-6;
                let fd = (j.value_and_gradient(&up).unwrap().0 - j.value_and_gradient(&dn).unwrap().0) / 2e-6;
                assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{} cell {i}: {fd} vs {}", j.integrand().name(), grad[i]);
            }
        }
    }

    #[test]
    fn additive_over_cell_subsets() {
        let g = disk(16);
        let j = DiscreteFunctional::new(Arc::new(WiggleIntegrand::new(2, 1.5, 0.1)), g.clone()).unwrap();
        let u = random_bump_field(&g, &mut ChaCha8Rng::seed_from_u64(9));
        let (a, b): (Vec<usize>, Vec<usize>) = (0..g.len()).partition(|i| i % 3 == 0);
        let whole = j.evaluate(&u).unwrap();
        let parts = j.evaluate_on(&u, &a).unwrap() + j.evaluate_on(&u, &b).unwrap();
        assert!((whole - parts).abs() < 1e-12 * (1.0 + whole.abs()));
    }

    #[test]
    fn non_finite_is_reported() {
        let g = disk(8);
        let bad = CustomIntegrand::new("nan", GrowthParams::pure(2, 1.5, 1.0, 1.0), true, |_, s, _| if s > 0.5 { f64::NAN } else { 0.0 });
        let j = DiscreteFunctional::new(Arc::new(bad), g.clone()).unwrap();
        let u = GridFunction::from_fn(g, |_| 1.0);
        assert!(matches!(j.evaluate(&u), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn growth_checks() {
        let g = disk(16);
        let r = check_growth(&PowerIntegrand::new(2, 1.5, 0.0), &g, 500, 1);
        assert!(r.passed);
        assert_eq!(r.worst_margin, 0.0);
        assert!(check_growth(&WiggleIntegrand::new(2, 1.5, 0.1), &g, 2000, 2).passed);
        let growth = GrowthParams::pure(2, 1.5, 1.0, 1.0).with_lower(Weight::Constant(1.0), 1.0);
        let bad = CustomIntegrand::new("lossy", growth, true, |_, s, xi| slice_norm(xi).powf(1.5) - 2.0 * s.abs());
        let r = check_growth(&bad, &g, 200, 3);
        assert!(!r.passed);
        let v = r.violation.unwrap();
        assert!(v.lower_margin < 0.0 && v.s != 0.0);
    }

    #[test]
    fn wiggle_is_not_convex() {
        let w = WiggleIntegrand::new(2, 1.5, 0.1);
        let wit = w.nonconvexity_witness().expect("witness");
        let f = |t| WiggleIntegrand::profile(1.5, t);
        assert!(f(0.5 * (wit.a + wit.b)) > 0.5 * (f(wit.a) + f(wit.b)));
        assert!(midpoint_convexity_witness(|t: f64| t.powf(1.5), 0.0, 3.0, 100).is_none());
    }

    #[test]
    fn radial_integrands_ignore_xi_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for j in builtin_integrands(2, 1.5, 0.2).into_iter().filter(|j| j.radial()) {
            for _ in 0..100 {
                let xi = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let a: f64 = rng.random_range(0.0..6.3);
                let rot = [a.cos() * xi[0] - a.sin() * xi[1], a.sin() * xi[0] + a.cos() * xi[1]];
                let x = [0.1, 0.2, 0.0];
                assert!((j.eval(&x, 0.3, &xi) - j.eval(&x, 0.3, &rot)).abs() < 1e-12 * (1.0 + j.eval(&x, 0.3, &xi).abs()));
            }
        }
    }

    #[test]
    fn polar_rotation_invariance() {
        let g = annulus();
        let j = DiscreteFunctional::new(Arc::new(WiggleIntegrand::new(2, 1.5, 0.1)), g.clone()).unwrap();
        let u = random_bump_field(&g, &mut ChaCha8Rng::seed_from_u64(8));
        let lay = *g.polar_layout().unwrap();
        let mut rotated = vec![0.0; g.len()];
        for (i, c) in g.cells().iter().enumerate() {
            let target = g.node([c.lattice[0] as i64, (c.lattice[1] as i64 + 3) % lay.angular as i64, 0]).unwrap();
            rotated[target] = u.values()[i];
        }
        let a = j.evaluate(&u).unwrap();
        let b = j.evaluate(&u.with_values(rotated).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn polarization_monotone_checks() {
        let g = disk(32);
        let base = DiscreteFunctional::new(Arc::new(PowerIntegrand::new(2, 1.5, 0.0)), g.clone()).unwrap();
        assert!(check_polarization_monotone(&base, 30, 1).unwrap().passed);
        let tilted = DiscreteFunctional::new(Arc::new(tilted_integrand(2, 1.5, 0.9)), g).unwrap();
        let r = check_polarization_monotone(&tilted, 60, 1).unwrap();
        assert!(!r.passed, "{r:?}");
    }

    #[test]
    fn largest_root_solves_the_balance() {
        let b = largest_root(1.0, 1.5, 2.0, 0.7, 1.0);
        assert!((b.powf(1.5) - 2.0 - 0.7 * b).abs() < 1e-10);
        assert!((largest_root(2.0, 1.5, 3.0, 1.0, 0.0) - 2f64.powf(1.0 / 1.5)).abs() < 1e-14);
    }

    #[test]
    fn poincare_inequality_holds() {
        let g = disk(32);
        let e = EmbeddingConstants::estimate(&g);
        assert!(e.lambda1 > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let u = random_bump_field(&g, &mut rng);
            let l2 = u.norm(NormKind::Lq(2.0));
            let d2 = u.norm(NormKind::W1p(2.0));
            assert!(l2 * e.lambda1.sqrt() <= d2 * (1.0 + 1e-9));
            let s = 3.0;
            assert!(u.norm(NormKind::Lq(s)) <= e.sobolev(s, 1.5) * u.norm(NormKind::W1p(1.5)) * (1.0 + 1e-9));
        }
        // the smooth ground state attains the quotient up to the residual radius
        let (lambda, resid) = first_eigenvalue(&g);
        assert!(resid < 1e-6 * lambda && e.lambda1 <= lambda);
    }

    #[test]
    fn apriori_bound_holds_at_zero() {
        let g = disk(16);
        let j = DiscreteFunctional::new(Arc::new(WiggleIntegrand::new(2, 1.5, 0.1)), g.clone()).unwrap();
        let z = GridFunction::zeros(g);
        let r = apriori_gradient_bound(&j, &z, j.evaluate(&z).unwrap(), 0.5).unwrap();
        assert!(r.bound >= 0.0 && r.measured == 0.0);
    }
}
