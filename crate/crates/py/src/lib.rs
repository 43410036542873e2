//! Python bindings: domains, grids, grid functions, the rearrangement
//! operators, the discrete functional, Ekeland selection and the
//! experiment pipeline.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use symmin::config::ExperimentConfig;
use symmin::ekeland::{ekeland_select, symmetric_ekeland_select, EkelandCertificate, EkelandParams};
use symmin::functional::{IntegrandRegistry, IntegrandSpec};
use symmin::pipeline::minimizing_sequence_pipeline;
use symmin::rearrange;
use symmin::verify::{run_suite, Suite};

fn err(e: symmin::Error) -> PyErr {
    match e {
        symmin::Error::Io(_) | symmin::Error::BudgetExhausted(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Domain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Domain(symmin::DomainSpec);

#[pymethods]
impl Domain {
    #[staticmethod]
    #[pyo3(signature = (dimension, radius=1.0))]
    fn ball(dimension: usize, radius: f64) -> PyResult<Self> {
        symmin::DomainSpec::ball(dimension, radius).map(Domain).map_err(err)
    }

    #[staticmethod]
    fn annulus(dimension: usize, inner_radius: f64, outer_radius: f64) -> PyResult<Self> {
        symmin::DomainSpec::annulus(dimension, inner_radius, outer_radius).map(Domain).map_err(err)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.0.dimension
    }

    #[getter]
    fn measure(&self) -> f64 {
        self.0.measure()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Grid(Arc<symmin::Grid>);

#[pymethods]
impl Grid {
    #[staticmethod]
    fn cartesian(domain: &Domain, per_axis: usize) -> PyResult<Self> {
        symmin::Grid::cartesian(domain.0, per_axis).map(|g| Grid(Arc::new(g))).map_err(err)
    }

    #[staticmethod]
    fn polar(domain: &Domain, radial: usize, angular: usize) -> PyResult<Self> {
        symmin::Grid::polar(domain.0, radial, angular).map(|g| Grid(Arc::new(g))).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.0.spacing()
    }

    /// Cell centers, truncated to the grid dimension.
    fn centers(&self) -> Vec<Vec<f64>> {
        let d = self.0.dim();
        self.0.cells().iter().map(|c| c.center[..d].to_vec()).collect()
    }

    fn measures(&self) -> Vec<f64> {
        self.0.cells().iter().map(|c| c.measure).collect()
    }

    fn compatible_halfspaces(&self) -> PyResult<Vec<HalfSpace>> {
        Ok(self.0.compatible_halfspaces().map_err(err)?.into_iter().map(HalfSpace).collect())
    }
}

#[pyclass(name = "HalfSpace", frozen, skip_from_py_object)]
#[derive(Clone)]
struct HalfSpace(symmin::HalfSpace);

#[pymethods]
impl HalfSpace {
    /// `{x : x·normal ≥ offset}`; the normal is normalized.
    #[new]
    fn new(normal: Vec<f64>, offset: f64) -> PyResult<Self> {
        symmin::HalfSpace::new(&normal, offset).map(HalfSpace).map_err(err)
    }

    #[getter]
    fn normal(&self) -> Vec<f64> {
        self.0.normal.to_vec()
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.0.offset
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "GridFunction", frozen, skip_from_py_object)]
#[derive(Clone)]
struct GridFunction(symmin::GridFunction);

#[pymethods]
impl GridFunction {
    #[new]
    fn new(grid: &Grid, values: Vec<f64>) -> PyResult<Self> {
        symmin::GridFunction::new(grid.0.clone(), values).map(GridFunction).map_err(err)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    #[getter]
    fn grid(&self) -> Grid {
        Grid(self.0.grid().clone())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &GridFunction) -> bool {
        self.0 == other.0
    }

    /// `kind` is one of `lq` (with `q`), `linf`, `w11`, `w1p` (with `q` as p).
    #[pyo3(signature = (kind, q=None))]
    fn norm(&self, kind: &str, q: Option<f64>) -> PyResult<f64> {
        let need_q = || q.ok_or_else(|| PyValueError::new_err(format!("norm `{kind}` needs an exponent")));
        let kind = match kind {
            "lq" => symmin::NormKind::Lq(need_q()?),
            "linf" => symmin::NormKind::Linf,
            "w11" => symmin::NormKind::W11,
            "w1p" => symmin::NormKind::W1p(need_q()?),
            other => return Err(PyValueError::new_err(format!("unknown norm `{other}`"))),
        };
        Ok(self.0.norm(kind))
    }

    fn polarize(&self, h: &HalfSpace) -> PyResult<GridFunction> {
        rearrange::polarize(&self.0, &h.0).map(GridFunction).map_err(err)
    }

    fn symmetrize(&self) -> PyResult<GridFunction> {
        rearrange::symmetrize(&self.0).map(GridFunction).map_err(err)
    }

    fn symmetry_defect(&self) -> PyResult<f64> {
        rearrange::symmetry_defect(&self.0).map_err(err)
    }
}

#[pyclass(name = "Functional", frozen)]
struct Functional(symmin::functional::DiscreteFunctional);

#[pymethods]
impl Functional {
    /// A registered integrand (see `list_integrands`) on `grid`.
    #[new]
    #[pyo3(signature = (grid, integrand, p, lam=0.0, kappa=None))]
    fn new(grid: &Grid, integrand: String, p: f64, lam: f64, kappa: Option<f64>) -> PyResult<Self> {
        let spec = IntegrandSpec { name: integrand, p, lambda: lam, kappa, growth: None };
        let j = IntegrandRegistry::with_builtins().build(grid.0.dim(), &spec).map_err(err)?;
        symmin::functional::DiscreteFunctional::new(j, grid.0.clone()).map(Functional).map_err(err)
    }

    fn evaluate(&self, u: &GridFunction) -> PyResult<f64> {
        self.0.evaluate(&u.0).map_err(err)
    }

    fn value_and_gradient(&self, values: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        self.0.value_and_gradient(&values).map_err(err)
    }
}

#[pyclass(name = "Certificate", frozen)]
struct Certificate {
    #[pyo3(get)]
    v: GridFunction,
    #[pyo3(get)]
    f_u: f64,
    #[pyo3(get)]
    f_v: f64,
    #[pyo3(get)]
    defect_v: f64,
    #[pyo3(get)]
    dist_to_input: f64,
    #[pyo3(get)]
    dist_bound: f64,
    #[pyo3(get)]
    slope_probe: f64,
    #[pyo3(get)]
    flags: String,
    #[pyo3(get)]
    all_ok: bool,
}

impl From<EkelandCertificate> for Certificate {
    fn from(c: EkelandCertificate) -> Self {
        Certificate {
            f_u: c.f_u,
            f_v: c.f_v,
            defect_v: c.defect_v,
            dist_to_input: c.dist_to_input,
            dist_bound: c.dist_bound,
            slope_probe: c.slope_probe,
            flags: c.flags.label(),
            all_ok: c.flags.all_ok(),
            v: GridFunction(c.v),
        }
    }
}

/// Ekeland selection with `ρ = σ = √eps`; `symmetric` first polarizes
/// towards the symmetrized input.
#[pyfunction]
#[pyo3(signature = (j, u, eps, inf_estimate=None, symmetric=true, seed=0))]
fn select(j: &Functional, u: &GridFunction, eps: f64, inf_estimate: Option<f64>, symmetric: bool, seed: u64) -> PyResult<Certificate> {
    let mut params = EkelandParams::from_eps(eps).with_seed(seed);
    if let Some(inf) = inf_estimate {
        params = params.with_inf_estimate(inf);
    }
    let cert = if symmetric {
        symmetric_ekeland_select(&j.0, &u.0, &params)
    } else {
        ekeland_select(&j.0, &u.0, &params)
    };
    cert.map(Certificate::from).map_err(err)
}

/// Runs an experiment config given as JSON text; returns
/// `(trace_csv, metadata_json, hard_invariants_hold)`.
#[pyfunction]
fn run_config(py: Python<'_>, config_json: &str) -> PyResult<(String, String, bool)> {
    let config = ExperimentConfig::from_json(config_json).map_err(err)?;
    let exp = config.build(&IntegrandRegistry::with_builtins()).map_err(err)?;
    let trace = py.detach(|| minimizing_sequence_pipeline(&exp.functional, &exp.config.pipeline)).map_err(err)?;
    Ok((trace.to_csv().map_err(err)?, trace.meta_json().map_err(err)?, trace.invariants_hold()))
}

/// Runs `axioms`, `oracle` or `pipeline`; returns `(passed, report)`.
#[pyfunction]
#[pyo3(signature = (suite, quick=true))]
fn verify(py: Python<'_>, suite: &str, quick: bool) -> PyResult<(bool, String)> {
    let suite: Suite = suite.parse().map_err(err)?;
    let report = py.detach(|| run_suite(suite, quick)).map_err(err)?;
    Ok((report.passed(), report.render()))
}

#[pyfunction]
fn list_integrands() -> Vec<(String, String)> {
    IntegrandRegistry::with_builtins().names().into_iter().map(|(n, d)| (n.to_string(), d.to_string())).collect()
}

#[pymodule]
fn pysymmin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Domain>()?;
    m.add_class::<Grid>()?;
    m.add_class::<HalfSpace>()?;
    m.add_class::<GridFunction>()?;
    m.add_class::<Functional>()?;
    m.add_class::<Certificate>()?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(list_integrands, m)?)?;
    Ok(())
}
