//! Experiment configuration: one JSON file naming the domain, grid,
//! integrand, pipeline settings and outputs. Everything is validated before
//! any computation starts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{DiscreteFunctional, IntegrandRegistry, IntegrandSpec};
use crate::geometry::{DomainSpec, Grid, GridMode};
use crate::pipeline::PipelineSettings;

/// Environment variable that overrides `outputs.dir`.
pub const OUTPUT_DIR_ENV: &str = "SYMMIN_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// File stem; defaults to the config name.
    #[serde(default)]
    pub stem: Option<String>,
    /// Also write every `v_h` as `(cell_index, value)` CSV.
    #[serde(default)]
    pub fields: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: default_dir(), stem: None, fields: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub domain: DomainSpec,
    pub grid: GridMode,
    pub integrand: IntegrandSpec,
    #[serde(default)]
    pub pipeline: PipelineSettings,
    #[serde(default)]
    pub outputs: OutputSpec,
}

/// A config ready to run.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub functional: DiscreteFunctional,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validates every part and builds the discrete functional.
    pub fn build(&self, registry: &IntegrandRegistry) -> Result<Experiment> {
        if self.name.is_empty() {
            return Err(Error::Config("name must not be empty".into()));
        }
        self.domain.validate()?;
        let grid = Arc::new(Grid::new(self.domain, self.grid)?);
        self.pipeline.validate()?;
        let integrand = registry.build(self.domain.dimension, &self.integrand)?;
        let functional = DiscreteFunctional::new(integrand, grid)?;
        Ok(Experiment { config: self.clone(), functional })
    }

    /// `outputs.dir`, unless the override variable is set.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.outputs.dir.clone(),
        }
    }

    pub fn stem(&self) -> &str {
        self.outputs.stem.as_deref().unwrap_or(&self.name)
    }
}

/// Configs shipped with the crate, as `(name, json)`.
pub const BUNDLED: &[(&str, &str)] = &[
    ("baseline_disk", include_str!("../configs/baseline_disk.json")),
    ("wiggle_disk", include_str!("../configs/wiggle_disk.json")),
];

pub fn bundled(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("no bundled config named `{name}`")))?;
    ExperimentConfig::from_json(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_validate() {
        let reg = IntegrandRegistry::with_builtins();
        for (name, _) in BUNDLED {
            let c = bundled(name).unwrap();
            assert_eq!(c.name, *name);
            c.build(&reg).unwrap();
            let again = ExperimentConfig::from_json(&c.to_json()).unwrap();
            assert_eq!(again, c);
        }
    }

    #[test]
    fn bad_exponent_names_constraint() {
        let mut c = bundled("wiggle_disk").unwrap();
        let mut g = crate::functional::GrowthParams::pure(2, 1.5, 1.0, 1.5);
        g = g.with_lower(crate::functional::Weight::Constant(1.0), 1.5);
        c.integrand.growth = Some(g);
        let err = c.build(&IntegrandRegistry::with_builtins()).unwrap_err().to_string();
        assert!(err.contains("γ₂"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = bundled("wiggle_disk").unwrap().to_json().replacen('{', "{\"bogus\": 1,", 1);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
