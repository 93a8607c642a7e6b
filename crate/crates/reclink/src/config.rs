//! Experiment configuration: a TOML file naming the scenario, the methods, a
//! base cell and a factor grid expanded into the cartesian product of cells.

use std::path::Path;

use reclink_core::methods::MethodSettings;
use reclink_core::regression::Method;
use reclink_core::simgen::{Scenario1Config, Scenario2Config};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const DEFAULT_FAILURE_CEILING: f64 = 0.2;

fn default_replications() -> usize {
    1
}

fn default_ceiling() -> f64 {
    DEFAULT_FAILURE_CEILING
}

/// The file as written by the user.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: u8,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Give replication r the same seed in every cell.
    #[serde(default)]
    pub common_seeds: bool,
    pub methods: Vec<String>,
    #[serde(default = "default_ceiling")]
    pub failure_ceiling: f64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub settings: MethodSettings,
    #[serde(default)]
    pub scenario1: Scenario1Config,
    #[serde(default)]
    pub scenario2: Scenario2Config,
    /// Factor name to the list of levels it takes.
    #[serde(default)]
    pub grid: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum CellConfig {
    One(Scenario1Config),
    Two(Scenario2Config),
}

impl CellConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            CellConfig::One(c) => CellConfig::One(Scenario1Config { seed, ..c.clone() }),
            CellConfig::Two(c) => CellConfig::Two(Scenario2Config { seed, ..c.clone() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    /// Grid factor levels of this cell, in key order.
    pub factors: Vec<(String, String)>,
    pub config: CellConfig,
    pub fingerprint: String,
}

impl Cell {
    pub fn factor_label(&self) -> String {
        self.factors.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub scenario: u8,
    pub cells: Vec<Cell>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub base_seed: u64,
    pub common_seeds: bool,
    pub failure_ceiling: f64,
    pub workers: usize,
    pub settings: MethodSettings,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| config_err(e.to_string()))
}

fn level_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(a) => format!("({})", a.iter().map(level_label).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

fn fingerprint(config: &CellConfig) -> String {
    let canonical = serde_json::to_string(&config.with_seed(0)).expect("configs serialize");
    Sha256::digest(canonical.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    fn expand_cells(&self) -> Result<Vec<Cell>> {
        let base = match self.scenario {
            1 => toml::Value::try_from(&self.scenario1),
            2 => toml::Value::try_from(&self.scenario2),
            s => return Err(config_err(format!("scenario must be 1 or 2, got {s}"))),
        }
        .map_err(|e| config_err(e.to_string()))?;
        let mut axes = Vec::new();
        for (key, levels) in &self.grid {
            let levels = levels.as_array().ok_or_else(|| config_err(format!("grid.{key} must be an array")))?;
            if levels.is_empty() {
                return Err(config_err(format!("grid.{key} is empty")));
            }
            axes.push((key.clone(), levels.clone()));
        }
        let n_cells: usize = axes.iter().map(|(_, l)| l.len()).product();
        let mut cells = Vec::with_capacity(n_cells);
        for index in 0..n_cells {
            let mut table = base.as_table().cloned().expect("configs serialize to tables");
            let mut factors = Vec::with_capacity(axes.len());
            // last key varies fastest
            let mut rest = index;
            let mut picks = vec![0; axes.len()];
            for (k, (_, levels)) in axes.iter().enumerate().rev() {
                picks[k] = rest % levels.len();
                rest /= levels.len();
            }
            for ((key, levels), &p) in axes.iter().zip(&picks) {
                table.insert(key.clone(), levels[p].clone());
                factors.push((key.clone(), level_label(&levels[p])));
            }
            let value = toml::Value::Table(table);
            let config = match self.scenario {
                1 => value.try_into().map(CellConfig::One),
                _ => value.try_into().map(CellConfig::Two),
            }
            .map_err(|e: toml::de::Error| config_err(format!("grid: {e}")))?;
            match &config {
                CellConfig::One(c) => c.validate(),
                CellConfig::Two(c) => c.validate(),
            }
            .map_err(|e| config_err(format!("cell {index}: {e}")))?;
            let fingerprint = fingerprint(&config);
            cells.push(Cell { index, factors, config, fingerprint });
        }
        Ok(cells)
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        if self.replications == 0 {
            return Err(config_err("replications must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.failure_ceiling) {
            return Err(config_err("failure_ceiling must lie in [0, 1]"));
        }
        if self.methods.is_empty() {
            return Err(config_err("no methods requested"));
        }
        let mut methods = Vec::with_capacity(self.methods.len());
        for name in &self.methods {
            let m: Method = name.parse().map_err(|e: reclink_core::Error| config_err(e.to_string()))?;
            if !m.scenarios().contains(&self.scenario) {
                return Err(config_err(format!("{m} does not run in scenario {}", self.scenario)));
            }
            if methods.contains(&m) {
                return Err(config_err(format!("{m} listed twice")));
            }
            methods.push(m);
        }
        Ok(ExperimentPlan {
            scenario: self.scenario,
            cells: self.expand_cells()?,
            methods,
            replications: self.replications,
            base_seed: self.base_seed,
            common_seeds: self.common_seeds,
            failure_ceiling: self.failure_ceiling,
            workers: self.workers,
            settings: self.settings.clone(),
        })
    }
}
