//! Flag and config-file merging.
//!
//! Each subcommand has an args struct (everything optional) and a resolved
//! config struct. The config file supplies a base JSON object, flags that
//! were given overwrite its keys, and the result is deserialized with the
//! resolved struct's defaults filling the rest.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Failure;

pub fn resolve<A: Serialize, C: DeserializeOwned>(args: &A, config: Option<&Path>) -> Result<C, Failure> {
    let mut merged = match config {
        None => Map::new(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::input(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Failure::input("config file must hold a JSON object")),
                Err(e) => return Err(Failure::input(format!("malformed config JSON: {e}"))),
            }
        }
    };
    if let Value::Object(flags) = serde_json::to_value(args).expect("flags serialize") {
        merged.extend(flags);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::input(format!("config: {e}")))
}

fn default_iters() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-10
}

fn default_mode() -> String {
    "filtering".into()
}

fn default_planner() -> String {
    "reverse".into()
}

fn default_learn_iters() -> usize {
    50
}

fn default_episodes() -> usize {
    10
}

fn default_grid_side() -> usize {
    3
}

fn default_outer() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    pub model: PathBuf,
    pub obs: PathBuf,
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(rename = "T", default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub model: PathBuf,
    pub policies: PathBuf,
    #[serde(default)]
    pub obs: Option<PathBuf>,
    #[serde(default = "default_planner")]
    pub planner: String,
    #[serde(default)]
    pub t: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub prior: PathBuf,
    pub data: PathBuf,
    #[serde(default = "default_learn_iters")]
    pub iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfigFile {
    pub env: String,
    #[serde(default = "default_planner")]
    pub planner: String,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(rename = "T", default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_grid_side")]
    pub grid_side: usize,
    #[serde(default)]
    pub slip: f64,
    #[serde(default)]
    pub emission_noise: f64,
    #[serde(default = "default_outer")]
    pub outer_iters: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub model: PathBuf,
    pub obs: PathBuf,
    #[serde(default)]
    pub t: Option<usize>,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default = "default_mode")]
    pub mode: String,
    pub out: PathBuf,
}
