//! JSON file formats shared by the CLI and the bundled fixtures.
//!
//! Infinite values are written as the strings `"inf"` / `"-inf"` (JSON has
//! no literal for them) and accepted in that form wherever a log-weight may
//! be infinite.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::hmm::{Hmm, HmmError, RawHmm, StochasticMatrix};
use crate::learning::{DirichletHmm, LearningError};
use crate::planning::{ActionModel, PlanningError, Policy, PreferenceDist};
use crate::probkit::{CategoricalDist, LogWeights, ProbError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {source}")]
    Json {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid {field}: {detail}")]
    Field { field: String, detail: String },
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

fn field(field: impl Into<String>, detail: impl Into<String>) -> IoError {
    IoError::Field {
        field: field.into(),
        detail: detail.into(),
    }
}

fn json<T: for<'de> Deserialize<'de>>(what: &'static str, v: Value) -> Result<T, IoError> {
    serde_json::from_value(v).map_err(|source| IoError::Json { what, source })
}

fn parse_value(what: &'static str, text: &str) -> Result<Value, IoError> {
    serde_json::from_str(text).map_err(|source| IoError::Json { what, source })
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

/// A number, or one of `"inf"`, `"-inf"`, `"nan"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LooseF64 {
    Num(f64),
    Str(LooseStr),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LooseStr {
    #[serde(rename = "inf", alias = "Infinity", alias = "+inf")]
    Inf,
    #[serde(rename = "-inf", alias = "-Infinity")]
    NegInf,
    #[serde(rename = "nan", alias = "NaN")]
    Nan,
}

impl From<LooseF64> for f64 {
    fn from(v: LooseF64) -> f64 {
        match v {
            LooseF64::Num(x) => x,
            LooseF64::Str(LooseStr::Inf) => f64::INFINITY,
            LooseF64::Str(LooseStr::NegInf) => f64::NEG_INFINITY,
            LooseF64::Str(LooseStr::Nan) => f64::NAN,
        }
    }
}

/// JSON value for `x`, with non-finite values as strings.
pub fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::from("nan")
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

pub fn json_f64s(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| json_f64(x)).collect())
}

/// An HMM file, or any object carrying one under `"model"` (fixtures do).
pub fn parse_hmm(text: &str) -> Result<Hmm, IoError> {
    let mut v = parse_value("model JSON", text)?;
    if let Some(inner) = v.get_mut("model") {
        v = inner.take();
    }
    let raw: RawHmm = json("model JSON", v)?;
    Ok(Hmm::from_raw(&raw)?)
}

pub fn hmm_to_json(m: &Hmm) -> Value {
    serde_json::to_value(m.to_raw()).expect("finite model entries")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawAction {
    pub name: String,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPolicySet {
    pub actions: Vec<RawAction>,
    pub policies: Vec<Vec<String>>,
    pub preference: Vec<f64>,
    #[serde(default)]
    pub log_prior: Option<Vec<LooseF64>>,
}

#[derive(Debug, Clone)]
pub struct PolicySet {
    pub actions: ActionModel,
    pub policies: Vec<Policy>,
    pub preference: PreferenceDist,
    pub log_prior: Option<LogWeights>,
}

impl PolicySet {
    pub fn from_raw(raw: &RawPolicySet) -> Result<Self, IoError> {
        let actions = raw
            .actions
            .iter()
            .map(|a| {
                let m = StochasticMatrix::from_rows(&a.matrix)
                    .map_err(|e| field(format!("actions[{}].matrix", a.name), e.to_string()))?;
                Ok((a.name.clone(), m))
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        let actions = ActionModel::new(actions)?;
        let policies = raw
            .policies
            .iter()
            .enumerate()
            .map(|(i, names)| {
                let steps = names
                    .iter()
                    .map(|n| actions.index_of(n).map_err(|e| field(format!("policies[{i}]"), e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Policy::new(steps))
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        if policies.is_empty() {
            return Err(field("policies", "empty policy set"));
        }
        let p_c = CategoricalDist::new(raw.preference.clone()).map_err(|e| field("preference", e.to_string()))?;
        if p_c.len() != actions.num_states() {
            return Err(field(
                "preference",
                format!("{} entries for {} states", p_c.len(), actions.num_states()),
            ));
        }
        let log_prior = match &raw.log_prior {
            None => None,
            Some(lp) => {
                if lp.len() != policies.len() {
                    return Err(field(
                        "log_prior",
                        format!("{} entries for {} policies", lp.len(), policies.len()),
                    ));
                }
                let values = lp.iter().map(|&x| f64::from(x)).collect();
                Some(LogWeights::new(values).map_err(|e| field("log_prior", e.to_string()))?)
            }
        };
        Ok(Self {
            actions,
            policies,
            preference: PreferenceDist::new(p_c),
            log_prior,
        })
    }

    pub fn policy_names(&self, pol: &Policy) -> Vec<String> {
        pol.steps.iter().map(|&a| self.actions.names()[a].clone()).collect()
    }
}

pub fn parse_policy_set(text: &str) -> Result<PolicySet, IoError> {
    let raw: RawPolicySet = json("policy set JSON", parse_value("policy set JSON", text)?)?;
    PolicySet::from_raw(&raw)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDirichlet {
    #[serde(rename = "C_A")]
    pub c_a: Vec<Vec<f64>>,
    #[serde(rename = "C_B")]
    pub c_b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec<f64>>,
}

fn to_array(name: &str, rows: &[Vec<f64>]) -> Result<ndarray::Array2<f64>, IoError> {
    crate::hmm::rows_to_array(rows).map_err(|e| field(name, e))
}

/// Concentrations plus the optional start distribution.
pub fn parse_dirichlet(text: &str) -> Result<(DirichletHmm, Option<CategoricalDist>), IoError> {
    let raw: RawDirichlet = json("Dirichlet JSON", parse_value("Dirichlet JSON", text)?)?;
    let d = DirichletHmm::new(to_array("C_A", &raw.c_a)?, to_array("C_B", &raw.c_b)?)?;
    let p0 = match raw.p0 {
        None => None,
        Some(p) => Some(CategoricalDist::new(p).map_err(|e| field("p0", e.to_string()))?),
    };
    Ok((d, p0))
}

pub fn dirichlet_to_raw(d: &DirichletHmm, p0: Option<&CategoricalDist>) -> RawDirichlet {
    let rows = |m: &ndarray::Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
    RawDirichlet {
        c_a: rows(d.c_a()),
        c_b: rows(d.c_b()),
        p0: p0.map(|p| p.weights().to_vec()),
    }
}

/// One observation-index array per non-blank line.
pub fn parse_training_jsonl(text: &str) -> Result<Vec<Vec<usize>>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| field(format!("training data line {}", i + 1), e.to_string()))
        })
        .collect()
}

/// A JSON array of observation indices, or `{"observations": [...]}`.
pub fn parse_observations(text: &str) -> Result<Vec<usize>, IoError> {
    let mut v = parse_value("observations JSON", text)?;
    if let Some(inner) = v.get_mut("observations") {
        v = inner.take();
    }
    json("observations JSON", v)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TMAZE: &str = include_str!("../fixtures/tmaze.json");

    #[test]
    fn fixture_parses_both_ways() {
        let m = parse_hmm(TMAZE).unwrap();
        assert_eq!((m.num_states(), m.num_obs()), (8, 7));
        let ps = parse_policy_set(TMAZE).unwrap();
        assert_eq!(ps.policies.len(), 16);
        assert_eq!(ps.actions.len(), 4);
        assert_eq!(ps.policy_names(&ps.policies[7]), vec!["go-left", "go-cue"]);
    }

    #[test]
    fn infinities_round_trip() {
        let text = r#"{"actions":[{"name":"stay","matrix":[[1,0],[0,1]]}],
            "policies":[["stay"],["stay"]],"preference":[0.5,0.5],"log_prior":[0,"-inf"]}"#;
        let ps = parse_policy_set(text).unwrap();
        assert_eq!(ps.log_prior.unwrap().values(), &[0.0, f64::NEG_INFINITY]);
        assert_eq!(json_f64(f64::INFINITY), Value::from("inf"));
        assert_eq!(json_f64(f64::NEG_INFINITY), Value::from("-inf"));
        assert_eq!(json_f64(0.1), serde_json::json!(0.1));
    }

    #[test]
    fn bad_inputs_name_the_field() {
        let bad = r#"{"actions":[{"name":"go","matrix":[[1,0],[0,1]]}],"policies":[["jump"]],"preference":[0.5,0.5]}"#;
        assert!(parse_policy_set(bad).unwrap_err().to_string().contains("policies[0]"));
        let bad = r#"{"C_A":[[1,0]],"C_B":[[1]]}"#;
        assert!(parse_dirichlet(bad).unwrap_err().to_string().contains("C_A"));
        assert!(matches!(parse_hmm("{"), Err(IoError::Json { .. })));
        let err = parse_training_jsonl("[0,1]\n\n[0,x]\n").unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn data_files() {
        assert_eq!(parse_training_jsonl("[0,1]\n[1]\n").unwrap(), vec![vec![0, 1], vec![1]]);
        assert_eq!(parse_observations("[2,0]").unwrap(), vec![2, 0]);
        assert_eq!(parse_observations(r#"{"observations":[1]}"#).unwrap(), vec![1]);
        let (d, p0) = parse_dirichlet(r#"{"C_A":[[1,2]],"C_B":[[3]],"p0":[1]}"#).unwrap();
        assert_eq!(d.c_a()[[0, 1]], 2.0);
        assert!(p0.is_some());
        let raw = dirichlet_to_raw(&d, None);
        assert_eq!(raw.c_b, vec![vec![3.0]]);
    }
}
