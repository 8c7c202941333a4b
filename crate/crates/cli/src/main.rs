//! `actinf`: run inference, planning, learning and agent experiments on
//! discrete HMMs from JSON fixtures.
//!
//! Every subcommand accepts `--config FILE` (a JSON object with the same
//! keys as the flags); flags given on the command line win.
//! Exit codes: 0 success, 2 input error, 3 observations contradict the
//! model, 4 exact oracle too large.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::resolve;
use crate::error::Failure;

#[derive(Parser)]
#[command(name = "actinf", version = actinf_core::VERSION, about = "Active inference on discrete HMMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep beliefs for an observation prefix; writes beliefs.csv and summary.json.
    Infer(InferArgs),
    /// Rank a policy set; writes ranking.csv and plan.json.
    Plan(PlanArgs),
    /// Learn Dirichlet posteriors; writes trace.csv, posterior.json and model.json.
    Learn(LearnArgs),
    /// Run the closed agent loop; writes one CSV per episode and summary.json.
    Agent(AgentArgs),
    /// Expected free energy terms and bound slacks; writes efe.json.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Serialize)]
struct InferArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// HMM JSON (`S`, `O`, `p0`, `A`, `B`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Observation indices as a JSON array.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    obs: Option<PathBuf>,
    /// Number of observations to clamp (default: all).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<usize>,
    /// Horizon (default: max(t, 1)).
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    /// filtering | smoothing
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    /// Maximum sweep passes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PlanArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    /// Policy set JSON (`actions`, `policies`, `preference`, optional `log_prior`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    policies: Option<PathBuf>,
    /// Observations so far (default: none).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    obs: Option<PathBuf>,
    /// reverse | forward
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    planner: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct LearnArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Dirichlet prior JSON (`C_A`, `C_B`, optional `p0`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    prior: Option<PathBuf>,
    /// Training data: one JSON array of observation indices per line.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Maximum outer rounds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct AgentArgs {
    /// Built-in fixture (tmaze, gridworld) or a fixture JSON path.
    #[serde(skip_serializing_if = "Option::is_none")]
    env: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// reverse | forward | policy-posterior
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    planner: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Perception sweep: filtering | smoothing
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    /// Episode length (default: the policies' length).
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    /// Gridworld side length.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_side: Option<usize>,
    /// Gridworld slip probability.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    slip: Option<f64>,
    /// Mix the agent's emission rows with uniform noise of this weight.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    emission_noise: Option<f64>,
    /// Outer iterations for the policy-posterior planner.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    outer_iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DiagnoseArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    obs: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<usize>,
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, Failure> {
    match cli.command {
        Command::Infer(a) => commands::infer(&resolve(&a, a.config.as_deref())?),
        Command::Plan(a) => commands::plan(&resolve(&a, a.config.as_deref())?),
        Command::Learn(a) => commands::learn_cmd(&resolve(&a, a.config.as_deref())?),
        Command::Agent(a) => commands::agent(&resolve(&a, a.config.as_deref())?),
        Command::Diagnose(a) => commands::diagnose(&resolve(&a, a.config.as_deref())?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const CHAIN: &str = r#"{"S": 2, "O": 2, "p0": [1, 0], "A": [[1, 0], [0, 1]], "B": [[0.9, 0.1], [0.2, 0.8]]}"#;

    fn put(dir: &Path, name: &str, text: &str) -> String {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    }

    fn exec(args: &[&str]) -> Result<Vec<PathBuf>, Failure> {
        run(Cli::try_parse_from(std::iter::once("actinf").chain(args.iter().copied())).unwrap())
    }

    fn code(args: &[&str]) -> u8 {
        exec(args).map(|_| 0).unwrap_or_else(|f| f.code)
    }

    #[test]
    fn infer_writes_beliefs_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let model = put(dir.path(), "m.json", CHAIN);
        let obs = put(dir.path(), "o.json", "[0, 1]");
        let out = dir.path().join("out");
        let paths = exec(&["infer", "--model", &model, "--obs", &obs, "--T", "4", "--out", out.to_str().unwrap()]).unwrap();
        assert_eq!(paths.len(), 2);
        let csv = std::fs::read_to_string(out.join("beliefs.csv")).unwrap();
        let last_pass: Vec<&str> = csv.lines().rev().take(5).collect();
        assert!(csv.starts_with("pass,update_index,tau,divergence,q_0,q_1\n"));
        assert!(last_pass.iter().rev().enumerate().all(|(tau, row)| row.split(',').nth(2) == Some(&tau.to_string())));
        let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["config"]["T"], 4);
        assert!(summary["version"].is_string());
    }

    #[test]
    fn config_file_and_flags_merge() {
        let dir = tempfile::tempdir().unwrap();
        let model = put(dir.path(), "m.json", CHAIN);
        let obs = put(dir.path(), "o.json", "[0]");
        let out = dir.path().join("out");
        let cfg = put(
            dir.path(),
            "c.json",
            &serde_json::json!({ "model": model, "obs": obs, "T": 2, "out": out }).to_string(),
        );
        exec(&["infer", "--config", &cfg, "--T", "3"]).unwrap();
        let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["config"]["T"], 3);
        assert_eq!(summary["config"]["obs"], obs.as_str());
    }

    #[test]
    fn bad_input_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let model = put(dir.path(), "m.json", r#"{"S": 2, "O": 2, "p0": [1, 0], "A": [[0.5, 0.6], [0, 1]], "B": [[1, 0], [0, 1]]}"#);
        let obs = put(dir.path(), "o.json", "[0]");
        let out = dir.path().join("out");
        assert_eq!(code(&["infer", "--model", &model, "--obs", &obs, "--out", out.to_str().unwrap()]), 2);
        assert_eq!(code(&["infer", "--model", "/nonexistent.json", "--obs", &obs, "--out", "x"]), 2);
        assert_eq!(code(&["agent", "maze", "--out", out.to_str().unwrap()]), 2);
        assert!(!out.exists());
    }

    #[test]
    fn contradiction_exits_three() {
        let dir = tempfile::tempdir().unwrap();
        let model = put(dir.path(), "m.json", r#"{"S": 2, "O": 2, "p0": [0.5, 0.5], "A": [[1, 0], [1, 0]], "B": [[1, 0], [0, 1]]}"#);
        let obs = put(dir.path(), "o.json", "[1]");
        let out = dir.path().join("out");
        let err = exec(&["infer", "--model", &model, "--obs", &obs, "--out", out.to_str().unwrap()]).unwrap_err();
        assert_eq!(err.code, 3, "{}", err.message);
    }

    #[test]
    fn diagnose_without_future_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let model = put(dir.path(), "m.json", CHAIN);
        let obs = put(dir.path(), "o.json", "[0, 1]");
        let out = dir.path().join("out");
        let err = exec(&["diagnose", "--model", &model, "--obs", &obs, "--T", "2", "--out", out.to_str().unwrap()]).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("no future timesteps"), "{}", err.message);
    }

    #[test]
    fn diagnose_refuses_huge_enumeration() {
        let dir = tempfile::tempdir().unwrap();
        let row = vec![0.1; 10];
        let model = serde_json::json!({ "S": 1, "O": 10, "p0": [1], "A": [row], "B": [[1]] }).to_string();
        let model = put(dir.path(), "m.json", &model);
        let obs = put(dir.path(), "o.json", "[]");
        let out = dir.path().join("out");
        assert_eq!(code(&["diagnose", "--model", &model, "--obs", &obs, "--T", "12", "--out", out.to_str().unwrap()]), 4);
    }

    #[test]
    fn diagnose_reports_identity() {
        let dir = tempfile::tempdir().unwrap();
        let model = put(dir.path(), "m.json", CHAIN);
        let obs = put(dir.path(), "o.json", "[0]");
        let out = dir.path().join("out");
        exec(&["diagnose", "--model", &model, "--obs", &obs, "--T", "3", "--out", out.to_str().unwrap()]).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("efe.json")).unwrap()).unwrap();
        assert!(v["identity_residual"].as_f64().unwrap() < 1e-10);
        assert!(v["bound_slacks"]["info"].as_f64().unwrap() >= -1e-9);
    }

    #[test]
    fn plan_reports_infinite_scores() {
        let dir = tempfile::tempdir().unwrap();
        let model = put(dir.path(), "m.json", CHAIN);
        let set = r#"{
            "actions": [{"name": "stay", "matrix": [[1, 0], [0, 1]]}, {"name": "flip", "matrix": [[0, 1], [1, 0]]}],
            "policies": [["flip"], ["stay"]],
            "preference": [1, 0]
        }"#;
        let set = put(dir.path(), "p.json", set);
        let out = dir.path().join("out");
        exec(&["plan", "--model", &model, "--policies", &set, "--out", out.to_str().unwrap()]).unwrap();
        let csv = std::fs::read_to_string(out.join("ranking.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[1], "0,1,stay,0.0000000000000000e0");
        assert_eq!(rows[2], "1,0,flip,inf");
        let plan: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("plan.json")).unwrap()).unwrap();
        assert_eq!(plan["chosen"]["actions"][0], "stay");
        assert_eq!(plan["ranking"][1]["score"], "inf");
    }

    #[test]
    fn learn_writes_trace_and_models() {
        let dir = tempfile::tempdir().unwrap();
        let prior = put(dir.path(), "prior.json", r#"{"C_A": [[2, 1], [1, 2]], "C_B": [[1, 1], [1, 1]]}"#);
        let data = put(dir.path(), "d.jsonl", "[0, 0, 1]\n[1, 1, 0, 0]\n");
        let out = dir.path().join("out");
        let paths = exec(&["learn", "--prior", &prior, "--data", &data, "--out", out.to_str().unwrap()]).unwrap();
        assert_eq!(paths.len(), 3);
        let model = std::fs::read_to_string(out.join("model.json")).unwrap();
        actinf_core::io::parse_hmm(&model).unwrap();
    }

    #[test]
    fn agent_summary_counts_episodes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        exec(&["agent", "tmaze", "--episodes", "2", "--seed", "3", "--out", out.to_str().unwrap()]).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(v["per_episode"].as_array().unwrap().len(), 2);
        assert!(out.join("episode_1.csv").exists());
    }
}
