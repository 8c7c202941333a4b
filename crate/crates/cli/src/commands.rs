//! One function per subcommand. Each returns the paths it wrote.

use std::path::{Path, PathBuf};

use actinf_core::efe::verify_bounds;
use actinf_core::envsim::{self, AgentConfig, Planner, World};
use actinf_core::io::{self, json_f64, json_f64s};
use actinf_core::learning::{learn, posterior_mean_model, LearnOptions};
use actinf_core::planning::{plan_forward, plan_reverse};
use actinf_core::{BeliefTrajectory, CategoricalDist, Hmm, LogModel, SweepMode, SweepOptions};
use serde_json::{json, Value};

use crate::config::{AgentConfigFile, DiagnoseConfig, InferConfig, LearnConfig, PlanConfig};
use crate::error::Failure;
use crate::output::{ensure_dir, fmt_f64, with_provenance, write_json, Csv};

fn read(path: &Path) -> Result<String, Failure> {
    Ok(io::read_to_string(path)?)
}

fn parse_mode(s: &str) -> Result<SweepMode, Failure> {
    s.parse().map_err(|e: String| Failure::input(e))
}

fn parse_planner(s: &str) -> Result<Planner, Failure> {
    s.parse().map_err(|e: String| Failure::input(e))
}

/// Observations `o_1..o_t` and the horizon, with `t` defaulting to all
/// observations and `T` to `max(t, 1)`.
fn window(obs: &[usize], t: Option<usize>, horizon: Option<usize>) -> Result<(usize, usize), Failure> {
    let t = t.unwrap_or(obs.len());
    if t > obs.len() {
        return Err(Failure::input(format!("t = {t} but only {} observations given", obs.len())));
    }
    let horizon = horizon.unwrap_or(t.max(1));
    if t > horizon {
        return Err(Failure::input(format!("t = {t} exceeds T = {horizon}")));
    }
    Ok((t, horizon))
}

fn belief_header(prefix: &[&str], s: usize) -> Vec<String> {
    prefix.iter().map(|p| p.to_string()).chain((0..s).map(|k| format!("q_{k}"))).collect()
}

fn beliefs_json(bt: &BeliefTrajectory) -> Value {
    Value::Array(bt.beliefs().iter().map(|q| json_f64s(q.weights())).collect())
}

pub fn infer(cfg: &InferConfig) -> Result<Vec<PathBuf>, Failure> {
    let model = io::parse_hmm(&read(&cfg.model)?)?;
    let obs = io::parse_observations(&read(&cfg.obs)?)?;
    let (t, horizon) = window(&obs, cfg.t, cfg.horizon)?;
    let mode = parse_mode(&cfg.mode)?;
    let mut bt = BeliefTrajectory::with_observations(LogModel::from_hmm(&model), horizon, &obs[..t])?;
    let report = bt.sweep(
        mode,
        SweepOptions {
            max_iters: cfg.iters,
            tol: cfg.tol,
        },
    )?;
    ensure_dir(&cfg.out)?;

    let mut csv = Csv::new(
        cfg.out.join("beliefs.csv"),
        &belief_header(&["pass", "update_index", "tau", "divergence"], model.num_states()),
    )?;
    for row in report.trace_rows() {
        let mut fields = vec![
            row.pass.to_string(),
            row.update_index.to_string(),
            row.tau.to_string(),
            fmt_f64(row.divergence),
        ];
        fields.extend(row.q.iter().map(|&x| fmt_f64(x)));
        csv.row(&fields)?;
    }
    let csv_path = csv.finish()?;

    let (f_past, f_future) = bt.divergence_split();
    let divergence = bt.divergence();
    let summary = json!({
        "t": t,
        "T": horizon,
        "divergence": json_f64(divergence),
        "F_past": json_f64(f_past),
        "F_future": json_f64(f_future),
        "vfe_if_t_eq_T": if t == horizon { json_f64(divergence) } else { Value::Null },
        "sweep": {
            "passes": report.iterations,
            "converged": report.converged,
            "divergence_before": json_f64(report.divergence_before),
            "max_increase": json_f64(report.max_increase()),
        },
        "beliefs": beliefs_json(&bt),
    });
    let summary_path = cfg.out.join("summary.json");
    write_json(&summary_path, &with_provenance(cfg, summary))?;
    Ok(vec![csv_path, summary_path])
}

pub fn plan(cfg: &PlanConfig) -> Result<Vec<PathBuf>, Failure> {
    let model = io::parse_hmm(&read(&cfg.model)?)?;
    let set = io::parse_policy_set(&read(&cfg.policies)?)?;
    let obs = match &cfg.obs {
        Some(p) => io::parse_observations(&read(p)?)?,
        None => Vec::new(),
    };
    let horizon = set.policies[0].len();
    if set.policies.iter().any(|p| p.len() != horizon) {
        return Err(Failure::input("policies have different lengths"));
    }
    let (t, _) = window(&obs, cfg.t, Some(horizon))?;
    if set.actions.num_states() != model.num_states() {
        return Err(Failure::input(format!(
            "actions act on {} states, model has {}",
            set.actions.num_states(),
            model.num_states()
        )));
    }
    let ranked = match parse_planner(&cfg.planner)? {
        Planner::Reverse => plan_reverse(&model, &set.actions, &set.policies, &obs[..t], &set.preference, horizon)?,
        Planner::Forward => plan_forward(&set.actions, &set.policies, &set.preference, t, horizon)?,
        Planner::PolicyPosterior => return Err(Failure::input("plan supports the reverse and forward planners")),
    };
    ensure_dir(&cfg.out)?;

    let header: Vec<String> = ["rank", "policy", "actions", "score"].iter().map(|s| s.to_string()).collect();
    let mut csv = Csv::new(cfg.out.join("ranking.csv"), &header)?;
    let mut ranking = Vec::new();
    for (rank, r) in ranked.iter().enumerate() {
        let names = set.policy_names(&set.policies[r.index]);
        csv.row(&[rank.to_string(), r.index.to_string(), names.join(" "), fmt_f64(r.score)])?;
        ranking.push(json!({ "policy": r.index, "actions": names, "score": json_f64(r.score) }));
    }
    let csv_path = csv.finish()?;
    let best = ranked[0].index;
    let body = json!({
        "t": t,
        "T": horizon,
        "chosen": { "policy": best, "actions": set.policy_names(&set.policies[best]) },
        "ranking": ranking,
    });
    let json_path = cfg.out.join("plan.json");
    write_json(&json_path, &with_provenance(cfg, body))?;
    Ok(vec![csv_path, json_path])
}

pub fn learn_cmd(cfg: &LearnConfig) -> Result<Vec<PathBuf>, Failure> {
    let (prior, p0) = io::parse_dirichlet(&read(&cfg.prior)?)?;
    let data = io::parse_training_jsonl(&read(&cfg.data)?)?;
    let p0 = p0.unwrap_or_else(|| CategoricalDist::uniform(prior.num_states()));
    let opts = LearnOptions {
        outer_iters: cfg.iters,
        tol: cfg.tol,
        sweep: SweepOptions::default(),
    };
    let result = learn(&prior, &p0, &data, opts)?;
    ensure_dir(&cfg.out)?;

    let header: Vec<String> = ["step", "round", "half", "divergence"].iter().map(|s| s.to_string()).collect();
    let mut csv = Csv::new(cfg.out.join("trace.csv"), &header)?;
    for (i, &d) in result.trace.iter().enumerate() {
        let (round, half) = match i {
            0 => (0, "start"),
            _ => (i.div_ceil(2), if i % 2 == 1 { "beliefs" } else { "parameters" }),
        };
        csv.row(&[i.to_string(), round.to_string(), half.to_string(), fmt_f64(d)])?;
    }
    let trace_path = csv.finish()?;

    let mut posterior = serde_json::to_value(io::dirichlet_to_raw(&result.posterior, Some(&p0))).expect("finite");
    posterior["iterations"] = json!(result.iterations);
    posterior["converged"] = json!(result.converged);
    posterior["final_divergence"] = json_f64(*result.trace.last().expect("trace starts non-empty"));
    let posterior_path = cfg.out.join("posterior.json");
    write_json(&posterior_path, &with_provenance(cfg, posterior))?;

    let mean = posterior_mean_model(&result.posterior, &p0)?;
    let model_path = cfg.out.join("model.json");
    write_json(&model_path, &with_provenance(cfg, io::hmm_to_json(&mean)))?;
    Ok(vec![trace_path, posterior_path, model_path])
}

fn load_world(cfg: &AgentConfigFile) -> Result<World, Failure> {
    if envsim::FIXTURES.contains(&cfg.env.as_str()) {
        return Ok(envsim::make_env(&cfg.env, cfg.grid_side, cfg.slip, cfg.seed)?);
    }
    let path = Path::new(&cfg.env);
    if !path.is_file() {
        return Err(Failure::input(format!(
            "unknown environment '{}'; known fixtures: {} (or a path to a fixture JSON file)",
            cfg.env,
            envsim::FIXTURES.join(", ")
        )));
    }
    let text = read(path)?;
    let model = io::parse_hmm(&text)?;
    let set = io::parse_policy_set(&text)?;
    let env = envsim::Environment::new(set.actions.clone(), model.emission().clone(), model.p0().clone(), cfg.seed)?;
    Ok(World {
        env,
        model,
        horizon: set.policies[0].len(),
        actions: set.actions,
        preference: set.preference,
        policies: set.policies,
    })
}

pub fn agent(cfg: &AgentConfigFile) -> Result<Vec<PathBuf>, Failure> {
    let world = load_world(cfg)?;
    let horizon = cfg.horizon.unwrap_or(world.horizon);
    let model: Hmm = envsim::with_emission_noise(&world.model, cfg.emission_noise)?;
    let mut run = AgentConfig::new(parse_planner(&cfg.planner)?, horizon, cfg.episodes, cfg.seed);
    run.mode = parse_mode(&cfg.mode)?;
    run.max_outer = cfg.outer_iters;
    let mut env = world.env.clone();
    let trace = envsim::run_agent(&mut env, &model, &world.actions, &world.preference, &world.policies, &run)?;
    ensure_dir(&cfg.out)?;

    let names = world.actions.names();
    let mut written = Vec::new();
    let header = belief_header(
        &["t", "action", "action_name", "observation", "true_state", "policy", "divergence_before", "divergence"],
        model.num_states(),
    );
    let width = trace.episodes.len().saturating_sub(1).to_string().len();
    for e in &trace.episodes {
        let mut csv = Csv::new(cfg.out.join(format!("episode_{:0width$}.csv", e.episode)), &header)?;
        for st in &e.steps {
            let mut fields = vec![
                st.t.to_string(),
                st.action.to_string(),
                names[st.action].clone(),
                st.observation.to_string(),
                st.true_state.to_string(),
                st.policy.to_string(),
                fmt_f64(st.divergence_before),
                fmt_f64(st.divergence),
            ];
            fields.extend(st.belief.iter().map(|&x| fmt_f64(x)));
            csv.row(&fields)?;
        }
        written.push(csv.finish()?);
    }

    let histogram: Vec<Value> = trace
        .action_histogram()
        .into_iter()
        .map(|(acts, count)| {
            let seq: Vec<&str> = acts.iter().map(|&a| names[a].as_str()).collect();
            json!({ "actions": seq, "count": count })
        })
        .collect();
    let episodes: Vec<Value> = trace
        .episodes
        .iter()
        .map(|e| {
            json!({
                "episode": e.episode,
                "seed": e.seed,
                "start_state": e.start_state,
                "final_state": e.final_state,
                "success": e.success,
                "actions": e.actions.iter().map(|&a| names[a].as_str()).collect::<Vec<_>>(),
                "observations": e.steps.iter().map(|s| s.observation).collect::<Vec<_>>(),
                "final_divergence": json_f64(e.final_divergence),
                "final_belief": json_f64s(&e.final_belief),
            })
        })
        .collect();
    let first_actions = {
        let mut counts = vec![0usize; names.len()];
        for e in &trace.episodes {
            if let Some(&a) = e.actions.first() {
                counts[a] += 1;
            }
        }
        names.iter().cloned().zip(counts.into_iter().map(Value::from)).collect::<serde_json::Map<_, _>>()
    };
    let summary = json!({
        "episodes": trace.episodes.len(),
        "T": horizon,
        "success": trace.episodes.iter().all(|e| e.success),
        "success_rate": json_f64(trace.success_rate()),
        "mean_final_divergence": json_f64(trace.mean_final_divergence()),
        "first_action_counts": first_actions,
        "action_histogram": histogram,
        "per_episode": episodes,
    });
    let summary_path = cfg.out.join("summary.json");
    write_json(&summary_path, &with_provenance(cfg, summary))?;
    written.push(summary_path);
    Ok(written)
}

pub fn diagnose(cfg: &DiagnoseConfig) -> Result<Vec<PathBuf>, Failure> {
    let model = io::parse_hmm(&read(&cfg.model)?)?;
    let obs = io::parse_observations(&read(&cfg.obs)?)?;
    let (t, horizon) = window(&obs, cfg.t, Some(cfg.horizon))?;
    let mut bt = BeliefTrajectory::with_observations(LogModel::from_hmm(&model), horizon, &obs[..t])?;
    bt.sweep(parse_mode(&cfg.mode)?, SweepOptions::default())?;
    let r = verify_bounds(&bt)?;
    let (f_past, f_future) = bt.divergence_split();
    let s = &r.bound_slacks;
    let body = json!({
        "t": t,
        "T": horizon,
        "divergence": json_f64(f_past + f_future),
        "F_past": json_f64(f_past),
        "F_future": json_f64(f_future),
        "mutual_information": json_f64(r.mutual_information),
        "ambiguity": json_f64(r.ambiguity),
        "pragmatic_value": json_f64(r.pragmatic_value),
        "entropy_q_o": json_f64(r.entropy_q_o),
        "entropy_q_s": json_f64(r.entropy_q_s),
        "g_lhs": json_f64(r.g_lhs),
        "g_standard": json_f64(r.g_standard),
        "g_exact": json_f64(r.g_exact),
        "kl_future": json_f64(r.kl_future),
        "identity_residual": json_f64((r.g_exact - r.entropy_q_o - f_future).abs()),
        "bound_slacks": {
            "info": json_f64(s.info),
            "simplest": json_f64(s.simplest),
            "simplest_corrected": json_f64(s.simplest_corrected),
            "efe": json_f64(s.efe),
            "gkl_identity": json_f64(s.gkl_identity),
        },
    });
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("efe.json");
    write_json(&path, &with_provenance(cfg, body))?;
    Ok(vec![path])
}
