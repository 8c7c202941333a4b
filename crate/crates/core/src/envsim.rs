//! Small discrete worlds and the closed perceive-plan-act loop.
//!
//! An [`Environment`] holds the true hidden state and samples transitions and
//! observations from its own matrices. The agent only sees observations and
//! runs on its own [`Hmm`], which defaults to the generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{BeliefTrajectory, EngineError, LogModel, LogTransitions, SweepMode, SweepOptions};
use crate::hmm::{check_index, draw, Hmm, HmmError, StochasticMatrix};
use crate::io::{self, IoError};
use crate::planning::{
    alternate_policy_state, next_action_distribution, plan_forward, plan_reverse, sample_next_action, ActionModel,
    PlanningError, Policy, PolicyBelief, PreferenceDist,
};
use crate::probkit::{CategoricalDist, LogWeights, ProbError};

const TMAZE_JSON: &str = include_str!("../fixtures/tmaze.json");

/// Names accepted by [`make_env`].
pub const FIXTURES: &[&str] = &["tmaze", "gridworld"];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("unknown environment '{0}' (available: tmaze, gridworld)")]
    UnknownEnv(String),
    #[error("no policy is consistent with the executed actions {0:?}")]
    NoConsistentPolicy(Vec<usize>),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// The world: per-action dynamics, an emission matrix and a private RNG.
#[derive(Debug, Clone)]
pub struct Environment {
    actions: ActionModel,
    emission: StochasticMatrix,
    p0: CategoricalDist,
    true_state: usize,
    rng: ChaCha8Rng,
}

impl Environment {
    /// Starts in a state drawn from `p0` using `seed`.
    pub fn new(actions: ActionModel, emission: StochasticMatrix, p0: CategoricalDist, seed: u64) -> Result<Self, EnvError> {
        let s = actions.num_states();
        if emission.nrows() != s || p0.len() != s {
            return Err(EnvError::DimMismatch(format!(
                "{s} states in the actions, {} in the emission, {} in p0",
                emission.nrows(),
                p0.len()
            )));
        }
        let mut env = Self {
            actions,
            emission,
            p0,
            true_state: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset(seed);
        Ok(env)
    }

    /// Reseeds and redraws the start state.
    pub fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let p0 = ndarray::ArrayView1::from(self.p0.weights());
        self.true_state = draw(p0, &mut self.rng);
    }

    pub fn true_state(&self) -> usize {
        self.true_state
    }

    pub fn actions(&self) -> &ActionModel {
        &self.actions
    }

    pub fn emission(&self) -> &StochasticMatrix {
        &self.emission
    }

    pub fn p0(&self) -> &CategoricalDist {
        &self.p0
    }

    /// Moves with `B_a`, then emits from the new state.
    pub fn step(&mut self, a: usize) -> Result<usize, EnvError> {
        check_index("action", a, self.actions.len())?;
        self.true_state = draw(self.actions.matrix(a).row(self.true_state), &mut self.rng);
        Ok(draw(self.emission.row(self.true_state), &mut self.rng))
    }
}

pub fn env_step(env: &mut Environment, a: usize) -> Result<usize, EnvError> {
    env.step(a)
}

/// Everything needed to run an agent in one world.
#[derive(Debug, Clone)]
pub struct World {
    pub env: Environment,
    pub model: Hmm,
    pub actions: ActionModel,
    pub preference: PreferenceDist,
    pub policies: Vec<Policy>,
    pub horizon: usize,
}

/// Arithmetic mean of the action matrices: the dynamics with no action
/// committed, used as the agent's model transition.
fn mean_transition(am: &ActionModel) -> Result<StochasticMatrix, EnvError> {
    let mut sum = am.matrix(0).as_array().clone();
    for a in 1..am.len() {
        sum += am.matrix(a).as_array();
    }
    sum /= am.len() as f64;
    Ok(StochasticMatrix::with_tolerance(sum, 1e-12)?)
}

/// The T-maze: locations {center, left, right, cue} x context {reward-left,
/// reward-right}, state index `2 * location + context`. The arms absorb;
/// every move leaks 1% uniformly over all states.
pub fn make_tmaze(seed: u64) -> Result<World, EnvError> {
    let model = io::parse_hmm(TMAZE_JSON)?;
    let set = io::parse_policy_set(TMAZE_JSON)?;
    let env = Environment::new(set.actions.clone(), model.emission().clone(), model.p0().clone(), seed)?;
    Ok(World {
        env,
        model,
        actions: set.actions,
        preference: set.preference,
        policies: set.policies,
        horizon: 2,
    })
}

pub const GRID_ACTIONS: [&str; 4] = ["up", "down", "left", "right"];

fn grid_move(n: usize, cell: usize, dir: usize) -> usize {
    let (r, c) = (cell / n, cell % n);
    match dir {
        0 if r > 0 => cell - n,
        1 if r + 1 < n => cell + n,
        2 if c > 0 => cell - 1,
        3 if c + 1 < n => cell + 1,
        _ => cell,
    }
}

/// `N x N` grid, cell index `row * N + col`, start at cell 0. Each move
/// succeeds with probability `1 - slip`; the rest is spread evenly over the
/// three other directions. Moves into a wall stay put.
pub fn make_gridworld(n: usize, slip: f64, seed: u64) -> Result<(Environment, Hmm, ActionModel), EnvError> {
    if !(2..=6).contains(&n) {
        return Err(EnvError::BadParams(format!("side {n} outside 2..=6")));
    }
    if !(0.0..=0.5).contains(&slip) {
        return Err(EnvError::BadParams(format!("slip {slip} outside [0, 0.5]")));
    }
    let s = n * n;
    let actions = (0..4)
        .map(|dir| {
            let mut m = ndarray::Array2::zeros((s, s));
            for cell in 0..s {
                for other in 0..4 {
                    let p = if other == dir { 1.0 - slip } else { slip / 3.0 };
                    m[[cell, grid_move(n, cell, other)]] += p;
                }
            }
            Ok((GRID_ACTIONS[dir].to_string(), StochasticMatrix::with_tolerance(m, 1e-12)?))
        })
        .collect::<Result<Vec<_>, EnvError>>()?;
    let am = ActionModel::new(actions)?;
    let emission = StochasticMatrix::identity(s);
    let p0 = CategoricalDist::point_mass(s, 0);
    let labels = (0..s).map(|c| format!("r{}c{}", c / n, c % n)).collect();
    let model = Hmm::new(p0.clone(), emission.clone(), mean_transition(&am)?)?.with_labels(labels);
    let env = Environment::new(am.clone(), emission, p0, seed)?;
    Ok((env, model, am))
}

/// `mass` on `goal`, the rest spread evenly.
pub fn corner_preference(num_states: usize, goal: usize, mass: f64) -> Result<PreferenceDist, EnvError> {
    if goal >= num_states || !(0.0..=1.0).contains(&mass) || num_states < 2 {
        return Err(EnvError::BadParams(format!("goal {goal}, mass {mass}")));
    }
    let rest = (1.0 - mass) / (num_states - 1) as f64;
    let mut w = vec![rest; num_states];
    w[goal] = mass;
    Ok(PreferenceDist::new(CategoricalDist::new(w)?))
}

/// One policy per target cell: down to the target row, right to its column,
/// then hold position (pushing into a wall where possible, otherwise
/// stepping up and back down). Truncated or padded to `horizon` steps.
pub fn single_target_policies(n: usize, horizon: usize) -> Vec<Policy> {
    let (up, down, left, right) = (0, 1, 2, 3);
    (0..n * n)
        .map(|target| {
            let (r, c) = (target / n, target % n);
            let mut steps = vec![down; r];
            steps.extend(std::iter::repeat_n(right, c));
            let hold = if r + 1 == n {
                vec![down]
            } else if c + 1 == n {
                vec![right]
            } else if r == 0 {
                vec![up]
            } else if c == 0 {
                vec![left]
            } else {
                vec![up, down]
            };
            let mut k = 0;
            while steps.len() < horizon {
                steps.push(hold[k % hold.len()]);
                k += 1;
            }
            steps.truncate(horizon);
            Policy::new(steps)
        })
        .collect()
}

/// Gridworld with the goal in the far corner, 0.9 preference mass there and
/// a horizon of `2(N-1)` plus two holding steps.
pub fn gridworld_world(n: usize, slip: f64, seed: u64) -> Result<World, EnvError> {
    let (env, model, actions) = make_gridworld(n, slip, seed)?;
    let horizon = 2 * (n - 1) + 2;
    Ok(World {
        env,
        preference: corner_preference(n * n, n * n - 1, 0.9)?,
        policies: single_target_policies(n, horizon),
        model,
        actions,
        horizon,
    })
}

/// Built-in worlds by name. `grid_side`/`slip` only affect the gridworld.
pub fn make_env(name: &str, grid_side: usize, slip: f64, seed: u64) -> Result<World, EnvError> {
    match name {
        "tmaze" => make_tmaze(seed),
        "gridworld" => gridworld_world(grid_side, slip, seed),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

/// Mixes each emission row with the uniform distribution: `(1 - eps) A + eps / O`.
pub fn with_emission_noise(m: &Hmm, eps: f64) -> Result<Hmm, EnvError> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(EnvError::BadParams(format!("emission noise {eps} outside [0, 1]")));
    }
    let o = m.num_obs() as f64;
    let a = m.emission().as_array().mapv(|v| (1.0 - eps) * v + eps / o);
    let mut out = Hmm::new(m.p0().clone(), StochasticMatrix::with_tolerance(a, 1e-12)?, m.transition().clone())?;
    if let Some(labels) = m.labels() {
        out = out.with_labels(labels.to_vec());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    Reverse,
    Forward,
    PolicyPosterior,
}

impl std::str::FromStr for Planner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "reverse" => Ok(Planner::Reverse),
            "forward" => Ok(Planner::Forward),
            "policy_posterior" | "posterior" => Ok(Planner::PolicyPosterior),
            _ => Err(format!("unknown planner '{s}' (reverse, forward, policy-posterior)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AgentConfig {
    pub planner: Planner,
    pub horizon: usize,
    pub episodes: usize,
    pub seed: u64,
    pub mode: SweepMode,
    pub sweep: SweepOptions,
    /// Outer iterations for the policy-posterior planner.
    pub max_outer: usize,
}

impl AgentConfig {
    pub fn new(planner: Planner, horizon: usize, episodes: usize, seed: u64) -> Self {
        Self {
            planner,
            horizon,
            episodes,
            seed,
            mode: SweepMode::Filtering,
            sweep: SweepOptions::default(),
            max_outer: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub t: usize,
    /// `q_t` after the perception sweep, before acting.
    pub belief: Vec<f64>,
    pub divergence_before: f64,
    pub divergence: f64,
    /// `(policy index, score)` for every policy consistent with the executed
    /// prefix, best first. Lower is better for every planner; the
    /// policy-posterior planner reports `-ln q(π)`.
    pub scores: Vec<(usize, f64)>,
    pub policy: usize,
    pub action: usize,
    pub observation: usize,
    pub true_state: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub seed: u64,
    pub start_state: usize,
    pub steps: Vec<StepRecord>,
    pub final_belief: Vec<f64>,
    pub final_divergence: f64,
    pub final_state: usize,
    pub actions: Vec<usize>,
    /// The final true state has maximal preference.
    pub success: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentTrace {
    pub planner: Planner,
    pub horizon: usize,
    pub episodes: Vec<EpisodeTrace>,
}

impl AgentTrace {
    pub fn success_rate(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len() as f64
    }

    pub fn mean_final_divergence(&self) -> f64 {
        let n = self.episodes.len().max(1) as f64;
        self.episodes.iter().map(|e| e.final_divergence).sum::<f64>() / n
    }

    /// How often each executed action sequence occurred, sorted by sequence.
    pub fn action_histogram(&self) -> Vec<(Vec<usize>, usize)> {
        let mut h = std::collections::BTreeMap::new();
        for e in &self.episodes {
            *h.entry(e.actions.clone()).or_insert(0) += 1;
        }
        h.into_iter().collect()
    }
}

/// Executed actions for the first steps, the model's own `B` afterwards.
fn agent_model(m: &Hmm, am: &ActionModel, executed: &[usize], horizon: usize) -> Result<LogModel, EnvError> {
    let passive = m.transition().ln();
    let steps = (0..horizon)
        .map(|i| match executed.get(i) {
            Some(&a) => am.matrix(a).ln(),
            None => passive.clone(),
        })
        .collect();
    Ok(LogModel::new(m.p0().clone(), m.emission().ln(), LogTransitions::PerStep(steps))?)
}

fn choose(
    world_model: &Hmm,
    am: &ActionModel,
    pref: &PreferenceDist,
    policies: &[Policy],
    consistent: &[usize],
    obs: &[usize],
    t: usize,
    cfg: &AgentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<(usize, f64)>, usize, usize), EnvError> {
    let subset: Vec<Policy> = consistent.iter().map(|&i| policies[i].clone()).collect();
    match cfg.planner {
        Planner::Reverse | Planner::Forward => {
            let ranked = if cfg.planner == Planner::Reverse {
                plan_reverse(world_model, am, &subset, obs, pref, cfg.horizon)?
            } else {
                plan_forward(am, &subset, pref, t, cfg.horizon)?
            };
            let scores: Vec<(usize, f64)> = ranked.iter().map(|r| (consistent[r.index], r.score)).collect();
            let best = scores[0].0;
            Ok((scores, best, policies[best].steps[t]))
        }
        Planner::PolicyPosterior => {
            let pb = PolicyBelief::new(subset.clone(), LogWeights::new(vec![0.0; subset.len()])?)?;
            let alt = alternate_policy_state(&pb, world_model, am, obs, cfg.horizon, cfg.max_outer)?;
            let post = &alt.belief.posterior;
            let q_a = next_action_distribution(post, &subset, t, am.len())?;
            let action = sample_next_action(&q_a, rng.random());
            let mut scores: Vec<(usize, f64)> = consistent
                .iter()
                .zip(post.weights())
                .map(|(&i, &w)| (i, -w.ln()))
                .collect();
            scores.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let best = scores
                .iter()
                .find(|(i, _)| policies[*i].steps[t] == action)
                .map(|&(i, _)| i)
                .expect("sampled action has posterior mass");
            Ok((scores, best, action))
        }
    }
}

/// Runs `cfg.episodes` independent episodes. Episode seeds come from a
/// ChaCha stream seeded with `cfg.seed`, so traces replay bit for bit.
pub fn run_agent(
    env: &mut Environment,
    model: &Hmm,
    am: &ActionModel,
    pref: &PreferenceDist,
    policies: &[Policy],
    cfg: &AgentConfig,
) -> Result<AgentTrace, EnvError> {
    let s = model.num_states();
    if am.num_states() != s || env.actions().num_states() != s || pref.p_c.len() != s {
        return Err(EnvError::DimMismatch("agent model, actions, environment and preference disagree".into()));
    }
    if env.emission().ncols() != model.num_obs() || env.actions().len() != am.len() {
        return Err(EnvError::DimMismatch("agent and environment disagree on observations or actions".into()));
    }
    if policies.is_empty() {
        return Err(PlanningError::EmptyPolicySet.into());
    }
    if let Some(p) = policies.iter().find(|p| p.len() != cfg.horizon) {
        return Err(EnvError::DimMismatch(format!(
            "policy of length {} for horizon {}",
            p.len(),
            cfg.horizon
        )));
    }
    let p_max = pref.p_c.weights().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let seed: u64 = master.random();
        env.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
        let start_state = env.true_state();
        let mut executed = Vec::with_capacity(cfg.horizon);
        let mut bt = BeliefTrajectory::new(agent_model(model, am, &executed, cfg.horizon)?, cfg.horizon)?;
        let mut steps = Vec::with_capacity(cfg.horizon);
        for t in 0..cfg.horizon {
            let report = bt.sweep(cfg.mode, cfg.sweep)?;
            let consistent: Vec<usize> = (0..policies.len())
                .filter(|&i| policies[i].steps[..t] == executed[..])
                .collect();
            if consistent.is_empty() {
                return Err(EnvError::NoConsistentPolicy(executed));
            }
            let (scores, policy, action) = choose(model, am, pref, policies, &consistent, bt.obs(), t, cfg, &mut rng)?;
            let observation = env.step(action)?;
            executed.push(action);
            steps.push(StepRecord {
                t,
                belief: bt.belief(t).weights().to_vec(),
                divergence_before: report.divergence_before,
                divergence: report.divergence_after,
                scores,
                policy,
                action,
                observation,
                true_state: env.true_state(),
            });
            bt.set_model(agent_model(model, am, &executed, cfg.horizon)?)?;
            bt.advance(observation)?;
        }
        let report = bt.sweep(cfg.mode, cfg.sweep)?;
        let final_state = env.true_state();
        episodes.push(EpisodeTrace {
            episode,
            seed,
            start_state,
            steps,
            final_belief: bt.belief(cfg.horizon).weights().to_vec(),
            final_divergence: report.divergence_after,
            final_state,
            actions: executed,
            success: pref.p_c.get(final_state) >= p_max - 1e-12,
        });
    }
    Ok(AgentTrace {
        planner: cfg.planner,
        horizon: cfg.horizon,
        episodes,
    })
}
