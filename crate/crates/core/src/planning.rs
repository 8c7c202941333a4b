//! Policies as sequences of transition matrices, policy scoring in both KL
//! directions, the variational policy posterior, and folding a
//! policy-generating HMM into the world model.

use std::cmp::Ordering;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{BeliefTrajectory, EngineError, LogModel, LogTransitions, SweepMode, SweepOptions};
use crate::hmm::{draw, Hmm, HmmError, StochasticMatrix};
use crate::probkit::{kl, mul0, softmax, xlny, CategoricalDist, LogWeights, ProbError};

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("no policies to score")]
    EmptyPolicySet,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("unknown action '{0}'")]
    UnknownAction(String),
    #[error("every policy has infinite divergence")]
    AllPoliciesInfeasible,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// Named transition matrices `B_a`, all `S x S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionModel {
    names: Vec<String>,
    matrices: Vec<StochasticMatrix>,
}

impl ActionModel {
    pub fn new(actions: Vec<(String, StochasticMatrix)>) -> Result<Self, PlanningError> {
        let Some((_, first)) = actions.first() else {
            return Err(PlanningError::DimMismatch("no actions".into()));
        };
        let s = first.nrows();
        for (name, b) in &actions {
            if b.nrows() != s || b.ncols() != s {
                return Err(PlanningError::DimMismatch(format!(
                    "action '{name}' is {}x{}, expected {s}x{s}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        let (names, matrices) = actions.into_iter().unzip();
        Ok(Self { names, matrices })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self, a: usize) -> &StochasticMatrix {
        &self.matrices[a]
    }

    pub fn index_of(&self, name: &str) -> Result<usize, PlanningError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PlanningError::UnknownAction(name.to_string()))
    }
}

/// Action indices `a_1..a_T`; step `τ` uses `B_{a_τ}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Policy {
    pub steps: Vec<usize>,
}

impl Policy {
    pub fn new(steps: Vec<usize>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn check(&self, am: &ActionModel, horizon: usize) -> Result<(), PlanningError> {
        if self.steps.len() != horizon {
            return Err(PlanningError::DimMismatch(format!(
                "policy has {} steps, horizon is {horizon}",
                self.steps.len()
            )));
        }
        if let Some(&a) = self.steps.iter().find(|&&a| a >= am.len()) {
            return Err(PlanningError::DimMismatch(format!("action index {a} >= {}", am.len())));
        }
        Ok(())
    }

    /// `ln B_{a_τ}` for every step.
    pub fn log_transitions(&self, am: &ActionModel) -> Vec<Array2<f64>> {
        self.steps.iter().map(|&a| am.matrix(a).ln()).collect()
    }
}

/// Every sequence of `horizon` actions, lexicographic (last step fastest).
pub fn all_policies(num_actions: usize, horizon: usize) -> Vec<Policy> {
    let mut out = Vec::new();
    let mut steps = vec![0usize; horizon];
    loop {
        out.push(Policy::new(steps.clone()));
        let mut k = horizon;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            steps[k] += 1;
            if steps[k] < num_actions {
                break;
            }
            steps[k] = 0;
        }
    }
}

/// Stationary preference `p_C` over world states.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDist {
    pub p_c: CategoricalDist,
}

impl PreferenceDist {
    pub fn new(p_c: CategoricalDist) -> Self {
        Self { p_c }
    }
}

/// Prior and posterior over a policy set.
#[derive(Debug, Clone)]
pub struct PolicyBelief {
    pub policies: Vec<Policy>,
    pub log_prior: LogWeights,
    pub posterior: CategoricalDist,
}

impl PolicyBelief {
    /// Posterior starts at the normalized prior.
    pub fn new(policies: Vec<Policy>, log_prior: LogWeights) -> Result<Self, PlanningError> {
        if policies.is_empty() {
            return Err(PlanningError::EmptyPolicySet);
        }
        if log_prior.len() != policies.len() {
            return Err(PlanningError::DimMismatch(format!(
                "{} prior weights for {} policies",
                log_prior.len(),
                policies.len()
            )));
        }
        let posterior = softmax(&log_prior)?;
        Ok(Self {
            policies,
            log_prior,
            posterior,
        })
    }

    pub fn uniform(policies: Vec<Policy>) -> Result<Self, PlanningError> {
        let n = policies.len();
        Self::new(policies, LogWeights::new(vec![0.0; n])?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedPolicy {
    pub index: usize,
    pub score: f64,
}

/// Ascending by score, `+inf` after every finite score, ties to the lowest
/// index.
pub fn rank(scores: &[f64]) -> Vec<RankedPolicy> {
    let mut ranked: Vec<RankedPolicy> = scores
        .iter()
        .enumerate()
        .map(|(index, &score)| RankedPolicy { index, score })
        .collect();
    ranked.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .unwrap_or(Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    ranked
}

fn policy_model(m: &Hmm, am: &ActionModel, pol: &Policy, horizon: usize) -> Result<LogModel, PlanningError> {
    if am.num_states() != m.num_states() {
        return Err(PlanningError::DimMismatch("actions and model disagree on S".into()));
    }
    pol.check(am, horizon)?;
    Ok(LogModel::new(
        m.p0().clone(),
        m.emission().ln(),
        LogTransitions::PerStep(pol.log_transitions(am)),
    )?)
}

/// Beliefs `q(s_τ | π)` under the policy's time-dependent transitions,
/// swept to convergence in smoothing mode.
pub fn policy_trajectory(
    m: &Hmm,
    am: &ActionModel,
    pol: &Policy,
    obs: &[usize],
    horizon: usize,
) -> Result<BeliefTrajectory, PlanningError> {
    let model = policy_model(m, am, pol, horizon)?;
    let mut bt = BeliefTrajectory::with_observations(model, horizon, obs)?;
    bt.sweep(SweepMode::Smoothing, SweepOptions::default())?;
    Ok(bt)
}

/// Scores each policy by `Σ_{τ>t} KL(q(s_τ|π) || p_C)` and ranks them.
pub fn plan_reverse(
    m: &Hmm,
    am: &ActionModel,
    policies: &[Policy],
    obs: &[usize],
    pref: &PreferenceDist,
    horizon: usize,
) -> Result<Vec<RankedPolicy>, PlanningError> {
    if policies.is_empty() {
        return Err(PlanningError::EmptyPolicySet);
    }
    let t = obs.len();
    let scores = policies
        .iter()
        .map(|pol| {
            let bt = policy_trajectory(m, am, pol, obs, horizon)?;
            let mut score = 0.0;
            for tau in t + 1..=horizon {
                score += kl(bt.belief(tau), &pref.p_c)?;
            }
            Ok(score)
        })
        .collect::<Result<Vec<f64>, PlanningError>>()?;
    Ok(rank(&scores))
}

/// `Σ_{τ>t} [p_Cᵀ ln p_C − p_Cᵀ (ln B_πτ) p_C]` for one policy.
pub fn forward_score(am: &ActionModel, pol: &Policy, pref: &PreferenceDist, t: usize) -> f64 {
    let p = pref.p_c.weights();
    let neg_h: f64 = p.iter().map(|&x| xlny(x, x)).sum();
    let mut total = 0.0;
    for &a in &pol.steps[t..] {
        let b = am.matrix(a);
        let mut cross = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            for (j, &pj) in p.iter().enumerate() {
                cross += mul0(pi * pj, b.get(i, j).ln());
            }
        }
        total += neg_h - cross;
    }
    total
}

/// Forward-KL planning: closed form, no belief sweeps.
pub fn plan_forward(
    am: &ActionModel,
    policies: &[Policy],
    pref: &PreferenceDist,
    t: usize,
    horizon: usize,
) -> Result<Vec<RankedPolicy>, PlanningError> {
    if policies.is_empty() {
        return Err(PlanningError::EmptyPolicySet);
    }
    if pref.p_c.len() != am.num_states() {
        return Err(PlanningError::DimMismatch("preference and actions disagree on S".into()));
    }
    if t > horizon {
        return Err(PlanningError::DimMismatch(format!("t = {t} beyond horizon {horizon}")));
    }
    for pol in policies {
        pol.check(am, horizon)?;
    }
    let scores: Vec<f64> = policies.iter().map(|pol| forward_score(am, pol, pref, t)).collect();
    Ok(rank(&scores))
}

/// `softmax(ln p(π) − F_≤(π) − F_>(π))`.
pub fn policy_posterior(pb: &PolicyBelief, f_past: &[f64], f_future: &[f64]) -> Result<CategoricalDist, PlanningError> {
    let n = pb.policies.len();
    if f_past.len() != n || f_future.len() != n || pb.log_prior.len() != n {
        return Err(PlanningError::DimMismatch(format!(
            "{n} policies, {} past and {} future scores",
            f_past.len(),
            f_future.len()
        )));
    }
    let logits: Vec<f64> = pb
        .log_prior
        .values()
        .iter()
        .zip(f_past)
        .zip(f_future)
        .map(|((&lp, &fp), &ff)| lp - fp - ff)
        .map(|v| if v.is_nan() { f64::NEG_INFINITY } else { v })
        .collect();
    match softmax(&LogWeights::new(logits)?) {
        Ok(q) => Ok(q),
        Err(ProbError::AllNegInf) => Err(PlanningError::AllPoliciesInfeasible),
        Err(e) => Err(e.into()),
    }
}

/// Geometric mixture `Σ_π q(π) ln B_πτ` for the step into `s_τ`.
pub fn mixture_log_transition(
    posterior: &CategoricalDist,
    policies: &[Policy],
    am: &ActionModel,
    tau: usize,
) -> Array2<f64> {
    let s = am.num_states();
    let mut out = Array2::zeros((s, s));
    for (pol, &w) in policies.iter().zip(posterior.weights()) {
        if w == 0.0 {
            continue;
        }
        let b = am.matrix(pol.steps[tau - 1]);
        for ((i, j), v) in out.indexed_iter_mut() {
            *v += mul0(w, b.get(i, j).ln());
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AlternationResult {
    pub belief: PolicyBelief,
    pub trajectory: BeliefTrajectory,
    /// Joint divergence at the start and after every half-step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Joint objective `Σ_π q(π) [ln q(π) − ln p(π) + D_π]` where `D_π` is the
/// divergence of the shared beliefs from the policy's model.
fn joint_divergence(pb: &PolicyBelief, d: &[f64]) -> f64 {
    pb.posterior
        .weights()
        .iter()
        .zip(pb.log_prior.values())
        .zip(d)
        .map(|((&q, &lp), &dp)| xlny(q, q) - mul0(q, lp) + mul0(q, dp))
        .sum()
}

fn per_policy_divergences(
    bt: &BeliefTrajectory,
    models: &[LogModel],
) -> Result<(Vec<f64>, Vec<f64>), PlanningError> {
    let mut past = Vec::with_capacity(models.len());
    let mut future = Vec::with_capacity(models.len());
    for model in models {
        let mut probe = bt.clone();
        probe.set_model(model.clone())?;
        let (p, f) = probe.divergence_split();
        past.push(p);
        future.push(f);
    }
    Ok((past, future))
}

/// Alternates a state half-step (a smoothing sweep under the mixture
/// transitions) with a policy half-step (the exact softmax update) until
/// the joint divergence improves by less than `1e-10` over a round.
pub fn alternate_policy_state(
    pb: &PolicyBelief,
    m: &Hmm,
    am: &ActionModel,
    obs: &[usize],
    horizon: usize,
    max_outer: usize,
) -> Result<AlternationResult, PlanningError> {
    const TOL: f64 = 1e-10;
    let models = pb
        .policies
        .iter()
        .map(|pol| policy_model(m, am, pol, horizon))
        .collect::<Result<Vec<_>, _>>()?;
    let mut belief = pb.clone();
    let mixture = |q: &CategoricalDist| -> Result<LogModel, PlanningError> {
        let bs = (1..=horizon)
            .map(|tau| mixture_log_transition(q, &pb.policies, am, tau))
            .collect();
        Ok(LogModel::new(m.p0().clone(), m.emission().ln(), LogTransitions::PerStep(bs))?)
    };
    let mut bt = BeliefTrajectory::with_observations(mixture(&belief.posterior)?, horizon, obs)?;
    let (p, f) = per_policy_divergences(&bt, &models)?;
    let d: Vec<f64> = p.iter().zip(&f).map(|(a, b)| a + b).collect();
    let mut trace = vec![joint_divergence(&belief, &d)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_outer {
        iterations += 1;
        let round_start = *trace.last().unwrap();

        bt.set_model(mixture(&belief.posterior)?)?;
        bt.sweep(SweepMode::Smoothing, SweepOptions::default())?;
        let (p, f) = per_policy_divergences(&bt, &models)?;
        let d: Vec<f64> = p.iter().zip(&f).map(|(a, b)| a + b).collect();
        trace.push(joint_divergence(&belief, &d));

        belief.posterior = policy_posterior(&belief, &p, &f)?;
        trace.push(joint_divergence(&belief, &d));

        let decrease = round_start - *trace.last().unwrap();
        if !(decrease >= TOL) {
            converged = true;
            break;
        }
    }
    bt.set_model(mixture(&belief.posterior)?)?;
    Ok(AlternationResult {
        belief,
        trajectory: bt,
        trace,
        iterations,
        converged,
    })
}

/// `q(a_{t+1}) = Σ_π q(π) [π_{t+1} = a]`.
pub fn next_action_distribution(
    posterior: &CategoricalDist,
    policies: &[Policy],
    t: usize,
    num_actions: usize,
) -> Result<CategoricalDist, PlanningError> {
    let mut w = vec![0.0; num_actions];
    for (pol, &q) in policies.iter().zip(posterior.weights()) {
        w[pol.steps[t]] += q;
    }
    Ok(CategoricalDist::normalize(w)?)
}

/// One seeded categorical draw.
pub fn sample_next_action(q_a: &CategoricalDist, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw(ndarray::ArrayView1::from(q_a.weights()), &mut rng)
}

/// A world HMM with a policy-generating HMM folded in. Flat state index is
/// `(σ · action_dim + a) · world_dim + s`; `a = action_dim − 1` is the null
/// action occupied only at time 0.
#[derive(Debug, Clone)]
pub struct FoldedHmm {
    pub hmm: Hmm,
    pub sigma_dim: usize,
    pub action_dim: usize,
    pub world_dim: usize,
}

impl FoldedHmm {
    pub fn null_action(&self) -> usize {
        self.action_dim - 1
    }

    pub fn index(&self, sigma: usize, a: usize, s: usize) -> usize {
        (sigma * self.action_dim + a) * self.world_dim + s
    }

    pub fn triple(&self, flat: usize) -> (usize, usize, usize) {
        let s = flat % self.world_dim;
        let rest = flat / self.world_dim;
        (rest / self.action_dim, rest % self.action_dim, s)
    }

    /// Belief over actions (including the null slot) from a flat belief.
    pub fn action_marginal(&self, q: &CategoricalDist) -> CategoricalDist {
        self.marginal(q, |(_, a, _)| a, self.action_dim)
    }

    pub fn world_marginal(&self, q: &CategoricalDist) -> CategoricalDist {
        self.marginal(q, |(_, _, s)| s, self.world_dim)
    }

    pub fn sigma_marginal(&self, q: &CategoricalDist) -> CategoricalDist {
        self.marginal(q, |(sigma, _, _)| sigma, self.sigma_dim)
    }

    fn marginal(&self, q: &CategoricalDist, pick: impl Fn((usize, usize, usize)) -> usize, n: usize) -> CategoricalDist {
        let mut w = vec![0.0; n];
        for (flat, &p) in q.weights().iter().enumerate() {
            w[pick(self.triple(flat))] += p;
        }
        CategoricalDist::normalize(w).expect("marginal of a distribution")
    }
}

/// Builds the folded HMM over `(σ, a, s)` triples:
/// `p(σ', a', s' | σ, a, s) = p(σ'|σ) p(a'|σ') B_{a'}(s, s')`, emission
/// `A(s, o)`, start `p(σ_0) p(s_0)` with the action slot at the null index.
pub fn fold_hierarchy(sigma_hmm: &Hmm, world: &Hmm, am: &ActionModel) -> Result<FoldedHmm, PlanningError> {
    let n_a = am.len();
    if sigma_hmm.num_obs() != n_a {
        return Err(PlanningError::DimMismatch(format!(
            "policy HMM emits {} symbols for {n_a} actions",
            sigma_hmm.num_obs()
        )));
    }
    if am.num_states() != world.num_states() {
        return Err(PlanningError::DimMismatch("actions and world disagree on S".into()));
    }
    let (ns, na, nw) = (sigma_hmm.num_states(), n_a + 1, world.num_states());
    let shape = FoldedHmm {
        hmm: world.clone(),
        sigma_dim: ns,
        action_dim: na,
        world_dim: nw,
    };
    let flat = ns * na * nw;
    let ps = sigma_hmm.transition();
    let pa = sigma_hmm.emission();
    let mut b = Array2::zeros((flat, flat));
    let mut a = Array2::zeros((flat, world.num_obs()));
    let mut p0 = vec![0.0; flat];
    let mut labels = Vec::with_capacity(flat);
    for from in 0..flat {
        let (sigma, act, s) = shape.triple(from);
        a.row_mut(from).assign(&world.emission().row(s));
        if act == n_a {
            p0[from] = sigma_hmm.p0().get(sigma) * world.p0().get(s);
        }
        let act_name = if act == n_a { "null" } else { am.names()[act].as_str() };
        let s_name = world.labels().map_or_else(|| s.to_string(), |l| l[s].clone());
        labels.push(format!("{sigma}|{act_name}|{s_name}"));
        for sigma2 in 0..ns {
            for act2 in 0..n_a {
                let w = ps.get(sigma, sigma2) * pa.get(sigma2, act2);
                for s2 in 0..nw {
                    b[[from, shape.index(sigma2, act2, s2)]] = w * am.matrix(act2).get(s, s2);
                }
            }
        }
    }
    let hmm = Hmm::new(
        CategoricalDist::new(p0)?,
        StochasticMatrix::new(a)?,
        StochasticMatrix::new(b)?,
    )?
    .with_labels(labels);
    let folded = FoldedHmm { hmm, ..shape };
    debug_assert!(product_structure_error(&folded, sigma_hmm, am) <= 1e-12);
    Ok(folded)
}

/// Largest deviation of the folded transitions from the product of the
/// factors they were built from.
pub fn product_structure_error(folded: &FoldedHmm, sigma_hmm: &Hmm, am: &ActionModel) -> f64 {
    let n = folded.hmm.num_states();
    let b = folded.hmm.transition();
    let mut worst = 0.0f64;
    for from in 0..n {
        let (sigma, _, s) = folded.triple(from);
        for to in 0..n {
            let (sigma2, act2, s2) = folded.triple(to);
            let want = if act2 == folded.null_action() {
                0.0
            } else {
                sigma_hmm.transition().get(sigma, sigma2)
                    * sigma_hmm.emission().get(sigma2, act2)
                    * am.matrix(act2).get(s, s2)
            };
            worst = worst.max((b.get(from, to) - want).abs());
        }
    }
    worst
}
