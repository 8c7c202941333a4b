//! Mean-field belief trajectories `q_0..q_T` and the coordinate-descent
//! engine that minimizes their divergence from the generative model.
//!
//! Past steps (`τ <= t`) are clamped to the observed outcome, future steps
//! keep the model's emission, so the objective is
//!
//! ```text
//! F = Σ_{τ=1..T} q_τᵀ ln q_τ − Σ_{τ<=t} q_τᵀ ln A(·,ō_τ) − Σ_{τ=1..T} q_{τ-1}ᵀ (ln B_τ) q_τ
//! ```
//!
//! Each update is the closed-form minimizer of `F` in one factor, so a sweep
//! never increases it. `q_0` stays pinned to `p0`.

use ndarray::Array2;
use thiserror::Error;

use crate::hmm::{Hmm, HmmError};
use crate::probkit::{mul0, softmax, xlny, CategoricalDist, LogWeights, ProbError};

/// Per-update slack allowed when checking monotone descent.
pub const DESCENT_SLACK: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("time index {tau} outside the allowed range {lo}..={hi}")]
    IndexError { tau: usize, lo: usize, hi: usize },
    #[error("every state is impossible at time {tau}; the observations contradict the model")]
    ModelContradiction { tau: usize },
    #[error("no future timesteps left to advance into")]
    HorizonExhausted,
    #[error("observation {obs} out of range (O = {num_obs})")]
    ObservationOutOfRange { obs: usize, num_obs: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// Log transition matrices, either shared by every step or one per step.
#[derive(Debug, Clone, PartialEq)]
pub enum LogTransitions {
    Homogeneous(Array2<f64>),
    /// Entry `τ - 1` is used for the step `s_{τ-1} -> s_τ`.
    PerStep(Vec<Array2<f64>>),
}

/// The model as the engine sees it: `p0` plus log emission and log
/// transitions. The log matrices need not come from normalized matrices
/// (expected log parameters under a Dirichlet are sub-normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct LogModel {
    p0: CategoricalDist,
    ln_a: Array2<f64>,
    transitions: LogTransitions,
}

impl LogModel {
    pub fn new(p0: CategoricalDist, ln_a: Array2<f64>, transitions: LogTransitions) -> Result<Self, EngineError> {
        let s = p0.len();
        if ln_a.nrows() != s {
            return Err(EngineError::DimMismatch(format!("ln A has {} rows, expected {s}", ln_a.nrows())));
        }
        let bad = match &transitions {
            LogTransitions::Homogeneous(b) => b.dim() != (s, s),
            LogTransitions::PerStep(bs) => bs.iter().any(|b| b.dim() != (s, s)),
        };
        if bad {
            return Err(EngineError::DimMismatch(format!("ln B must be {s}x{s}")));
        }
        Ok(Self { p0, ln_a, transitions })
    }

    pub fn from_hmm(m: &Hmm) -> Self {
        Self {
            p0: m.p0().clone(),
            ln_a: m.emission().ln(),
            transitions: LogTransitions::Homogeneous(m.transition().ln()),
        }
    }

    pub fn num_states(&self) -> usize {
        self.p0.len()
    }

    pub fn num_obs(&self) -> usize {
        self.ln_a.ncols()
    }

    pub fn p0(&self) -> &CategoricalDist {
        &self.p0
    }

    pub fn ln_a(&self) -> &Array2<f64> {
        &self.ln_a
    }

    pub fn transitions(&self) -> &LogTransitions {
        &self.transitions
    }

    /// Log transition for the step into `s_τ` (`τ >= 1`).
    pub fn ln_b(&self, tau: usize) -> &Array2<f64> {
        match &self.transitions {
            LogTransitions::Homogeneous(b) => b,
            LogTransitions::PerStep(bs) => &bs[tau - 1],
        }
    }

    fn supports_horizon(&self, horizon: usize) -> bool {
        match &self.transitions {
            LogTransitions::Homogeneous(_) => true,
            LogTransitions::PerStep(bs) => bs.len() >= horizon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Updates `q_t..q_T` and leaves earlier beliefs alone.
    Filtering,
    /// Updates `q_1..q_T`.
    Smoothing,
}

impl std::str::FromStr for SweepMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "filtering" => Ok(Self::Filtering),
            "smoothing" => Ok(Self::Smoothing),
            other => Err(format!("unknown mode '{other}' (expected filtering or smoothing)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-10,
        }
    }
}

/// Beliefs and divergence at the end of a pass; pass 0 is the starting point.
#[derive(Debug, Clone)]
pub struct PassSnapshot {
    pub pass: usize,
    pub updates_done: usize,
    pub divergence: f64,
    pub beliefs: Vec<CategoricalDist>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub divergence_before: f64,
    pub divergence_after: f64,
    /// Divergence after every single update, in order.
    pub per_update_divergences: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub passes: Vec<PassSnapshot>,
}

impl SweepReport {
    /// Largest single-update increase (negative when every update helped).
    pub fn max_increase(&self) -> f64 {
        let mut prev = self.divergence_before;
        let mut worst = f64::NEG_INFINITY;
        for &d in &self.per_update_divergences {
            if d.is_finite() && prev.is_finite() {
                worst = worst.max(d - prev);
            } else if d > prev {
                worst = f64::INFINITY;
            }
            prev = d;
        }
        worst
    }
}

/// One row of the belief trace export.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub pass: usize,
    pub update_index: usize,
    pub tau: usize,
    pub divergence: f64,
    pub q: Vec<f64>,
}

impl SweepReport {
    /// `T + 1` rows per pass (one per belief), pass 0 first.
    pub fn trace_rows(&self) -> Vec<TraceRow> {
        self.passes
            .iter()
            .flat_map(|p| {
                p.beliefs.iter().enumerate().map(move |(tau, q)| TraceRow {
                    pass: p.pass,
                    update_index: p.updates_done,
                    tau,
                    divergence: p.divergence,
                    q: q.weights().to_vec(),
                })
            })
            .collect()
    }
}

/// `q_0..q_T` together with the observed prefix `ō_1..ō_t`.
#[derive(Debug, Clone)]
pub struct BeliefTrajectory {
    model: LogModel,
    horizon: usize,
    obs: Vec<usize>,
    q: Vec<CategoricalDist>,
}

/// Fresh trajectory for `m` over `horizon` steps: `t = 0`, `q_0 = p0`,
/// everything else uniform.
pub fn init_beliefs(m: &Hmm, horizon: usize) -> Result<BeliefTrajectory, EngineError> {
    BeliefTrajectory::new(LogModel::from_hmm(m), horizon)
}

impl BeliefTrajectory {
    pub fn new(model: LogModel, horizon: usize) -> Result<Self, EngineError> {
        if horizon == 0 {
            return Err(EngineError::IndexError { tau: 0, lo: 1, hi: usize::MAX });
        }
        if !model.supports_horizon(horizon) {
            return Err(EngineError::DimMismatch(format!(
                "fewer per-step transitions than horizon {horizon}"
            )));
        }
        let s = model.num_states();
        let mut q = Vec::with_capacity(horizon + 1);
        q.push(model.p0.clone());
        q.extend(std::iter::repeat_n(CategoricalDist::uniform(s), horizon));
        Ok(Self {
            model,
            horizon,
            obs: Vec::new(),
            q,
        })
    }

    /// Fresh trajectory with an observed prefix already in place.
    pub fn with_observations(model: LogModel, horizon: usize, obs: &[usize]) -> Result<Self, EngineError> {
        let mut bt = Self::new(model, horizon)?;
        for &o in obs {
            bt.advance(o)?;
        }
        Ok(bt)
    }

    pub fn model(&self) -> &LogModel {
        &self.model
    }

    /// Swaps in new log parameters, keeping beliefs (warm start).
    pub fn set_model(&mut self, model: LogModel) -> Result<(), EngineError> {
        if model.num_states() != self.model.num_states() || model.num_obs() != self.model.num_obs() {
            return Err(EngineError::DimMismatch("replacement model has different dimensions".into()));
        }
        if !model.supports_horizon(self.horizon) {
            return Err(EngineError::DimMismatch("fewer per-step transitions than horizon".into()));
        }
        self.q[0] = model.p0.clone();
        self.model = model;
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Present time `t` (number of observations so far).
    pub fn t(&self) -> usize {
        self.obs.len()
    }

    pub fn obs(&self) -> &[usize] {
        &self.obs
    }

    pub fn beliefs(&self) -> &[CategoricalDist] {
        &self.q
    }

    pub fn belief(&self, tau: usize) -> &CategoricalDist {
        &self.q[tau]
    }

    /// Overwrites `q_τ` for `τ >= 1`.
    pub fn set_belief(&mut self, tau: usize, q: CategoricalDist) -> Result<(), EngineError> {
        if tau == 0 || tau > self.horizon {
            return Err(EngineError::IndexError {
                tau,
                lo: 1,
                hi: self.horizon,
            });
        }
        if q.len() != self.model.num_states() {
            return Err(EngineError::DimMismatch(format!("belief has {} states", q.len())));
        }
        self.q[tau] = q;
        Ok(())
    }

    /// Appends an observation and moves the present forward by one step.
    /// Beliefs are untouched; the caller re-sweeps.
    pub fn advance(&mut self, new_obs: usize) -> Result<(), EngineError> {
        if self.t() >= self.horizon {
            return Err(EngineError::HorizonExhausted);
        }
        if new_obs >= self.model.num_obs() {
            return Err(EngineError::ObservationOutOfRange {
                obs: new_obs,
                num_obs: self.model.num_obs(),
            });
        }
        self.obs.push(new_obs);
        Ok(())
    }

    /// Finite part of each update logit, plus the neighbor mass that lands
    /// on zero-probability transitions (`inf_mass`) and whether the current
    /// observation rules the state out entirely.
    fn update_terms(&self, tau: usize) -> Vec<(f64, f64, bool)> {
        let s = self.model.num_states();
        let ln_b = self.model.ln_b(tau);
        let prev = self.q[tau - 1].weights();
        let mut terms = Vec::with_capacity(s);
        for k in 0..s {
            let (mut finite, mut inf_mass) = (0.0, 0.0);
            let mut add = |w: f64, l: f64| {
                if w == 0.0 {
                    return;
                }
                if l == f64::NEG_INFINITY {
                    inf_mass += w;
                } else {
                    finite += w * l;
                }
            };
            for (i, &w) in prev.iter().enumerate() {
                add(w, ln_b[[i, k]]);
            }
            if tau < self.horizon {
                let ln_next = self.model.ln_b(tau + 1);
                for (j, &w) in self.q[tau + 1].weights().iter().enumerate() {
                    add(w, ln_next[[k, j]]);
                }
            }
            let mut excluded = false;
            if tau <= self.t() {
                let la = self.model.ln_a[[k, self.obs[tau - 1]]];
                if la == f64::NEG_INFINITY {
                    excluded = true;
                } else {
                    finite += la;
                }
            }
            terms.push((finite, inf_mass, excluded));
        }
        terms
    }

    fn apply_update(&mut self, tau: usize) -> Result<(), EngineError> {
        let terms = self.update_terms(tau);
        if terms.iter().all(|&(_, _, excluded)| excluded) {
            return Err(EngineError::ModelContradiction { tau });
        }
        let mut logits: Vec<f64> = terms
            .iter()
            .map(|&(f, m, x)| if x || m > 0.0 { f64::NEG_INFINITY } else { f })
            .collect();
        if logits.iter().all(|l| l.is_infinite()) {
            // Every choice of q_τ leaves F infinite. Take the limit of
            // replacing zero transitions by ε -> 0: the ln ε · inf_mass term
            // dominates, so keep only the states with the least such mass.
            let least = terms
                .iter()
                .filter(|t| !t.2)
                .map(|t| t.1)
                .fold(f64::INFINITY, f64::min);
            logits = terms
                .iter()
                .map(|&(f, m, x)| if x || m > least + 1e-12 { f64::NEG_INFINITY } else { f })
                .collect();
        }
        self.q[tau] = softmax(&LogWeights::new(logits)?)?;
        Ok(())
    }

    /// Re-fits a future belief `q_τ` (`t < τ <= T`) from its neighbors.
    pub fn prediction_update(&mut self, tau: usize) -> Result<(), EngineError> {
        if tau <= self.t() || tau > self.horizon {
            return Err(EngineError::IndexError {
                tau,
                lo: self.t() + 1,
                hi: self.horizon,
            });
        }
        self.apply_update(tau)
    }

    /// Re-fits a past belief `q_τ` (`1 <= τ <= t`) from its neighbors and
    /// the observation at `τ`.
    pub fn retrodiction_update(&mut self, tau: usize) -> Result<(), EngineError> {
        if tau < 1 || tau > self.t() {
            return Err(EngineError::IndexError {
                tau,
                lo: 1,
                hi: self.t(),
            });
        }
        self.apply_update(tau)
    }

    /// Contribution of step `τ` to the divergence.
    fn step_term(&self, tau: usize) -> f64 {
        let q = self.q[tau].weights();
        let prev = self.q[tau - 1].weights();
        let ln_b = self.model.ln_b(tau);
        let mut v: f64 = q.iter().map(|&x| xlny(x, x)).sum();
        if tau <= self.t() {
            let o = self.obs[tau - 1];
            for (k, &w) in q.iter().enumerate() {
                v -= mul0(w, self.model.ln_a[[k, o]]);
            }
        }
        for (i, &wi) in prev.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            for (j, &wj) in q.iter().enumerate() {
                v -= mul0(wi * wj, ln_b[[i, j]]);
            }
        }
        v
    }

    /// The full objective `F` (see the module docs).
    pub fn divergence(&self) -> f64 {
        (1..=self.horizon).map(|tau| self.step_term(tau)).sum()
    }

    /// `(F_past, F_future)`: the terms with `τ <= t` and with `τ > t`.
    pub fn divergence_split(&self) -> (f64, f64) {
        let t = self.t();
        let past = (1..=t).map(|tau| self.step_term(tau)).sum();
        let future = (t + 1..=self.horizon).map(|tau| self.step_term(tau)).sum();
        (past, future)
    }

    fn sweep_order(&self, mode: SweepMode) -> Vec<usize> {
        let lo = match mode {
            SweepMode::Filtering => self.t().max(1),
            SweepMode::Smoothing => 1,
        };
        let up: Vec<usize> = (lo..=self.horizon).collect();
        up.iter().chain(up.iter().rev()).copied().collect()
    }

    /// Repeated ascending-then-descending passes of asynchronous updates
    /// until a pass lowers the divergence by less than `tol` or
    /// `max_iters` passes have run.
    pub fn sweep(&mut self, mode: SweepMode, opts: SweepOptions) -> Result<SweepReport, EngineError> {
        let order = self.sweep_order(mode);
        let before = self.divergence();
        let mut per_update = Vec::with_capacity(order.len() * opts.max_iters.min(16));
        let mut passes = vec![PassSnapshot {
            pass: 0,
            updates_done: 0,
            divergence: before,
            beliefs: self.q.clone(),
        }];
        let mut current = before;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iters {
            iterations += 1;
            for &tau in &order {
                if tau <= self.t() {
                    self.retrodiction_update(tau)?;
                } else {
                    self.prediction_update(tau)?;
                }
                per_update.push(self.divergence());
            }
            let after = *per_update.last().unwrap_or(&current);
            passes.push(PassSnapshot {
                pass: iterations,
                updates_done: per_update.len(),
                divergence: after,
                beliefs: self.q.clone(),
            });
            let decrease = current - after;
            current = after;
            // NaN (inf - inf) also stops: nothing finite left to improve
            if !(decrease >= opts.tol) {
                converged = true;
                break;
            }
        }
        Ok(SweepReport {
            divergence_before: before,
            divergence_after: current,
            per_update_divergences: per_update,
            iterations,
            converged,
            passes,
        })
    }
}
