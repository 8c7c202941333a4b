//! Expected free energy diagnostics over the future part of a belief
//! trajectory.
//!
//! For `τ > t` the approximate joint is `q(s_τ) A(s_τ, o_τ)`, independent
//! across time, so every quantity here is a sum of per-step terms except the
//! cross entropy against the model's own sequence marginal `p(o_>)`, which
//! needs enumeration.

use ndarray::{Array1, Array2};
use serde::Serialize;
use thiserror::Error;

use crate::engine::BeliefTrajectory;
use crate::hmm::ENUMERATION_LIMIT;
use crate::probkit::{cross_entropy, entropy, mul0, xlny, CategoricalDist, ProbError};

#[derive(Debug, Error)]
pub enum EfeError {
    #[error("no future timesteps (t == T)")]
    NoFuture,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("enumeration would visit {count} observation sequences (limit {limit})")]
    TooLarge { count: u128, limit: u128 },
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// The predictive joint `q(s_τ, o_τ) = q(s_τ) A(s_τ, o_τ)` at one future step.
#[derive(Debug, Clone)]
pub struct PredictiveFactor {
    pub tau: usize,
    pub q_s: CategoricalDist,
    pub q_o: CategoricalDist,
    pub joint: Array2<f64>,
    /// `H(A(s, ·))` for each state.
    pub row_entropies: Array1<f64>,
}

/// One factor per future step `τ = t+1..T`.
pub fn predictive_factor(bt: &BeliefTrajectory) -> Result<Vec<PredictiveFactor>, EfeError> {
    if bt.t() >= bt.horizon() {
        return Err(EfeError::NoFuture);
    }
    let ln_a = bt.model().ln_a();
    let a = ln_a.mapv(f64::exp);
    let row_entropies: Array1<f64> = ln_a
        .rows()
        .into_iter()
        .zip(a.rows())
        .map(|(l, p)| -p.iter().zip(l.iter()).map(|(&p, &l)| mul0(p, l)).sum::<f64>())
        .collect();
    (bt.t() + 1..=bt.horizon())
        .map(|tau| {
            let q_s = bt.belief(tau).clone();
            let qv = Array1::from(q_s.weights().to_vec());
            let mut joint = a.clone();
            for (mut row, &w) in joint.rows_mut().into_iter().zip(qv.iter()) {
                row *= w;
            }
            let q_o = CategoricalDist::normalize(joint.sum_axis(ndarray::Axis(0)).to_vec())?;
            Ok(PredictiveFactor {
                tau,
                q_s,
                q_o,
                joint,
                row_entropies: row_entropies.clone(),
            })
        })
        .collect()
}

/// `Σ_τ KL(q(s_τ, o_τ) || q(s_τ) q(o_τ))`.
pub fn mutual_information(pf: &[PredictiveFactor]) -> f64 {
    pf.iter()
        .map(|f| {
            let mut mi = 0.0;
            for ((s, o), &j) in f.joint.indexed_iter() {
                mi += xlny(j, j / (f.q_s.get(s) * f.q_o.get(o)));
            }
            mi.max(0.0)
        })
        .sum()
}

/// `Σ_τ Σ_s q(s_τ) H(A(s, ·))`.
pub fn ambiguity(pf: &[PredictiveFactor]) -> f64 {
    pf.iter()
        .map(|f| {
            f.q_s
                .weights()
                .iter()
                .zip(f.row_entropies.iter())
                .map(|(&q, &h)| mul0(q, h))
                .sum::<f64>()
        })
        .sum()
}

pub fn entropy_q_s(pf: &[PredictiveFactor]) -> f64 {
    pf.iter().map(|f| entropy(&f.q_s)).sum()
}

pub fn entropy_q_o(pf: &[PredictiveFactor]) -> f64 {
    pf.iter().map(|f| entropy(&f.q_o)).sum()
}

/// `Σ_τ CE(q(o_τ), p_ref)` against a caller-supplied per-step reference
/// (a preference, or any marginal the caller trusts).
pub fn pragmatic_value(pf: &[PredictiveFactor], p_o_ref: &CategoricalDist) -> Result<f64, EfeError> {
    let mut total = 0.0;
    for f in pf {
        if f.q_o.len() != p_o_ref.len() {
            return Err(EfeError::DimMismatch {
                expected: f.q_o.len(),
                found: p_o_ref.len(),
            });
        }
        total += cross_entropy(&f.q_o, p_o_ref)?;
    }
    Ok(total)
}

/// Pragmatic value minus information gain.
pub fn efe_standard(pf: &[PredictiveFactor], p_o_ref: &CategoricalDist) -> Result<f64, EfeError> {
    Ok(pragmatic_value(pf, p_o_ref)? - mutual_information(pf))
}

/// `KL(q(s_>) || p(s_>)) + ambiguity`, with the divergence started from
/// `q(s_t)`.
pub fn efe_lhs(bt: &BeliefTrajectory, pf: &[PredictiveFactor]) -> f64 {
    bt.divergence_split().1 + ambiguity(pf)
}

/// `E_q[−ln p(s_>, o_>)] − E_{q(o_>)}[H(q(s_> | o_>))]`, in closed form.
pub fn efe_exact(bt: &BeliefTrajectory, pf: &[PredictiveFactor]) -> f64 {
    let ln_a = bt.model().ln_a();
    let mut g = 0.0;
    for f in pf {
        let ln_b = bt.model().ln_b(f.tau);
        let prev = bt.belief(f.tau - 1).weights();
        let q = f.q_s.weights();
        for ((s, o), &j) in f.joint.indexed_iter() {
            g -= mul0(j, ln_a[[s, o]]);
        }
        for (i, &wi) in prev.iter().enumerate() {
            for (k, &wk) in q.iter().enumerate() {
                g -= mul0(wi * wk, ln_b[[i, k]]);
            }
        }
        // expected entropy of the per-step posterior q(s_τ | o_τ)
        for (o, col) in f.joint.columns().into_iter().enumerate() {
            let qo = f.q_o.get(o);
            if qo == 0.0 {
                continue;
            }
            let h: f64 = col.iter().map(|&j| -xlny(j / qo, j / qo)).sum();
            g -= qo * h;
        }
    }
    g
}

/// The model's sequence marginal `p(o_{t+1..T})` with the chain started from
/// `q(s_t)`, for every observation sequence in lexicographic order (last
/// step fastest).
pub fn future_observation_marginal(bt: &BeliefTrajectory) -> Result<Vec<f64>, EfeError> {
    let t = bt.t();
    let n = bt.horizon() - t;
    if n == 0 {
        return Err(EfeError::NoFuture);
    }
    let o = bt.model().num_obs();
    let count = (o as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(EfeError::TooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let a = bt.model().ln_a().mapv(f64::exp);
    let bs: Vec<Array2<f64>> = (t + 1..=bt.horizon()).map(|tau| bt.model().ln_b(tau).mapv(f64::exp)).collect();
    let start = Array1::from(bt.belief(t).weights().to_vec());
    let mut out = Vec::with_capacity(count as usize);
    let mut seq = vec![0usize; n];
    loop {
        let mut alpha = start.clone();
        for (k, &ob) in seq.iter().enumerate() {
            alpha = alpha.dot(&bs[k]) * a.column(ob);
        }
        out.push(alpha.sum());
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            seq[k] += 1;
            if seq[k] < o {
                break;
            }
            seq[k] = 0;
        }
    }
}

/// `E_{q(o_>)}[−ln p(o_>)]` with `q(o_>) = Π_τ q(o_τ)` and the sequence-level
/// model marginal from [`future_observation_marginal`].
pub fn sequence_cross_entropy(pf: &[PredictiveFactor], p_seq: &[f64]) -> f64 {
    let n = pf.len();
    let o = pf[0].q_o.len();
    let mut seq = vec![0usize; n];
    let mut total = 0.0;
    for &p in p_seq {
        let q: f64 = seq.iter().zip(pf).map(|(&ob, f)| f.q_o.get(ob)).product();
        total += mul0(q, -p.ln());
        for k in (0..n).rev() {
            seq[k] += 1;
            if seq[k] < o {
                break;
            }
            seq[k] = 0;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSlacks {
    /// `KL(q(s_>,o_>) || p(s_>,o_>)) − [CE − ambiguity − MI]`.
    pub info: f64,
    /// `KL(q(s_>) || p(s_>)) − [CE − H(q(s_>))]`, the inequality as usually
    /// quoted. Not a theorem: it can go negative.
    pub simplest: f64,
    /// `KL(q(s_>) || p(s_>)) − [CE − H(q(o_>))]`, the form that follows from
    /// `MI = H(q(o_>)) − ambiguity`.
    pub simplest_corrected: f64,
    /// `[KL + ambiguity] − [CE − MI]`.
    pub efe: f64,
    /// `efe_exact − H(q(o_>)) − KL(q(s_>) || p(s_>))`; an identity, so ~0.
    pub gkl_identity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfeReport {
    pub mutual_information: f64,
    pub ambiguity: f64,
    /// Cross entropy of `q(o_>)` against the model's sequence marginal.
    pub pragmatic_value: f64,
    pub entropy_q_o: f64,
    pub entropy_q_s: f64,
    pub g_lhs: f64,
    pub g_standard: f64,
    pub g_exact: f64,
    pub kl_future: f64,
    pub bound_slacks: BoundSlacks,
}

/// Computes every quantity and the slack of each inequality. `p(o_>)` is the
/// enumerated model marginal, so this is limited to desk-scale instances.
pub fn verify_bounds(bt: &BeliefTrajectory) -> Result<EfeReport, EfeError> {
    let pf = predictive_factor(bt)?;
    let p_seq = future_observation_marginal(bt)?;
    let mi = mutual_information(&pf);
    let amb = ambiguity(&pf);
    let ce = sequence_cross_entropy(&pf, &p_seq);
    let h_o = entropy_q_o(&pf);
    let h_s = entropy_q_s(&pf);
    let kl = bt.divergence_split().1;
    let g_exact = efe_exact(bt, &pf);
    let g_lhs = kl + amb;
    let g_standard = ce - mi;
    Ok(EfeReport {
        mutual_information: mi,
        ambiguity: amb,
        pragmatic_value: ce,
        entropy_q_o: h_o,
        entropy_q_s: h_s,
        g_lhs,
        g_standard,
        g_exact,
        kl_future: kl,
        bound_slacks: BoundSlacks {
            info: kl - (ce - amb - mi),
            simplest: kl - (ce - h_s),
            simplest_corrected: kl - (ce - h_o),
            efe: g_lhs - g_standard,
            gkl_identity: g_exact - h_o - kl,
        },
    })
}
