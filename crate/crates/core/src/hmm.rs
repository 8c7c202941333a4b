//! The generative model: a discrete HMM `(p0, A, B)`, its JSON schema,
//! sampling, and two exact inference routines (brute-force enumeration and
//! forward-backward) that serve as ground truth for the variational engine.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probkit::{CategoricalDist, ProbError};

/// Row sums read from files may be off by this much before renormalization.
pub const LOAD_TOL: f64 = 1e-9;
/// Upper bound on the number of state sequences the enumeration oracle visits.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
    #[error("index {index} out of range for {what} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("enumeration would visit {count} sequences (limit {limit})")]
    TooLarge { count: u128, limit: u128 },
    #[error("observations have zero probability under the model")]
    ZeroEvidence,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// A matrix whose rows are probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    data: Array2<f64>,
}

impl StochasticMatrix {
    /// Strict construction: every row must be a valid [`CategoricalDist`].
    pub fn new(data: Array2<f64>) -> Result<Self, ProbError> {
        Self::with_tolerance(data, crate::probkit::SIMPLEX_TOL)
    }

    /// Accepts rows within `tol` of summing to one and renormalizes them.
    pub fn with_tolerance(mut data: Array2<f64>, tol: f64) -> Result<Self, ProbError> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(ProbError::Empty);
        }
        for mut row in data.rows_mut() {
            let dist = CategoricalDist::with_tolerance(row.to_vec(), tol)?;
            row.assign(&ArrayView1::from(dist.weights()));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ProbError> {
        Self::new(rows_to_array(rows).map_err(|_| ProbError::Empty)?)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: Array2::eye(n),
        }
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self {
            data: Array2::from_elem((rows, cols), 1.0 / cols as f64),
        }
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn row_dist(&self, i: usize) -> CategoricalDist {
        CategoricalDist::new(self.data.row(i).to_vec()).expect("rows are stochastic")
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    /// Elementwise natural log (zeros become `-inf`).
    pub fn ln(&self) -> Array2<f64> {
        self.data.mapv(f64::ln)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

pub(crate) fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>, String> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix".into());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| e.to_string())
}

/// `p0` over `S` states, emission `A` (`S x O`), homogeneous transition `B`
/// (`S x S`).
#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    p0: CategoricalDist,
    a: StochasticMatrix,
    b: StochasticMatrix,
    labels: Option<Vec<String>>,
}

impl Hmm {
    pub fn new(p0: CategoricalDist, a: StochasticMatrix, b: StochasticMatrix) -> Result<Self, HmmError> {
        let s = p0.len();
        if a.nrows() != s || b.nrows() != s || b.ncols() != s {
            return Err(HmmError::DimMismatch(format!(
                "p0 has {s} states, A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self {
            p0,
            a,
            b,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn from_raw(raw: &RawHmm) -> Result<Self, HmmError> {
        let report = validate(raw);
        if !report.is_valid() {
            return Err(HmmError::Invalid(report));
        }
        let p0 = CategoricalDist::with_tolerance(raw.p0.clone(), LOAD_TOL)?;
        let a = StochasticMatrix::with_tolerance(rows_to_array(&raw.a).map_err(HmmError::DimMismatch)?, LOAD_TOL)?;
        let b = StochasticMatrix::with_tolerance(rows_to_array(&raw.b).map_err(HmmError::DimMismatch)?, LOAD_TOL)?;
        let mut m = Self::new(p0, a, b)?;
        m.labels = raw.labels.clone();
        Ok(m)
    }

    pub fn to_raw(&self) -> RawHmm {
        RawHmm {
            s: self.num_states(),
            o: self.num_obs(),
            p0: self.p0.weights().to_vec(),
            a: self.a.to_rows(),
            b: self.b.to_rows(),
            labels: self.labels.clone(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.p0.len()
    }

    pub fn num_obs(&self) -> usize {
        self.a.ncols()
    }

    pub fn p0(&self) -> &CategoricalDist {
        &self.p0
    }

    pub fn emission(&self) -> &StochasticMatrix {
        &self.a
    }

    pub fn transition(&self) -> &StochasticMatrix {
        &self.b
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Re-runs [`validate`] on this model's raw form.
    pub fn validate(&self) -> ValidationReport {
        validate(&self.to_raw())
    }

    pub fn with_p0(&self, p0: CategoricalDist) -> Result<Self, HmmError> {
        let mut m = Self::new(p0, self.a.clone(), self.b.clone())?;
        m.labels = self.labels.clone();
        Ok(m)
    }

    pub fn with_transition(&self, b: StochasticMatrix) -> Result<Self, HmmError> {
        let mut m = Self::new(self.p0.clone(), self.a.clone(), b)?;
        m.labels = self.labels.clone();
        Ok(m)
    }
}

/// The on-disk HMM document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHmm {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "O")]
    pub o: usize,
    pub p0: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension { field: &'static str, detail: String },
    Negative { field: &'static str, row: usize, col: usize, value: f64 },
    NonFinite { field: &'static str, row: usize, col: usize },
    RowSum { field: &'static str, row: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension { field, detail } => write!(f, "{field}: {detail}"),
            Violation::Negative { field, row, col, value } => {
                write!(f, "{field}[{row}][{col}] is negative ({value})")
            }
            Violation::NonFinite { field, row, col } => write!(f, "{field}[{row}][{col}] is not finite"),
            Violation::RowSum { field, row, sum } => write!(f, "{field} row {row} sums to {sum}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Lists every violated invariant of a raw model.
pub fn validate(raw: &RawHmm) -> ValidationReport {
    let mut violations = Vec::new();
    let mut dim = |field, detail: String| violations.push(Violation::Dimension { field, detail });
    if raw.s == 0 {
        dim("S", "must be at least 1".into());
    }
    if raw.o == 0 {
        dim("O", "must be at least 1".into());
    }
    if raw.p0.len() != raw.s {
        dim("p0", format!("has {} entries, expected S = {}", raw.p0.len(), raw.s));
    }
    if raw.a.len() != raw.s {
        dim("A", format!("has {} rows, expected S = {}", raw.a.len(), raw.s));
    }
    if raw.b.len() != raw.s {
        dim("B", format!("has {} rows, expected S = {}", raw.b.len(), raw.s));
    }
    for (i, row) in raw.a.iter().enumerate() {
        if row.len() != raw.o {
            dim("A", format!("row {i} has {} entries, expected O = {}", row.len(), raw.o));
        }
    }
    for (i, row) in raw.b.iter().enumerate() {
        if row.len() != raw.s {
            dim("B", format!("row {i} has {} entries, expected S = {}", row.len(), raw.s));
        }
    }
    if let Some(labels) = &raw.labels {
        if labels.len() != raw.s {
            dim("labels", format!("has {} entries, expected S = {}", labels.len(), raw.s));
        }
    }
    check_rows("p0", std::slice::from_ref(&raw.p0), &mut violations);
    check_rows("A", &raw.a, &mut violations);
    check_rows("B", &raw.b, &mut violations);
    ValidationReport { violations }
}

fn check_rows(field: &'static str, rows: &[Vec<f64>], out: &mut Vec<Violation>) {
    for (row, values) in rows.iter().enumerate() {
        let mut ok = true;
        for (col, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                out.push(Violation::NonFinite { field, row, col });
                ok = false;
            } else if value < 0.0 {
                out.push(Violation::Negative { field, row, col, value });
                ok = false;
            }
        }
        let sum: f64 = values.iter().sum();
        if ok && (sum - 1.0).abs() > LOAD_TOL {
            out.push(Violation::RowSum { field, row, sum });
        }
    }
}

/// A state path `s_0..s_T` with its emissions `o_1..o_T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub observations: Vec<usize>,
}

/// `ln p(s, o) = ln p0(s_0) + Σ_τ [ln A(s_τ, o_τ) + ln B(s_{τ-1}, s_τ)]`.
pub fn log_joint(m: &Hmm, traj: &Trajectory) -> Result<f64, HmmError> {
    let (s, o) = (m.num_states(), m.num_obs());
    if traj.states.is_empty() || traj.observations.len() + 1 != traj.states.len() {
        return Err(HmmError::DimMismatch(format!(
            "{} states but {} observations",
            traj.states.len(),
            traj.observations.len()
        )));
    }
    for &st in &traj.states {
        check_index("state", st, s)?;
    }
    for &ob in &traj.observations {
        check_index("observation", ob, o)?;
    }
    let mut total = m.p0.get(traj.states[0]).ln();
    for (tau, &ob) in traj.observations.iter().enumerate() {
        let prev = traj.states[tau];
        let cur = traj.states[tau + 1];
        total += m.a.get(cur, ob).ln() + m.b.get(prev, cur).ln();
    }
    Ok(total)
}

pub(crate) fn check_index(what: &'static str, index: usize, size: usize) -> Result<(), HmmError> {
    if index >= size {
        return Err(HmmError::IndexOutOfRange { what, index, size });
    }
    Ok(())
}

/// Draws one index from a probability row.
pub(crate) fn draw<R: rand::Rng + ?Sized>(weights: ArrayView1<'_, f64>, rng: &mut R) -> usize {
    let dist = WeightedIndex::new(weights.iter().copied()).expect("row has positive mass");
    dist.sample(rng)
}

/// Ancestral sampling of `T` steps, seeded ChaCha8 stream.
pub fn sample_trajectory(m: &Hmm, horizon: usize, seed: u64) -> Trajectory {
    assert!(horizon >= 1, "horizon must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut observations = Vec::with_capacity(horizon);
    states.push(draw(ArrayView1::from(m.p0.weights()), &mut rng));
    for _ in 0..horizon {
        let prev = *states.last().unwrap();
        let cur = draw(m.b.row(prev), &mut rng);
        observations.push(draw(m.a.row(cur), &mut rng));
        states.push(cur);
    }
    Trajectory { states, observations }
}

/// A chain with (possibly) different transition matrices per step.
/// `transitions[τ - 1]` maps `s_{τ-1}` to `s_τ`.
#[derive(Debug, Clone)]
pub struct Chain<'a> {
    pub p0: &'a CategoricalDist,
    pub emission: &'a Array2<f64>,
    pub transitions: Vec<&'a Array2<f64>>,
}

impl<'a> Chain<'a> {
    pub fn homogeneous(m: &'a Hmm, horizon: usize) -> Self {
        Self {
            p0: &m.p0,
            emission: m.a.as_array(),
            transitions: vec![m.b.as_array(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    fn num_states(&self) -> usize {
        self.p0.len()
    }

    fn check(&self, obs: &[usize]) -> Result<(), HmmError> {
        let s = self.num_states();
        if self.emission.nrows() != s {
            return Err(HmmError::DimMismatch("emission rows differ from p0".into()));
        }
        if self.transitions.iter().any(|b| b.dim() != (s, s)) {
            return Err(HmmError::DimMismatch("transition matrix is not S x S".into()));
        }
        if obs.len() > self.horizon() {
            return Err(HmmError::DimMismatch(format!(
                "{} observations exceed horizon {}",
                obs.len(),
                self.horizon()
            )));
        }
        for &o in obs {
            check_index("observation", o, self.emission.ncols())?;
        }
        Ok(())
    }

    /// Odometer over all `S^(T+1)` state sequences, lexicographic order.
    /// The callback receives the path and its unnormalized weight
    /// `p0(s0) Π B_τ(s_{τ-1}, s_τ) Π_{τ<=t} A(s_τ, ō_τ)`.
    pub fn enumerate<F: FnMut(&[usize], f64)>(&self, obs: &[usize], mut visit: F) -> Result<(), HmmError> {
        self.check(obs)?;
        let s = self.num_states();
        let len = self.horizon() + 1;
        let count = (s as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
        if count > ENUMERATION_LIMIT {
            return Err(HmmError::TooLarge {
                count,
                limit: ENUMERATION_LIMIT,
            });
        }
        let mut path = vec![0usize; len];
        loop {
            let mut w = self.p0.get(path[0]);
            for tau in 1..len {
                if w == 0.0 {
                    break;
                }
                w *= self.transitions[tau - 1][[path[tau - 1], path[tau]]];
                if tau <= obs.len() {
                    w *= self.emission[[path[tau], obs[tau - 1]]];
                }
            }
            visit(&path, w);
            // advance the odometer, last coordinate fastest
            let mut k = len;
            loop {
                if k == 0 {
                    return Ok(());
                }
                k -= 1;
                path[k] += 1;
                if path[k] < s {
                    break;
                }
                path[k] = 0;
            }
        }
    }
}

/// Exact posterior quantities for an observed prefix.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    /// `p(ō_1..ō_t)`; future observations are marginalized out.
    pub evidence: f64,
    /// `p(s_τ | ō_{<=t})` for `τ = 0..T`.
    pub state_marginals: Vec<CategoricalDist>,
    /// `p(s_{τ-1}, s_τ | ō_{<=t})` for `τ = 1..T`.
    pub pairwise_marginals: Vec<Array2<f64>>,
}

/// Brute-force posterior by enumerating every state sequence.
pub fn exact_inference(m: &Hmm, obs: &[usize], horizon: usize) -> Result<ExactPosterior, HmmError> {
    exact_inference_chain(&Chain::homogeneous(m, horizon), obs)
}

pub fn exact_inference_chain(chain: &Chain<'_>, obs: &[usize]) -> Result<ExactPosterior, HmmError> {
    let s = chain.num_states();
    let horizon = chain.horizon();
    let mut evidence = 0.0;
    let mut marg = vec![vec![0.0; s]; horizon + 1];
    let mut pair = vec![Array2::<f64>::zeros((s, s)); horizon];
    chain.enumerate(obs, |path, w| {
        if w == 0.0 {
            return;
        }
        evidence += w;
        for (tau, &st) in path.iter().enumerate() {
            marg[tau][st] += w;
        }
        for tau in 1..path.len() {
            pair[tau - 1][[path[tau - 1], path[tau]]] += w;
        }
    })?;
    if evidence <= 0.0 {
        return Err(HmmError::ZeroEvidence);
    }
    let state_marginals = marg
        .into_iter()
        .map(CategoricalDist::normalize)
        .collect::<Result<Vec<_>, _>>()?;
    let pairwise_marginals = pair.into_iter().map(|p| p / evidence).collect();
    Ok(ExactPosterior {
        evidence,
        state_marginals,
        pairwise_marginals,
    })
}

/// `KL(Π_τ q_τ || p(s | ō))` by enumeration, where `q[0]` is the belief on
/// `s_0`. Used to certify the mean-field gap.
pub fn posterior_kl(chain: &Chain<'_>, obs: &[usize], q: &[CategoricalDist]) -> Result<f64, HmmError> {
    if q.len() != chain.horizon() + 1 {
        return Err(HmmError::DimMismatch(format!(
            "{} beliefs for horizon {}",
            q.len(),
            chain.horizon()
        )));
    }
    let mut evidence = 0.0;
    chain.enumerate(obs, |_, w| evidence += w)?;
    if evidence <= 0.0 {
        return Err(HmmError::ZeroEvidence);
    }
    let mut total = 0.0;
    chain.enumerate(obs, |path, w| {
        let qs: f64 = path.iter().enumerate().map(|(tau, &st)| q[tau].get(st)).product();
        if qs == 0.0 {
            return;
        }
        total += if w == 0.0 {
            f64::INFINITY
        } else {
            qs * (qs / (w / evidence)).ln()
        };
    })?;
    Ok(total)
}

/// Scaled forward-backward recursion; an independent route to the same
/// quantities as [`exact_inference_chain`].
pub fn forward_backward(chain: &Chain<'_>, obs: &[usize]) -> Result<ExactPosterior, HmmError> {
    chain.check(obs)?;
    let s = chain.num_states();
    let horizon = chain.horizon();
    let likelihood = |tau: usize| -> Array1<f64> {
        if tau >= 1 && tau <= obs.len() {
            chain.emission.column(obs[tau - 1]).to_owned()
        } else {
            Array1::ones(s)
        }
    };
    let mut alpha = Vec::with_capacity(horizon + 1);
    let mut scale = Vec::with_capacity(horizon + 1);
    let a0 = Array1::from(chain.p0.weights().to_vec());
    scale.push(a0.sum());
    alpha.push(a0);
    for tau in 1..=horizon {
        let pred = alpha[tau - 1].dot(chain.transitions[tau - 1]);
        let a = pred * likelihood(tau);
        let c = a.sum();
        if c <= 0.0 {
            return Err(HmmError::ZeroEvidence);
        }
        scale.push(c);
        alpha.push(a / c);
    }
    let mut beta = vec![Array1::<f64>::ones(s); horizon + 1];
    for tau in (0..horizon).rev() {
        let msg = &beta[tau + 1] * &likelihood(tau + 1);
        beta[tau] = chain.transitions[tau].dot(&msg) / scale[tau + 1];
    }
    let evidence: f64 = scale.iter().product();
    let state_marginals = (0..=horizon)
        .map(|tau| CategoricalDist::normalize((&alpha[tau] * &beta[tau]).to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    let pairwise_marginals = (1..=horizon)
        .map(|tau| {
            let msg = &beta[tau] * &likelihood(tau);
            let mut xi = Array2::zeros((s, s));
            for i in 0..s {
                for j in 0..s {
                    xi[[i, j]] = alpha[tau - 1][i] * chain.transitions[tau - 1][[i, j]] * msg[j];
                }
            }
            let z = xi.sum();
            xi / z
        })
        .collect();
    Ok(ExactPosterior {
        evidence,
        state_marginals,
        pairwise_marginals,
    })
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub dist: CategoricalDist,
    /// False when power iteration hit the cap (typically a periodic chain).
    pub converged: bool,
    pub iterations: usize,
}

/// Power iteration `π <- π B` from uniform until the max change drops below
/// 1e-12 or 10^5 iterations pass.
pub fn steady_state(b: &StochasticMatrix) -> Result<SteadyState, HmmError> {
    let n = b.nrows();
    if b.ncols() != n {
        return Err(HmmError::DimMismatch(format!("B is {}x{}", n, b.ncols())));
    }
    const MAX_ITERS: usize = 100_000;
    let mut pi = Array1::from_elem(n, 1.0 / n as f64);
    for it in 1..=MAX_ITERS {
        let mut next = pi.dot(b.as_array());
        next /= next.sum();
        let change = (&next - &pi).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        pi = next;
        if change < 1e-12 {
            return Ok(SteadyState {
                dist: CategoricalDist::normalize(pi.to_vec())?,
                converged: true,
                iterations: it,
            });
        }
    }
    Ok(SteadyState {
        dist: CategoricalDist::normalize(pi.to_vec())?,
        converged: false,
        iterations: MAX_ITERS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_hmm;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn two_state() -> Hmm {
        Hmm::new(
            CategoricalDist::new(vec![0.6, 0.4]).unwrap(),
            StochasticMatrix::new(array![[0.7, 0.3], [0.1, 0.9]]).unwrap(),
            StochasticMatrix::new(array![[0.9, 0.1], [0.2, 0.8]]).unwrap(),
        )
        .unwrap()
    }

    fn deterministic() -> Hmm {
        // 0 -> 1 -> 2 -> 2, state k emits k
        Hmm::new(
            CategoricalDist::point_mass(3, 0),
            StochasticMatrix::identity(3),
            StochasticMatrix::new(array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn validate_reports() {
        assert!(two_state().validate().is_valid());

        let mut raw = two_state().to_raw();
        raw.b[1] = vec![0.5, 0.4];
        let report = validate(&raw);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::RowSum { field: "B", row: 1, .. }));

        let mut raw = two_state().to_raw();
        raw.a[0] = vec![1.2, -0.2];
        let report = validate(&raw);
        assert!(report
            .violations
            .contains(&Violation::Negative { field: "A", row: 0, col: 1, value: -0.2 }));
        assert!(Hmm::from_raw(&raw).is_err());

        let mut raw = two_state().to_raw();
        raw.p0 = vec![1.0];
        assert!(!validate(&raw).is_valid());
    }

    #[test]
    fn raw_round_trip_through_json() {
        let m = two_state().with_labels(vec!["x".into(), "y".into()]);
        let text = serde_json::to_string(&m.to_raw()).unwrap();
        assert!(text.contains("\"S\":2"));
        let back: RawHmm = serde_json::from_str(&text).unwrap();
        assert_eq!(Hmm::from_raw(&back).unwrap(), m);
    }

    #[test]
    fn log_joint_deterministic() {
        let m = deterministic();
        let forced = Trajectory {
            states: vec![0, 1, 2, 2],
            observations: vec![1, 2, 2],
        };
        assert_eq!(log_joint(&m, &forced).unwrap(), 0.0);
        let other = Trajectory {
            states: vec![0, 1, 1, 2],
            observations: vec![1, 1, 2],
        };
        assert_eq!(log_joint(&m, &other).unwrap(), f64::NEG_INFINITY);
        let bad = Trajectory {
            states: vec![0, 5],
            observations: vec![0],
        };
        assert!(matches!(log_joint(&m, &bad), Err(HmmError::IndexOutOfRange { .. })));
    }

    #[test]
    fn log_joint_term_by_term() {
        let m = two_state();
        let traj = Trajectory {
            states: vec![1, 0, 1],
            observations: vec![0, 1],
        };
        // p0(1) * B(1,0) A(0,0) * B(0,1) A(1,1)
        let want = (0.4f64 * 0.2 * 0.7 * 0.1 * 0.9).ln();
        assert_abs_diff_eq!(log_joint(&m, &traj).unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn joint_sums_to_one() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(5);
        for (s, o, t) in [(2, 2, 1), (3, 2, 2), (2, 3, 3), (3, 3, 3)] {
            let m = random_hmm(s, o, &mut rng);
            let mut total = 0.0;
            let chain = Chain::homogeneous(&m, t);
            chain
                .enumerate(&[], |path, _| {
                    let mut obs = vec![0usize; t];
                    loop {
                        let traj = Trajectory {
                            states: path.to_vec(),
                            observations: obs.clone(),
                        };
                        total += log_joint(&m, &traj).unwrap().exp();
                        let mut k = t;
                        loop {
                            if k == 0 {
                                return;
                            }
                            k -= 1;
                            obs[k] += 1;
                            if obs[k] < o {
                                break;
                            }
                            obs[k] = 0;
                        }
                    }
                })
                .unwrap();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = deterministic();
        for seed in [0, 1, 99] {
            let tr = sample_trajectory(&m, 3, seed);
            assert_eq!(tr.states, vec![0, 1, 2, 2]);
            assert_eq!(tr.observations, vec![1, 2, 2]);
        }
        let m = two_state();
        assert_eq!(sample_trajectory(&m, 20, 3), sample_trajectory(&m, 20, 3));
    }

    #[test]
    fn sampled_transition_frequencies() {
        let m = two_state();
        let tr = sample_trajectory(&m, 100_000, 17);
        let mut counts = [[0f64; 2]; 2];
        for w in tr.states.windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
        for i in 0..2 {
            let n = counts[i][0] + counts[i][1];
            for j in 0..2 {
                assert!((counts[i][j] / n - m.transition().get(i, j)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn exact_inference_trivial_cases() {
        let m = Hmm::new(
            CategoricalDist::point_mass(2, 0),
            StochasticMatrix::new(array![[0.5, 0.5], [0.2, 0.8]]).unwrap(),
            StochasticMatrix::identity(2),
        )
        .unwrap();
        let post = exact_inference(&m, &[], 3).unwrap();
        assert_eq!(post.evidence, 1.0);
        for q in &post.state_marginals {
            assert_eq!(q.weights(), &[1.0, 0.0]);
        }

        let m = Hmm::new(
            CategoricalDist::uniform(2),
            StochasticMatrix::uniform(2, 3),
            StochasticMatrix::new(array![[0.9, 0.1], [0.3, 0.7]]).unwrap(),
        )
        .unwrap();
        let post = exact_inference(&m, &[2, 0], 3).unwrap();
        assert_abs_diff_eq!(post.evidence, (1.0f64 / 3.0).powi(2), epsilon = 1e-15);
        let mut prior = Array1::from(vec![0.5, 0.5]);
        for tau in 0..=3 {
            for k in 0..2 {
                assert_abs_diff_eq!(post.state_marginals[tau].get(k), prior[k], epsilon = 1e-12);
            }
            prior = prior.dot(m.transition().as_array());
        }
    }

    #[test]
    fn enumeration_matches_forward_backward() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(21);
        for _ in 0..50 {
            let m = random_hmm(2, 2, &mut rng);
            let traj = sample_trajectory(&m, 3, rand::Rng::random(&mut rng));
            let obs = &traj.observations[..2];
            let chain = Chain::homogeneous(&m, 3);
            let a = exact_inference_chain(&chain, obs).unwrap();
            let b = forward_backward(&chain, obs).unwrap();
            assert_abs_diff_eq!(a.evidence, b.evidence, epsilon = 1e-12);
            for (x, y) in a.state_marginals.iter().zip(&b.state_marginals) {
                assert!(x.max_abs_diff(y) <= 1e-12);
                assert_abs_diff_eq!(x.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
            for (x, y) in a.pairwise_marginals.iter().zip(&b.pairwise_marginals) {
                for (u, v) in x.iter().zip(y) {
                    assert_abs_diff_eq!(u, v, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn evidence_matches_direct_sum_when_fully_observed() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(4);
        let m = random_hmm(3, 2, &mut rng);
        let obs = [1, 0, 1];
        let post = exact_inference(&m, &obs, 3).unwrap();
        let mut direct = 0.0;
        Chain::homogeneous(&m, 3)
            .enumerate(&[], |path, _| {
                let traj = Trajectory {
                    states: path.to_vec(),
                    observations: obs.to_vec(),
                };
                direct += log_joint(&m, &traj).unwrap().exp();
            })
            .unwrap();
        assert_abs_diff_eq!(post.evidence, direct, epsilon = 1e-12);
    }

    #[test]
    fn enumeration_guard() {
        let m = random_hmm(10, 2, &mut <ChaCha8Rng as SeedableRng>::seed_from_u64(0));
        assert!(matches!(exact_inference(&m, &[], 7), Err(HmmError::TooLarge { .. })));
    }

    #[test]
    fn steady_state_examples() {
        let id = steady_state(&StochasticMatrix::identity(3)).unwrap();
        assert!(id.converged);
        assert_eq!(id.dist.weights(), CategoricalDist::uniform(3).weights());

        let half = steady_state(&StochasticMatrix::uniform(2, 2)).unwrap();
        assert_eq!(half.dist.weights(), &[0.5, 0.5]);

        let b = StochasticMatrix::new(array![[0.9, 0.1], [0.2, 0.8]]).unwrap();
        let ss = steady_state(&b).unwrap();
        assert!(ss.converged);
        assert_abs_diff_eq!(ss.dist.get(0), 2.0 / 3.0, epsilon = 1e-10);
        let pi = Array1::from(ss.dist.weights().to_vec());
        let resid = (pi.dot(b.as_array()) - &pi).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(resid <= 1e-10);

        let flip = StochasticMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        // uniform is already the fixed point of the flip chain
        assert!(steady_state(&flip).unwrap().converged);
    }
}
