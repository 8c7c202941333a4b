//! Categorical-probability and special-function kernels.
//!
//! Probabilities live in the linear domain. Log-domain values appear only
//! transiently (as [`LogWeights`]) on their way through [`softmax`]. Zero
//! probabilities are kept exact, so `ln 0 = -inf` shows up in log space and
//! every sum below uses the conventions `0 * ln 0 = 0` and `0 * -inf = 0`.

use ndarray::Array2;
use thiserror::Error;

/// Tolerance on `|sum - 1|` for a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Tolerance used when comparing derived quantities.
pub const COMPARE_TOL: f64 = 1e-10;
/// Tolerance on `|sum - 1|` for user-supplied joints in [`kl_chain_parts`].
pub const JOINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("every log-weight is -inf; softmax is undefined")]
    AllNegInf,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("joint distribution is invalid (total mass {0})")]
    InvalidJoint(f64),
    #[error("argument must be strictly positive, got {0}")]
    NonPositiveArg(f64),
    #[error("distribution must have at least one label")]
    Empty,
    #[error("weight {index} is {value}; weights must be finite and non-negative")]
    BadWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("log-weight {index} is {value}; only finite values and -inf are allowed")]
    BadLogWeight { index: usize, value: f64 },
    #[error("concentration {index} is {value}; concentrations must be finite and > 0")]
    BadConcentration { index: usize, value: f64 },
}

/// `x * y` under the convention `0 * ±inf = 0`.
#[inline]
pub fn mul0(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y
    }
}

/// `x * ln(y)` with `0 * ln(anything) = 0`.
#[inline]
pub fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `Σ_k w_k * v_k` using [`mul0`] for each term.
pub fn dot0(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(&w, &v)| mul0(w, v)).sum()
}

/// A probability vector over `K >= 1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    weights: Vec<f64>,
}

impl CategoricalDist {
    /// Checks non-negativity and `|sum - 1| <= SIMPLEX_TOL`.
    pub fn new(weights: Vec<f64>) -> Result<Self, ProbError> {
        Self::with_tolerance(weights, SIMPLEX_TOL)
    }

    /// Like [`CategoricalDist::new`] but accepts a looser sum tolerance, then
    /// rescales so the stored weights meet the strict one. Meant for decimals
    /// read from files.
    pub fn with_tolerance(weights: Vec<f64>, tol: f64) -> Result<Self, ProbError> {
        check_weights(&weights)?;
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(ProbError::NotNormalized(sum));
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Ok(Self::from_unnormalized(weights, sum));
        }
        Ok(Self { weights })
    }

    /// Normalizes any non-negative vector with positive mass.
    pub fn normalize(weights: Vec<f64>) -> Result<Self, ProbError> {
        check_weights(&weights)?;
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(ProbError::NotNormalized(sum));
        }
        Ok(Self::from_unnormalized(weights, sum))
    }

    fn from_unnormalized(mut weights: Vec<f64>, sum: f64) -> Self {
        weights.iter_mut().for_each(|w| *w /= sum);
        Self { weights }
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution needs k >= 1");
        Self {
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn point_mass(k: usize, index: usize) -> Self {
        assert!(index < k, "point mass index {index} out of range for k = {k}");
        let mut weights = vec![0.0; k];
        weights[index] = 1.0;
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn get(&self, index: usize) -> f64 {
        self.weights[index]
    }

    /// Elementwise natural log; zero weights map to `-inf`.
    pub fn ln(&self) -> LogWeights {
        LogWeights {
            values: self.weights.iter().map(|w| w.ln()).collect(),
        }
    }

    /// Largest weight's index, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_abs_diff(&self, other: &CategoricalDist) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_weights(weights: &[f64]) -> Result<(), ProbError> {
    if weights.is_empty() {
        return Err(ProbError::Empty);
    }
    for (index, &value) in weights.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(ProbError::BadWeight { index, value });
        }
    }
    Ok(())
}

/// Unnormalized log-domain scores. `-inf` marks an impossible label.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeights {
    values: Vec<f64>,
}

impl LogWeights {
    /// Rejects NaN and `+inf`. An all `-inf` vector is representable but
    /// [`softmax`] will refuse it.
    pub fn new(values: Vec<f64>) -> Result<Self, ProbError> {
        if values.is_empty() {
            return Err(ProbError::Empty);
        }
        for (index, &value) in values.iter().enumerate() {
            if value.is_nan() || value == f64::INFINITY {
                return Err(ProbError::BadLogWeight { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn softmax(&self) -> Result<CategoricalDist, ProbError> {
        softmax(self)
    }
}

/// Normalized exponential, stabilized by subtracting the largest finite
/// entry. `-inf` entries come out as exactly 0.
pub fn softmax(lw: &LogWeights) -> Result<CategoricalDist, ProbError> {
    let max = lw
        .values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ProbError::AllNegInf);
    }
    let exps: Vec<f64> = lw.values.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(CategoricalDist::from_unnormalized(exps, sum))
}

/// Dirichlet concentration parameters with their cached total.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationVec {
    alphas: Vec<f64>,
    alpha0: f64,
}

impl ConcentrationVec {
    pub fn new(alphas: Vec<f64>) -> Result<Self, ProbError> {
        if alphas.is_empty() {
            return Err(ProbError::Empty);
        }
        for (index, &value) in alphas.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ProbError::BadConcentration { index, value });
            }
        }
        let alpha0 = alphas.iter().sum();
        Ok(Self { alphas, alpha0 })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// `E[ln mu_k] = psi(alpha_k) - psi(alpha_0)`.
    pub fn expected_log(&self) -> Vec<f64> {
        let d0 = statrs::function::gamma::digamma(self.alpha0);
        self.alphas
            .iter()
            .map(|&a| statrs::function::gamma::digamma(a) - d0)
            .collect()
    }

    pub fn mean(&self) -> CategoricalDist {
        CategoricalDist::from_unnormalized(self.alphas.clone(), self.alpha0)
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &CategoricalDist) -> f64 {
    -p.weights.iter().map(|&w| xlny(w, w)).sum::<f64>()
}

/// `-Σ q_k ln p_k`; `+inf` when `q` puts mass where `p` has none.
pub fn cross_entropy(q: &CategoricalDist, p: &CategoricalDist) -> Result<f64, ProbError> {
    same_len(q.len(), p.len())?;
    Ok(-q
        .weights
        .iter()
        .zip(&p.weights)
        .map(|(&qk, &pk)| xlny(qk, pk))
        .sum::<f64>())
}

/// `KL(q || p)`, evaluated termwise so that `kl(q, q)` is exactly 0.
pub fn kl(q: &CategoricalDist, p: &CategoricalDist) -> Result<f64, ProbError> {
    same_len(q.len(), p.len())?;
    let mut total = 0.0;
    for (&qk, &pk) in q.weights.iter().zip(&p.weights) {
        if qk == 0.0 {
            continue;
        }
        if pk == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += qk * (qk / pk).ln();
    }
    // Rounding can leave a tiny negative value; KL is non-negative.
    Ok(total.max(0.0))
}

/// Splits `KL(q(x, y) || p(x, y))` into the marginal divergence on `x` and
/// the `q(x)`-weighted divergence of the conditionals on `y`.
pub fn kl_chain_parts(
    q_joint: &Array2<f64>,
    p_joint: &Array2<f64>,
) -> Result<(f64, f64), ProbError> {
    if q_joint.dim() != p_joint.dim() {
        return Err(ProbError::DimMismatch {
            expected: q_joint.len(),
            found: p_joint.len(),
        });
    }
    for joint in [q_joint, p_joint] {
        let sum: f64 = joint.iter().sum();
        if joint.iter().any(|&v| !(v.is_finite() && v >= 0.0)) || (sum - 1.0).abs() > JOINT_TOL {
            return Err(ProbError::InvalidJoint(sum));
        }
    }
    let q_rows: Vec<f64> = q_joint.rows().into_iter().map(|r| r.sum()).collect();
    let p_rows: Vec<f64> = p_joint.rows().into_iter().map(|r| r.sum()).collect();
    let q_marg = CategoricalDist::normalize(q_rows.clone())?;
    let p_marg = CategoricalDist::normalize(p_rows.clone())?;
    let marginal = kl(&q_marg, &p_marg)?;

    let mut conditional = 0.0;
    for (i, (q_row, p_row)) in q_joint.rows().into_iter().zip(p_joint.rows()).enumerate() {
        if q_rows[i] == 0.0 {
            continue;
        }
        if p_rows[i] == 0.0 {
            return Ok((marginal, f64::INFINITY));
        }
        let qc = CategoricalDist::normalize(q_row.to_vec())?;
        let pc = CategoricalDist::normalize(p_row.to_vec())?;
        conditional += q_marg.get(i) * kl(&qc, &pc)?;
    }
    Ok((marginal, conditional))
}

/// Digamma function for `x > 0`.
///
/// Shifts `x` above 6 with `psi(x) = psi(x + 1) - 1/x`, then applies the
/// asymptotic expansion in `1/x^2`.
pub fn digamma(x: f64) -> Result<f64, ProbError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(ProbError::NonPositiveArg(x));
    }
    Ok(statrs::function::gamma::digamma(x))
}

/// `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64, ProbError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(ProbError::NonPositiveArg(x));
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

/// Log of the multivariate beta function, `Σ ln Gamma(a_k) - ln Gamma(a_0)`.
pub fn log_beta(a: &ConcentrationVec) -> f64 {
    use statrs::function::gamma::ln_gamma as lg;
    a.alphas.iter().map(|&ak| lg(ak)).sum::<f64>() - lg(a.alpha0)
}

/// `KL(Dir(a_post) || Dir(a_prior))`.
pub fn dirichlet_kl(a_post: &ConcentrationVec, a_prior: &ConcentrationVec) -> Result<f64, ProbError> {
    same_len(a_post.len(), a_prior.len())?;
    if a_post == a_prior {
        return Ok(0.0);
    }
    let d0 = statrs::function::gamma::digamma(a_post.alpha0);
    let cross: f64 = a_post
        .alphas
        .iter()
        .zip(&a_prior.alphas)
        .map(|(&post, &prior)| (post - prior) * (statrs::function::gamma::digamma(post) - d0))
        .sum();
    Ok(log_beta(a_prior) - log_beta(a_post) + cross)
}

fn same_len(expected: usize, found: usize) -> Result<(), ProbError> {
    if expected != found {
        return Err(ProbError::DimMismatch { expected, found });
    }
    Ok(())
}
