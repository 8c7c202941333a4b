//! Variational Bayesian learning of `A` and `B` under row-wise Dirichlet
//! priors.
//!
//! `q(M)` and `q(s)` are updated alternately. Holding the state beliefs
//! fixed, the posterior concentrations are the prior plus expected counts;
//! holding `q(M)` fixed, the beliefs follow the usual updates with
//! `⟨ln A⟩`, `⟨ln B⟩` in place of `ln A`, `ln B`.

use ndarray::Array2;
use thiserror::Error;

use crate::engine::{BeliefTrajectory, EngineError, LogModel, LogTransitions, SweepMode, SweepOptions};
use crate::hmm::{check_index, Hmm, HmmError, StochasticMatrix};
use crate::probkit::{digamma, dirichlet_kl, CategoricalDist, ConcentrationVec, ProbError};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("no training sequences")]
    EmptyTrainingSet,
    #[error("belief trajectory is not fully observed (t = {t}, T = {horizon})")]
    NotFullyObserved { t: usize, horizon: usize },
    #[error("concentration {value} at ({row}, {col}) of {field} is not a positive finite number")]
    BadConcentration {
        field: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// Dirichlet concentrations for every row of `A` (`S x O`) and `B` (`S x S`).
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletHmm {
    c_a: Array2<f64>,
    c_b: Array2<f64>,
}

impl DirichletHmm {
    pub fn new(c_a: Array2<f64>, c_b: Array2<f64>) -> Result<Self, LearningError> {
        let s = c_a.nrows();
        if s == 0 || c_a.ncols() == 0 || c_b.dim() != (s, s) {
            return Err(LearningError::DimMismatch(format!(
                "C_A is {:?}, C_B is {:?}",
                c_a.dim(),
                c_b.dim()
            )));
        }
        for (field, m) in [("C_A", &c_a), ("C_B", &c_b)] {
            if let Some(((row, col), &value)) = m.indexed_iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                return Err(LearningError::BadConcentration { field, row, col, value });
            }
        }
        Ok(Self { c_a, c_b })
    }

    /// Every concentration equal to `c`.
    pub fn flat(s: usize, o: usize, c: f64) -> Result<Self, LearningError> {
        Self::new(Array2::from_elem((s, o), c), Array2::from_elem((s, s), c))
    }

    pub fn c_a(&self) -> &Array2<f64> {
        &self.c_a
    }

    pub fn c_b(&self) -> &Array2<f64> {
        &self.c_b
    }

    pub fn num_states(&self) -> usize {
        self.c_a.nrows()
    }

    pub fn num_obs(&self) -> usize {
        self.c_a.ncols()
    }
}

/// `⟨ln A⟩` and `⟨ln B⟩` under the Dirichlet rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedLogParams {
    pub ln_a_bar: Array2<f64>,
    pub ln_b_bar: Array2<f64>,
}

fn expected_log_rows(c: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(c.dim());
    for (mut o, row) in out.rows_mut().into_iter().zip(c.rows()) {
        let psi0 = digamma(row.sum()).expect("positive concentrations");
        for (v, &a) in o.iter_mut().zip(row.iter()) {
            *v = digamma(a).expect("positive concentrations") - psi0;
        }
    }
    out
}

/// Entry `(s, k)` is `ψ(C(s, k)) − ψ(Σ_k C(s, k))`.
pub fn expected_log_params(d: &DirichletHmm) -> ExpectedLogParams {
    ExpectedLogParams {
        ln_a_bar: expected_log_rows(&d.c_a),
        ln_b_bar: expected_log_rows(&d.c_b),
    }
}

fn expected_model(d: &DirichletHmm, p0: &CategoricalDist) -> Result<LogModel, LearningError> {
    if p0.len() != d.num_states() {
        return Err(LearningError::DimMismatch(format!(
            "p0 has {} states, concentrations have {}",
            p0.len(),
            d.num_states()
        )));
    }
    let e = expected_log_params(d);
    Ok(LogModel::new(p0.clone(), e.ln_a_bar, LogTransitions::Homogeneous(e.ln_b_bar))?)
}

/// Adds one sequence's expected counts in place: `q_τ ō_τᵀ` to `C_A` and
/// `q_{τ-1} q_τᵀ` (or the supplied pairwise marginal) to `C_B`.
/// `beliefs` holds `q_0..q_T`; an empty sequence adds nothing.
pub fn add_counts(
    d: &mut DirichletHmm,
    beliefs: &[CategoricalDist],
    obs: &[usize],
    pairwise: Option<&[Array2<f64>]>,
) -> Result<(), LearningError> {
    let s = d.num_states();
    if beliefs.len() != obs.len() + 1 {
        return Err(LearningError::DimMismatch(format!(
            "{} beliefs for {} observations",
            beliefs.len(),
            obs.len()
        )));
    }
    if let Some(xi) = pairwise {
        if xi.len() != obs.len() || xi.iter().any(|x| x.dim() != (s, s)) {
            return Err(LearningError::DimMismatch("pairwise marginals do not match".into()));
        }
    }
    for (tau, &o) in obs.iter().enumerate().map(|(i, o)| (i + 1, o)) {
        check_index("observation", o, d.num_obs())?;
        let q = beliefs[tau].weights();
        for (k, &w) in q.iter().enumerate() {
            d.c_a[[k, o]] += w;
        }
        match pairwise {
            Some(xi) => d.c_b += &xi[tau - 1],
            None => {
                let prev = beliefs[tau - 1].weights();
                for (i, &wi) in prev.iter().enumerate() {
                    for (j, &wj) in q.iter().enumerate() {
                        d.c_b[[i, j]] += wi * wj;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Posterior concentrations after one fully observed trajectory.
pub fn accumulate_counts(
    prior: &DirichletHmm,
    bt: &BeliefTrajectory,
    pairwise: Option<&[Array2<f64>]>,
) -> Result<DirichletHmm, LearningError> {
    if bt.t() != bt.horizon() {
        return Err(LearningError::NotFullyObserved {
            t: bt.t(),
            horizon: bt.horizon(),
        });
    }
    let mut post = prior.clone();
    add_counts(&mut post, bt.beliefs(), bt.obs(), pairwise)?;
    Ok(post)
}

/// Belief sweep under the expected log parameters. `warm` supplies starting
/// beliefs (from the previous round); otherwise they start uniform.
pub fn e_step(
    d: &DirichletHmm,
    p0: &CategoricalDist,
    obs: &[usize],
    sweep: SweepOptions,
    warm: Option<&BeliefTrajectory>,
) -> Result<BeliefTrajectory, LearningError> {
    let model = expected_model(d, p0)?;
    let bt = match warm {
        Some(prev) => {
            let mut bt = prev.clone();
            bt.set_model(model)?;
            bt
        }
        None => BeliefTrajectory::with_observations(model, obs.len(), obs)?,
    };
    let mut bt = bt;
    bt.sweep(SweepMode::Smoothing, sweep)?;
    Ok(bt)
}

/// `Σ_rows KL(Dir(C') || Dir(C))` over `A` and `B`, plus each sequence's
/// divergence under the expected log parameters of the posterior.
pub fn learning_divergence(
    posterior: &DirichletHmm,
    prior: &DirichletHmm,
    beliefs: &[BeliefTrajectory],
) -> Result<f64, LearningError> {
    if posterior.c_a.dim() != prior.c_a.dim() || posterior.c_b.dim() != prior.c_b.dim() {
        return Err(LearningError::DimMismatch("posterior and prior shapes differ".into()));
    }
    let mut total = 0.0;
    for (post, pri) in [(&posterior.c_a, &prior.c_a), (&posterior.c_b, &prior.c_b)] {
        for (r1, r0) in post.rows().into_iter().zip(pri.rows()) {
            let a1 = ConcentrationVec::new(r1.to_vec())?;
            let a0 = ConcentrationVec::new(r0.to_vec())?;
            total += dirichlet_kl(&a1, &a0)?;
        }
    }
    for bt in beliefs {
        let mut probe = bt.clone();
        probe.set_model(expected_model(posterior, bt.model().p0())?)?;
        total += probe.divergence();
    }
    Ok(total)
}

/// Mean parameters `C(s, k) / Σ_k C(s, k)`.
pub fn posterior_mean_model(d: &DirichletHmm, p0: &CategoricalDist) -> Result<Hmm, LearningError> {
    let mean = |c: &Array2<f64>| {
        let mut m = c.clone();
        for mut row in m.rows_mut() {
            let z = row.sum();
            row /= z;
        }
        m
    };
    let a = StochasticMatrix::with_tolerance(mean(&d.c_a), 1e-12)?;
    let b = StochasticMatrix::with_tolerance(mean(&d.c_b), 1e-12)?;
    Ok(Hmm::new(p0.clone(), a, b)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnOptions {
    pub outer_iters: usize,
    pub tol: f64,
    pub sweep: SweepOptions,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            outer_iters: 50,
            tol: 1e-8,
            sweep: SweepOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnResult {
    pub posterior: DirichletHmm,
    /// Learning divergence at the start and after every half-step.
    pub trace: Vec<f64>,
    /// Final beliefs, one trajectory per non-empty sequence.
    pub beliefs: Vec<BeliefTrajectory>,
    pub iterations: usize,
    pub converged: bool,
}

/// Batch variational learning. Each round re-fits every sequence's beliefs
/// (warm-started) and then recomputes the posterior as prior plus the
/// round's expected counts.
pub fn learn(
    prior: &DirichletHmm,
    p0: &CategoricalDist,
    sequences: &[Vec<usize>],
    opts: LearnOptions,
) -> Result<LearnResult, LearningError> {
    if sequences.is_empty() {
        return Err(LearningError::EmptyTrainingSet);
    }
    let model = expected_model(prior, p0)?;
    let mut beliefs = sequences
        .iter()
        .filter(|seq| !seq.is_empty())
        .map(|seq| Ok(BeliefTrajectory::with_observations(model.clone(), seq.len(), seq)?))
        .collect::<Result<Vec<_>, LearningError>>()?;
    let mut posterior = prior.clone();
    let mut trace = vec![learning_divergence(&posterior, prior, &beliefs)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.outer_iters {
        iterations += 1;
        let round_start = *trace.last().unwrap();
        for bt in beliefs.iter_mut() {
            *bt = e_step(&posterior, p0, bt.obs(), opts.sweep, Some(bt))?;
        }
        trace.push(learning_divergence(&posterior, prior, &beliefs)?);

        posterior = prior.clone();
        for bt in &beliefs {
            add_counts(&mut posterior, bt.beliefs(), bt.obs(), None)?;
        }
        trace.push(learning_divergence(&posterior, prior, &beliefs)?);

        if !((round_start - *trace.last().unwrap()).abs() >= opts.tol) {
            converged = true;
            break;
        }
    }
    Ok(LearnResult {
        posterior,
        trace,
        beliefs,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::init_beliefs;
    use crate::hmm::sample_trajectory;
    use crate::random::{random_categorical, random_hmm};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expected_logs() {
        let d = DirichletHmm::new(array![[1.0, 1.0], [2.0, 1.0]], array![[1e6, 1e6], [1.0, 1.0]]).unwrap();
        let e = expected_log_params(&d);
        assert_abs_diff_eq!(e.ln_a_bar[[0, 0]], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.ln_a_bar[[0, 1]], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.ln_a_bar[[1, 0]], -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(e.ln_a_bar[[1, 1]], -1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(e.ln_b_bar[[0, 0]], 0.5f64.ln(), epsilon = 1e-5);
        assert!(e.ln_a_bar.iter().chain(e.ln_b_bar.iter()).all(|&v| v < 0.0));
    }

    #[test]
    fn rejects_bad_concentrations() {
        assert!(matches!(
            DirichletHmm::new(array![[1.0, 0.0]], array![[1.0]]),
            Err(LearningError::BadConcentration { field: "C_A", row: 0, col: 1, .. })
        ));
        assert!(DirichletHmm::new(array![[1.0, 1.0]], array![[1.0, 1.0]]).is_err());
    }

    #[test]
    fn point_mass_counts() {
        let prior = DirichletHmm::flat(2, 2, 1.0).unwrap();
        let m = Hmm::new(
            CategoricalDist::point_mass(2, 0),
            StochasticMatrix::identity(2),
            StochasticMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let mut bt = BeliefTrajectory::with_observations(LogModel::from_hmm(&m), 3, &[1, 0, 1]).unwrap();
        bt.sweep(SweepMode::Smoothing, SweepOptions::default()).unwrap();
        let post = accumulate_counts(&prior, &bt, None).unwrap();
        assert_eq!(post.c_a(), &array![[2.0, 1.0], [1.0, 3.0]]);
        assert_eq!(post.c_b(), &array![[1.0, 3.0], [2.0, 1.0]]);

        let mut same = prior.clone();
        add_counts(&mut same, &[CategoricalDist::uniform(2)], &[], None).unwrap();
        assert_eq!(same, prior);

        let open = init_beliefs(&m, 2).unwrap();
        assert!(matches!(
            accumulate_counts(&prior, &open, None),
            Err(LearningError::NotFullyObserved { .. })
        ));
    }

    #[test]
    fn uniform_belief_counts() {
        let prior = DirichletHmm::flat(2, 2, 1.0).unwrap();
        let q = vec![CategoricalDist::uniform(2); 3];
        let mut post = prior.clone();
        add_counts(&mut post, &q, &[0, 1], None).unwrap();
        // q_0 is uniform here too, so both steps add (1/4) ones
        assert_eq!(post.c_b(), &(prior.c_b() + 0.5));
    }

    #[test]
    fn counts_add_sequence_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = rng.random_range(2..5);
            let o = rng.random_range(2..5);
            let horizon = rng.random_range(1..8);
            let m = random_hmm(s, o, &mut rng);
            let obs = sample_trajectory(&m, horizon, rng.random()).observations;
            let prior = DirichletHmm::new(
                Array2::from_shape_fn((s, o), |_| rng.random_range(0.5..3.0)),
                Array2::from_shape_fn((s, s), |_| rng.random_range(0.5..3.0)),
            )
            .unwrap();
            let mut bt = BeliefTrajectory::with_observations(LogModel::from_hmm(&m), horizon, &obs).unwrap();
            bt.sweep(SweepMode::Smoothing, SweepOptions::default()).unwrap();
            let post = accumulate_counts(&prior, &bt, None).unwrap();
            assert_abs_diff_eq!(post.c_a().sum() - prior.c_a().sum(), horizon as f64, epsilon = 1e-10);
            assert_abs_diff_eq!(post.c_b().sum() - prior.c_b().sum(), horizon as f64, epsilon = 1e-10);
        }
    }

    #[test]
    fn sharp_prior_matches_plain_engine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_hmm(3, 3, &mut rng);
        let obs = sample_trajectory(&m, 5, 3).observations;
        let d = DirichletHmm::new(m.emission().as_array() * 1e7, m.transition().as_array() * 1e7).unwrap();
        let learned = e_step(&d, m.p0(), &obs, SweepOptions::default(), None).unwrap();
        let mut plain = BeliefTrajectory::with_observations(LogModel::from_hmm(&m), 5, &obs).unwrap();
        plain.sweep(SweepMode::Smoothing, SweepOptions::default()).unwrap();
        for (a, b) in learned.beliefs().iter().zip(plain.beliefs()) {
            assert!(a.max_abs_diff(b) <= 1e-4);
        }
    }

    #[test]
    fn identical_rows_give_prior_chain() {
        // with identical emission concentrations the likelihood is flat
        let d = DirichletHmm::new(array![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]], array![[3.0, 1.0], [1.0, 2.0]]).unwrap();
        let p0 = CategoricalDist::new(vec![0.3, 0.7]).unwrap();
        let with_obs = e_step(&d, &p0, &[2, 0, 1], SweepOptions::default(), None).unwrap();
        let model = expected_model(&d, &p0).unwrap();
        let mut blind = BeliefTrajectory::new(model, 3).unwrap();
        blind.sweep(SweepMode::Smoothing, SweepOptions::default()).unwrap();
        for (a, b) in with_obs.beliefs().iter().zip(blind.beliefs()) {
            assert!(a.max_abs_diff(b) <= 1e-9);
        }
    }

    #[test]
    fn divergence_edges() {
        let prior = DirichletHmm::flat(2, 3, 1.5).unwrap();
        assert_eq!(learning_divergence(&prior, &prior, &[]).unwrap(), 0.0);
        let p0 = CategoricalDist::uniform(2);
        let bt = e_step(&prior, &p0, &[0, 2], SweepOptions::default(), None).unwrap();
        let got = learning_divergence(&prior, &prior, std::slice::from_ref(&bt)).unwrap();
        assert_abs_diff_eq!(got, bt.divergence(), epsilon = 1e-15);
    }

    #[test]
    fn divergence_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prior = DirichletHmm::new(
            Array2::from_shape_fn((2, 2), |_| rng.random_range(0.5..3.0)),
            Array2::from_shape_fn((2, 2), |_| rng.random_range(0.5..3.0)),
        )
        .unwrap();
        let p0 = random_categorical(2, 1.0, &mut rng);
        let obs = [1, 0, 0];
        let bt = e_step(&prior, &p0, &obs, SweepOptions::default(), None).unwrap();
        let post = accumulate_counts(&prior, &bt, None).unwrap();
        let got = learning_divergence(&post, &prior, std::slice::from_ref(&bt)).unwrap();

        let mut want = 0.0;
        for (c1, c0) in [(post.c_a(), prior.c_a()), (post.c_b(), prior.c_b())] {
            for i in 0..2 {
                let a1 = ConcentrationVec::new(c1.row(i).to_vec()).unwrap();
                let a0 = ConcentrationVec::new(c0.row(i).to_vec()).unwrap();
                want += dirichlet_kl(&a1, &a0).unwrap();
            }
        }
        let elog = |c: &Array2<f64>, i: usize, k: usize| {
            digamma(c[[i, k]]).unwrap() - digamma(c.row(i).sum()).unwrap()
        };
        let q = bt.beliefs();
        for tau in 1..=3 {
            for k in 0..2 {
                let w = q[tau].get(k);
                want += w * w.ln() - w * elog(post.c_a(), k, obs[tau - 1]);
                for i in 0..2 {
                    want -= q[tau - 1].get(i) * w * elog(post.c_b(), i, k);
                }
            }
        }
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn posterior_means() {
        let d = DirichletHmm::new(array![[1.0, 1.0], [9.0, 1.0]], array![[2.0, 6.0], [1.0, 1.0]]).unwrap();
        let m = posterior_mean_model(&d, &CategoricalDist::uniform(2)).unwrap();
        assert_eq!(m.emission().row(0).to_vec(), vec![0.5, 0.5]);
        assert_abs_diff_eq!(m.emission().get(1, 0), 0.9, epsilon = 1e-15);
        assert_eq!(m.transition().row(0).to_vec(), vec![0.25, 0.75]);
        assert!(m.validate().is_valid());
    }

    #[test]
    fn learn_edge_cases() {
        let prior = DirichletHmm::flat(2, 2, 1.0).unwrap();
        let p0 = CategoricalDist::uniform(2);
        assert!(matches!(
            learn(&prior, &p0, &[], LearnOptions::default()),
            Err(LearningError::EmptyTrainingSet)
        ));
        let seq = vec![vec![0, 1, 1, 0]];
        let once = LearnOptions {
            outer_iters: 1,
            ..Default::default()
        };
        let r = learn(&prior, &p0, &seq, once).unwrap();
        let bt = e_step(&prior, &p0, &seq[0], SweepOptions::default(), None).unwrap();
        assert_eq!(r.posterior, accumulate_counts(&prior, &bt, None).unwrap());
        assert_eq!(r.trace.len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn learning_descends(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = rng.random_range(2..4);
            let o = rng.random_range(2..4);
            let gen = random_hmm(s, o, &mut rng);
            let seqs: Vec<Vec<usize>> = (0..5)
                .map(|_| sample_trajectory(&gen, rng.random_range(1..8), rng.random()).observations)
                .collect();
            let prior = DirichletHmm::new(
                Array2::from_shape_fn((s, o), |_| rng.random_range(0.5..3.0)),
                Array2::from_shape_fn((s, s), |_| rng.random_range(0.5..3.0)),
            ).unwrap();
            let r = learn(&prior, gen.p0(), &seqs, LearnOptions::default()).unwrap();
            for w in r.trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-10, "{:?}", r.trace);
            }
            let m = posterior_mean_model(&r.posterior, gen.p0()).unwrap();
            prop_assert!(m.validate().is_valid());
            for bt in &r.beliefs {
                for q in bt.beliefs() {
                    prop_assert!((q.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }
}
