//! Seeded random model generators, shared by tests, benches and the agent
//! simulator.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::hmm::{Hmm, StochasticMatrix};
use crate::probkit::CategoricalDist;

/// A draw from a symmetric Dirichlet with concentration `alpha`.
pub fn random_categorical<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> CategoricalDist {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha is positive");
    loop {
        let w: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        if w.iter().sum::<f64>() > 0.0 {
            return CategoricalDist::normalize(w).expect("positive mass");
        }
    }
}

pub fn random_stochastic<R: Rng + ?Sized>(rows: usize, cols: usize, alpha: f64, rng: &mut R) -> StochasticMatrix {
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows {
        let r = random_categorical(cols, alpha, rng);
        for (j, w) in r.weights().iter().enumerate() {
            m[[i, j]] = *w;
        }
    }
    StochasticMatrix::new(m).expect("rows are normalized")
}

/// An HMM with every parameter row drawn from a flat Dirichlet.
pub fn random_hmm<R: Rng + ?Sized>(s: usize, o: usize, rng: &mut R) -> Hmm {
    random_hmm_with(s, o, 1.0, rng)
}

pub fn random_hmm_with<R: Rng + ?Sized>(s: usize, o: usize, alpha: f64, rng: &mut R) -> Hmm {
    let p0 = random_categorical(s, alpha, rng);
    let a = random_stochastic(s, o, alpha, rng);
    let b = random_stochastic(s, s, alpha, rng);
    Hmm::new(p0, a, b).expect("dimensions agree")
}
