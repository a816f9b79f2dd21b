//! Seeded random instances for property checks and verification suites.

use rand::Rng;
use rand_distr::Exp1;

use crate::dist::{Coxian, HyperExponential, MomentTriple};

/// Rates are drawn log-uniformly from `[RATE_MIN, RATE_MAX]`.
pub const RATE_MIN: f64 = 1e-2;
pub const RATE_MAX: f64 = 1e2;

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Uniform point of the probability simplex of dimension `k`.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = x.iter().sum();
    x.into_iter().map(|v| v / total).collect()
}

/// `count` log-uniform rates, sorted decreasing, with relative gaps of at
/// least `1e-6` so the distinctness checks never trip.
fn distinct_rates<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<f64> {
    loop {
        let mut r: Vec<f64> = (0..count)
            .map(|_| log_uniform(rng, RATE_MIN, RATE_MAX))
            .collect();
        r.sort_by(|a, b| b.total_cmp(a));
        if r.windows(2).all(|w| w[0] - w[1] > 1e-6 * w[0]) {
            return r;
        }
    }
}

/// Hyperexponential with `1..=max_branches` branches, log-uniform rates and
/// flat Dirichlet weights.
pub fn random_hyperexp<R: Rng + ?Sized>(rng: &mut R, max_branches: usize) -> HyperExponential {
    let k = rng.random_range(1..=max_branches.max(1));
    let rates = distinct_rates(rng, k);
    let mut weights = dirichlet(rng, k);
    // Absorb the rounding of the normalization so the weights sum to 1.
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    HyperExponential::new(weights, rates).expect("valid by construction")
}

/// Coxian in class C0 with `1..=max_phases` phases: strictly decreasing
/// completion rates drawn log-uniformly and continuation probabilities
/// uniform on `(0, 1)`. Covers members that are not hyperexponential.
pub fn random_c0_coxian<R: Rng + ?Sized>(rng: &mut R, max_phases: usize) -> Coxian {
    let n = rng.random_range(1..=max_phases.max(1));
    let nu = distinct_rates(rng, n);
    let mut rates = Vec::with_capacity(n);
    let mut cont = Vec::with_capacity(n);
    for (i, v) in nu.iter().enumerate() {
        let p = if i + 1 < n {
            0.02 + 0.96 * rng.random::<f64>()
        } else {
            0.0
        };
        rates.push(v / (1.0 - p));
        cont.push(p);
    }
    Coxian::new(rates, cont).expect("valid by construction")
}

/// Random point strictly inside the two-phase feasible moment region.
pub fn random_feasible_moments<R: Rng + ?Sized>(rng: &mut R) -> MomentTriple {
    let m1 = log_uniform(rng, 0.1, 10.0);
    let n2 = 2.0 + log_uniform(rng, 1e-3, 50.0);
    let n3 = 1.5 * n2 * (1.0 + log_uniform(rng, 1e-3, 10.0));
    MomentTriple::new(m1, n2, n3).expect("positive moments")
}

/// Random point outside the feasible region (and away from the point (2, 3)).
pub fn random_infeasible_moments<R: Rng + ?Sized>(rng: &mut R) -> MomentTriple {
    let m1 = log_uniform(rng, 0.1, 10.0);
    if rng.random::<bool>() {
        let n2 = 1.0 + 0.99 * rng.random::<f64>();
        let n3 = 1.0 + 10.0 * rng.random::<f64>();
        MomentTriple::new(m1, n2, n3).expect("positive moments")
    } else {
        let n2 = 2.0 + log_uniform(rng, 1e-3, 50.0);
        let n3 = 1.5 * n2 * (1.0 - 0.5 * rng.random::<f64>() - 1e-6);
        MomentTriple::new(m1, n2, n3).expect("positive moments")
    }
}
