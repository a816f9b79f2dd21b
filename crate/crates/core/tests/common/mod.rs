//! Oracles shared by the integration tests.
#![allow(dead_code)]

use coxfield::dist::Coxian;
use coxfield::order::MeanFieldState;
use nalgebra::{DMatrix, DVector};

pub fn hyper() -> Coxian {
    Coxian::new(vec![2.0, 2.0 / 3.0], vec![1.0 / 3.0]).unwrap()
}

/// Stationary law of a single M/Cox/1/B queue from its generator, returned
/// as tail sums `h[l][i] = P(length >= l, phase >= i)`.
pub fn single_queue_tails(lambda: f64, b: usize, svc: &Coxian) -> MeanFieldState {
    let n = svc.phases();
    let (mu, p) = (svc.rates(), svc.continuations());
    let size = 1 + b * n;
    let idx = |m: usize, i: usize| if m == 0 { 0 } else { 1 + (m - 1) * n + (i - 1) };
    let mut q = DMatrix::<f64>::zeros(size, size);
    q[(0, idx(1, 1))] += lambda;
    for m in 1..=b {
        for i in 1..=n {
            let s = idx(m, i);
            if m < b {
                q[(s, idx(m + 1, i))] += lambda;
            }
            if i < n {
                q[(s, idx(m, i + 1))] += mu[i - 1] * p[i - 1];
            }
            let to = if m == 1 { 0 } else { idx(m - 1, 1) };
            q[(s, to)] += mu[i - 1] * (1.0 - p[i - 1]);
        }
    }
    for s in 0..size {
        let out: f64 = (0..size).filter(|&t| t != s).map(|t| q[(s, t)]).sum();
        q[(s, s)] = -out;
    }
    // Solve x Q = 0 with the first balance equation replaced by normalization.
    let mut a = q.transpose();
    let mut rhs = DVector::<f64>::zeros(size);
    for c in 0..size {
        a[(0, c)] = 1.0;
    }
    rhs[0] = 1.0;
    let x = a.lu().solve(&rhs).unwrap();
    let mut h = MeanFieldState::zeros(b, n);
    for l in 1..=b {
        for i in 1..=n {
            h.set(
                l,
                i,
                (l..=b)
                    .map(|m| (i..=n).map(|j| x[idx(m, j)]).sum::<f64>())
                    .sum(),
            );
        }
    }
    h
}
