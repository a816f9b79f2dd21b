//! Coxian and hyperexponential job size distributions.
//!
//! A Coxian distribution starts in phase 1; phase `i` lasts an exponential
//! time with rate `mu_i`, after which the job moves to phase `i + 1` with
//! probability `p_i` or completes. The last phase always completes
//! (`p_n = 0`). The effective completion rate of phase `i` is
//! `nu_i = mu_i (1 - p_i)`.
//!
//! Hyperexponential distributions are converted into Coxian form with rates
//! in decreasing order; the resulting representation always has decreasing
//! completion rates (class C0), which is what the mean-field order arguments
//! in [`crate::mfode`] rely on.

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};

/// Relative gap below which two rates are considered identical.
pub const RATE_TIE_TOL: f64 = 1e-9;

/// Absolute slack used to report `nu_i == nu_{i+1}` as a class C0 boundary case.
pub const C0_BOUNDARY_TOL: f64 = 1e-12;

/// Survival below which hazard evaluation is refused.
pub const HAZARD_SURVIVAL_FLOOR: f64 = 1e-14;

fn rates_tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= RATE_TIE_TOL * a.abs().max(b.abs())
}

fn check_distinct(rates: &[f64]) -> Result<()> {
    for (i, &a) in rates.iter().enumerate() {
        for &b in &rates[i + 1..] {
            if rates_tied(a, b) {
                return Err(Error::DuplicateRates {
                    first: a,
                    second: b,
                });
            }
        }
    }
    Ok(())
}

fn check_rates(rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one phase is required".into(),
        ));
    }
    if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "rates must be positive and finite, got {r}"
        )));
    }
    Ok(())
}

/// Coxian distribution with `alpha = (1, 0, ..., 0)` and upper-bidiagonal generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoxianRepr", into = "CoxianRepr")]
pub struct Coxian {
    rates: Vec<f64>,
    continuations: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CoxianRepr {
    rates: Vec<f64>,
    continuations: Vec<f64>,
}

impl TryFrom<CoxianRepr> for Coxian {
    type Error = Error;
    fn try_from(r: CoxianRepr) -> Result<Self> {
        Coxian::new(r.rates, r.continuations)
    }
}

impl From<Coxian> for CoxianRepr {
    fn from(c: Coxian) -> Self {
        CoxianRepr {
            rates: c.rates,
            continuations: c.continuations,
        }
    }
}

/// Outcome of the class C0 test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct C0Report {
    pub member: bool,
    /// `min_i (nu_i - nu_{i+1})`; `+inf` for a single phase.
    pub margin: f64,
    /// Some consecutive completion rates coincide within [`C0_BOUNDARY_TOL`].
    pub boundary: bool,
}

impl Coxian {
    /// Builds a Coxian from its rates and continuation probabilities.
    ///
    /// `continuations` may list all `n` probabilities (the last must be 0) or
    /// only the first `n - 1`.
    pub fn new(rates: Vec<f64>, mut continuations: Vec<f64>) -> Result<Self> {
        check_rates(&rates)?;
        let n = rates.len();
        if continuations.len() + 1 == n {
            continuations.push(0.0);
        }
        if continuations.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{n} rates need {} or {n} continuation probabilities, got {}",
                n - 1,
                continuations.len()
            )));
        }
        if continuations[n - 1] != 0.0 {
            return Err(Error::InvalidParameter(
                "the last continuation probability must be 0".into(),
            ));
        }
        if let Some(p) = continuations.iter().find(|p| !(**p >= 0.0 && **p < 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "continuation probabilities must lie in [0,1), got {p}"
            )));
        }
        Ok(Self {
            rates,
            continuations,
        })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(vec![rate], vec![0.0])
    }

    pub fn phases(&self) -> usize {
        self.rates.len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn continuations(&self) -> &[f64] {
        &self.continuations
    }

    /// `mu_i (1 - p_i)` per phase.
    pub fn completion_rates(&self) -> Vec<f64> {
        self.rates
            .iter()
            .zip(&self.continuations)
            .map(|(m, p)| m * (1.0 - p))
            .collect()
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }

    /// Class C0 membership: completion rates decreasing in the phase index.
    ///
    /// A consecutive pair is accepted when `nu_i - nu_{i+1} > -tol`; pairs that
    /// coincide within [`C0_BOUNDARY_TOL`] are accepted as boundary cases and
    /// contribute a margin of exactly 0.
    pub fn c0_report(&self, tol: f64) -> C0Report {
        let nu = self.completion_rates();
        let mut margin = f64::INFINITY;
        let mut boundary = false;
        let mut member = true;
        for w in nu.windows(2) {
            let mut gap = w[0] - w[1];
            if gap.abs() <= C0_BOUNDARY_TOL {
                boundary = true;
                gap = 0.0;
            } else if gap <= -tol {
                member = false;
            }
            margin = margin.min(gap);
        }
        C0Report {
            member,
            margin,
            boundary,
        }
    }

    pub fn is_class_c0(&self) -> bool {
        self.c0_report(0.0).member
    }

    /// Expected remaining service time of a job currently in each phase.
    pub fn remaining_service_times(&self) -> Vec<f64> {
        let n = self.phases();
        let mut r = vec![0.0; n];
        r[n - 1] = 1.0 / self.rates[n - 1];
        for i in (0..n - 1).rev() {
            r[i] = 1.0 / self.rates[i] + self.continuations[i] * r[i + 1];
        }
        r
    }

    /// Solves `(-S) x = b` by back-substitution; `-S` is upper bidiagonal.
    fn solve_neg_generator(&self, b: &[f64]) -> Vec<f64> {
        let n = self.phases();
        let mut x = vec![0.0; n];
        let mut next = 0.0;
        for i in (0..n).rev() {
            x[i] = b[i] / self.rates[i] + self.continuations[i] * next;
            next = x[i];
        }
        x
    }

    /// Raw moment `E[Y^k]` for `k` in 1..=3.
    pub fn moment(&self, k: u32) -> Result<f64> {
        if !(1..=3).contains(&k) {
            return Err(Error::Domain(format!(
                "moment order must be 1, 2 or 3, got {k}"
            )));
        }
        let mut x = vec![1.0; self.phases()];
        let mut factorial = 1.0;
        for j in 1..=k {
            x = self.solve_neg_generator(&x);
            factorial *= j as f64;
        }
        Ok(factorial * x[0])
    }

    pub fn mean(&self) -> f64 {
        self.remaining_service_times()[0]
    }

    pub fn normalized_moments(&self) -> MomentTriple {
        let m1 = self.moment(1).expect("order 1");
        let m2 = self.moment(2).expect("order 2");
        let m3 = self.moment(3).expect("order 3");
        MomentTriple {
            m1,
            n2: m2 / (m1 * m1),
            n3: m3 / (m1 * m2),
        }
    }

    /// Rescales the rates so the mean becomes 1.
    pub fn normalize_to_unit_mean(&self) -> Coxian {
        let m1 = self.mean();
        Coxian {
            rates: self.rates.iter().map(|r| r * m1).collect(),
            continuations: self.continuations.clone(),
        }
    }

    /// Laplace-Stieltjes transform of the job size.
    pub fn lst(&self, s: f64) -> f64 {
        let mut reach = 1.0;
        let mut path = 1.0;
        let mut total = 0.0;
        for (m, p) in self.rates.iter().zip(&self.continuations) {
            path *= m / (s + m);
            total += (1.0 - p) * reach * path;
            reach *= p;
        }
        total
    }

    /// Partial-fraction expansion of the transform into exponential terms.
    ///
    /// The weights sum to one but may be negative; a negative weight means
    /// the distribution is not hyperexponential.
    pub fn mixture_weights(&self) -> Result<SignedMixture> {
        check_distinct(&self.rates)?;
        let n = self.phases();
        let mu = &self.rates;
        // exit[i] = (1 - p_i) * prod_{j<i} p_j
        let mut exit = Vec::with_capacity(n);
        let mut reach = 1.0;
        for i in 0..n {
            exit.push((1.0 - self.continuations[i]) * reach);
            reach *= self.continuations[i];
        }
        let weights = (0..n)
            .map(|k| {
                let mut sum = 0.0;
                for i in k..n {
                    let prod: f64 = (0..=i)
                        .filter(|&j| j != k)
                        .map(|j| mu[j] / (mu[j] - mu[k]))
                        .product();
                    sum += exit[i] * prod;
                }
                sum
            })
            .collect();
        Ok(SignedMixture {
            weights,
            rates: mu.clone(),
        })
    }

    /// Phase occupation probabilities `alpha e^{St}` at each requested time.
    ///
    /// Integrates the bidiagonal phase equations with the classic fourth-order
    /// Runge-Kutta scheme. The equations are linear with constant
    /// coefficients, so one step is multiplication by the fixed matrix
    /// `sum_{k<=4} (hS)^k / k!` and a run of equal steps is a power of it,
    /// taken by repeated squaring. Times must be nonnegative and nondecreasing.
    pub fn phase_probabilities(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(Error::Domain(format!(
                "time must be finite and nonnegative, got {t}"
            )));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain(
                "evaluation times must be nondecreasing".into(),
            ));
        }
        let n = self.phases();
        let h_max = (1e-3f64).min(0.01 / self.max_rate());
        let mut generator = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            generator[(k, k)] = -self.rates[k];
            if k + 1 < n {
                generator[(k, k + 1)] = self.rates[k] * self.continuations[k];
            }
        }

        let mut v = RowDVector::<f64>::zeros(n);
        v[0] = 1.0;
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let span = t - now;
            if span > 0.0 {
                let steps = (span / h_max).ceil().max(1.0) as u64;
                let hs = &generator * (span / steps as f64);
                let mut step = DMatrix::<f64>::identity(n, n);
                let mut term = DMatrix::<f64>::identity(n, n);
                for k in 1..=4 {
                    term = &term * &hs / k as f64;
                    step += &term;
                }
                v *= matrix_power(step, steps);
                now = t;
            }
            out.push(v.iter().copied().collect());
        }
        Ok(out)
    }

    pub fn survival_grid(&self, times: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .phase_probabilities(times)?
            .iter()
            .map(|v| v.iter().sum())
            .collect())
    }

    pub fn cdf_grid(&self, times: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .survival_grid(times)?
            .into_iter()
            .map(|s| 1.0 - s)
            .collect())
    }

    /// Hazard rate at each time; fails where the survival drops below
    /// [`HAZARD_SURVIVAL_FLOOR`].
    pub fn hazard_grid(&self, times: &[f64]) -> Result<Vec<f64>> {
        let nu = self.completion_rates();
        self.phase_probabilities(times)?
            .iter()
            .zip(times)
            .map(|(v, &t)| {
                let survival: f64 = v.iter().sum();
                if survival < HAZARD_SURVIVAL_FLOOR {
                    return Err(Error::UnreliableHazard { t, survival });
                }
                Ok(v.iter().zip(&nu).map(|(a, b)| a * b).sum::<f64>() / survival)
            })
            .collect()
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        Ok(self.cdf_grid(&[t])?[0])
    }

    pub fn pdf(&self, t: f64) -> Result<f64> {
        let nu = self.completion_rates();
        let v = &self.phase_probabilities(&[t])?[0];
        Ok(v.iter().zip(&nu).map(|(a, b)| a * b).sum())
    }

    pub fn hazard(&self, t: f64) -> Result<f64> {
        Ok(self.hazard_grid(&[t])?[0])
    }
}

fn matrix_power(mut base: DMatrix<f64>, mut exp: u64) -> DMatrix<f64> {
    let mut acc = DMatrix::<f64>::identity(base.nrows(), base.ncols());
    while exp > 0 {
        if exp & 1 == 1 {
            acc = &acc * &base;
        }
        exp >>= 1;
        if exp > 0 {
            base = &base * &base;
        }
    }
    acc
}

/// Mixture of exponentials with positive weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperRepr", into = "HyperRepr")]
pub struct HyperExponential {
    weights: Vec<f64>,
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HyperRepr {
    weights: Vec<f64>,
    rates: Vec<f64>,
}

impl TryFrom<HyperRepr> for HyperExponential {
    type Error = Error;
    fn try_from(r: HyperRepr) -> Result<Self> {
        HyperExponential::new(r.weights, r.rates)
    }
}

impl From<HyperExponential> for HyperRepr {
    fn from(h: HyperExponential) -> Self {
        HyperRepr {
            weights: h.weights,
            rates: h.rates,
        }
    }
}

impl HyperExponential {
    pub fn new(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        check_rates(&rates)?;
        if weights.len() != rates.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} rates",
                weights.len(),
                rates.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "weights must be strictly positive, got {w}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "weights must sum to 1, got {total}"
            )));
        }
        check_distinct(&rates)?;
        Ok(Self { weights, rates })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![rate])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn branches(&self) -> usize {
        self.rates.len()
    }

    pub fn survival(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, m)| w * (-m * t).exp())
            .sum()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.survival(t)
    }

    pub fn lst(&self, s: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, m)| w * m / (s + m))
            .sum()
    }

    /// `E[Y^k] = sum_k w_k k! / mu_k^k`.
    pub fn moment(&self, k: u32) -> f64 {
        let factorial: f64 = (1..=k).map(f64::from).product();
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, m)| w * factorial / m.powi(k as i32))
            .sum()
    }

    pub fn normalized_moments(&self) -> MomentTriple {
        let (m1, m2, m3) = (self.moment(1), self.moment(2), self.moment(3));
        MomentTriple {
            m1,
            n2: m2 / (m1 * m1),
            n3: m3 / (m1 * m2),
        }
    }

    /// Branches ordered by strictly decreasing rate.
    pub fn sorted_by_rate(&self) -> (Vec<f64>, Vec<f64>) {
        let mut idx: Vec<usize> = (0..self.branches()).collect();
        idx.sort_by(|&a, &b| self.rates[b].total_cmp(&self.rates[a]));
        (
            idx.iter().map(|&i| self.weights[i]).collect(),
            idx.iter().map(|&i| self.rates[i]).collect(),
        )
    }

    /// Equivalent Coxian representation with rates in decreasing order.
    pub fn to_coxian(&self) -> Coxian {
        let (w, mu) = self.sorted_by_rate();
        let n = mu.len();
        // tail(i, upto) = sum_{k >= i} w_k prod_{j < upto} (1 - mu_k / mu_j)
        let tail = |from: usize, upto: usize| -> f64 {
            (from..n)
                .map(|k| w[k] * (0..upto).map(|j| 1.0 - mu[k] / mu[j]).product::<f64>())
                .sum()
        };
        let mut continuations = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            continuations[i] = tail(i + 1, i + 1) / tail(i, i);
        }
        Coxian {
            rates: mu,
            continuations,
        }
    }
}

/// Exponential mixture whose weights may be negative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignedMixture {
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
}

impl SignedMixture {
    pub fn is_hyperexponential(&self) -> bool {
        self.weights.iter().all(|w| *w > 0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn lst(&self, s: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, m)| w * m / (s + m))
            .sum()
    }

    pub fn survival(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, m)| w * (-m * t).exp())
            .sum()
    }
}

/// Mean plus second and third normalized moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTriple {
    pub m1: f64,
    pub n2: f64,
    pub n3: f64,
}

impl MomentTriple {
    pub fn new(m1: f64, n2: f64, n3: f64) -> Result<Self> {
        if !(m1 > 0.0 && m1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mean must be positive, got {m1}"
            )));
        }
        if !(n2 >= 1.0 && n3 >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "normalized moments must be at least 1, got n2 = {n2}, n3 = {n3}"
            )));
        }
        Ok(Self { m1, n2, n3 })
    }
}

/// Whether `(n2, n3)` can be matched by a class C0 distribution, widening
/// every inequality by `tol`.
pub fn in_moment_region(n2: f64, n3: f64, tol: f64) -> bool {
    let exponential = (n2 - 2.0).abs() <= tol && (n3 - 3.0).abs() <= tol;
    exponential || (n2 > 2.0 - tol && n3 > 1.5 * n2 - tol)
}

/// Two-branch hyperexponential matching the first three moments.
///
/// The branch means are the two roots of `x^2 - s x + q` where `s` and `q`
/// follow from the two-atom moment recurrence on the unit-mean moments
/// `c_k = E[Y^k] / k!`. The exponential point `(2, 3)` (within 1e-12) yields
/// a single exponential branch.
pub fn fit_hyperexp2(target: MomentTriple) -> Result<HyperExponential> {
    let MomentTriple { m1, n2, n3 } = target;
    if (n2 - 2.0).abs() <= 1e-12 && (n3 - 3.0).abs() <= 1e-12 {
        return HyperExponential::exponential(1.0 / m1);
    }
    if !(n2 > 2.0) {
        return Err(Error::InfeasibleMoments(format!(
            "requires n2 > 2 (or (n2, n3) = (2, 3)), got n2 = {n2}"
        )));
    }
    if !(n3 > 1.5 * n2) {
        return Err(Error::InfeasibleMoments(format!(
            "requires n3 > 1.5 * n2 = {}, got n3 = {n3}",
            1.5 * n2
        )));
    }
    let c2 = n2 / 2.0;
    let c3 = n2 * n3 / 6.0;
    let s = (c3 - c2) / (c2 - 1.0);
    let q = s - c2;
    let disc = (s * s - 4.0 * q).sqrt();
    // Larger root via the stable formula, smaller from the product.
    let a_long = 0.5 * (s + disc);
    let a_short = q / a_long;
    // 1 - a_short equals (c2 - a_short) / a_long; the direct difference
    // loses most digits when the long branch carries almost no weight.
    let w_long = (c2 - a_short) / (a_long * (a_long - a_short));
    let w_short = 1.0 - w_long;
    if !(w_long > 0.0 && w_short > 0.0 && a_short > 0.0) {
        return Err(Error::InfeasibleMoments(format!(
            "no two-branch solution for n2 = {n2}, n3 = {n3}"
        )));
    }
    HyperExponential::new(
        vec![w_short, w_long],
        vec![1.0 / (a_short * m1), 1.0 / (a_long * m1)],
    )
}

/// `sum_{i=k+1}^{l} prod_{v=k}^{i-1} (mu_v - mu_l) / prod_{j=k+1}^{i} (mu_j - mu_k)`,
/// with 1-based `k < l`; the sum telescopes to -1.
pub fn lemma1_sum(k: usize, l: usize, mu: &[f64]) -> Result<f64> {
    if !(k >= 1 && l > k && l <= mu.len()) {
        return Err(Error::Domain(format!(
            "need 1 <= k < l <= {}, got k = {k}, l = {l}",
            mu.len()
        )));
    }
    let at = |i: usize| mu[i - 1];
    for j in k + 1..=l {
        if rates_tied(at(j), at(k)) {
            return Err(Error::DuplicateRates {
                first: at(k),
                second: at(j),
            });
        }
    }
    // Terms can be large with alternating signs, so the sum is carried in
    // double-double precision.
    let mut sum = TwoFloat::from(0.0);
    for i in k + 1..=l {
        let mut num = TwoFloat::from(1.0);
        for v in k..i {
            num *= TwoFloat::new_sub(at(v), at(l));
        }
        let mut den = TwoFloat::from(1.0);
        for j in k + 1..=i {
            den *= TwoFloat::new_sub(at(j), at(k));
        }
        // Long division: the crate's quotient is only good to about f64 precision.
        let q1 = num.hi() / den.hi();
        let rem = num - den * q1;
        let q2 = rem.hi() / den.hi();
        sum += TwoFloat::new_add(q1, q2);
    }
    Ok(sum.into())
}

/// Distribution as read from or written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Distribution {
    Coxian(Coxian),
    #[serde(rename = "hyperexp")]
    HyperExp(HyperExponential),
}

impl Distribution {
    /// Coxian form; hyperexponentials are converted.
    pub fn to_coxian(&self) -> Coxian {
        match self {
            Distribution::Coxian(c) => c.clone(),
            Distribution::HyperExp(h) => h.to_coxian(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signed_counterexample() -> Coxian {
        Coxian::new(vec![1.0, 2.0, 0.1], vec![0.1, 0.8, 0.0]).unwrap()
    }

    fn balanced_hyper() -> HyperExponential {
        HyperExponential::new(vec![0.5, 0.5], vec![2.0, 2.0 / 3.0]).unwrap()
    }

    #[test]
    fn rejects_bad_coxian() {
        assert!(Coxian::new(vec![1.0, 0.0], vec![0.5]).is_err());
        assert!(Coxian::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(Coxian::new(vec![1.0, 2.0], vec![0.5, 0.1]).is_err());
        assert!(Coxian::new(vec![], vec![]).is_err());
        assert!(Coxian::new(vec![1.0, 2.0], vec![0.5]).is_ok());
    }

    #[test]
    fn rejects_bad_hyperexp() {
        assert!(HyperExponential::new(vec![0.5, 0.4], vec![1.0, 2.0]).is_err());
        assert!(HyperExponential::new(vec![0.5, 0.5], vec![1.0, 1.0]).is_err());
        assert!(HyperExponential::new(vec![1.5, -0.5], vec![1.0, 2.0]).is_err());
        let err = HyperExponential::new(vec![0.5, 0.5], vec![1.0, 1.0 + 1e-12]).unwrap_err();
        assert!(err.to_string().contains("rates must be distinct"));
    }

    #[test]
    fn single_branch_converts_to_exponential() {
        let c = HyperExponential::exponential(1.0).unwrap().to_coxian();
        assert_eq!(c.rates(), &[1.0]);
        assert_eq!(c.continuations(), &[0.0]);
    }

    #[test]
    fn balanced_hyper_conversion() {
        let c = balanced_hyper().to_coxian();
        assert_eq!(c.rates(), &[2.0, 2.0 / 3.0]);
        assert!((c.continuations()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.mean() - 1.0).abs() < 1e-14);
        // Unsorted input yields the same representation.
        let swapped = HyperExponential::new(vec![0.5, 0.5], vec![2.0 / 3.0, 2.0]).unwrap();
        assert_eq!(swapped.to_coxian(), c);
    }

    #[test]
    fn counterexample_weights() {
        let mix = signed_counterexample().mixture_weights().unwrap();
        let expected = [83.0 / 90.0, -3.0 / 190.0, 16.0 / 171.0];
        for (w, e) in mix.weights.iter().zip(expected) {
            assert!((w - e).abs() < 1e-12, "{w} vs {e}");
        }
        assert!(!mix.is_hyperexponential());
        assert!((mix.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_weights_reject_repeated_rates() {
        let c = Coxian::new(vec![1.0, 1.0], vec![0.5]).unwrap();
        assert!(matches!(
            c.mixture_weights(),
            Err(Error::DuplicateRates { .. })
        ));
        let e = Coxian::exponential(1.0).unwrap().mixture_weights().unwrap();
        assert_eq!(e.weights, vec![1.0]);
    }

    #[test]
    fn mixture_lst_matches_coxian_lst() {
        let c = signed_counterexample();
        let mix = c.mixture_weights().unwrap();
        for s in [0.01, 0.3, 1.0, 4.0, 25.0] {
            assert!((mix.lst(s) - c.lst(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn c0_membership() {
        let r = signed_counterexample().c0_report(0.0);
        assert!(r.member);
        assert!((r.margin - 0.3).abs() < 1e-12); // nu = (0.9, 0.4, 0.1)

        let single = Coxian::exponential(1.0).unwrap().c0_report(0.0);
        assert!(single.member && single.margin == f64::INFINITY);

        let not_c0 = Coxian::new(vec![1.0, 2.0], vec![0.5])
            .unwrap()
            .c0_report(0.0);
        assert!(!not_c0.member);
        assert!((not_c0.margin + 1.5).abs() < 1e-12);

        // nu = (1, 1): boundary, accepted with margin 0.
        let flat = Coxian::new(vec![2.0, 1.0], vec![0.5])
            .unwrap()
            .c0_report(0.0);
        assert!(flat.member && flat.boundary && flat.margin == 0.0);
    }

    #[test]
    fn remaining_times() {
        let c = balanced_hyper().to_coxian();
        let r = c.remaining_service_times();
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 1.5).abs() < 1e-14);
        assert_eq!(
            Coxian::exponential(1.0).unwrap().remaining_service_times(),
            vec![1.0]
        );
    }

    #[test]
    fn moments_by_back_substitution() {
        let e = Coxian::exponential(1.0).unwrap();
        assert_eq!(e.moment(2).unwrap(), 2.0);
        let c = balanced_hyper().to_coxian();
        assert!((c.moment(1).unwrap() - 1.0).abs() < 1e-14);
        assert!((c.moment(2).unwrap() - 2.5).abs() < 1e-13);
        assert!((c.moment(3).unwrap() - 10.5).abs() < 1e-12);
        assert!(c.moment(4).is_err());
        let nm = c.normalized_moments();
        assert!((nm.n2 - 2.5).abs() < 1e-13 && (nm.n3 - 4.2).abs() < 1e-13);
        let ne = e.normalized_moments();
        assert_eq!((ne.m1, ne.n2, ne.n3), (1.0, 2.0, 3.0));
    }

    #[test]
    fn unit_mean_normalization() {
        let c = Coxian::exponential(2.0).unwrap().normalize_to_unit_mean();
        assert_eq!(c.rates(), &[1.0]);
        let h = balanced_hyper().to_coxian();
        let n = h.normalize_to_unit_mean();
        for (a, b) in n.rates().iter().zip(h.rates()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fit_examples() {
        let e = fit_hyperexp2(MomentTriple::new(1.0, 2.0, 3.0).unwrap()).unwrap();
        assert_eq!(e.rates(), &[1.0]);

        let h = fit_hyperexp2(MomentTriple::new(1.0, 2.5, 4.2).unwrap()).unwrap();
        let (w, mu) = h.sorted_by_rate();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        assert!((mu[0] - 2.0).abs() < 1e-12 && (mu[1] - 2.0 / 3.0).abs() < 1e-12);

        let err = fit_hyperexp2(MomentTriple::new(1.0, 2.5, 3.6).unwrap()).unwrap_err();
        assert!(err.to_string().contains("n3 > 1.5 * n2"));
        let err = fit_hyperexp2(MomentTriple::new(1.0, 1.5, 3.6).unwrap()).unwrap_err();
        assert!(err.to_string().contains("n2 > 2"));
    }

    #[test]
    fn fit_respects_mean() {
        let h = fit_hyperexp2(MomentTriple::new(3.0, 4.0, 9.0).unwrap()).unwrap();
        let m = h.normalized_moments();
        assert!((m.m1 - 3.0).abs() < 1e-12);
        assert!((m.n2 - 4.0).abs() < 1e-11 && (m.n3 - 9.0).abs() < 1e-11);
    }

    #[test]
    fn exponential_cdf_and_hazard() {
        let e = Coxian::exponential(1.0).unwrap();
        assert!((e.cdf(1.0).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-13);
        assert!((e.hazard(3.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((e.pdf(0.5).unwrap() - (-0.5f64).exp()).abs() < 1e-13);
        assert!(e.cdf(-1.0).is_err());
        assert!(matches!(
            e.hazard(40.0),
            Err(Error::UnreliableHazard { .. })
        ));
    }

    #[test]
    fn telescoping_small_cases() {
        assert!((lemma1_sum(1, 2, &[3.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((lemma1_sum(1, 4, &[5.0, 4.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-14);
        assert!(lemma1_sum(1, 2, &[3.0, 3.0]).is_err());
        assert!(lemma1_sum(2, 2, &[3.0, 1.0]).is_err());
    }

    #[test]
    fn distribution_json() {
        let d: Distribution = serde_json::from_str(
            r#"{"kind":"hyperexp","weights":[0.5,0.5],"rates":[2,0.6666666666666666]}"#,
        )
        .unwrap();
        assert!(matches!(d, Distribution::HyperExp(_)));
        let c: Distribution = serde_json::from_str(
            r#"{"kind":"coxian","rates":[1,2,0.1],"continuations":[0.1,0.8]}"#,
        )
        .unwrap();
        assert_eq!(c.to_coxian(), signed_counterexample());
        let bad = serde_json::from_str::<Distribution>(
            r#"{"kind":"hyperexp","weights":[0.7],"rates":[1]}"#,
        );
        assert!(bad.is_err());
        let text = serde_json::to_string(&Distribution::Coxian(signed_counterexample())).unwrap();
        assert!(text.starts_with(r#"{"kind":"coxian","rates":[1.0,2.0,0.1]"#));
    }
}
