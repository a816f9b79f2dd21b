//! Randomized verification suites shared by the CLI and the test targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mfode::{
    attraction_check, fixed_point, lyapunov_check, monotonicity_check, PolicyModel,
};
use crate::order::{
    g_value, leq_c, random_dominated, random_dominating, random_state_with, upper_sandwich,
    MeanFieldState, ORDER_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Monotone,
    Attract,
    Lyapunov,
    OrderOracle,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monotone" => Ok(Suite::Monotone),
            "attract" => Ok(Suite::Attract),
            "lyapunov" => Ok(Suite::Lyapunov),
            "order-oracle" => Ok(Suite::OrderOracle),
            other => Err(Error::InvalidParameter(format!(
                "unknown suite '{other}' (expected monotone, attract, lyapunov or order-oracle)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub case: usize,
    pub passed: bool,
    /// Suite-specific figure of merit (order gap, distance, ...).
    pub metric: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    fn new(suite: Suite, cases: Vec<CaseResult>) -> Self {
        Self {
            suite,
            passed: cases.iter().all(|c| c.passed),
            cases,
        }
    }

    pub fn failures(&self) -> usize {
        self.cases.iter().filter(|c| !c.passed).count()
    }
}

/// Ordered pairs `(lower, upper)` for the monotonicity suite, cycling over
/// three constructions: the empty state below a random state, a fixed point
/// below its upper sandwich with a random state, and a random state with a
/// randomly moved-up or moved-down partner.
pub fn ordered_pairs(
    pi: &MeanFieldState,
    count: usize,
    seed: u64,
) -> Result<Vec<(MeanFieldState, MeanFieldState)>> {
    let (b, n) = pi.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let h = random_state_with(&mut rng, b, n);
        let pair = match k % 4 {
            0 => (MeanFieldState::zeros(b, n), h),
            1 => (pi.clone(), upper_sandwich(&h, pi)?),
            2 => {
                let spread = rng.random::<f64>();
                let up = random_dominating(&mut rng, &h, spread)?;
                (h, up)
            }
            _ => {
                let spread = rng.random::<f64>();
                let down = random_dominated(&mut rng, &h, spread)?;
                (down, h)
            }
        };
        out.push(pair);
    }
    Ok(out)
}

/// `count` ordered pairs integrated to `t_end`, checked at `samples` times.
pub fn monotone_suite(
    model: &PolicyModel,
    seed: u64,
    count: usize,
    t_end: f64,
    samples: usize,
) -> Result<SuiteReport> {
    let pi = fixed_point(model)?.pi;
    let pairs = ordered_pairs(&pi, count, seed)?;
    let cases = pairs
        .par_iter()
        .enumerate()
        .map(|(k, (lo, hi))| {
            let rep = monotonicity_check(model, lo, hi, t_end, samples)?;
            Ok(CaseResult {
                case: k,
                passed: rep.preserved,
                metric: rep.worst_gap,
                note: match rep.first_violation {
                    Some(t) => format!("order lost at t = {t}"),
                    None => String::new(),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport::new(Suite::Monotone, cases))
}

/// The fixed point itself plus `count` random starts.
pub fn attract_suite(
    model: &PolicyModel,
    seed: u64,
    count: usize,
    t_end: f64,
    tol: f64,
) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = fixed_point(model)?.pi;
    let mut starts = vec![pi];
    starts.extend((0..count).map(|_| random_state_with(&mut rng, model.buffer(), model.phases())));
    let rep = attraction_check(model, &starts, t_end, tol)?;
    let cases = rep
        .distances
        .iter()
        .enumerate()
        .map(|(k, &d)| CaseResult {
            case: k,
            passed: d <= tol,
            metric: d,
            note: if k == 0 {
                "start at the fixed point".into()
            } else {
                String::new()
            },
        })
        .collect();
    Ok(SuiteReport::new(Suite::Attract, cases))
}

/// Rate identities for the `z` functionals along `count` trajectories,
/// alternating random starts and starts above the fixed point.
pub fn lyapunov_suite(
    model: &PolicyModel,
    seed: u64,
    count: usize,
    t_end: f64,
    samples: usize,
) -> Result<SuiteReport> {
    const IDENTITY_TOL: f64 = 1e-6;
    const SIGN_TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = fixed_point(model)?.pi;
    let mut starts = Vec::with_capacity(count);
    for k in 0..count {
        let h = random_state_with(&mut rng, model.buffer(), model.phases());
        starts.push(if k % 2 == 0 {
            h
        } else {
            upper_sandwich(&h, &pi)?
        });
    }
    let cases = starts
        .par_iter()
        .enumerate()
        .map(|(k, h0)| {
            let rep = lyapunov_check(model, &pi, h0, t_end, samples)?;
            let identity = rep.z1_identity_error.max(rep.z2_identity_error);
            let sign_ok = rep.ordered_samples == 0 || rep.max_ordered_rate <= SIGN_TOL;
            Ok(CaseResult {
                case: k,
                passed: identity <= IDENTITY_TOL && sign_ok,
                metric: identity,
                note: format!(
                    "{} ordered samples, max d/dt(z11 + z2) = {:e}",
                    rep.ordered_samples, rep.max_ordered_rate
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport::new(Suite::Lyapunov, cases))
}

/// Every nonincreasing sequence over levels `1..=B+1` with `l_1 > l_n`.
pub fn all_sequences(buffer: usize, phases: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, phases: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == phases {
            if prefix[0] > prefix[phases - 1] {
                out.push(prefix.clone());
            }
            return;
        }
        let top = *prefix.last().expect("nonempty prefix");
        for l in 1..=top {
            prefix.push(l);
            extend(prefix, phases, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for first in 1..=buffer + 1 {
        extend(&mut vec![first], phases, &mut out);
    }
    out
}

/// `<=_C` by exhaustive enumeration of sequences.
pub fn leq_c_enumerated(
    h: &MeanFieldState,
    other: &MeanFieldState,
    sequences: &[Vec<usize>],
    tol: f64,
) -> Result<bool> {
    h.same_shape(other)?;
    if other
        .as_slice()
        .iter()
        .zip(h.as_slice())
        .any(|(g, x)| g - x < -tol)
    {
        return Ok(false);
    }
    for s in sequences {
        if g_value(other, s)? - g_value(h, s)? < -tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Dynamic-programming decision against exhaustive enumeration on random
/// pairs: a third unrelated, a third constructed to dominate, a third to be
/// dominated.
pub fn order_oracle_suite(
    buffer: usize,
    phases: usize,
    seed: u64,
    count: usize,
) -> Result<SuiteReport> {
    if buffer == 0 || phases == 0 {
        return Err(Error::InvalidParameter("need B >= 1 and n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = all_sequences(buffer, phases);
    let mut cases = Vec::with_capacity(count);
    for k in 0..count {
        let h = random_state_with(&mut rng, buffer, phases);
        let g = match k % 3 {
            0 => random_state_with(&mut rng, buffer, phases),
            1 => {
                let spread = rng.random::<f64>();
                random_dominating(&mut rng, &h, spread)?
            }
            _ => {
                let spread = rng.random::<f64>();
                random_dominated(&mut rng, &h, spread)?
            }
        };
        let dp = leq_c(&h, &g, ORDER_TOL)?;
        let brute = leq_c_enumerated(&h, &g, &sequences, ORDER_TOL)?;
        cases.push(CaseResult {
            case: k,
            passed: dp == brute,
            metric: if dp { 1.0 } else { 0.0 },
            note: if dp == brute {
                String::new()
            } else {
                format!("dp says {dp}, enumeration says {brute}")
            },
        });
    }
    Ok(SuiteReport::new(Suite::OrderOracle, cases))
}
