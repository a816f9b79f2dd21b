//! Mean-field ODE for FCFS servers with Coxian job sizes.
//!
//! The state `h` evolves as `dh/dt = f(h) + service(h)`, where `f` collects
//! the policy-specific arrival (and transfer) terms and `service` the phase
//! changes and completions, identical for every policy. Buffers are finite:
//! arrivals to full servers are lost.

mod diagnostics;
mod drift;
mod fixed_point;
mod integrate;

use serde::{Deserialize, Serialize};

use crate::dist::{Coxian, Distribution};
use crate::error::{Error, Result};

pub use diagnostics::{
    attraction_check, lyapunov_check, lyapunov_rates, lyapunov_z, monotonicity_check,
    AttractionReport, LyapunovReport, MonotonicityReport, MONOTONICITY_TOL,
};
pub use drift::{
    arrival_drift, arrival_drift_batchjsq, arrival_drift_jsq, arrival_drift_pullpush, drift, phi_k,
    phi_k_prime, phi_k_second, service_drift, sup_norm, xi_k,
};
pub use fixed_point::{
    check_prop5, fixed_point, fixed_point_auto_buffer, fixed_point_from, FixedPointResult,
    Prop5Report, SolverDiagnostics, FIXED_POINT_TOL, TAIL_MASS_TOL,
};
pub use integrate::{integrate, Rk4, Trajectory, TRAJECTORY_TOL};

/// Load-balancing policy and its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Join the shortest of `d` sampled queues.
    Jsq { d: u32 },
    /// Local arrivals; idle servers probe a random peer at rate `r` and pull a waiting job.
    PullPush { r: f64 },
    /// Batches of `k` jobs join the `k` shortest of `d` sampled queues.
    BatchJsq { k: u32, d: u32 },
}

/// A policy together with arrival rate, buffer size and job size distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct PolicyModel {
    policy: Policy,
    lambda: f64,
    buffer: usize,
    service: Coxian,
    nu: Vec<f64>,
    advance: Vec<f64>,
}

impl PolicyModel {
    /// Validates the parameters. The job size distribution is rescaled to
    /// unit mean and must belong to class C0.
    pub fn new(policy: Policy, lambda: f64, buffer: usize, service: Coxian) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "arrival rate must be positive, got {lambda}"
            )));
        }
        if buffer == 0 {
            return Err(Error::InvalidParameter(
                "buffer size must be at least 1".into(),
            ));
        }
        match policy {
            Policy::Jsq { d: 0 } => {
                return Err(Error::InvalidParameter("d must be at least 1".into()))
            }
            Policy::BatchJsq { k, d } if k == 0 || k > d => {
                return Err(Error::InvalidParameter(format!(
                    "batch size K must satisfy 1 <= K <= d, got K = {k}, d = {d}"
                )))
            }
            Policy::PullPush { r } if !(r >= 0.0 && r.is_finite()) => {
                return Err(Error::InvalidParameter(format!(
                    "probe rate must be nonnegative, got {r}"
                )))
            }
            _ => {}
        }
        let service = service.normalize_to_unit_mean();
        let c0 = service.c0_report(0.0);
        if !c0.member {
            return Err(Error::InvalidParameter(format!(
                "service distribution is not in class C0 (margin {})",
                c0.margin
            )));
        }
        let nu = service.completion_rates();
        let advance = service
            .rates()
            .iter()
            .zip(service.continuations())
            .map(|(m, p)| m * p)
            .collect();
        Ok(Self {
            policy,
            lambda,
            buffer,
            service,
            nu,
            advance,
        })
    }

    pub fn jsq(d: u32, lambda: f64, buffer: usize, service: Coxian) -> Result<Self> {
        Self::new(Policy::Jsq { d }, lambda, buffer, service)
    }

    pub fn pull_push(r: f64, lambda: f64, buffer: usize, service: Coxian) -> Result<Self> {
        Self::new(Policy::PullPush { r }, lambda, buffer, service)
    }

    pub fn batch_jsq(k: u32, d: u32, lambda: f64, buffer: usize, service: Coxian) -> Result<Self> {
        Self::new(Policy::BatchJsq { k, d }, lambda, buffer, service)
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn buffer(&self) -> usize {
        self.buffer
    }

    pub fn phases(&self) -> usize {
        self.service.phases()
    }

    pub fn service(&self) -> &Coxian {
        &self.service
    }

    /// `mu_i (1 - p_i)`.
    pub fn completion_rates(&self) -> &[f64] {
        &self.nu
    }

    /// `mu_i p_i`.
    pub fn advance_rates(&self) -> &[f64] {
        &self.advance
    }

    /// Same model with another buffer size.
    pub fn with_buffer(&self, buffer: usize) -> Result<Self> {
        Self::new(self.policy, self.lambda, buffer, self.service.clone())
    }

    /// Jobs offered per server per unit time (`lambda K` for batches).
    pub fn offered_load(&self) -> f64 {
        match self.policy {
            Policy::BatchJsq { k, .. } => self.lambda * k as f64,
            _ => self.lambda,
        }
    }

    pub fn is_stable(&self) -> bool {
        self.offered_load() < 1.0
    }

    /// Largest admissible integration step `0.1 / (lambda max(d, K, 1) + mu_max + r)`.
    pub fn max_step(&self) -> f64 {
        let (fanout, r) = match self.policy {
            Policy::Jsq { d } => (d.max(1) as f64, 0.0),
            Policy::PullPush { r } => (1.0, r),
            Policy::BatchJsq { k, d } => (d.max(k).max(1) as f64, 0.0),
        };
        0.1 / (self.lambda * fanout + self.service.max_rate() + r)
    }
}

/// JSON form of a [`PolicyModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub policy: String,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<u32>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(rename = "B")]
    pub buffer: usize,
    pub service: Distribution,
}

impl TryFrom<ModelSpec> for PolicyModel {
    type Error = Error;
    fn try_from(s: ModelSpec) -> Result<Self> {
        let missing = |name: &str| {
            Error::InvalidParameter(format!("policy '{}' needs parameter '{name}'", s.policy))
        };
        let policy = match s.policy.as_str() {
            "jsq" => Policy::Jsq {
                d: s.d.ok_or_else(|| missing("d"))?,
            },
            "pullpush" => Policy::PullPush {
                r: s.r.ok_or_else(|| missing("r"))?,
            },
            "batchjsq" => Policy::BatchJsq {
                k: s.k.ok_or_else(|| missing("K"))?,
                d: s.d.ok_or_else(|| missing("d"))?,
            },
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown policy '{other}' (expected jsq, pullpush or batchjsq)"
                )))
            }
        };
        PolicyModel::new(policy, s.lambda, s.buffer, s.service.to_coxian())
    }
}

impl From<PolicyModel> for ModelSpec {
    fn from(m: PolicyModel) -> Self {
        let (policy, d, k, r) = match m.policy {
            Policy::Jsq { d } => ("jsq", Some(d), None, None),
            Policy::PullPush { r } => ("pullpush", None, None, Some(r)),
            Policy::BatchJsq { k, d } => ("batchjsq", Some(d), Some(k), None),
        };
        ModelSpec {
            policy: policy.into(),
            lambda: m.lambda,
            d,
            k,
            r,
            buffer: m.buffer,
            service: Distribution::Coxian(m.service),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_models() {
        let exp = Coxian::exponential(1.0).unwrap();
        assert!(PolicyModel::jsq(0, 0.5, 5, exp.clone()).is_err());
        assert!(PolicyModel::jsq(2, 0.0, 5, exp.clone()).is_err());
        assert!(PolicyModel::jsq(2, 0.5, 0, exp.clone()).is_err());
        assert!(PolicyModel::batch_jsq(3, 2, 0.2, 5, exp.clone()).is_err());
        assert!(PolicyModel::pull_push(-1.0, 0.5, 5, exp).is_err());
        let not_c0 = Coxian::new(vec![1.0, 2.0], vec![0.5]).unwrap();
        assert!(PolicyModel::jsq(2, 0.5, 5, not_c0).is_err());
    }

    #[test]
    fn service_is_rescaled() {
        let m = PolicyModel::jsq(2, 0.5, 5, Coxian::exponential(4.0).unwrap()).unwrap();
        assert_eq!(m.service().rates(), &[1.0]);
    }

    #[test]
    fn stability_and_step_bound() {
        let exp = Coxian::exponential(1.0).unwrap();
        let b = PolicyModel::batch_jsq(2, 3, 0.3, 5, exp.clone()).unwrap();
        assert!((b.offered_load() - 0.6).abs() < 1e-15 && b.is_stable());
        assert!((b.max_step() - 0.1 / 1.9).abs() < 1e-15);
        assert!(!PolicyModel::jsq(2, 1.2, 5, exp).unwrap().is_stable());
    }

    #[test]
    fn model_json() {
        let text = r#"{"policy":"batchjsq","lambda":0.3,"d":3,"K":2,"B":10,
                       "service":{"kind":"hyperexp","weights":[0.5,0.5],"rates":[2,0.6666666666666666]}}"#;
        let m: PolicyModel = serde_json::from_str(text).unwrap();
        assert_eq!(m.policy(), Policy::BatchJsq { k: 2, d: 3 });
        assert_eq!(m.phases(), 2);
        let again: PolicyModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(again, m);
        let missing = serde_json::from_str::<PolicyModel>(
            r#"{"policy":"jsq","lambda":0.3,"B":10,"service":{"kind":"coxian","rates":[1],"continuations":[0]}}"#,
        );
        assert!(missing.unwrap_err().to_string().contains("'d'"));
    }
}
