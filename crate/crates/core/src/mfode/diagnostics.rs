use rayon::prelude::*;
use serde::Serialize;

use super::drift::View;
use super::fixed_point::{fixed_point, FixedPointResult};
use super::integrate::{integrate_to_end, Rk4};
use super::PolicyModel;
use crate::dist::Coxian;
use crate::error::{Error, Result};
use crate::order::{order_report, MeanFieldState, ORDER_TOL};

/// Tolerance on `<=_C` along integrated pairs.
pub const MONOTONICITY_TOL: f64 = 1e-8;

/// `(z_{1,L}, z_2)` with `z_{1,L} = sum_{l>=L} h_{l,1}` and
/// `z_2 = sum_{i>=2} h_{1,i} (R_i - R_{i-1})`.
pub fn lyapunov_z(h: &MeanFieldState, service: &Coxian, level: usize) -> Result<(f64, f64)> {
    if h.phases() != service.phases() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} phases, distribution {}",
            h.phases(),
            service.phases()
        )));
    }
    if level == 0 || level > h.buffer() {
        return Err(Error::InvalidParameter(format!(
            "level must lie in 1..={}, got {level}",
            h.buffer()
        )));
    }
    let z1 = (level..=h.buffer()).map(|l| h.get(l, 1)).sum();
    let r = service.remaining_service_times();
    let z2 = (2..=h.phases())
        .map(|i| h.get(1, i) * (r[i - 1] - r[i - 2]))
        .sum();
    Ok((z1, z2))
}

/// Closed-form time derivatives of `(z_{1,L}, z_2)` along the ODE:
/// `sum_{l>=L} f_{l,1} - sum_j (h_{L,j} - h_{L,j+1}) nu_j` and
/// `-h_{1,1} + sum_j (h_{1,j} - h_{1,j+1}) nu_j`.
pub fn lyapunov_rates(model: &PolicyModel, h: &MeanFieldState, level: usize) -> Result<(f64, f64)> {
    if h.dims() != (model.buffer(), model.phases()) {
        return Err(Error::DimensionMismatch(format!(
            "state has (B, n) = {:?}, model expects ({}, {})",
            h.dims(),
            model.buffer(),
            model.phases()
        )));
    }
    if level == 0 || level > h.buffer() {
        return Err(Error::InvalidParameter(format!(
            "level must lie in 1..={}, got {level}",
            h.buffer()
        )));
    }
    let f = super::arrival_drift(model, h)?;
    let arrivals: f64 = (level..=h.buffer()).map(|l| f.get(l, 1)).sum();
    let nu = model.completion_rates();
    let v = View {
        h: h.as_slice(),
        b: h.buffer(),
        n: h.phases(),
    };
    let outflow = |l: usize| -> f64 {
        (1..=v.n)
            .map(|j| (v.at(l, j) - v.at(l, j + 1)) * nu[j - 1])
            .sum()
    };
    Ok((arrivals - outflow(level), -h.get(1, 1) + outflow(1)))
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub preserved: bool,
    /// First sample time at which the order failed.
    pub first_violation: Option<f64>,
    /// Smallest order gap seen over all samples (negative when violated).
    pub worst_gap: f64,
    pub samples: usize,
}

/// Integrates `lower` and `upper` in lockstep and checks `lower <=_C upper`
/// at `samples` equally spaced times in `(0, t_end]`.
pub fn monotonicity_check(
    model: &PolicyModel,
    lower: &MeanFieldState,
    upper: &MeanFieldState,
    t_end: f64,
    samples: usize,
) -> Result<MonotonicityReport> {
    let start = order_report(lower, upper, ORDER_TOL)?;
    if !start.holds {
        return Err(Error::NotOrdered(format!(
            "componentwise gap {:e}, sequence gap {:e}",
            start.componentwise_gap, start.sequence_gap
        )));
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let segment = t_end / samples as f64;
    let dt = model.max_step();
    let (mut a, mut b) = (lower.clone(), upper.clone());
    let mut worst_gap = f64::INFINITY;
    let mut first_violation = None;
    for s in 1..=samples {
        a = integrate_to_end(model, &a, segment, dt)?;
        b = integrate_to_end(model, &b, segment, dt)?;
        let rep = order_report(&a, &b, MONOTONICITY_TOL)?;
        worst_gap = worst_gap.min(rep.componentwise_gap.min(rep.sequence_gap));
        if !rep.holds && first_violation.is_none() {
            first_violation = Some(s as f64 * segment);
        }
    }
    Ok(MonotonicityReport {
        preserved: first_violation.is_none(),
        first_violation,
        worst_gap,
        samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AttractionReport {
    pub passed: bool,
    pub tol: f64,
    /// Residual of the solver's fixed point.
    pub pi_residual: f64,
    /// `|h(T) - pi|` per start, in input order.
    pub distances: Vec<f64>,
    /// Largest sup distance between two endpoints.
    pub max_pairwise: f64,
    #[serde(skip)]
    pub fixed_point: Option<FixedPointResult>,
}

/// Integrates each start to `t_end` and compares the endpoint with the fixed
/// point returned by the solver.
pub fn attraction_check(
    model: &PolicyModel,
    starts: &[MeanFieldState],
    t_end: f64,
    tol: f64,
) -> Result<AttractionReport> {
    let fp = fixed_point(model)?;
    let dt = model.max_step();
    let ends: Vec<MeanFieldState> = starts
        .par_iter()
        .map(|h0| integrate_to_end(model, h0, t_end, dt))
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = ends
        .iter()
        .map(|e| e.sup_distance(&fp.pi))
        .collect::<Result<_>>()?;
    let mut max_pairwise: f64 = 0.0;
    for (k, a) in ends.iter().enumerate() {
        for b in &ends[k + 1..] {
            max_pairwise = max_pairwise.max(a.sup_distance(b)?);
        }
    }
    Ok(AttractionReport {
        passed: distances.iter().all(|d| *d <= tol),
        tol,
        pi_residual: fp.residual,
        distances,
        max_pairwise,
        fixed_point: Some(fp),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    pub samples: usize,
    /// Largest gap between a central difference of `z_{1,L}` (over all `L`)
    /// and its closed-form rate.
    pub z1_identity_error: f64,
    pub z2_identity_error: f64,
    /// Samples at which `pi <=_C h(t)`.
    pub ordered_samples: usize,
    /// Largest `d/dt (z_{1,1} + z_2)` over the ordered samples.
    pub max_ordered_rate: f64,
}

/// Half-width of the central difference used to check the rate identities.
const FD_DELTA: f64 = 1e-4;

/// Follows the trajectory from `h0`, checking the `z` rate identities by
/// central differences and the sign of `d/dt (z_{1,1} + z_2)` whenever the
/// state dominates `pi`.
pub fn lyapunov_check(
    model: &PolicyModel,
    pi: &MeanFieldState,
    h0: &MeanFieldState,
    t_end: f64,
    samples: usize,
) -> Result<LyapunovReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let service = model.service();
    let b = model.buffer();
    let segment = t_end / samples as f64;
    let dt = model.max_step();
    let mut rk = Rk4::new(model);
    let mut h = h0.clone();
    let mut report = LyapunovReport {
        samples,
        z1_identity_error: 0.0,
        z2_identity_error: 0.0,
        ordered_samples: 0,
        max_ordered_rate: f64::NEG_INFINITY,
    };
    for _ in 0..samples {
        h = integrate_to_end(model, &h, segment, dt)?;
        let mut fwd = h.clone();
        rk.step(fwd.as_mut_slice(), FD_DELTA);
        let mut bwd = h.clone();
        rk.step(bwd.as_mut_slice(), -FD_DELTA);
        for level in 1..=b {
            let (f1, f2) = lyapunov_z(&fwd, service, level)?;
            let (b1, b2) = lyapunov_z(&bwd, service, level)?;
            let (r1, r2) = lyapunov_rates(model, &h, level)?;
            let fd1 = (f1 - b1) / (2.0 * FD_DELTA);
            report.z1_identity_error = report.z1_identity_error.max((fd1 - r1).abs());
            if level == 1 {
                let fd2 = (f2 - b2) / (2.0 * FD_DELTA);
                report.z2_identity_error = report.z2_identity_error.max((fd2 - r2).abs());
            }
        }
        if order_report(pi, &h, 1e-12)?.holds {
            let (r1, r2) = lyapunov_rates(model, &h, 1)?;
            report.ordered_samples += 1;
            report.max_ordered_rate = report.max_ordered_rate.max(r1 + r2);
        }
    }
    Ok(report)
}
