use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::drift::{drift_into, sup_norm};
use super::integrate::Rk4;
use super::PolicyModel;
use crate::dist::Coxian;
use crate::error::{Error, Result};
use crate::order::{omega_violations, MeanFieldState, OMEGA_TOL};

/// Drift level at which integration hands over to Newton.
const HANDOVER_DRIFT: f64 = 1e-8;
/// Longest relaxation run before Newton is attempted anyway.
const MAX_RELAXATION_TIME: f64 = 2e4;
pub const FIXED_POINT_TOL: f64 = 1e-12;
const JACOBIAN_STEP: f64 = 1e-7;
const MAX_NEWTON: usize = 50;
const MAX_HALVINGS: usize = 40;
/// Tail mass below which an automatically sized buffer is accepted.
pub const TAIL_MASS_TOL: f64 = 1e-10;
const MAX_AUTO_BUFFER: usize = 1 << 12;

#[derive(Debug, Clone, Serialize)]
pub struct SolverDiagnostics {
    /// Time integrated before Newton took over.
    pub relaxation_time: f64,
    /// Drift sup-norm when Newton started.
    pub handover_residual: f64,
    pub newton_iterations: usize,
    /// Residual after each Newton step, starting with the handover residual.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointResult {
    pub pi: MeanFieldState,
    /// Sup-norm of the drift at `pi`.
    pub residual: f64,
    pub iterations: SolverDiagnostics,
}

/// Relaxes from the empty state, then polishes with Newton.
pub fn fixed_point(model: &PolicyModel) -> Result<FixedPointResult> {
    fixed_point_from(
        model,
        &MeanFieldState::zeros(model.buffer(), model.phases()),
    )
}

/// Same as [`fixed_point`] but starting the relaxation from `start`.
pub fn fixed_point_from(model: &PolicyModel, start: &MeanFieldState) -> Result<FixedPointResult> {
    if start.dims() != (model.buffer(), model.phases()) {
        return Err(Error::DimensionMismatch(format!(
            "start has (B, n) = {:?}, model expects ({}, {})",
            start.dims(),
            model.buffer(),
            model.phases()
        )));
    }
    if !model.is_stable() {
        warn!(
            "offered load {} is not below 1; the fixed point carries mass up to the buffer",
            model.offered_load()
        );
    }
    let mut h = start.as_slice().to_vec();
    let (relaxation_time, handover) = relax(model, &mut h);
    debug!("relaxed for {relaxation_time} time units, drift {handover:e}");
    let history = newton(model, &mut h, handover)?;
    let mut pi = MeanFieldState::from_flat(model.buffer(), model.phases(), h)?;
    pi.clip_roundoff(OMEGA_TOL);
    let bad = omega_violations(&pi, OMEGA_TOL);
    if !bad.is_empty() {
        return Err(Error::NotInOmega(bad));
    }
    let mut f = vec![0.0; pi.as_slice().len()];
    drift_into(model, pi.as_slice(), &mut f);
    let residual = sup_norm(&f);
    Ok(FixedPointResult {
        pi,
        residual,
        iterations: SolverDiagnostics {
            relaxation_time,
            handover_residual: handover,
            newton_iterations: history.len() - 1,
            residual_history: history,
        },
    })
}

fn relax(model: &PolicyModel, h: &mut [f64]) -> (f64, f64) {
    let dt = model.max_step();
    let mut rk = Rk4::new(model);
    let mut f = vec![0.0; h.len()];
    drift_into(model, h, &mut f);
    let mut residual = sup_norm(&f);
    let mut t = 0.0;
    while residual >= HANDOVER_DRIFT && t < MAX_RELAXATION_TIME {
        rk.step(h, dt);
        for v in h.iter_mut() {
            if *v < 0.0 && *v > -OMEGA_TOL {
                *v = 0.0;
            }
        }
        t += dt;
        residual = sup_norm(rk.last_drift());
    }
    drift_into(model, h, &mut f);
    (t, sup_norm(&f))
}

fn jacobian(model: &PolicyModel, h: &[f64], f0: &[f64]) -> DMatrix<f64> {
    let len = h.len();
    let mut jac = DMatrix::zeros(len, len);
    let mut x = h.to_vec();
    let mut f = vec![0.0; len];
    for col in 0..len {
        x[col] = h[col] + JACOBIAN_STEP;
        drift_into(model, &x, &mut f);
        for row in 0..len {
            jac[(row, col)] = (f[row] - f0[row]) / JACOBIAN_STEP;
        }
        x[col] = h[col];
    }
    jac
}

fn newton(model: &PolicyModel, h: &mut Vec<f64>, start_residual: f64) -> Result<Vec<f64>> {
    let len = h.len();
    let mut f = vec![0.0; len];
    let mut trial_f = vec![0.0; len];
    drift_into(model, h, &mut f);
    let mut residual = start_residual;
    let mut history = vec![residual];
    for _ in 0..MAX_NEWTON {
        if residual <= FIXED_POINT_TOL {
            return Ok(history);
        }
        let jac = jacobian(model, h, &f);
        let Some(step) = jac.lu().solve(&DVector::from_column_slice(&f)) else {
            return Err(Error::NoConvergence { history });
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = h
                .iter()
                .zip(step.iter())
                .map(|(x, s)| x - alpha * s)
                .collect();
            drift_into(model, &trial, &mut trial_f);
            let r = sup_norm(&trial_f);
            if r < residual {
                *h = trial;
                std::mem::swap(&mut f, &mut trial_f);
                residual = r;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        history.push(residual);
        if !accepted {
            break;
        }
    }
    if residual <= FIXED_POINT_TOL {
        Ok(history)
    } else {
        Err(Error::NoConvergence { history })
    }
}

/// Doubles the buffer, starting from the model's, until the fixed point puts
/// less than [`TAIL_MASS_TOL`] on the last level.
pub fn fixed_point_auto_buffer(model: &PolicyModel) -> Result<(PolicyModel, FixedPointResult)> {
    let mut current = model.clone();
    loop {
        let result = fixed_point(&current)?;
        let tail = result.pi.get(current.buffer(), 1);
        if tail < TAIL_MASS_TOL {
            return Ok((current, result));
        }
        let next = current.buffer() * 2;
        if next > MAX_AUTO_BUFFER {
            return Err(Error::InvalidParameter(format!(
                "tail mass {tail:e} still above {TAIL_MASS_TOL:e} at B = {}",
                current.buffer()
            )));
        }
        debug!("tail mass {tail:e} at B = {}, doubling", current.buffer());
        current = current.with_buffer(next)?;
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Prop5Report {
    /// `max_i |pi_{1,i} - pi_{1,1} sum_{j>=i} beta_j|`.
    pub structure_residual: f64,
    /// Sup-norm of `beta (S + s alpha)`, with `s = -S 1` the exit vector.
    pub beta_residual: f64,
}

/// Checks the first-row structure of a fixed point: with
/// `beta_j = prod_{s<j} p_s / mu_j` (for the unit-mean rescaling of `service`),
/// `pi_{1,i} = pi_{1,1} sum_{j>=i} beta_j`.
pub fn check_prop5(pi: &MeanFieldState, service: &Coxian) -> Result<Prop5Report> {
    if pi.phases() != service.phases() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} phases, distribution {}",
            pi.phases(),
            service.phases()
        )));
    }
    let c = service.normalize_to_unit_mean();
    let (mu, p) = (c.rates(), c.continuations());
    let n = c.phases();
    let mut beta = Vec::with_capacity(n);
    let mut reach = 1.0;
    for j in 0..n {
        beta.push(reach / mu[j]);
        reach *= p[j];
    }

    let mut structure_residual: f64 = 0.0;
    let mut tail = 0.0;
    for i in (1..=n).rev() {
        tail += beta[i - 1];
        structure_residual = structure_residual.max((pi.get(1, i) - pi.get(1, 1) * tail).abs());
    }

    let nu = c.completion_rates();
    let exit: f64 = beta.iter().zip(&nu).map(|(b, v)| b * v).sum();
    let mut beta_residual = (exit - beta[0] * mu[0]).abs();
    for k in 1..n {
        beta_residual =
            beta_residual.max((beta[k - 1] * p[k - 1] * mu[k - 1] - beta[k] * mu[k]).abs());
    }
    Ok(Prop5Report {
        structure_residual,
        beta_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::order::in_omega;

    fn hyper() -> Coxian {
        Coxian::new(vec![2.0, 2.0 / 3.0], vec![1.0 / 3.0]).unwrap()
    }

    #[test]
    fn exponential_jsq2_closed_form() {
        let m = PolicyModel::jsq(2, 0.9, 30, Coxian::exponential(1.0).unwrap()).unwrap();
        let r = fixed_point(&m).unwrap();
        assert!(r.residual <= FIXED_POINT_TOL);
        for l in 1..=10 {
            let expected = 0.9f64.powi((1 << l) - 1);
            assert!((r.pi.get(l, 1) - expected).abs() < 1e-9, "level {l}");
        }
    }

    #[test]
    fn pullpush_without_probes_is_geometric() {
        let m = PolicyModel::pull_push(0.0, 0.5, 60, Coxian::exponential(1.0).unwrap()).unwrap();
        let r = fixed_point(&m).unwrap();
        for l in 1..=12 {
            assert!((r.pi.get(l, 1) - 0.5f64.powi(l as i32)).abs() < 1e-10);
        }
    }

    #[test]
    fn structure_on_solver_output() {
        for m in [
            PolicyModel::jsq(2, 0.9, 25, hyper()).unwrap(),
            PolicyModel::pull_push(1.0, 0.5, 25, hyper()).unwrap(),
            PolicyModel::batch_jsq(2, 3, 0.3, 25, hyper()).unwrap(),
        ] {
            let r = fixed_point(&m).unwrap();
            assert!(in_omega(&r.pi, OMEGA_TOL));
            let rep = check_prop5(&r.pi, m.service()).unwrap();
            assert!(rep.structure_residual <= 1e-10, "{rep:?}");
            assert!(rep.beta_residual <= 1e-12);
        }
    }

    #[test]
    fn structure_exponential_trivial() {
        let rep = check_prop5(
            &MeanFieldState::full(3, 1),
            &Coxian::exponential(1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(rep.structure_residual, 0.0);
        assert_eq!(rep.beta_residual, 0.0);
    }

    #[test]
    fn auto_buffer_grows() {
        let m = PolicyModel::jsq(1, 0.5, 4, Coxian::exponential(1.0).unwrap()).unwrap();
        let (grown, r) = fixed_point_auto_buffer(&m).unwrap();
        assert_eq!(grown.buffer(), 64);
        assert!(r.pi.get(64, 1) < TAIL_MASS_TOL);
    }
}
