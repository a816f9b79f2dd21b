use std::io::Write;

use super::drift::drift_into;
use super::PolicyModel;
use crate::error::{Error, Result};
use crate::order::{omega_violations, MeanFieldState, OMEGA_TOL};

/// Tolerance on state-space membership along trajectories.
pub const TRAJECTORY_TOL: f64 = 1e-8;

/// Classic fourth-order Runge-Kutta stepper with reusable scratch space.
pub struct Rk4<'a> {
    model: &'a PolicyModel,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> Rk4<'a> {
    pub fn new(model: &'a PolicyModel) -> Self {
        let len = model.buffer() * model.phases();
        Self {
            model,
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    /// Advances `h` in place by `dt`.
    pub fn step(&mut self, h: &mut [f64], dt: f64) {
        let m = self.model;
        drift_into(m, h, &mut self.k1);
        axpy(&mut self.tmp, h, 0.5 * dt, &self.k1);
        drift_into(m, &self.tmp, &mut self.k2);
        axpy(&mut self.tmp, h, 0.5 * dt, &self.k2);
        drift_into(m, &self.tmp, &mut self.k3);
        axpy(&mut self.tmp, h, dt, &self.k3);
        drift_into(m, &self.tmp, &mut self.k4);
        for j in 0..h.len() {
            h[j] += dt / 6.0 * (self.k1[j] + 2.0 * (self.k2[j] + self.k3[j]) + self.k4[j]);
        }
    }

    /// Drift at the start of the most recent step.
    pub fn last_drift(&self) -> &[f64] {
        &self.k1
    }
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, y: &[f64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// Sampled solution of the ODE.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MeanFieldState>,
}

impl Trajectory {
    pub fn last(&self) -> &MeanFieldState {
        self.states
            .last()
            .expect("trajectory has at least one sample")
    }

    /// CSV with a `t` column followed by the `h_l_i` columns.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = self
            .states
            .first()
            .map(|s| s.csv_header())
            .unwrap_or_default();
        writeln!(w, "t,{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = s.as_slice().iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_start(model: &PolicyModel, h0: &MeanFieldState) -> Result<()> {
    if h0.dims() != (model.buffer(), model.phases()) {
        return Err(Error::DimensionMismatch(format!(
            "initial state has (B, n) = {:?}, model expects ({}, {})",
            h0.dims(),
            model.buffer(),
            model.phases()
        )));
    }
    let bad = omega_violations(h0, OMEGA_TOL);
    if !bad.is_empty() {
        return Err(Error::NotInOmega(bad));
    }
    Ok(())
}

/// Integrates from `h0` over `[0, t_end]` with a fixed step no larger than
/// `dt`, recording the state every `sample_interval` time units (and at
/// both ends). The step is shrunk slightly so that it divides `t_end`.
pub fn integrate(
    model: &PolicyModel,
    h0: &MeanFieldState,
    t_end: f64,
    dt: f64,
    sample_interval: f64,
) -> Result<Trajectory> {
    check_start(model, h0)?;
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "end time must be nonnegative, got {t_end}"
        )));
    }
    let bound = model.max_step();
    if !(dt > 0.0 && dt <= bound * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "step {dt} must lie in (0, {bound:.6e}]"
        )));
    }
    if !(sample_interval > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sample interval must be positive, got {sample_interval}"
        )));
    }

    let steps = (t_end / dt).ceil() as usize;
    let h_step = if steps == 0 {
        0.0
    } else {
        t_end / steps as f64
    };
    let every = if steps == 0 {
        1
    } else {
        ((sample_interval / h_step).round() as usize).max(1)
    };

    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![h0.clone()],
    };
    let mut state = h0.clone();
    let mut rk = Rk4::new(model);
    for step in 1..=steps {
        rk.step(state.as_mut_slice(), h_step);
        state.clip_roundoff(OMEGA_TOL);
        let bad = omega_violations(&state, TRAJECTORY_TOL);
        let t = step as f64 * h_step;
        if !bad.is_empty() {
            return Err(Error::IntegrationDiverged {
                time: t,
                step,
                dt: h_step,
                violations: bad,
            });
        }
        if step % every == 0 || step == steps {
            traj.times.push(t);
            traj.states.push(state.clone());
        }
    }
    Ok(traj)
}

/// Endpoint only, without storing samples.
pub(crate) fn integrate_to_end(
    model: &PolicyModel,
    h0: &MeanFieldState,
    t_end: f64,
    dt: f64,
) -> Result<MeanFieldState> {
    integrate(model, h0, t_end, dt, f64::INFINITY).map(|mut t| t.states.pop().expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Coxian;

    #[test]
    fn zero_horizon() {
        let m = PolicyModel::jsq(2, 0.9, 5, Coxian::exponential(1.0).unwrap()).unwrap();
        let t = integrate(&m, &MeanFieldState::zeros(5, 1), 0.0, 0.01, 1.0).unwrap();
        assert_eq!(t.times, vec![0.0]);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,h_1_1,h_2_1"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn rejects_large_step_and_bad_start() {
        let m = PolicyModel::jsq(2, 0.9, 5, Coxian::exponential(1.0).unwrap()).unwrap();
        assert!(integrate(&m, &MeanFieldState::zeros(5, 1), 1.0, 1.0, 1.0).is_err());
        let mut bad = MeanFieldState::zeros(5, 1);
        bad.set(2, 1, 0.5);
        assert!(matches!(
            integrate(&m, &bad, 1.0, 0.01, 1.0),
            Err(Error::NotInOmega(_))
        ));
    }

    #[test]
    fn sampling_grid() {
        let m = PolicyModel::jsq(2, 0.5, 5, Coxian::exponential(1.0).unwrap()).unwrap();
        let t = integrate(&m, &MeanFieldState::zeros(5, 1), 2.0, 0.02, 0.5).unwrap();
        assert_eq!(t.times.len(), 5);
        assert!((t.times[4] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_routing_single_server_law() {
        // d = 1, exponential service: h_l(t) solves the M/M/1/B forward equations.
        let m = PolicyModel::jsq(1, 0.5, 40, Coxian::exponential(1.0).unwrap()).unwrap();
        let end = integrate_to_end(&m, &MeanFieldState::zeros(40, 1), 400.0, 0.05).unwrap();
        for l in 1..=10 {
            assert!((end.get(l, 1) - 0.5f64.powi(l as i32)).abs() < 1e-8);
        }
    }
}
