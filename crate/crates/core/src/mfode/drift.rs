use super::{Policy, PolicyModel};
use crate::dist::Coxian;
use crate::error::{Error, Result};
use crate::order::MeanFieldState;

/// Row-major view of `h` with the boundary conventions.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub h: &'a [f64],
    pub b: usize,
    pub n: usize,
}

impl View<'_> {
    #[inline(always)]
    pub fn at(&self, l: usize, i: usize) -> f64 {
        if l == 0 {
            return if i == 1 { 1.0 } else { 0.0 };
        }
        if l > self.b || i > self.n {
            return 0.0;
        }
        self.h[(l - 1) * self.n + (i - 1)]
    }
}

/// Adds the phase-change and completion terms to `out`.
pub(crate) fn add_service(nu: &[f64], advance: &[f64], v: View<'_>, out: &mut [f64]) {
    let (b, n) = (v.b, v.n);
    // tail[i-1] = sum_{j >= i} (h[l][j] - h[l][j+1]) nu_j for the current row;
    // below_first holds the same quantity at i = 1 for row l + 1.
    let mut tail = vec![0.0; n];
    let mut below_first = 0.0;
    for l in (1..=b).rev() {
        let mut acc = 0.0;
        for i in (1..=n).rev() {
            acc += (v.at(l, i) - v.at(l, i + 1)) * nu[i - 1];
            tail[i - 1] = acc;
        }
        let row = (l - 1) * n;
        out[row] -= tail[0] - below_first;
        for i in 2..=n {
            out[row + i - 1] += (v.at(l, i - 1) - v.at(l, i)) * advance[i - 2] - tail[i - 1];
        }
        below_first = tail[0];
    }
}

#[inline]
fn geometric_sum(a: f64, b: f64, d: u32) -> f64 {
    // sum_{j=0}^{d-1} a^j b^{d-1-j}
    let mut total = 0.0;
    let mut apow = 1.0;
    for j in 0..d {
        total += apow * b.powi((d - 1 - j) as i32);
        apow *= a;
    }
    total
}

pub(crate) fn add_jsq(lambda: f64, d: u32, v: View<'_>, out: &mut [f64]) {
    let (b, n) = (v.b, v.n);
    for l in 1..=b {
        let (above, here) = (v.at(l - 1, 1), v.at(l, 1));
        let row = (l - 1) * n;
        out[row] += lambda * (above.powi(d as i32) - here.powi(d as i32));
        if l > 1 {
            let rate = lambda * geometric_sum(above, here, d);
            for i in 2..=n {
                out[row + i - 1] += rate * (v.at(l - 1, i) - v.at(l, i));
            }
        }
    }
}

pub(crate) fn add_pullpush(lambda: f64, r: f64, v: View<'_>, out: &mut [f64]) {
    let (b, n) = (v.b, v.n);
    let pull = r * (1.0 - v.at(1, 1));
    for l in 1..=b {
        let row = (l - 1) * n;
        let transfer = if l == 1 {
            pull * v.at(2, 1)
        } else {
            -pull * (v.at(l, 1) - v.at(l + 1, 1))
        };
        out[row] += lambda * (v.at(l - 1, 1) - v.at(l, 1)) + transfer;
        if l > 1 {
            for i in 2..=n {
                out[row + i - 1] +=
                    lambda * (v.at(l - 1, i) - v.at(l, i)) - pull * (v.at(l, i) - v.at(l + 1, i));
            }
        }
    }
}

pub(crate) fn add_batchjsq(lambda: f64, k: u32, d: u32, v: View<'_>, out: &mut [f64]) {
    let (b, n) = (v.b, v.n);
    for l in 1..=b {
        let (above, here) = (v.at(l - 1, 1), v.at(l, 1));
        let row = (l - 1) * n;
        out[row] += lambda * (phi(above, k, d) - phi(here, k, d));
        if l > 1 {
            let rate = lambda * xi(here, above, k, d);
            for i in 2..=n {
                out[row + i - 1] += rate * (v.at(l - 1, i) - v.at(l, i));
            }
        }
    }
}

pub(crate) fn drift_into(model: &PolicyModel, h: &[f64], out: &mut [f64]) {
    let v = View {
        h,
        b: model.buffer,
        n: model.phases(),
    };
    out.iter_mut().for_each(|x| *x = 0.0);
    add_arrivals(model, v, out);
    add_service(&model.nu, &model.advance, v, out);
}

fn add_arrivals(model: &PolicyModel, v: View<'_>, out: &mut [f64]) {
    match model.policy {
        Policy::Jsq { d } => add_jsq(model.lambda, d, v, out),
        Policy::PullPush { r } => add_pullpush(model.lambda, r, v, out),
        Policy::BatchJsq { k, d } => add_batchjsq(model.lambda, k, d, v, out),
    }
}

fn check_dims(model: &PolicyModel, h: &MeanFieldState) -> Result<()> {
    if h.dims() != (model.buffer, model.phases()) {
        return Err(Error::DimensionMismatch(format!(
            "state has (B, n) = {:?}, model expects ({}, {})",
            h.dims(),
            model.buffer,
            model.phases()
        )));
    }
    Ok(())
}

fn wrap(h: &MeanFieldState, out: Vec<f64>) -> MeanFieldState {
    MeanFieldState::from_flat(h.buffer(), h.phases(), out).expect("same shape")
}

/// Service part of the drift (phase changes and completions).
pub fn service_drift(service: &Coxian, h: &MeanFieldState) -> Result<MeanFieldState> {
    if h.phases() != service.phases() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} phases, distribution {}",
            h.phases(),
            service.phases()
        )));
    }
    let nu = service.completion_rates();
    let advance: Vec<f64> = service
        .rates()
        .iter()
        .zip(service.continuations())
        .map(|(m, p)| m * p)
        .collect();
    let mut out = vec![0.0; h.as_slice().len()];
    add_service(
        &nu,
        &advance,
        View {
            h: h.as_slice(),
            b: h.buffer(),
            n: h.phases(),
        },
        &mut out,
    );
    Ok(wrap(h, out))
}

fn policy_mismatch(expected: &str, model: &PolicyModel) -> Error {
    Error::InvalidParameter(format!(
        "{expected} drift requested for policy {:?}",
        model.policy
    ))
}

pub fn arrival_drift_jsq(model: &PolicyModel, h: &MeanFieldState) -> Result<MeanFieldState> {
    check_dims(model, h)?;
    let Policy::Jsq { d } = model.policy else {
        return Err(policy_mismatch("JSQ", model));
    };
    let mut out = vec![0.0; h.as_slice().len()];
    add_jsq(
        model.lambda,
        d,
        View {
            h: h.as_slice(),
            b: h.buffer(),
            n: h.phases(),
        },
        &mut out,
    );
    Ok(wrap(h, out))
}

pub fn arrival_drift_pullpush(model: &PolicyModel, h: &MeanFieldState) -> Result<MeanFieldState> {
    check_dims(model, h)?;
    let Policy::PullPush { r } = model.policy else {
        return Err(policy_mismatch("pull/push", model));
    };
    let mut out = vec![0.0; h.as_slice().len()];
    add_pullpush(
        model.lambda,
        r,
        View {
            h: h.as_slice(),
            b: h.buffer(),
            n: h.phases(),
        },
        &mut out,
    );
    Ok(wrap(h, out))
}

pub fn arrival_drift_batchjsq(model: &PolicyModel, h: &MeanFieldState) -> Result<MeanFieldState> {
    check_dims(model, h)?;
    let Policy::BatchJsq { k, d } = model.policy else {
        return Err(policy_mismatch("batch JSQ", model));
    };
    let mut out = vec![0.0; h.as_slice().len()];
    add_batchjsq(
        model.lambda,
        k,
        d,
        View {
            h: h.as_slice(),
            b: h.buffer(),
            n: h.phases(),
        },
        &mut out,
    );
    Ok(wrap(h, out))
}

/// Arrival (and transfer) part of the drift for the model's policy.
pub fn arrival_drift(model: &PolicyModel, h: &MeanFieldState) -> Result<MeanFieldState> {
    check_dims(model, h)?;
    let mut out = vec![0.0; h.as_slice().len()];
    add_arrivals(
        model,
        View {
            h: h.as_slice(),
            b: h.buffer(),
            n: h.phases(),
        },
        &mut out,
    );
    Ok(wrap(h, out))
}

/// Full right-hand side of the ODE.
pub fn drift(model: &PolicyModel, h: &MeanFieldState) -> Result<MeanFieldState> {
    check_dims(model, h)?;
    let mut out = vec![0.0; h.as_slice().len()];
    drift_into(model, h.as_slice(), &mut out);
    Ok(wrap(h, out))
}

pub fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// `phi_K(x) = sum_{s<K} (K - s) C(d, s) x^{d-s} (1-x)^s`.
#[inline]
pub(crate) fn phi(x: f64, k: u32, d: u32) -> f64 {
    (0..k)
        .map(|s| {
            (k - s) as f64 * binomial(d, s) * x.powi((d - s) as i32) * (1.0 - x).powi(s as i32)
        })
        .sum()
}

/// Divided difference `(phi(x2) - phi(x1)) / (x2 - x1)` evaluated without
/// subtraction of nearby values: each term `x^m (1-x)^s` uses the product
/// rule for divided differences, which also gives `phi'(x)` at `x1 == x2`.
#[inline]
pub(crate) fn xi(x1: f64, x2: f64, k: u32, d: u32) -> f64 {
    let (y1, y2) = (1.0 - x1, 1.0 - x2);
    let mut total = 0.0;
    for s in 0..k {
        let m = d - s;
        let du = geometric_sum(x1, x2, m);
        let dv = -geometric_sum(y1, y2, s);
        let term = du * y2.powi(s as i32) + x1.powi(m as i32) * dv;
        total += (k - s) as f64 * binomial(d, s) * term;
    }
    total
}

fn check_phi_args(x: f64, k: u32, d: u32) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("x must lie in [0, 1], got {x}")));
    }
    if k == 0 || k > d {
        return Err(Error::Domain(format!(
            "need 1 <= K <= d, got K = {k}, d = {d}"
        )));
    }
    Ok(())
}

pub fn phi_k(x: f64, k: u32, d: u32) -> Result<f64> {
    check_phi_args(x, k, d)?;
    Ok(phi(x, k, d))
}

/// `phi_K'(x) = sum_{s<K} d C(d-1, s) x^{d-s-1} (1-x)^s`.
pub fn phi_k_prime(x: f64, k: u32, d: u32) -> Result<f64> {
    check_phi_args(x, k, d)?;
    Ok((0..k)
        .map(|s| {
            d as f64 * binomial(d - 1, s) * x.powi((d - s - 1) as i32) * (1.0 - x).powi(s as i32)
        })
        .sum())
}

/// `phi_K''(x) = d (d-1) C(d-2, K-1) x^{d-K-1} (1-x)^{K-1}` for `K < d`, zero for `K = d`.
pub fn phi_k_second(x: f64, k: u32, d: u32) -> Result<f64> {
    check_phi_args(x, k, d)?;
    if k == d {
        return Ok(0.0);
    }
    Ok((d * (d - 1)) as f64
        * binomial(d - 2, k - 1)
        * x.powi((d - k - 1) as i32)
        * (1.0 - x).powi((k - 1) as i32))
}

pub fn xi_k(x1: f64, x2: f64, k: u32, d: u32) -> Result<f64> {
    check_phi_args(x1, k, d)?;
    check_phi_args(x2, k, d)?;
    Ok(xi(x1, x2, k, d))
}
