use thiserror::Error;

use crate::order::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rates must be distinct (rate {first} vs rate {second})")]
    DuplicateRates { first: f64, second: f64 },

    #[error("moment target infeasible: {0}")]
    InfeasibleMoments(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("hazard unreliable at t = {t}: survival {survival:e} below 1e-14")]
    UnreliableHazard { t: f64, survival: f64 },

    #[error("state not in the state space: {}", format_violations(.0))]
    NotInOmega(Vec<Violation>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-admissible level sequence: {0}")]
    InvalidSequence(String),

    #[error(
        "trajectory left the state space at t = {time} (step {step}, dt = {dt}): {}; reduce dt",
        format_violations(.violations)
    )]
    IntegrationDiverged {
        time: f64,
        step: usize,
        dt: f64,
        violations: Vec<Violation>,
    },

    #[error("fixed point solver did not converge (last residual {:e})", .history.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { history: Vec<f64> },

    #[error("initial states are not ordered: {0}")]
    NotOrdered(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    const SHOWN: usize = 4;
    let mut parts: Vec<String> = v.iter().take(SHOWN).map(|x| x.to_string()).collect();
    if v.len() > SHOWN {
        parts.push(format!("... {} more", v.len() - SHOWN));
    }
    parts.join("; ")
}
