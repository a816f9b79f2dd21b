//! Mean-field state space and the ordering used for monotonicity.
//!
//! A state holds `h[l][i]`, the fraction of servers with at least `l` jobs
//! whose job in service is in phase `i` or later, for `l = 1..=B` and
//! `i = 1..=n`. Boundary conventions: `h[0][1] = 1`, `h[l][n+1] = 0` and
//! `h[B+1][i] = 0`.
//!
//! The order `h <=_C g` requires componentwise `h <= g` and, for every
//! nonincreasing level sequence `l_1 >= ... >= l_n` with `l_1 > l_n`,
//! `G(h) <= G(g)` where `G(h) = sum_i (h[l_i][i] - h[l_i][i+1])` is the
//! fraction of servers whose (length, phase) lies in the staircase set
//! `{(l, i) : l >= l_i}`. Levels range over `1..=B+1`; level `B+1` is the
//! empty row, so sequences that skip the first phases entirely are covered.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating states handed to the occupancy transform.
pub const OMEGA_TOL: f64 = 1e-12;

/// Default tolerance for order checks on integrated trajectories.
pub const ORDER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub struct MeanFieldState {
    buffer: usize,
    phases: usize,
    h: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    #[serde(rename = "B")]
    buffer: usize,
    n: usize,
    h: Vec<Vec<f64>>,
}

impl TryFrom<StateRepr> for MeanFieldState {
    type Error = Error;
    fn try_from(r: StateRepr) -> Result<Self> {
        if r.h.len() != r.buffer {
            return Err(Error::DimensionMismatch(format!(
                "B = {} but {} rows",
                r.buffer,
                r.h.len()
            )));
        }
        MeanFieldState::from_rows(r.n, &r.h)
    }
}

impl From<MeanFieldState> for StateRepr {
    fn from(s: MeanFieldState) -> Self {
        StateRepr {
            buffer: s.buffer,
            n: s.phases,
            h: s.h.chunks(s.phases).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl MeanFieldState {
    /// The empty system.
    pub fn zeros(buffer: usize, phases: usize) -> Self {
        assert!(
            buffer >= 1 && phases >= 1,
            "buffer and phase count must be positive"
        );
        Self {
            buffer,
            phases,
            h: vec![0.0; buffer * phases],
        }
    }

    /// Every server full and in its last phase; the largest state for `<=_C`.
    pub fn full(buffer: usize, phases: usize) -> Self {
        Self {
            buffer,
            phases,
            h: vec![1.0; buffer * phases],
        }
    }

    /// Wraps a row-major `(l, i)` array without validating Omega membership.
    pub fn from_flat(buffer: usize, phases: usize, h: Vec<f64>) -> Result<Self> {
        if buffer == 0 || phases == 0 {
            return Err(Error::DimensionMismatch(
                "buffer and phase count must be positive".into(),
            ));
        }
        if h.len() != buffer * phases {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for B = {buffer}, n = {phases}, got {}",
                buffer * phases,
                h.len()
            )));
        }
        Ok(Self { buffer, phases, h })
    }

    pub fn from_rows(phases: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != phases) {
            return Err(Error::DimensionMismatch(format!(
                "row of length {} for n = {phases}",
                r.len()
            )));
        }
        Self::from_flat(rows.len(), phases, rows.concat())
    }

    pub fn buffer(&self) -> usize {
        self.buffer
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.buffer, self.phases)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.h
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.h
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.h
    }

    #[inline]
    pub fn index(&self, level: usize, phase: usize) -> usize {
        (level - 1) * self.phases + (phase - 1)
    }

    /// `h[level][phase]` with the boundary conventions applied (1-based).
    #[inline]
    pub fn get(&self, level: usize, phase: usize) -> f64 {
        if level == 0 {
            return if phase == 1 { 1.0 } else { 0.0 };
        }
        if level > self.buffer || phase > self.phases {
            return 0.0;
        }
        self.h[(level - 1) * self.phases + (phase - 1)]
    }

    #[inline]
    pub fn set(&mut self, level: usize, phase: usize, value: f64) {
        let k = self.index(level, phase);
        self.h[k] = value;
    }

    /// Fraction of servers with exactly `level` jobs in phase `phase`.
    #[inline]
    pub fn exact(&self, level: usize, phase: usize) -> f64 {
        (self.get(level, phase) - self.get(level, phase + 1))
            - (self.get(level + 1, phase) - self.get(level + 1, phase + 1))
    }

    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .h
            .iter()
            .zip(&other.h)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "(B, n) = {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Replaces entries in `(-floor, 0)` by 0.
    pub fn clip_roundoff(&mut self, floor: f64) {
        for v in &mut self.h {
            if *v < 0.0 && *v > -floor {
                *v = 0.0;
            }
        }
    }

    pub fn csv_header(&self) -> Vec<String> {
        (1..=self.buffer)
            .flat_map(|l| (1..=self.phases).map(move |i| format!("h_{l}_{i}")))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Bounds,
    PhaseMonotonicity,
    LevelMonotonicity,
    Supermodularity,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::Bounds => "bounds",
            ConstraintKind::PhaseMonotonicity => "phase monotonicity",
            ConstraintKind::LevelMonotonicity => "level monotonicity",
            ConstraintKind::Supermodularity => "supermodularity",
        })
    }
}

/// One violated inequality of the state space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ConstraintKind,
    pub level: usize,
    pub phase: usize,
    /// How far the inequality is violated.
    pub excess: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at ({},{}) by {:.3e}",
            self.kind, self.level, self.phase, self.excess
        )
    }
}

/// Checks all four inequality families of the finite-buffer state space.
pub fn omega_violations(h: &MeanFieldState, tol: f64) -> Vec<Violation> {
    let (b, n) = h.dims();
    let mut out = Vec::new();
    let mut push = |kind, level, phase, excess: f64| {
        if excess > tol || excess.is_nan() {
            out.push(Violation {
                kind,
                level,
                phase,
                excess,
            });
        }
    };
    for l in 1..=b {
        for i in 1..=n {
            let v = h.get(l, i);
            push(ConstraintKind::Bounds, l, i, (-v).max(v - 1.0));
            if i < n {
                push(ConstraintKind::PhaseMonotonicity, l, i, h.get(l, i + 1) - v);
            }
            if l < b {
                push(ConstraintKind::LevelMonotonicity, l, i, h.get(l + 1, i) - v);
            }
            if i < n && l < b {
                push(ConstraintKind::Supermodularity, l, i, -h.exact(l, i));
            }
        }
    }
    out
}

pub fn in_omega(h: &MeanFieldState, tol: f64) -> bool {
    omega_violations(h, tol).is_empty()
}

/// Idle fraction plus exact-length/phase fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyState {
    pub buffer: usize,
    pub phases: usize,
    pub idle: f64,
    /// Row-major `x[l][i]`, `l = 1..=B`, `i = 1..=n`.
    pub x: Vec<f64>,
}

impl OccupancyState {
    pub fn get(&self, level: usize, phase: usize) -> f64 {
        self.x[(level - 1) * self.phases + (phase - 1)]
    }

    pub fn total(&self) -> f64 {
        self.idle + self.x.iter().sum::<f64>()
    }
}

pub fn to_occupancy(h: &MeanFieldState) -> Result<OccupancyState> {
    let violations = omega_violations(h, OMEGA_TOL);
    if !violations.is_empty() {
        return Err(Error::NotInOmega(violations));
    }
    let (b, n) = h.dims();
    let mut x = Vec::with_capacity(b * n);
    for l in 1..=b {
        for i in 1..=n {
            x.push(h.exact(l, i).max(0.0));
        }
    }
    Ok(OccupancyState {
        buffer: b,
        phases: n,
        idle: (1.0 - h.get(1, 1)).max(0.0),
        x,
    })
}

/// Cumulative double tail sums of the occupancy fractions.
pub fn from_occupancy(x: &OccupancyState) -> Result<MeanFieldState> {
    let (b, n) = (x.buffer, x.phases);
    if b == 0 || n == 0 || x.x.len() != b * n {
        return Err(Error::DimensionMismatch(format!(
            "occupancy of length {} for B = {b}, n = {n}",
            x.x.len()
        )));
    }
    if let Some(v) = std::iter::once(&x.idle).chain(&x.x).find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "occupancy fractions must be nonnegative, got {v}"
        )));
    }
    let total = x.total();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "occupancy fractions must sum to 1, got {total}"
        )));
    }
    let mut h = MeanFieldState::zeros(b, n);
    for l in (1..=b).rev() {
        let mut row_tail = 0.0;
        for i in (1..=n).rev() {
            row_tail += x.get(l, i);
            let v = (row_tail + h.get(l + 1, i)).min(1.0);
            h.set(l, i, v);
        }
    }
    Ok(h)
}

/// `G(h)` for a nonincreasing level sequence with `l_1 > l_n` (1-based levels
/// in `1..=B+1`).
pub fn g_value(h: &MeanFieldState, sequence: &[usize]) -> Result<f64> {
    let (b, n) = h.dims();
    if sequence.len() != n {
        return Err(Error::InvalidSequence(format!(
            "length {} for n = {n} phases",
            sequence.len()
        )));
    }
    if sequence.iter().any(|&l| l == 0 || l > b + 1) {
        return Err(Error::InvalidSequence(format!(
            "levels must lie in 1..={}",
            b + 1
        )));
    }
    if sequence.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidSequence(
            "levels must be nonincreasing".into(),
        ));
    }
    if sequence[0] == sequence[n - 1] {
        return Err(Error::InvalidSequence(
            "first level must exceed the last".into(),
        ));
    }
    Ok(staircase_mass(h, sequence))
}

fn staircase_mass(h: &MeanFieldState, sequence: &[usize]) -> f64 {
    sequence
        .iter()
        .enumerate()
        .map(|(k, &l)| h.get(l, k + 1) - h.get(l, k + 2))
        .sum()
}

/// Detailed result of the `<=_C` comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub holds: bool,
    /// `min (g - h)` over all entries.
    pub componentwise_gap: f64,
    /// `min (G(g) - G(h))` over admissible sequences; `+inf` for one phase.
    pub sequence_gap: f64,
    /// A sequence attaining `sequence_gap`.
    pub worst_sequence: Option<Vec<usize>>,
}

/// Minimizes `sum_i d_i(l_i)` over admissible sequences by dynamic programming.
///
/// `d` is indexed `[phase][level - 1]` for levels `1..=L`. Two tables per
/// phase: sequences that are still constant, and sequences that already
/// dropped at least once. Suffix minima keep each phase `O(L)`.
pub(crate) fn min_staircase(d: &[Vec<f64>]) -> (f64, Option<Vec<usize>>) {
    let n = d.len();
    if n < 2 {
        return (f64::INFINITY, None);
    }
    let levels = d[0].len();
    // Back-pointers: for phase k >= 1 and level index j, where the
    // "dropped" entry came from: (previous level index, previous table).
    let mut back: Vec<Vec<(usize, bool)>> = vec![vec![(0, false); levels]; n];
    let mut constant: Vec<f64> = d[0].clone();
    let mut dropped: Vec<f64> = vec![f64::INFINITY; levels];

    for k in 1..n {
        // Suffix minima over levels >= j of the dropped table and over
        // levels > j of the constant table.
        let mut next_dropped = vec![f64::INFINITY; levels];
        let mut best_dropped = (f64::INFINITY, 0usize);
        let mut best_constant_above = (f64::INFINITY, 0usize);
        for j in (0..levels).rev() {
            if dropped[j] < best_dropped.0 {
                best_dropped = (dropped[j], j);
            }
            let (value, from) = if best_dropped.0 <= best_constant_above.0 {
                (best_dropped.0, (best_dropped.1, true))
            } else {
                (best_constant_above.0, (best_constant_above.1, false))
            };
            next_dropped[j] = d[k][j] + value;
            back[k][j] = from;
            if constant[j] < best_constant_above.0 {
                best_constant_above = (constant[j], j);
            }
        }
        for j in 0..levels {
            constant[j] += d[k][j];
        }
        dropped = next_dropped;
    }

    let (mut j, best) = dropped
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one level");
    if !best.is_finite() {
        return (best, None);
    }
    let mut seq = vec![0usize; n];
    let mut in_dropped = true;
    for k in (0..n).rev() {
        seq[k] = j + 1;
        if k == 0 {
            break;
        }
        if in_dropped {
            let (pj, pd) = back[k][j];
            j = pj;
            in_dropped = pd;
        }
        // Once in the constant table the level stays fixed.
    }
    (best, Some(seq))
}

/// Full `<=_C` comparison with diagnostics.
pub fn order_report(h: &MeanFieldState, other: &MeanFieldState, tol: f64) -> Result<OrderReport> {
    h.same_shape(other)?;
    let (b, n) = h.dims();
    let componentwise_gap = other
        .as_slice()
        .iter()
        .zip(h.as_slice())
        .map(|(g, x)| g - x)
        .fold(f64::INFINITY, f64::min);
    let d: Vec<Vec<f64>> = (1..=n)
        .map(|i| {
            (1..=b + 1)
                .map(|l| (other.get(l, i) - other.get(l, i + 1)) - (h.get(l, i) - h.get(l, i + 1)))
                .collect()
        })
        .collect();
    let (sequence_gap, worst_sequence) = min_staircase(&d);
    Ok(OrderReport {
        holds: componentwise_gap >= -tol && sequence_gap >= -tol,
        componentwise_gap,
        sequence_gap,
        worst_sequence,
    })
}

/// `h <=_C other` within `tol`.
pub fn leq_c(h: &MeanFieldState, other: &MeanFieldState, tol: f64) -> Result<bool> {
    Ok(order_report(h, other, tol)?.holds)
}

/// Upper bound used to sandwich an arbitrary state and a fixed point:
/// every phase of level `l` is set to `max(h[l][1], pi[l][1])`.
pub fn upper_sandwich(h: &MeanFieldState, pi: &MeanFieldState) -> Result<MeanFieldState> {
    h.same_shape(pi)?;
    let (b, n) = h.dims();
    let mut out = MeanFieldState::zeros(b, n);
    for l in 1..=b {
        let top = h.get(l, 1).max(pi.get(l, 1));
        for i in 1..=n {
            out.set(l, i, top);
        }
    }
    Ok(out)
}

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

/// Random state from a uniform (flat Dirichlet) occupancy vector.
pub fn random_state_with<R: Rng + ?Sized>(
    rng: &mut R,
    buffer: usize,
    phases: usize,
) -> MeanFieldState {
    let idle = exp1(rng);
    let x: Vec<f64> = (0..buffer * phases).map(|_| exp1(rng)).collect();
    let total = idle + x.iter().sum::<f64>();
    let occ = OccupancyState {
        buffer,
        phases,
        idle: idle / total,
        x: x.into_iter().map(|v| v / total).collect(),
    };
    from_occupancy(&occ).expect("normalized occupancy")
}

pub fn random_state(buffer: usize, phases: usize, seed: u64) -> MeanFieldState {
    random_state_with(&mut ChaCha8Rng::seed_from_u64(seed), buffer, phases)
}

/// Random state `g` with `h <=_C g`.
///
/// Each (length, phase) cell, idle included, sends a random fraction (at most
/// `spread`) of its mass to a uniformly chosen cell that is at least as long
/// and at least as far along in service. The result dominates `h` on every
/// staircase set, which is exactly the `<=_C` relation.
pub fn random_dominating<R: Rng + ?Sized>(
    rng: &mut R,
    h: &MeanFieldState,
    spread: f64,
) -> Result<MeanFieldState> {
    let occ = to_occupancy(h)?;
    let (b, n) = h.dims();
    let mut next = occ.clone();
    let idx = |l: usize, i: usize| (l - 1) * n + (i - 1);
    let mut moves = Vec::new();
    moves.push((0usize, 1usize, occ.idle));
    for l in 1..=b {
        for i in 1..=n {
            moves.push((l, i, occ.get(l, i)));
        }
    }
    for (l, i, mass) in moves {
        if mass <= 0.0 {
            continue;
        }
        let amount = mass * rng.random::<f64>() * spread;
        let tl = rng.random_range(l.max(1)..=b);
        let ti = rng.random_range(i..=n);
        if (tl, ti) == (l, i) {
            continue;
        }
        if l == 0 {
            next.idle -= amount;
        } else {
            next.x[idx(l, i)] -= amount;
        }
        next.x[idx(tl, ti)] += amount;
    }
    next.idle = next.idle.max(0.0);
    for v in &mut next.x {
        *v = v.max(0.0);
    }
    // Restore exact normalization lost to rounding.
    let total = next.total();
    next.idle += 1.0 - total;
    if next.idle < 0.0 {
        next.idle = 0.0;
        let s: f64 = next.x.iter().sum();
        next.x.iter_mut().for_each(|v| *v /= s);
    }
    from_occupancy(&next)
}

/// Random state `g` with `g <=_C h`, moving mass toward shorter queues and
/// earlier phases (the idle state absorbs moves to length 0).
pub fn random_dominated<R: Rng + ?Sized>(
    rng: &mut R,
    h: &MeanFieldState,
    spread: f64,
) -> Result<MeanFieldState> {
    let occ = to_occupancy(h)?;
    let (b, n) = h.dims();
    let mut next = occ.clone();
    let idx = |l: usize, i: usize| (l - 1) * n + (i - 1);
    for l in 1..=b {
        for i in 1..=n {
            let mass = occ.get(l, i);
            if mass <= 0.0 {
                continue;
            }
            let amount = mass * rng.random::<f64>() * spread;
            let tl = rng.random_range(0..=l);
            next.x[idx(l, i)] -= amount;
            if tl == 0 {
                next.idle += amount;
            } else {
                let ti = rng.random_range(1..=i);
                next.x[idx(tl, ti)] += amount;
            }
        }
    }
    for v in &mut next.x {
        *v = v.max(0.0);
    }
    let total = next.total();
    next.idle = (next.idle + 1.0 - total).max(0.0);
    let total = next.total();
    if (total - 1.0).abs() > 1e-13 {
        next.idle /= total;
        next.x.iter_mut().for_each(|v| *v /= total);
    }
    from_occupancy(&next)
}
