//! Finite-N stochastic simulation of the server cluster.
//!
//! Event-driven (Gillespie) simulation of `N` FCFS servers with Coxian job
//! sizes under the same policies as the mean-field model. Time averages of the
//! tail fractions estimate the stationary `h`, which should approach the
//! mean-field fixed point as `N` grows.

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::mfode::{Policy, PolicyModel};
use crate::order::MeanFieldState;

/// Confidence level of the reported half-widths.
pub const CONFIDENCE: f64 = 0.95;

/// Simulation run parameters. `warmup` defaults to [`default_warmup`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(rename = "N")]
    pub servers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    /// End of the run; statistics cover `[warmup, horizon]`.
    pub horizon: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub model: PolicyModel,
}

fn default_replications() -> usize {
    1
}

/// `max(100, 20 / (1 - load))`, with the load clamped below 1.
pub fn default_warmup(model: &PolicyModel) -> f64 {
    let slack = (1.0 - model.offered_load()).max(0.05);
    (20.0 / slack).max(100.0)
}

impl SimConfig {
    pub fn new(
        model: PolicyModel,
        servers: usize,
        seed: u64,
        horizon: f64,
        replications: usize,
    ) -> Self {
        Self {
            servers,
            seed,
            warmup: None,
            horizon,
            replications,
            model,
        }
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = Some(warmup);
        self
    }

    pub fn effective_warmup(&self) -> f64 {
        self.warmup.unwrap_or_else(|| default_warmup(&self.model))
    }

    fn validate(&self) -> Result<()> {
        let warmup = self.effective_warmup();
        if self.servers == 0 {
            return Err(Error::InvalidParameter("need at least one server".into()));
        }
        if !(warmup >= 0.0 && self.horizon > warmup && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need horizon > warmup >= 0, got horizon {} and warmup {warmup}",
                self.horizon
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter(
                "need at least one replication".into(),
            ));
        }
        let needed = match self.model.policy() {
            Policy::Jsq { d } | Policy::BatchJsq { d, .. } => d as usize,
            Policy::PullPush { .. } => 1,
        };
        if self.servers < needed {
            return Err(Error::InvalidParameter(format!(
                "sampling {needed} distinct servers needs N >= {needed}, got {}",
                self.servers
            )));
        }
        Ok(())
    }
}

/// Indexable set with O(1) insert and removal.
#[derive(Debug, Clone, Default)]
struct Pool {
    items: Vec<usize>,
}

impl Pool {
    fn insert(&mut self, s: usize, pos: &mut [usize]) {
        pos[s] = self.items.len();
        self.items.push(s);
    }

    fn remove(&mut self, s: usize, pos: &mut [usize]) {
        let at = pos[s];
        let last = self.items.pop().expect("nonempty pool");
        if last != s {
            self.items[at] = last;
            pos[last] = at;
        }
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn pick<R: Rng>(&self, rng: &mut R) -> usize {
        self.items[rng.random_range(0..self.items.len())]
    }
}

/// Queue lengths and in-service phases of every server.
#[derive(Debug, Clone)]
pub struct ClusterState {
    buffer: usize,
    phases: usize,
    length: Vec<usize>,
    /// 1-based phase of the job in service; meaningless when idle.
    phase: Vec<usize>,
    idle: Pool,
    busy: Vec<Pool>,
    pos: Vec<usize>,
    /// `count[(l - 1) * n + (i - 1)]` servers with exactly `l` jobs, phase `i`.
    count: Vec<u64>,
}

impl ClusterState {
    pub fn empty(servers: usize, buffer: usize, phases: usize) -> Self {
        let mut s = Self {
            buffer,
            phases,
            length: vec![0; servers],
            phase: vec![1; servers],
            idle: Pool::default(),
            busy: vec![Pool::default(); phases],
            pos: vec![0; servers],
            count: vec![0; buffer * phases],
        };
        for k in 0..servers {
            s.idle.insert(k, &mut s.pos);
        }
        s
    }

    pub fn servers(&self) -> usize {
        self.length.len()
    }

    pub fn length(&self, server: usize) -> usize {
        self.length[server]
    }

    /// Phase of the job in service, `None` when idle.
    pub fn phase(&self, server: usize) -> Option<usize> {
        (self.length[server] > 0).then(|| self.phase[server])
    }

    /// Current tail fractions as a mean-field state.
    pub fn occupancy(&self) -> MeanFieldState {
        let mut h = MeanFieldState::zeros(self.buffer, self.phases);
        let n = self.servers() as f64;
        tails_into(
            &self.count.iter().map(|c| *c as f64 / n).collect::<Vec<_>>(),
            self.buffer,
            self.phases,
            h.as_mut_slice(),
        );
        h
    }

    fn cell(&self, s: usize) -> Option<usize> {
        let l = self.length[s];
        (l > 0).then(|| (l - 1) * self.phases + self.phase[s] - 1)
    }

    fn detach(&mut self, s: usize) {
        match self.cell(s) {
            Some(c) => {
                self.count[c] -= 1;
                self.busy[self.phase[s] - 1].remove(s, &mut self.pos);
            }
            None => self.idle.remove(s, &mut self.pos),
        }
    }

    fn attach(&mut self, s: usize) {
        match self.cell(s) {
            Some(c) => {
                self.count[c] += 1;
                self.busy[self.phase[s] - 1].insert(s, &mut self.pos);
            }
            None => self.idle.insert(s, &mut self.pos),
        }
    }
}

/// Suffix sums over levels and phases of exact-cell fractions.
fn tails_into(exact: &[f64], b: usize, n: usize, out: &mut [f64]) {
    for l in (1..=b).rev() {
        let mut row = 0.0;
        for i in (1..=n).rev() {
            row += exact[(l - 1) * n + i - 1];
            let below = if l < b { out[l * n + i - 1] } else { 0.0 };
            out[(l - 1) * n + i - 1] = row + below;
        }
    }
}

/// Time-weighted accumulator of exact-cell counts, updated lazily.
struct Accumulator {
    start: f64,
    area: Vec<f64>,
    since: Vec<f64>,
}

impl Accumulator {
    fn new(cells: usize, start: f64) -> Self {
        Self {
            start,
            area: vec![0.0; cells],
            since: vec![0.0; cells],
        }
    }

    #[inline]
    fn touch(&mut self, cell: usize, count: u64, now: f64) {
        let from = self.since[cell].max(self.start);
        let to = now.max(self.start);
        self.area[cell] += count as f64 * (to - from);
        self.since[cell] = now;
    }
}

struct Engine<'a> {
    model: &'a PolicyModel,
    state: ClusterState,
    acc: Accumulator,
    rng: ChaCha8Rng,
    now: f64,
    scratch: Vec<(usize, usize, u32)>,
}

impl Engine<'_> {
    /// Applies `change` to server `s`, keeping counts and the accumulator consistent.
    fn update(&mut self, s: usize, change: impl FnOnce(&mut usize, &mut usize)) {
        if let Some(c) = self.state.cell(s) {
            self.acc.touch(c, self.state.count[c], self.now);
        }
        self.state.detach(s);
        change(&mut self.state.length[s], &mut self.state.phase[s]);
        self.state.attach(s);
        if let Some(c) = self.state.cell(s) {
            self.acc.touch(c, self.state.count[c] - 1, self.now);
        }
    }

    fn add_job(&mut self, s: usize) {
        if self.state.length[s] >= self.state.buffer {
            return;
        }
        self.update(s, |len, phase| {
            if *len == 0 {
                *phase = 1;
            }
            *len += 1;
        });
    }

    /// The `k` shortest of `d` distinct uniformly sampled servers, ties broken uniformly.
    fn shortest(&mut self, d: u32, k: u32) -> Vec<usize> {
        let n = self.state.servers();
        let picks = index::sample(&mut self.rng, n, d as usize);
        self.scratch.clear();
        for s in picks.iter() {
            let tie: u32 = self.rng.random();
            self.scratch.push((self.state.length[s], s, tie));
        }
        self.scratch
            .sort_unstable_by_key(|&(len, _, tie)| (len, tie));
        self.scratch
            .iter()
            .take(k as usize)
            .map(|&(_, s, _)| s)
            .collect()
    }

    fn arrival(&mut self) {
        match self.model.policy() {
            Policy::Jsq { d } => {
                let target = self.shortest(d, 1)[0];
                self.add_job(target);
            }
            Policy::BatchJsq { k, d } => {
                for target in self.shortest(d, k) {
                    self.add_job(target);
                }
            }
            Policy::PullPush { .. } => {
                let target = self.rng.random_range(0..self.state.servers());
                self.add_job(target);
            }
        }
    }

    fn probe(&mut self) {
        let n = self.state.servers();
        let s = self.state.idle.pick(&mut self.rng);
        let mut t = self.rng.random_range(0..n - 1);
        if t >= s {
            t += 1;
        }
        if self.state.length[t] >= 2 {
            self.update(t, |len, _| *len -= 1);
            self.update(s, |len, phase| {
                *len = 1;
                *phase = 1;
            });
        }
    }

    fn service(&mut self, phase: usize) {
        let s = self.state.busy[phase - 1].pick(&mut self.rng);
        let p = self.model.service().continuations()[phase - 1];
        let advance = p > 0.0 && self.rng.random::<f64>() < p;
        self.update(s, |len, ph| {
            if advance {
                *ph += 1;
            } else {
                *len -= 1;
                *ph = 1;
            }
        });
    }

    fn run(&mut self, horizon: f64) {
        let n = self.state.servers();
        let arrival_rate = self.model.lambda() * n as f64;
        let probe_rate = match self.model.policy() {
            Policy::PullPush { r } if n > 1 => r,
            _ => 0.0,
        };
        let mu = self.model.service().rates().to_vec();
        loop {
            let service_total: f64 = self
                .state
                .busy
                .iter()
                .zip(&mu)
                .map(|(b, m)| b.len() as f64 * m)
                .sum();
            let probe_total = probe_rate * self.state.idle.len() as f64;
            let total = arrival_rate + service_total + probe_total;
            let wait: f64 = self.rng.sample::<f64, _>(Exp1) / total;
            if self.now + wait >= horizon {
                self.now = horizon;
                break;
            }
            self.now += wait;
            let mut u = self.rng.random::<f64>() * total;
            if u < arrival_rate {
                self.arrival();
                continue;
            }
            u -= arrival_rate;
            if u < probe_total {
                self.probe();
                continue;
            }
            u -= probe_total;
            let mut phase = mu.len();
            for (i, (b, m)) in self.state.busy.iter().zip(&mu).enumerate() {
                let rate = b.len() as f64 * m;
                if u < rate {
                    phase = i + 1;
                    break;
                }
                u -= rate;
            }
            // Guard against round-off landing past the last nonempty phase.
            while self.state.busy[phase - 1].len() == 0 {
                phase -= 1;
            }
            self.service(phase);
        }
        for c in 0..self.state.count.len() {
            self.acc.touch(c, self.state.count[c], self.now);
        }
    }
}

/// One replication: time-averaged tail fractions over `[warmup, horizon]`.
pub fn simulate_once(
    model: &PolicyModel,
    servers: usize,
    seed: u64,
    warmup: f64,
    horizon: f64,
) -> Result<MeanFieldState> {
    let config = SimConfig::new(model.clone(), servers, seed, horizon, 1).with_warmup(warmup);
    config.validate()?;
    Ok(run_replication(&config, seed))
}

fn run_replication(config: &SimConfig, seed: u64) -> MeanFieldState {
    let model = &config.model;
    let (b, n) = (model.buffer(), model.phases());
    let warmup = config.effective_warmup();
    let mut engine = Engine {
        model,
        state: ClusterState::empty(config.servers, b, n),
        acc: Accumulator::new(b * n, warmup),
        rng: ChaCha8Rng::seed_from_u64(seed),
        now: 0.0,
        scratch: Vec::new(),
    };
    engine.run(config.horizon);
    let norm = config.servers as f64 * (config.horizon - warmup);
    let exact: Vec<f64> = engine.acc.area.iter().map(|a| a / norm).collect();
    let mut h = MeanFieldState::zeros(b, n);
    tails_into(&exact, b, n, h.as_mut_slice());
    h
}

/// Pooled time averages with replication-based confidence half-widths.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryEstimate {
    pub mean: MeanFieldState,
    /// Per-entry 95% half-widths; infinite with a single replication.
    pub half_width: MeanFieldState,
    pub servers: usize,
    pub replications: usize,
    #[serde(skip)]
    pub per_replication: Vec<MeanFieldState>,
}

/// Runs `config.replications` replications (seeds `seed`, `seed + 1`, ...).
pub fn simulate(config: &SimConfig) -> Result<StationaryEstimate> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.replications as u64)
        .map(|r| config.seed.wrapping_add(r))
        .collect();
    replicate_with_seeds(config, &seeds)
}

/// Same as [`simulate`] but requires at least two replications.
pub fn replicate(config: &SimConfig) -> Result<StationaryEstimate> {
    if config.replications < 2 {
        return Err(Error::InvalidParameter(format!(
            "confidence intervals need at least 2 replications, got {}",
            config.replications
        )));
    }
    simulate(config)
}

/// Replications with explicit seeds; results do not depend on execution order.
pub fn replicate_with_seeds(config: &SimConfig, seeds: &[u64]) -> Result<StationaryEstimate> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("no seeds given".into()));
    }
    if !config.model.is_stable() {
        warn!(
            "offered load {} is not below 1; the buffer keeps the simulation ergodic",
            config.model.offered_load()
        );
    }
    let runs: Vec<MeanFieldState> = seeds
        .par_iter()
        .map(|&s| run_replication(config, s))
        .collect();
    Ok(pool(runs, config.servers))
}

fn pool(runs: Vec<MeanFieldState>, servers: usize) -> StationaryEstimate {
    let (b, n) = runs[0].dims();
    let r = runs.len();
    let len = b * n;
    let mut mean = vec![0.0; len];
    for run in &runs {
        for (m, v) in mean.iter_mut().zip(run.as_slice()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r as f64);
    let half: Vec<f64> = if r < 2 {
        vec![f64::INFINITY; len]
    } else {
        let t = StudentsT::new(0.0, 1.0, (r - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + CONFIDENCE / 2.0);
        (0..len)
            .map(|j| {
                let var = runs
                    .iter()
                    .map(|x| (x.as_slice()[j] - mean[j]).powi(2))
                    .sum::<f64>()
                    / (r - 1) as f64;
                t * (var / r as f64).sqrt()
            })
            .collect()
    };
    StationaryEstimate {
        mean: MeanFieldState::from_flat(b, n, mean).expect("shape"),
        half_width: MeanFieldState::from_flat(b, n, half).expect("shape"),
        servers,
        replications: r,
        per_replication: runs,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    /// `max |h - pi|` over all entries.
    pub distance: f64,
    /// Entries with `|h - pi|` above three half-widths.
    pub excess: usize,
    pub entries: usize,
}

impl Comparison {
    pub fn excess_fraction(&self) -> f64 {
        self.excess as f64 / self.entries as f64
    }
}

/// Distance of an estimate to a fixed point. An entry with zero spread
/// across replications (typically never visited) is judged against the
/// resolution `1 / N` of a single server instead.
pub fn compare(estimate: &StationaryEstimate, pi: &MeanFieldState) -> Result<Comparison> {
    estimate.mean.same_shape(pi)?;
    let floor = 1.0 / estimate.servers as f64;
    let mut distance: f64 = 0.0;
    let mut excess = 0;
    for ((h, p), w) in estimate
        .mean
        .as_slice()
        .iter()
        .zip(pi.as_slice())
        .zip(estimate.half_width.as_slice())
    {
        let gap = (h - p).abs();
        distance = distance.max(gap);
        let allowed = if *w > 0.0 { 3.0 * w } else { floor };
        if gap > allowed {
            excess += 1;
        }
    }
    Ok(Comparison {
        distance,
        excess,
        entries: pi.as_slice().len(),
    })
}
