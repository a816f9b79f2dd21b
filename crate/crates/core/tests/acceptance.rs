//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::time::Instant;

use common::{hyper, single_queue_tails};
use coxfield::dist::{fit_hyperexp2, in_moment_region, lemma1_sum, Coxian};
use coxfield::mfode::{
    arrival_drift, attraction_check, check_prop5, drift, fixed_point, integrate, FixedPointResult,
    PolicyModel,
};
use coxfield::order::{order_report, random_state_with, MeanFieldState};
use coxfield::sampling::{
    random_c0_coxian, random_feasible_moments, random_hyperexp, random_infeasible_moments,
};
use coxfield::sim::{compare, replicate, SimConfig};
use coxfield::verify::{lyapunov_suite, monotone_suite, order_oracle_suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The three benchmark models at buffer `b`.
fn models(b: usize) -> Vec<(&'static str, PolicyModel)> {
    vec![
        ("JSQ(2)", PolicyModel::jsq(2, 0.9, b, hyper()).unwrap()),
        (
            "PULLPUSH",
            PolicyModel::pull_push(1.0, 0.5, b, hyper()).unwrap(),
        ),
        (
            "BATCHJSQ",
            PolicyModel::batch_jsq(2, 3, 0.3, b, hyper()).unwrap(),
        ),
    ]
}

fn conversion_fidelity() -> Outcome {
    let mut r = rng(1);
    let (mut worst_cdf, mut min_margin, mut bad) = (0.0f64, f64::INFINITY, 0);
    for _ in 0..10_000 {
        let h = random_hyperexp(&mut r, 6);
        let c = h.to_coxian();
        let rep = c.c0_report(0.0);
        min_margin = min_margin.min(rep.margin);
        // t = 0 plus 49 log-spaced points reaching ten means.
        let (lo, hi) = (1e-2 / c.max_rate(), 10.0 * h.moment(1));
        let mut grid = vec![0.0];
        grid.extend((0..49).map(|k| lo * (hi / lo).powf(k as f64 / 48.0)));
        let cdf = c.cdf_grid(&grid).unwrap();
        let err = grid
            .iter()
            .zip(&cdf)
            .map(|(t, f)| (f - h.cdf(*t)).abs())
            .fold(0.0, f64::max);
        worst_cdf = worst_cdf.max(err);
        if !(rep.member && rep.margin > 0.0 && err <= 1e-10) {
            bad += 1;
        }
    }
    (bad == 0, format!("10000 cases, max cdf error {worst_cdf:.2e}, min margin {min_margin:.2e}, failures {bad}"))
}

fn counterexample() -> Outcome {
    let c = Coxian::new(vec![1.0, 2.0, 0.1], vec![0.1, 0.8]).unwrap();
    let mix = c.mixture_weights().unwrap();
    let want = [83.0 / 90.0, -3.0 / 190.0, 16.0 / 171.0];
    let err = mix
        .weights
        .iter()
        .zip(want)
        .map(|(w, e)| (w - e).abs())
        .fold(0.0, f64::max);
    let flagged = !mix.is_hyperexponential();
    let c0 = c.is_class_c0();
    (
        err <= 1e-12 && flagged && c0,
        format!(
            "weights {:?}, max error {err:.2e}, non-hyperexponential {flagged}, in C0 {c0}",
            mix.weights
        ),
    )
}

fn telescoping_and_remaining_times() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 1000 {
        let n = r.random_range(2..=8);
        let mu: Vec<f64> = (0..n)
            .map(|_| 10f64.powf(r.random_range(-2.0..2.0)))
            .collect();
        let k = r.random_range(1..n);
        let l = r.random_range(k + 1..=n);
        if let Ok(s) = lemma1_sum(k, l, &mu) {
            worst = worst.max((s + 1.0).abs());
            done += 1;
        }
    }
    let mut not_increasing = 0;
    for _ in 0..10_000 {
        let c = random_c0_coxian(&mut r, 6);
        if !c.remaining_service_times().windows(2).all(|w| w[1] > w[0]) {
            not_increasing += 1;
        }
    }
    (
        worst <= 1e-10 && not_increasing == 0,
        format!("max |sum + 1| = {worst:.2e} over 1000 inputs; R not increasing in {not_increasing}/10000"),
    )
}

fn moment_region() -> Outcome {
    let mut r = rng(4);
    let outside = (0..10_000)
        .filter(|_| {
            let m = random_c0_coxian(&mut r, 6).normalized_moments();
            !in_moment_region(m.n2, m.n3, 1e-9)
        })
        .count();
    let mut worst = 0.0f64;
    let mut fit_errors = 0;
    for _ in 0..1000 {
        let t = random_feasible_moments(&mut r);
        match fit_hyperexp2(t) {
            Ok(h) => {
                let g = h.normalized_moments();
                let rel = [(g.m1, t.m1), (g.n2, t.n2), (g.n3, t.n3)]
                    .iter()
                    .map(|(a, b)| ((a - b) / b).abs())
                    .fold(0.0, f64::max);
                worst = worst.max(rel);
            }
            Err(_) => fit_errors += 1,
        }
    }
    let accepted = (0..100)
        .filter(|_| fit_hyperexp2(random_infeasible_moments(&mut r)).is_ok())
        .count();
    (
        outside == 0 && worst <= 1e-10 && fit_errors == 0 && accepted == 0,
        format!(
            "{outside}/10000 members outside; fit max relative error {worst:.2e}, {fit_errors} fit errors; \
             {accepted}/100 infeasible targets accepted"
        ),
    )
}

fn hazard_monotone() -> Outcome {
    let mut r = rng(5);
    let grid: Vec<f64> = (0..100).map(|k| 5.0 * k as f64 / 99.0).collect();
    let (mut worst_rise, mut errors) = (0.0f64, 0);
    for _ in 0..1000 {
        let c = random_c0_coxian(&mut r, 6).normalize_to_unit_mean();
        match c.hazard_grid(&grid) {
            Ok(hz) => {
                worst_rise = hz
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(worst_rise, f64::max);
            }
            Err(_) => errors += 1,
        }
    }
    (
        worst_rise <= 1e-9 && errors == 0,
        format!("1000 members, largest increase {worst_rise:.2e}, {errors} evaluation errors"),
    )
}

fn order_machinery() -> Outcome {
    let mut cases = 0;
    let mut mismatches = 0;
    for b in 1..=6 {
        for n in 1..=4 {
            let rep = order_oracle_suite(b, n, (b * 10 + n) as u64, 42).unwrap();
            cases += rep.cases.len();
            mismatches += rep.failures();
        }
    }
    let lo = MeanFieldState::from_rows(2, &[vec![1.0, 0.5], vec![0.5, 0.0]]).unwrap();
    let hi = MeanFieldState::from_rows(2, &[vec![1.0, 0.5], vec![0.5, 0.5]]).unwrap();
    let componentwise = hi.as_slice().iter().zip(lo.as_slice()).all(|(a, b)| a >= b);
    let up = order_report(&lo, &hi, 1e-12).unwrap();
    let down = order_report(&hi, &lo, 1e-12).unwrap();
    let example =
        componentwise && !up.holds && !down.holds && up.worst_sequence == Some(vec![2, 1]);
    (
        mismatches == 0 && cases >= 1000 && example,
        format!(
            "{mismatches}/{cases} DP vs enumeration mismatches; example incomparable {}, violating sequence {:?}",
            !up.holds && !down.holds,
            up.worst_sequence
        ),
    )
}

fn monotonicity() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (name, m)) in models(25).into_iter().enumerate() {
        let rep = monotone_suite(&m, 70 + k as u64, 200, 50.0, 50).unwrap();
        ok &= rep.passed && rep.cases.len() >= 200;
        parts.push(format!(
            "{name} {}/{} preserved",
            rep.cases.len() - rep.failures(),
            rep.cases.len()
        ));
    }
    (ok, parts.join(", "))
}

/// Time at which every start is within `tol` of `pi`, integrating on past
/// `from` in steps of 10 (up to `limit`).
fn time_to_reach(
    m: &PolicyModel,
    starts: &[MeanFieldState],
    pi: &MeanFieldState,
    tol: f64,
    from: f64,
    limit: f64,
) -> Option<f64> {
    let dt = m.max_step();
    let mut states: Vec<MeanFieldState> = starts
        .iter()
        .map(|s| integrate(m, s, from, dt, from).unwrap().last().clone())
        .collect();
    let mut t = from;
    while t < limit {
        states = states
            .iter()
            .map(|s| integrate(m, s, 10.0, dt, 10.0).unwrap().last().clone())
            .collect();
        t += 10.0;
        if states.iter().all(|s| s.sup_distance(pi).unwrap() <= tol) {
            return Some(t);
        }
    }
    None
}

fn attraction(fixed_points: &mut Vec<(String, FixedPointResult, Coxian)>) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (name, m)) in models(25).into_iter().enumerate() {
        let mut r = rng(80 + k as u64);
        let starts: Vec<MeanFieldState> = (0..50)
            .map(|_| random_state_with(&mut r, 25, m.phases()))
            .collect();
        let rep = attraction_check(&m, &starts, 200.0, 1e-6).unwrap();
        let worst = rep.distances.iter().copied().fold(0.0, f64::max);
        let pass = rep.passed && rep.max_pairwise <= 1e-8;
        ok &= pass;
        let mut line = format!(
            "{name} max distance {worst:.2e}, max pairwise {:.2e}",
            rep.max_pairwise
        );
        let fp = rep.fixed_point.expect("solver result");
        if !pass {
            // Report how long the slowest starts actually need.
            let mut order: Vec<usize> = (0..starts.len()).collect();
            order.sort_by(|a, b| rep.distances[*b].total_cmp(&rep.distances[*a]));
            let slow: Vec<MeanFieldState> =
                order.iter().take(5).map(|&j| starts[j].clone()).collect();
            match time_to_reach(&m, &slow, &fp.pi, 1e-6, 200.0, 1000.0) {
                Some(t) => line.push_str(&format!(" (distance 1e-6 first reached by T = {t})")),
                None => line.push_str(" (distance 1e-6 not reached by T = 1000)"),
            }
        }
        fixed_points.push((name.to_string(), fp, m.service().clone()));
        parts.push(line);
    }
    (ok, parts.join("; "))
}

fn fixed_point_anchors(fixed_points: &[(String, FixedPointResult, Coxian)]) -> Outcome {
    let exp = Coxian::exponential(1.0).unwrap();
    let m = PolicyModel::jsq(2, 0.9, 30, exp.clone()).unwrap();
    let fp = fixed_point(&m).unwrap();
    let anchor = (1..=10)
        .map(|l| (fp.pi.get(l, 1) - 0.9f64.powi((1 << l) - 1)).abs())
        .fold(0.0, f64::max);
    let mut worst_structure = check_prop5(&fp.pi, &exp).unwrap().structure_residual;
    for (_, other, svc) in fixed_points {
        worst_structure =
            worst_structure.max(check_prop5(&other.pi, svc).unwrap().structure_residual);
    }
    let mut extra = Vec::new();
    for (name, model) in models(25) {
        if fixed_points.iter().all(|(n, _, _)| n != name) {
            extra.push((name, model));
        }
    }
    for (_, model) in extra {
        let p = fixed_point(&model).unwrap();
        worst_structure = worst_structure.max(
            check_prop5(&p.pi, model.service())
                .unwrap()
                .structure_residual,
        );
    }
    (
        anchor <= 1e-9 && worst_structure <= 1e-10,
        format!(
            "max anchor error {anchor:.2e} (levels 1..=10), max structure residual {worst_structure:.2e} over {} fixed points",
            fixed_points.len() + 1
        ),
    )
}

fn lyapunov() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (name, m)) in models(25).into_iter().enumerate() {
        let rep = lyapunov_suite(&m, 100 + k as u64, 10, 100.0, 100).unwrap();
        let worst = rep.cases.iter().map(|c| c.metric).fold(0.0, f64::max);
        ok &= rep.passed;
        parts.push(format!(
            "{name} {}/10 trajectories pass, max identity error {worst:.2e}",
            10 - rep.failures()
        ));
    }
    (ok, parts.join("; "))
}

fn finite_systems() -> Outcome {
    let model = PolicyModel::jsq(2, 0.9, 25, hyper()).unwrap();
    let pi = fixed_point(&model).unwrap().pi;
    let mut distances = Vec::new();
    let mut last_excess = 1.0;
    let mut parts = Vec::new();
    for (k, n) in [10usize, 100, 1000].into_iter().enumerate() {
        let cfg =
            SimConfig::new(model.clone(), n, 1000 * (k as u64 + 1), 2200.0, 20).with_warmup(200.0);
        let est = replicate(&cfg).unwrap();
        let cmp = compare(&est, &pi).unwrap();
        distances.push(cmp.distance);
        last_excess = cmp.excess_fraction();
        parts.push(format!(
            "N={n}: distance {:.4}, outside 3 half-widths {}/{}",
            cmp.distance, cmp.excess, cmp.entries
        ));
    }
    let decreasing = distances.windows(2).all(|w| w[1] < w[0]);
    (
        decreasing && distances[2] <= 0.01 && last_excess <= 0.05,
        parts.join("; "),
    )
}

fn drift_special_cases() -> Outcome {
    let mut r = rng(12);
    let (mut worst_k1, mut worst_kd) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let svc = random_c0_coxian(&mut r, 4);
        let b = r.random_range(1..=12);
        let d = r.random_range(1..=6u32);
        let lambda = r.random_range(0.05..1.0);
        let batch = PolicyModel::batch_jsq(1, d, lambda, b, svc.clone()).unwrap();
        let jsq = PolicyModel::jsq(d, lambda, b, svc.clone()).unwrap();
        let h = random_state_with(&mut r, b, batch.phases());
        worst_k1 = worst_k1.max(
            drift(&batch, &h)
                .unwrap()
                .sup_distance(&drift(&jsq, &h).unwrap())
                .unwrap(),
        );
        let full = PolicyModel::batch_jsq(d, d, lambda, b, svc).unwrap();
        let f = arrival_drift(&full, &h).unwrap();
        for l in 1..=b {
            let above = if l == 1 { 1.0 } else { h.get(l - 1, 1) };
            worst_kd =
                worst_kd.max((f.get(l, 1) - lambda * d as f64 * (above - h.get(l, 1))).abs());
        }
    }
    // Without pulls every server is an isolated single queue.
    let model = PolicyModel::pull_push(0.0, 0.7, 15, hyper()).unwrap();
    let oracle = single_queue_tails(0.7, 15, model.service());
    let est = replicate(&SimConfig::new(model, 50, 12, 2100.0, 20).with_warmup(100.0)).unwrap();
    let outside = est
        .mean
        .as_slice()
        .iter()
        .zip(est.half_width.as_slice())
        .zip(oracle.as_slice())
        .filter(|((m, w), o)| (*m - *o).abs() > 3.0 * *w + 1e-12)
        .count();
    let entries = oracle.as_slice().len();
    let sim_ok = outside as f64 <= 0.05 * entries as f64;
    (
        worst_k1 <= 1e-14 && worst_kd <= 1e-12 && sim_ok,
        format!(
            "K=1 vs JSQ max {worst_k1:.2e}; K=d vs random routing max {worst_kd:.2e}; \
             r=0 simulation outside 3 half-widths of the single-queue law {outside}/{entries}"
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut fixed_points = Vec::new();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "criterion {id:>2} {} {name}: {} [{secs:.1}s]",
            if out.0 { "PASS" } else { "FAIL" },
            out.1
        );
        results.push((id, name, out, secs));
    };
    run(1, "coxian conversion fidelity", &mut conversion_fidelity);
    run(2, "signed mixture counterexample", &mut counterexample);
    run(
        3,
        "telescoping sum and remaining service times",
        &mut telescoping_and_remaining_times,
    );
    run(4, "moment region and two-branch fit", &mut moment_region);
    run(5, "decreasing hazard", &mut hazard_monotone);
    run(
        6,
        "order decision and incomparable example",
        &mut order_machinery,
    );
    run(7, "monotonicity of the flow", &mut monotonicity);
    run(8, "global attraction", &mut || {
        attraction(&mut fixed_points)
    });
    run(9, "fixed-point anchors and structure", &mut || {
        fixed_point_anchors(&fixed_points)
    });
    run(10, "lyapunov rate identities", &mut lyapunov);
    run(
        11,
        "finite systems approach the fixed point",
        &mut finite_systems,
    );
    run(12, "drift special cases", &mut drift_special_cases);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria pass in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
