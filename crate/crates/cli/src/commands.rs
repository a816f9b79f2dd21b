use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use coxfield::dist::{fit_hyperexp2, Distribution, MomentTriple};
use coxfield::mfode::{
    check_prop5, fixed_point, fixed_point_auto_buffer, integrate, FixedPointResult, PolicyModel,
    FIXED_POINT_TOL,
};
use coxfield::order::MeanFieldState;
use coxfield::sim::{compare, simulate, SimConfig};
use coxfield::verify::{
    attract_suite, lyapunov_suite, monotone_suite, order_oracle_suite, Suite, SuiteReport,
};

use crate::manifest::Recorder;
use crate::{Cli, Command};

pub struct Outcome {
    pub passed: bool,
    pub summary: String,
}

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Run<T> = std::result::Result<T, Failure>;

fn input_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn math_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

trait OrFail<T> {
    fn input(self) -> Run<T>;
    fn math(self) -> Run<T>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for std::result::Result<T, E> {
    fn input(self) -> Run<T> {
        self.map_err(input_error)
    }
    fn math(self) -> Run<T> {
        self.map_err(math_error)
    }
}

/// Reads and parses a JSON document; returns it also as a raw value for the manifest.
fn load<T: DeserializeOwned>(path: &Path) -> Run<(T, Value)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .input()?;
    let raw: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .input()?;
    let parsed = serde_json::from_value(raw.clone())
        .with_context(|| format!("in {}", path.display()))
        .input()?;
    Ok((parsed, raw))
}

pub fn run(cli: &Cli) -> Run<Outcome> {
    let mut rec = Recorder::new(&cli.out).input()?;
    let (name, config, outcome) = match &cli.command {
        Command::Convert { input } => convert(cli, &mut rec, input)?,
        Command::Fit { m1, n2, n3 } => fit(&mut rec, *m1, *n2, *n3)?,
        Command::FixedPoint { model, auto_buffer } => {
            fixed_point_cmd(cli, &mut rec, model, *auto_buffer)?
        }
        Command::Integrate {
            model,
            init,
            t_end,
            dt,
            sample,
        } => integrate_cmd(&mut rec, model, init, *t_end, *dt, *sample)?,
        Command::Simulate {
            config,
            per_replication,
        } => simulate_cmd(cli, &mut rec, config, *per_replication)?,
        Command::Verify {
            suite,
            model,
            count,
            t_end,
            buffer,
            phases,
        } => verify_cmd(
            cli,
            &mut rec,
            suite,
            model.as_deref(),
            *count,
            *t_end,
            *buffer,
            *phases,
        )?,
    };
    let mut config = config;
    if let Some(tol) = cli.tol {
        config["tol"] = json!(tol);
    }
    rec.finish(name, config, cli.seed).input()?;
    Ok(outcome)
}

type Done = (&'static str, Value, Outcome);

fn convert(cli: &Cli, rec: &mut Recorder, input: &Path) -> Run<Done> {
    let (dist, raw): (Distribution, Value) = load(input)?;
    let tol = cli.tol.unwrap_or(1e-10);
    let cox = dist.to_coxian();
    let c0 = cox.c0_report(0.0);
    let (mixture, hyper) = match cox.mixture_weights() {
        Ok(m) => {
            let h = m.is_hyperexponential();
            (json!({ "weights": m.weights, "rates": m.rates }), Some(h))
        }
        Err(e) => (json!({ "error": e.to_string() }), None),
    };
    let moments: Vec<f64> = (1..=3)
        .map(|k| cox.moment(k))
        .collect::<Result<_, _>>()
        .math()?;
    let nm = cox.normalized_moments();

    let mut passed = c0.member;
    let mut roundtrip = Value::Null;
    if let Distribution::HyperExp(h) = &dist {
        let horizon = 10.0 * cox.mean();
        let grid: Vec<f64> = (0..50).map(|k| horizon * k as f64 / 49.0).collect();
        let cdf = cox.cdf_grid(&grid).math()?;
        let err = grid
            .iter()
            .zip(&cdf)
            .map(|(t, f)| (f - h.cdf(*t)).abs())
            .fold(0.0, f64::max);
        passed &= err <= tol;
        roundtrip = json!({ "max_cdf_error": err, "grid_points": 50, "tol": tol });
    }
    let report = json!({
        "coxian": Distribution::Coxian(cox.clone()),
        "c0": { "member": c0.member, "margin": c0.margin, "boundary": c0.boundary },
        "hyperexponential": hyper,
        "mixture": mixture,
        "moments": { "m1": moments[0], "m2": moments[1], "m3": moments[2], "n2": nm.n2, "n3": nm.n3 },
        "cdf_roundtrip": roundtrip,
    });
    rec.write_json("convert.json", &report).input()?;
    let hyper_text = hyper.map_or("undetermined".to_string(), |h| h.to_string());
    let summary = format!("in C0: {}, hyperexponential: {hyper_text}", c0.member);
    Ok((
        "convert",
        json!({ "input": raw }),
        Outcome { passed, summary },
    ))
}

fn fit(rec: &mut Recorder, m1: f64, n2: f64, n3: f64) -> Run<Done> {
    let target = MomentTriple::new(m1, n2, n3).input()?;
    let config = json!({ "m1": m1, "n2": n2, "n3": n3 });
    let h = fit_hyperexp2(target).math()?;
    let achieved = h.normalized_moments();
    let report = json!({
        "hyperexp": Distribution::HyperExp(h.clone()),
        "coxian": Distribution::Coxian(h.to_coxian()),
        "achieved": achieved,
    });
    rec.write_json("fit.json", &report).input()?;
    let summary = format!(
        "fitted {} branch(es): m1 = {}, n2 = {}, n3 = {}",
        h.branches(),
        achieved.m1,
        achieved.n2,
        achieved.n3
    );
    Ok((
        "fit",
        config,
        Outcome {
            passed: true,
            summary,
        },
    ))
}

#[derive(Serialize)]
struct FixedPointDoc<'a> {
    pi: &'a MeanFieldState,
    residual: f64,
    prop5: coxfield::mfode::Prop5Report,
    iterations: &'a coxfield::mfode::SolverDiagnostics,
}

fn solve(model: &PolicyModel, auto: bool) -> Run<(PolicyModel, FixedPointResult)> {
    if auto {
        fixed_point_auto_buffer(model).math()
    } else {
        Ok((model.clone(), fixed_point(model).math()?))
    }
}

fn fixed_point_cmd(cli: &Cli, rec: &mut Recorder, path: &Path, auto: bool) -> Run<Done> {
    let (model, raw): (PolicyModel, Value) = load(path)?;
    let tol = cli.tol.unwrap_or(1e-10);
    let (model, fp) = solve(&model, auto)?;
    let prop5 = check_prop5(&fp.pi, model.service()).math()?;
    rec.write_json(
        "fixed_point.json",
        &FixedPointDoc {
            pi: &fp.pi,
            residual: fp.residual,
            prop5,
            iterations: &fp.iterations,
        },
    )
    .input()?;
    let passed = fp.residual <= FIXED_POINT_TOL && prop5.structure_residual <= tol;
    let summary = format!(
        "B = {}, pi_11 = {:.12}, residual {:.3e}, structure residual {:.3e}",
        model.buffer(),
        fp.pi.get(1, 1),
        fp.residual,
        prop5.structure_residual
    );
    Ok((
        "fixed-point",
        json!({ "model": raw, "auto_buffer": auto }),
        Outcome { passed, summary },
    ))
}

fn initial_state(model: &PolicyModel, init: &str) -> Run<MeanFieldState> {
    let (b, n) = (model.buffer(), model.phases());
    Ok(match init {
        "empty" => MeanFieldState::zeros(b, n),
        "full" => MeanFieldState::full(b, n),
        "fixed-point" => fixed_point(model).math()?.pi,
        path => load::<MeanFieldState>(Path::new(path))?.0,
    })
}

fn integrate_cmd(
    rec: &mut Recorder,
    path: &Path,
    init: &str,
    t_end: f64,
    dt: Option<f64>,
    sample: Option<f64>,
) -> Run<Done> {
    let (model, raw): (PolicyModel, Value) = load(path)?;
    let h0 = initial_state(&model, init)?;
    if h0.dims() != (model.buffer(), model.phases()) {
        return Err(input_error(anyhow!(
            "initial state has (B, n) = {:?}, model expects ({}, {})",
            h0.dims(),
            model.buffer(),
            model.phases()
        )));
    }
    let dt = dt.unwrap_or_else(|| model.max_step());
    let sample = sample.unwrap_or(if t_end > 0.0 { t_end / 100.0 } else { 1.0 });
    let traj = match integrate(&model, &h0, t_end, dt, sample) {
        Ok(t) => t,
        Err(e @ (coxfield::Error::InvalidParameter(_) | coxfield::Error::NotInOmega(_))) => {
            return Err(input_error(e))
        }
        Err(e) => return Err(math_error(e)),
    };
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).input()?;
    rec.write("trajectory.csv", &csv).input()?;
    let summary = format!(
        "{} rows up to t = {}",
        traj.times.len(),
        traj.times.last().copied().unwrap_or(0.0)
    );
    let config = json!({ "model": raw, "init": init, "t_end": t_end, "dt": dt, "sample": sample });
    Ok((
        "integrate",
        config,
        Outcome {
            passed: true,
            summary,
        },
    ))
}

fn simulate_cmd(cli: &Cli, rec: &mut Recorder, path: &Path, per_replication: bool) -> Run<Done> {
    let (config, raw): (SimConfig, Value) = load(path)?;
    let estimate = match simulate(&config) {
        Ok(e) => e,
        Err(e @ coxfield::Error::InvalidParameter(_)) => return Err(input_error(e)),
        Err(e) => return Err(math_error(e)),
    };
    let fp = fixed_point(&config.model).math()?;
    let cmp = compare(&estimate, &fp.pi).math()?;
    let report = json!({
        "mean": estimate.mean,
        "half_width": estimate.half_width,
        "distance_to_pi": cmp.distance,
        "excess": cmp.excess,
        "entries": cmp.entries,
        "servers": estimate.servers,
        "replications": estimate.replications,
        "warmup": config.effective_warmup(),
        "horizon": config.horizon,
        "pi": fp.pi,
    });
    rec.write_json("simulate.json", &report).input()?;
    if per_replication {
        let header = estimate.mean.csv_header().join(",");
        let mut text = format!("replication,seed,{header}\n");
        for (r, h) in estimate.per_replication.iter().enumerate() {
            let row: Vec<String> = h.as_slice().iter().map(|v| v.to_string()).collect();
            text.push_str(&format!(
                "{r},{},{}\n",
                config.seed.wrapping_add(r as u64),
                row.join(",")
            ));
        }
        rec.write("replications.csv", text.as_bytes()).input()?;
    }
    let passed = cli.tol.is_none_or(|t| cmp.distance <= t);
    let summary = format!(
        "N = {}, distance to pi {:.4e}, {} of {} entries outside 3 half-widths",
        estimate.servers, cmp.distance, cmp.excess, cmp.entries
    );
    Ok((
        "simulate",
        json!({ "config": raw, "effective_warmup": config.effective_warmup() }),
        Outcome { passed, summary },
    ))
}

#[allow(clippy::too_many_arguments)]
fn verify_cmd(
    cli: &Cli,
    rec: &mut Recorder,
    suite: &str,
    model: Option<&Path>,
    count: Option<usize>,
    t_end: Option<f64>,
    buffer: usize,
    phases: usize,
) -> Run<Done> {
    let suite: Suite = suite.parse().input()?;
    let load_model = || -> Run<(PolicyModel, Value)> {
        let path = model.ok_or_else(|| input_error(anyhow!("suite needs --model")))?;
        load(path)
    };
    let seed = cli.seed;
    let (report, config): (SuiteReport, Value) = match suite {
        Suite::Monotone => {
            let (m, raw) = load_model()?;
            let (count, t_end) = (count.unwrap_or(200), t_end.unwrap_or(50.0));
            (
                monotone_suite(&m, seed, count, t_end, 50).math()?,
                json!({ "model": raw, "count": count, "t_end": t_end }),
            )
        }
        Suite::Attract => {
            let (m, raw) = load_model()?;
            let (count, t_end, tol) = (
                count.unwrap_or(50),
                t_end.unwrap_or(200.0),
                cli.tol.unwrap_or(1e-6),
            );
            (
                attract_suite(&m, seed, count, t_end, tol).math()?,
                json!({ "model": raw, "count": count, "t_end": t_end, "tol": tol }),
            )
        }
        Suite::Lyapunov => {
            let (m, raw) = load_model()?;
            let (count, t_end) = (count.unwrap_or(10), t_end.unwrap_or(100.0));
            (
                lyapunov_suite(&m, seed, count, t_end, 100).math()?,
                json!({ "model": raw, "count": count, "t_end": t_end }),
            )
        }
        Suite::OrderOracle => {
            let count = count.unwrap_or(1000);
            (
                order_oracle_suite(buffer, phases, seed, count).input()?,
                json!({ "B": buffer, "n": phases, "count": count }),
            )
        }
    };
    let name = serde_json::to_value(suite)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    rec.write_json(&format!("verify_{name}.json"), &report)
        .input()?;
    let summary = format!(
        "{name}: {} ({} of {} cases failed)",
        if report.passed { "pass" } else { "fail" },
        report.failures(),
        report.cases.len()
    );
    Ok((
        "verify",
        json!({ "suite": name, "args": config }),
        Outcome {
            passed: report.passed,
            summary,
        },
    ))
}
