//! Acceptance criteria A1 to A10. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use ptdisorder::bellman::{error_bound, iteration_plan, region_of, IterationPlan};
use ptdisorder::phase_type::mean_absorption;
use ptdisorder::risk::{delay_identity_check, filter_oracle};
use ptdisorder::scenario::{sample_batch, scenario_rng};
use ptdisorder::{
    build_erlang, build_hyperexponential, evaluate_policy, flow, sample_scenario, sigma1_law, value_iterate,
    BeliefPoint, ModelSpec, Policy, Result, RunConfig, SimplexGrid, SolveOptions, Trajectory, ValueTable,
};

const ERLANG: &str = r#"{"model": {"erlang": {"n": 2, "lambda": 3.0}, "lambda0": 6.0, "lambda1": 5.0, "c": 1.0},
    "initial_belief": [1.0, 0.0, 0.0], "epsilon": 0.05, "resolution": 60, "store_iterates": true}"#;
const HYPEREXP: &str = r#"{"model": {"hyperexponential": {"mu": [3.0, 2.0]}, "lambda0": 2.0, "lambda1": 6.0, "c": 1.5},
    "initial_belief": [1.0, 0.0, 0.0], "epsilon": 0.05, "resolution": 60, "store_iterates": true}"#;

const A1_TIME: f64 = 50.0;
const A1_TOL: f64 = 1e-3;
const A1_STARTS: usize = 10;
const A2_STEP: f64 = 1e-4;
const A2_TOL: f64 = 1e-3;
const A2_SCENARIOS: u64 = 20;
const A2_HORIZON: f64 = 5.0;
const TAU_CONC: f64 = 1e-4;
/// Interpolation allowance added to the concavity tolerance.
const CONCAVITY_SLACK: f64 = 1e-6;
const MONOTONE_SLACK: f64 = 0.0;
const SANDWICH_SLACK: f64 = 1e-8;
const A4_DELTA: f64 = 1e-3;
const A4_TRUNCATED_M: usize = 4;
const EPSILON: f64 = 0.05;
const A5_SCENARIOS: usize = 20_000;
const MC_HORIZON: f64 = 50.0;
const A7_SCENARIOS: usize = 10_000;
const A8_SCENARIOS: usize = 100_000;
const A8_TIMES: [f64; 3] = [0.1, 0.3, 1.0];
const A10_TOL: f64 = 2e-2;
const Z: f64 = 3.0;

struct Ledger {
    failed: Vec<&'static str>,
}

impl Ledger {
    fn record(&mut self, id: &'static str, passed: bool, elapsed: Duration, limit: Duration, detail: String) {
        let on_time = elapsed <= limit;
        let ok = passed && on_time;
        println!(
            "{id} {} [{:.1}s / {:.0}s] {detail}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        );
        if !ok {
            self.failed.push(id);
        }
    }
}

fn config(text: &str) -> RunConfig {
    RunConfig::from_json(text).expect("acceptance config parses")
}

fn random_interior<R: Rng>(n: usize, rng: &mut R) -> BeliefPoint {
    let v: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    BeliefPoint::from_vec(v.into_iter().map(|x| x / s).collect()).unwrap()
}

fn a1() -> Result<(bool, String)> {
    let cases = [
        ("erlang", ModelSpec::new(build_erlang(2, 3.0)?, 5.0, 10.0, 1.0)?, [0.0, 0.4, 0.6]),
        ("hyperexponential", ModelSpec::new(build_hyperexponential(&[3.0, 2.0])?, 2.0, 6.0, 1.0)?, [0.0, 0.5, 0.5]),
    ];
    let mut rng = scenario_rng(1, 0);
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, model, target) in cases {
        let target = BeliefPoint::from_vec(target.to_vec())?;
        let mut worst = 0.0f64;
        for _ in 0..A1_STARTS {
            let p = random_interior(2, &mut rng);
            worst = worst.max(flow(&model, &p, A1_TIME)?.sup_distance(&target));
        }
        passed &= worst <= A1_TOL;
        parts.push(format!("{name} max distance {worst:.2e}"));
    }
    Ok((passed, parts.join(", ")))
}

fn a2(models: &[(&str, RunConfig)]) -> Result<(bool, String)> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, cfg) in models {
        let worst = (0..A2_SCENARIOS)
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let s = sample_scenario(&cfg.model, &cfg.initial_belief, A2_HORIZON, &mut scenario_rng(2, i))?;
                let path = Trajectory::build(&cfg.model, &cfg.initial_belief, &s.arrivals)?;
                let mut worst = 0.0f64;
                for (t, b) in filter_oracle(&cfg.model, &cfg.initial_belief, &s.arrivals, A2_STEP, A2_HORIZON)? {
                    worst = worst.max(path.at(&cfg.model, t)?.sup_distance(&b));
                }
                Ok(worst)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        passed &= worst <= A2_TOL;
        parts.push(format!("{name} sup distance {worst:.2e}"));
    }
    Ok((passed, parts.join(", ")))
}

/// Largest excess of a lattice midpoint average over the node value.
fn concavity_excess(grid: &SimplexGrid, values: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..values.len() {
        let x = grid.node_coords(k).to_vec();
        for d in 0..grid.n() {
            if x[d] == 0 {
                continue;
            }
            let (mut lo, mut hi) = (x.clone(), x.clone());
            lo[d] -= 1;
            hi[d] += 1;
            if let (Some(a), Some(b)) = (grid.node_index(&lo), grid.node_index(&hi)) {
                worst = worst.max((values[a] + values[b]) / 2.0 - values[k]);
            }
        }
    }
    worst
}

fn a3(tables: &[(&str, ValueTable)]) -> (bool, String) {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, table) in tables {
        let grid = &table.grid;
        let iterates = table.iterates.as_ref().expect("iterates stored");
        let h: Vec<f64> = (0..grid.node_count()).map(|k| 1.0 - grid.node_absorbed(k)).collect();
        let mut increase = 0.0f64;
        let mut outside = 0.0f64;
        let mut concave = 0.0f64;
        let mut nested = true;
        for (m, v) in iterates.iter().enumerate() {
            for k in 0..v.len() {
                outside = outside.max(-v[k]).max(v[k] - h[k]);
            }
            concave = concave.max(concavity_excess(grid, v));
            if m > 0 {
                let prev = &iterates[m - 1];
                increase = increase.max(v.iter().zip(prev).map(|(a, b)| a - b).fold(0.0, f64::max));
                nested &= region_of(grid, v, 0.0).is_subset_of(&region_of(grid, prev, 0.0));
            }
        }
        let ok = increase <= MONOTONE_SLACK && outside <= 0.0 && concave <= TAU_CONC + CONCAVITY_SLACK && nested;
        passed &= ok;
        parts.push(format!(
            "{name} m={} increase {increase:.1e} outside {outside:.1e} concavity {concave:.1e} nested {nested}",
            table.m
        ));
    }
    (passed, parts.join("; "))
}

fn a4(erlang: &RunConfig) -> Result<(bool, String)> {
    let model = &erlang.model;
    let grid = SimplexGrid::new(model.n(), erlang.resolution)?;
    let plan = iteration_plan(model, &erlang.initial_belief, erlang.epsilon)?.with_iterations(64);
    let opts = SolveOptions { empirical_stop: None, store_iterates: true };
    let table = value_iterate(model, &grid, &plan, &opts)?;
    let its = table.iterates.as_ref().expect("iterates stored");
    let mut lower_gap = f64::NEG_INFINITY;
    let mut upper_gap = f64::NEG_INFINITY;
    for m in [8usize, 32] {
        for k in 0..grid.node_count() {
            let bound = error_bound(model, &grid.node_belief(k), m)? + m as f64 * plan.delta;
            lower_gap = lower_gap.max(its[m][k] - bound - its[2 * m][k]);
            upper_gap = upper_gap.max(its[2 * m][k] - its[m][k]);
        }
    }
    let iterated_ok = lower_gap <= SANDWICH_SLACK && upper_gap <= SANDWICH_SLACK;

    // Truncated against exact-horizon iterates on a model whose waiting horizon is finite.
    let slow_change = ModelSpec::new(build_hyperexponential(&[3.0, 2.0])?, 2.0, 1.0, 1.5)?;
    let start = BeliefPoint::transient_vertex(2, 0);
    let grid = SimplexGrid::new(2, 40)?;
    let bounded = iteration_plan(&slow_change, &start, 1.0)?.with_iterations(A4_TRUNCATED_M);
    let truncated = IterationPlan::truncated(&slow_change, A4_DELTA, A4_TRUNCATED_M)?;
    let exact = value_iterate(&slow_change, &grid, &bounded, &opts)?;
    let cut = value_iterate(&slow_change, &grid, &truncated, &opts)?;
    let (e_its, c_its) = (exact.iterates.unwrap(), cut.iterates.unwrap());
    let mut below = f64::NEG_INFINITY;
    let mut above = f64::NEG_INFINITY;
    for m in 1..=A4_TRUNCATED_M {
        for k in 0..grid.node_count() {
            below = below.max(e_its[m][k] - c_its[m][k]);
            above = above.max(c_its[m][k] - e_its[m][k] - m as f64 * A4_DELTA);
        }
    }
    let truncated_ok = format!("{:?}", bounded.mode) == "Bounded" && below <= SANDWICH_SLACK && above <= SANDWICH_SLACK;
    Ok((
        iterated_ok && truncated_ok,
        format!(
            "V_2m - V_m max {upper_gap:.1e}, V_m - bound - V_2m max {lower_gap:.2e}; truncated: V_m - V_dm max {below:.1e}, V_dm - V_m - m·δ max {above:.1e} (t* {:.3}, t(δ) {:.3})",
            bounded.t_limit, truncated.t_limit
        ),
    ))
}

struct McResults {
    passed5: bool,
    detail5: String,
    passed9: bool,
    detail9: String,
}

fn a5_a9(cases: &[(&str, RunConfig, ValueTable)]) -> Result<McResults> {
    let mut out = McResults { passed5: true, detail5: String::new(), passed9: true, detail9: String::new() };
    let mut parts5 = Vec::new();
    let mut parts9 = Vec::new();
    for (name, cfg, table) in cases {
        let pi = &cfg.initial_belief;
        let v = table.value_at(pi.as_slice());
        let bound = error_bound(&cfg.model, pi, table.m)?;
        let hitting = Policy::hitting(table.clone(), EPSILON)?;
        let h = evaluate_policy(&cfg.model, pi, &hitting, A5_SCENARIOS, MC_HORIZON, 5)?;
        let sequential = Policy::sequential(table.clone(), EPSILON)?;
        let s = evaluate_policy(&cfg.model, pi, &sequential, A5_SCENARIOS, MC_HORIZON, 6)?;
        let hit_ok = h.mean_risk >= v - bound - Z * h.std_error && h.mean_risk <= v + EPSILON + Z * h.std_error;
        let seq_ok = s.mean_risk <= v + EPSILON / 2.0 + Z * s.std_error;
        let censored_ok = h.censored_fraction == 0.0 && s.censored_fraction == 0.0;
        out.passed5 &= hit_ok && seq_ok && censored_ok;
        parts5.push(format!(
            "{name} V_M {v:.4} (bound {bound:.3}) hitting {:.4}±{:.4} sequential {:.4}±{:.4}",
            h.mean_risk, h.std_error, s.mean_risk, s.std_error
        ));
        let limit = 1.0 / cfg.model.c + mean_absorption(&cfg.model.gen, pi)?;
        out.passed9 &= h.mean_alarm_time <= limit + Z * h.alarm_time_std_error;
        parts9.push(format!("{name} E[τ] {:.4}±{:.4} ≤ {limit:.4}", h.mean_alarm_time, h.alarm_time_std_error));
    }
    out.detail5 = parts5.join("; ");
    out.detail9 = parts9.join("; ");
    Ok(out)
}

fn a6(tables: &[(&str, ValueTable)]) -> (bool, String) {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, table) in tables {
        let grid = &table.grid;
        let x_hat = table.model.stop_threshold();
        let nodes: Vec<usize> = (0..grid.node_count()).filter(|&k| grid.node_absorbed(k) >= x_hat).collect();
        let exact = table
            .iterates
            .as_ref()
            .expect("iterates stored")
            .iter()
            .all(|v| nodes.iter().all(|&k| v[k] == 1.0 - grid.node_absorbed(k)));
        passed &= exact && !nodes.is_empty();
        parts.push(format!("{name} x̂ {x_hat:.4}, {} nodes, exact {exact}", nodes.len()));
    }
    (passed, parts.join("; "))
}

fn a7(cfg: &RunConfig, table: &ValueTable) -> Result<(bool, String)> {
    let policy = Policy::hitting(table.clone(), EPSILON)?;
    let d = delay_identity_check(&cfg.model, &cfg.initial_belief, &policy, A7_SCENARIOS, MC_HORIZON, 7)?;
    Ok((
        d.difference <= Z * d.combined_se,
        format!("direct {:.5} posterior {:.5} difference {:.2e} combined SE {:.2e}", d.direct, d.posterior, d.difference, d.combined_se),
    ))
}

fn a8(models: &[(&str, RunConfig)]) -> Result<(bool, String)> {
    let mut passed = true;
    let mut parts = Vec::new();
    let horizon = A8_TIMES.iter().copied().fold(0.0, f64::max) + 0.5;
    for (name, cfg) in models {
        let batch = sample_batch(&cfg.model, &cfg.initial_belief, horizon, A8_SCENARIOS, 8)?;
        let n = batch.len() as f64;
        let mut worst = 0.0f64;
        for t in A8_TIMES {
            let empirical = batch.iter().filter(|s| s.first_arrival().is_none_or(|a| a > t)).count() as f64 / n;
            let exact = sigma1_law(&cfg.model, &cfg.initial_belief, t)?.survival;
            let se = (exact * (1.0 - exact) / n).sqrt();
            let z = (empirical - exact).abs() / se;
            worst = worst.max(z);
        }
        passed &= worst <= Z;
        parts.push(format!("{name} max |z| {worst:.2}"));
    }
    Ok((passed, parts.join(", ")))
}

fn a10(models: &[(&str, RunConfig)]) -> Result<(bool, String)> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, cfg) in models {
        let mut cfg = cfg.clone();
        cfg.store_iterates = false;
        let coarse = cfg.solve_at(40)?;
        let fine = cfg.solve_at(80)?;
        let delta = fine.sup_distance(&coarse);
        passed &= delta <= A10_TOL;
        parts.push(format!("{name} sup difference {delta:.2e}"));
    }
    Ok((passed, parts.join(", ")))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn unwrap_check(r: Result<(bool, String)>) -> (bool, String) {
    r.unwrap_or_else(|e| (false, format!("error: {e}")))
}

fn main() -> ExitCode {
    let mut ledger = Ledger { failed: Vec::new() };
    let secs = Duration::from_secs;
    let erlang = config(ERLANG);
    let hyper = config(HYPEREXP);
    let models = [("erlang", erlang.clone()), ("hyperexponential", hyper.clone())];

    let ((ok, detail), t) = timed(|| unwrap_check(a1()));
    ledger.record("A1", ok, t, secs(1), detail);

    let ((ok, detail), t) = timed(|| unwrap_check(a2(&models)));
    ledger.record("A2", ok, t, secs(30), detail);

    let (solved, solve_time) = timed(|| -> Result<Vec<(&str, ValueTable)>> {
        Ok(vec![("erlang", erlang.solve()?), ("hyperexponential", hyper.solve()?)])
    });
    let tables = match solved {
        Ok(t) => t,
        Err(e) => {
            for id in ["A3", "A5", "A6", "A7", "A9"] {
                ledger.record(id, false, solve_time, secs(0), format!("solve failed: {e}"));
            }
            Vec::new()
        }
    };
    if !tables.is_empty() {
        let ((ok, detail), t) = timed(|| a3(&tables));
        ledger.record("A3", ok, solve_time + t, secs(300), detail);
    }

    let ((ok, detail), t) = timed(|| unwrap_check(a4(&erlang)));
    ledger.record("A4", ok, t, secs(300), detail);

    if !tables.is_empty() {
        let cases = vec![
            ("erlang", erlang.clone(), tables[0].1.clone()),
            ("hyperexponential", hyper.clone(), tables[1].1.clone()),
        ];
        let (mc, t) = timed(|| a5_a9(&cases));
        match mc {
            Ok(r) => {
                ledger.record("A5", r.passed5, t, secs(180), r.detail5);
                let ((ok, detail), t6) = timed(|| a6(&tables));
                ledger.record("A6", ok, t6, secs(1), detail);
                let ((ok, detail), t7) = timed(|| unwrap_check(a7(&erlang, &tables[0].1)));
                ledger.record("A7", ok, t7, secs(120), detail);
                ledger.record("A9", r.passed9, t, secs(180), r.detail9);
            }
            Err(e) => {
                for id in ["A5", "A6", "A7", "A9"] {
                    ledger.record(id, false, t, secs(180), format!("error: {e}"));
                }
            }
        }
    }

    let ((ok, detail), t) = timed(|| unwrap_check(a8(&models)));
    ledger.record("A8", ok, t, secs(60), detail);

    let ((ok, detail), t) = timed(|| unwrap_check(a10(&models)));
    ledger.record("A10", ok, t, secs(600), detail);

    if ledger.failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing {}", ledger.failed.join(", "));
        ExitCode::FAILURE
    }
}
