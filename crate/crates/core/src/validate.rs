//! Invariant checks run by the `validate` command.

use rand::Rng;
use serde::Serialize;

use crate::bellman::{error_bound, stopping_region, ValueTable};
use crate::config::RunConfig;
use crate::error::Result;
use crate::flow::{flow, jump, sigma1_law, ModelSpec, Trajectory};
use crate::phase_type::{validate_generator, BeliefPoint};
use crate::policy::Policy;
use crate::risk::{delay_identity_check, evaluate_policy, filter_oracle};
use crate::scenario::{sample_scenario, scenario_rng};

const SEMIGROUP_TOL: f64 = 1e-9;
const SIMPLEX_TOL: f64 = 1e-12;
const DENSITY_TOL: f64 = 1e-5;
const FILTER_STEP: f64 = 1e-3;
const FILTER_TOL: f64 = 1e-4;
/// Allowed second-difference violation of node values along lattice lines.
pub const CONCAVITY_TOL: f64 = 1e-3;
/// Allowed overshoot in the iterate sandwich.
pub const SANDWICH_SLACK: f64 = 1e-8;
/// Grid error allowance when comparing simulated risk with node values.
pub const RISK_GRID_SLACK: f64 = 1e-2;
const RANDOM_POINTS: usize = 24;
const ORACLE_SCENARIOS: usize = 4;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn record(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn random_belief<R: Rng>(n: usize, rng: &mut R) -> Result<BeliefPoint> {
    let v: Vec<f64> = (0..=n).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
    let s: f64 = v.iter().sum();
    BeliefPoint::from_vec(v.into_iter().map(|x| x / s).collect())
}

fn simplex_error(p: &BeliefPoint) -> f64 {
    let neg = p.as_slice().iter().fold(0.0f64, |m, &x| m.max(-x));
    neg.max((p.as_slice().iter().sum::<f64>() - 1.0).abs())
}

/// Flow semigroup, simplex preservation, first-arrival law and filter agreement.
pub fn check_dynamics(model: &ModelSpec, seed: u64, report: &mut ValidationReport) -> Result<()> {
    let violations = validate_generator(&model.gen);
    report.record("generator", violations.is_empty(), format!("{} violations", violations.len()));

    let mut rng = scenario_rng(seed, u64::MAX);
    let n = model.n();
    let mut semigroup = 0.0f64;
    let mut simplex = 0.0f64;
    let mut density = 0.0f64;
    for _ in 0..RANDOM_POINTS {
        let p = random_belief(n, &mut rng)?;
        let s = rng.gen_range(0.0..3.0);
        let t = rng.gen_range(0.0..3.0);
        let direct = flow(model, &p, s + t)?;
        let composed = flow(model, &flow(model, &p, s)?, t)?;
        semigroup = semigroup.max(direct.sup_distance(&composed));
        simplex = simplex.max(simplex_error(&direct)).max(simplex_error(&jump(model, &p)));
        let h = 1e-4;
        let up = sigma1_law(model, &p, t + h)?.survival;
        let down = sigma1_law(model, &p, t.max(h) - h)?.survival;
        let fd = -(up - down) / (t + h - (t.max(h) - h));
        let at = sigma1_law(model, &p, t)?.density;
        density = density.max((fd - at).abs());
    }
    report.record("flow semigroup", semigroup <= SEMIGROUP_TOL, format!("max sup distance {semigroup:.3e}"));
    report.record("simplex preservation", simplex <= SIMPLEX_TOL, format!("max deviation {simplex:.3e}"));
    report.record("first arrival density", density <= DENSITY_TOL, format!("max density error {density:.3e}"));

    let start = BeliefPoint::transient_vertex(n, 0);
    let mut filter_err = 0.0f64;
    for i in 0..ORACLE_SCENARIOS {
        let scenario = sample_scenario(model, &start, 10.0, &mut scenario_rng(seed, i as u64))?;
        let path = Trajectory::build(model, &start, &scenario.arrivals)?;
        for (t, b) in filter_oracle(model, &start, &scenario.arrivals, FILTER_STEP, 10.0)? {
            filter_err = filter_err.max(path.at(model, t)?.sup_distance(&b));
        }
    }
    report.record("filter agreement", filter_err <= FILTER_TOL, format!("max sup distance {filter_err:.3e}"));
    Ok(())
}

/// Structural properties of a solved table.
pub fn check_table(table: &ValueTable, epsilon: f64, report: &mut ValidationReport) -> Result<()> {
    let grid = &table.grid;
    let values = &table.values;
    let h = |k: usize| 1.0 - grid.node_absorbed(k);

    let bounded = (0..values.len()).all(|k| values[k] >= 0.0 && values[k] <= h(k));
    report.record("bounds", bounded, "0 ≤ v ≤ h at every node".into());

    let x_hat = table.model.stop_threshold();
    let guaranteed = (0..values.len())
        .filter(|&k| grid.node_absorbed(k) >= x_hat)
        .map(|k| (values[k] - h(k)).abs())
        .fold(0.0f64, f64::max);
    report.record("guaranteed stop", guaranteed <= 1e-12, format!("max |v - h| above x̂: {guaranteed:.3e}"));

    let mut concavity = 0.0f64;
    let n = grid.n();
    for k in 0..values.len() {
        let x = grid.node_coords(k).to_vec();
        for d in 0..n {
            let mut lo = x.clone();
            let mut hi = x.clone();
            if x[d] == 0 {
                continue;
            }
            lo[d] -= 1;
            hi[d] += 1;
            if let (Some(a), Some(b)) = (grid.node_index(&lo), grid.node_index(&hi)) {
                concavity = concavity.max((values[a] + values[b]) / 2.0 - values[k]);
            }
        }
    }
    report.record("concavity", concavity <= CONCAVITY_TOL, format!("max midpoint excess {concavity:.3e}"));

    let inner = stopping_region(table, epsilon / 2.0);
    let middle = stopping_region(table, epsilon);
    let outer = stopping_region(table, 2.0 * epsilon);
    let nested = inner.is_subset_of(&middle) && middle.is_subset_of(&outer);
    report.record("region nesting", nested, format!("{} members at ε", middle.member_count()));
    report.record(
        "region convexity",
        middle.is_convex(),
        format!("{} violating pairs", middle.convexity_violations),
    );

    if let Some(iterates) = &table.iterates {
        let mut monotone = 0.0f64;
        let mut sandwich = 0.0f64;
        for w in iterates.windows(2) {
            monotone = monotone.max(w[1].iter().zip(&w[0]).map(|(a, b)| a - b).fold(0.0, f64::max));
        }
        let last = &iterates[iterates.len() - 1];
        for (k, it) in iterates.iter().enumerate().skip(2) {
            for node in 0..values.len() {
                let bound = error_bound(&table.model, &grid.node_belief(node), k)? + k as f64 * table.delta;
                sandwich = sandwich.max(it[node] - bound - last[node]);
            }
        }
        report.record("monotone iterates", monotone <= SANDWICH_SLACK, format!("max increase {monotone:.3e}"));
        report.record("iterate sandwich", sandwich <= SANDWICH_SLACK, format!("max excess {sandwich:.3e}"));
    }
    Ok(())
}

/// Simulated risk of the hitting rule against the table value, and the delay identity.
pub fn check_risk(config: &RunConfig, table: &ValueTable, report: &mut ValidationReport) -> Result<()> {
    let pi = &config.initial_belief;
    let policy = Policy::hitting(table.clone(), config.epsilon)?;
    let est = evaluate_policy(&config.model, pi, &policy, config.samples, config.horizon, config.seed)?;
    let v = table.value_at(pi.as_slice());
    let slack = 3.0 * est.std_error + RISK_GRID_SLACK + est.censored_risk_bound;
    let lower = v - table.certified_bound - slack;
    let upper = v + config.epsilon + slack;
    report.record(
        "hitting risk",
        est.mean_risk >= lower && est.mean_risk <= upper,
        format!("risk {:.5} ± {:.5}, table value {v:.5}", est.mean_risk, est.std_error),
    );
    let identity = delay_identity_check(&config.model, pi, &policy, config.samples, config.horizon, config.seed)?;
    report.record(
        "delay identity",
        identity.agrees,
        format!("direct {:.5}, posterior {:.5}, combined se {:.2e}", identity.direct, identity.posterior, identity.combined_se),
    );
    Ok(())
}

/// Full suite: dynamics, a fresh solve with stored iterates, and Monte Carlo checks.
pub fn run_suite(config: &RunConfig) -> Result<(ValidationReport, ValueTable)> {
    let mut report = ValidationReport::default();
    check_dynamics(&config.model, config.seed, &mut report)?;
    let mut solve_config = config.clone();
    solve_config.store_iterates = true;
    let table = solve_config.solve()?;
    check_table(&table, config.epsilon, &mut report)?;
    check_risk(config, &table, &mut report)?;
    Ok((report, table))
}
