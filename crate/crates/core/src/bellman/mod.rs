//! Value iteration for optimal stopping of the posterior process.
//!
//! `J w(t, π)` is the cost of waiting until `t` or the first arrival, whichever
//! comes first, then either stopping (at `t`) or continuing with value `w`
//! (after the arrival). `J₀ w(π) = inf_t J w(t, π)` and the iterates
//! `v_{m+1} = J₀ v_m`, `v_0 = h`, decrease to the value function.

mod profile;
mod region;
mod table;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowKernel, ModelSpec};
use crate::grid::SimplexGrid;
use crate::numerics::{adaptive_simpson, minimize_on_interval};
use crate::phase_type::{mean_absorption, BeliefPoint};
use crate::tolerance::{DELTA_FLOOR, PROBE_COUNT, REL_T_TOL, TAU_QUAD, TIE_TOL};

pub use profile::{PathProfile, ProfileBuilder};
pub use region::{r_epsilon, region_of, stopping_region, BoundaryPolyline, StoppingRegion, ThresholdSolver};
pub use table::{value_iterate, SolveOptions, ValueTable};

/// Running cost rate `k(π) = c·π_Δ` and stopping cost `h(π) = 1 - π_Δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Costs {
    pub running: f64,
    pub terminal: f64,
}

pub fn costs(model: &ModelSpec, pi: &BeliefPoint) -> Costs {
    Costs { running: model.c * pi.absorbed(), terminal: 1.0 - pi.absorbed() }
}

/// A bounded function on the belief simplex, evaluated at probability vectors (absorbed last).
pub trait ValueFunction: Sync {
    fn value(&self, p: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> ValueFunction for F {
    fn value(&self, p: &[f64]) -> f64 {
        self(p)
    }
}

/// Piecewise-linear interpolant of node values.
#[derive(Clone, Copy, Debug)]
pub struct GridFunction<'a> {
    pub grid: &'a SimplexGrid,
    pub values: &'a [f64],
}

impl ValueFunction for GridFunction<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        self.grid.interpolate(self.values, p)
    }
}

/// `t(δ) = -(1/λ₀)·log(δ / (4 + 2c/λ₀))`: beyond it `J w(·, π)` varies by at most `δ`.
pub fn truncation_time(model: &ModelSpec, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::domain(format!("truncation δ must be positive, got {delta}")));
    }
    let l0 = model.lambda0;
    Ok((-(delta / (4.0 + 2.0 * model.c / l0)).ln() / l0).max(0.0))
}

/// Upper time limit used when the waiting time is unrestricted.
pub fn quadrature_limit(model: &ModelSpec) -> f64 {
    truncation_time(model, DELTA_FLOOR).expect("floor is positive")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Finite(f64),
    Unbounded,
}

/// Uniform bound on optimal waiting times, from the time the comparison
/// solution `x' = (B̃ - ρx)(1 - x)`, `x(0) = 0`, needs to reach the
/// guaranteed-stop level.
pub fn horizon_tstar(model: &ModelSpec) -> Horizon {
    let b_min = model.gen.min_exit_rate();
    let rho = model.rho();
    let xhat = model.stop_threshold();
    let gap = b_min - rho;
    if b_min <= 0.0 {
        return Horizon::Unbounded;
    }
    if gap.abs() <= crate::tolerance::TAU_RATE {
        return Horizon::Finite(xhat / ((1.0 - xhat) * b_min));
    }
    if gap > 0.0 {
        let t = ((b_min - rho * xhat) / (b_min * (1.0 - xhat))).ln() / gap;
        return Horizon::Finite(t);
    }
    Horizon::Unbounded
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Waiting times restricted to `[0, t*]`, which loses nothing.
    Bounded,
    /// Waiting times truncated at `t(δ)`, costing at most `δ` per iteration.
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub mode: Mode,
    pub iterations: usize,
    /// Truncation parameter; zero in bounded mode.
    pub delta: f64,
    pub t_limit: f64,
}

impl IterationPlan {
    /// Plan with an explicit iteration count, keeping mode and horizon.
    pub fn with_iterations(self, iterations: usize) -> Self {
        Self { iterations, ..self }
    }

    /// Truncated-mode plan with the given `δ`.
    pub fn truncated(model: &ModelSpec, delta: f64, iterations: usize) -> Result<Self> {
        Ok(Self { mode: Mode::Truncated, iterations, delta, t_limit: truncation_time(model, delta)? })
    }
}

/// Iteration count and waiting-time horizon that make `V_M` (or `V_{δ,M}`)
/// `ε`-close to the value function at `π`.
pub fn iteration_plan(model: &ModelSpec, pi: &BeliefPoint, epsilon: f64) -> Result<IterationPlan> {
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("ε must be positive, got {epsilon}")));
    }
    let mean = mean_absorption(&model.gen, pi)?;
    let scale = (1.0 / model.c + mean) * model.max_rate();
    match horizon_tstar(model) {
        Horizon::Finite(t) => {
            let m = 1.0 + scale / (epsilon * epsilon);
            Ok(IterationPlan { mode: Mode::Bounded, iterations: ceil_count(m), delta: 0.0, t_limit: t })
        }
        Horizon::Unbounded => {
            // With δ = 1/(M√(M-1)) the error is Mδ + √(scale/(M-1)) = (1 + √scale)/√(M-1),
            // which is at most ε once M - 1 ≥ (1 + √scale)²/ε².
            let m = 1.0 + (1.0 + scale.sqrt()).powi(2) / (epsilon * epsilon);
            let delta = 1.0 / (m * (m - 1.0).sqrt());
            Ok(IterationPlan {
                mode: Mode::Truncated,
                iterations: ceil_count(m),
                delta,
                t_limit: truncation_time(model, delta)?,
            })
        }
    }
}

// Round-off just above an integer does not cost an extra iteration.
fn ceil_count(m: f64) -> usize {
    ((m - 1e-9).ceil() as usize).max(1)
}

/// `√((1/c + E^π[Θ])·max(λ₀,λ₁)/(m-1))`: `V_m - bound ≤ V ≤ V_m` at `π`.
pub fn error_bound(model: &ModelSpec, pi: &BeliefPoint, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::domain(format!("error bound needs m ≥ 2, got {m}")));
    }
    Ok(bound_for_mean(model, mean_absorption(&model.gen, pi)?, m))
}

pub(crate) fn bound_for_mean(model: &ModelSpec, mean: f64, m: usize) -> f64 {
    ((1.0 / model.c + mean) * model.max_rate() / (m as f64 - 1.0)).sqrt()
}

/// Stopping cost plus running cost accrued before `t` on the no-arrival path, given `z(t)`.
pub(crate) fn closed_form_terms(kernel: &FlowKernel, pi: &[f64], z: &[f64]) -> f64 {
    let n = kernel.n();
    let q_inv = kernel.q_inv();
    let mut absorbed_time = 0.0;
    for i in 0..=n {
        absorbed_time += (z[i] - pi[i]) * q_inv[(i, n)];
    }
    let survival_cost: f64 = z[..n].iter().sum();
    kernel.cost_rate() * absorbed_time + survival_cost
}

/// `J w(t, π)`; `t = ∞` means the quadrature limit. The jump term is
/// integrated by adaptive Simpson.
pub fn j_eval(model: &ModelSpec, w: &dyn ValueFunction, t: f64, pi: &BeliefPoint) -> Result<f64> {
    let kernel = FlowKernel::new(model)?;
    model.check_belief(pi)?;
    let t = if t.is_infinite() { quadrature_limit(model) } else { t };
    j_eval_with(&kernel, w, t, pi.as_slice())
}

pub(crate) fn j_eval_with(kernel: &FlowKernel, w: &dyn ValueFunction, t: f64, pi: &[f64]) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be ≥ 0, got {t}")));
    }
    let n = kernel.n();
    if t == 0.0 {
        return Ok(1.0 - pi[n]);
    }
    let rates = kernel.rates();
    let mut failure: Option<Error> = None;
    let mut jumped = vec![0.0; n + 1];
    let jump_term = adaptive_simpson(
        |s| {
            let z = match kernel.z(pi, s) {
                Ok(z) => z,
                Err(e) => {
                    failure.get_or_insert(e);
                    return 0.0;
                }
            };
            let mut density = 0.0;
            for i in 0..=n {
                jumped[i] = z[i] * rates[i];
                density += jumped[i];
            }
            if density <= 0.0 {
                return 0.0;
            }
            for v in jumped.iter_mut() {
                *v /= density;
            }
            let value = w.value(&jumped);
            if !(-1e-12..=1.0 + 1e-12).contains(&value) {
                failure.get_or_insert(Error::Contract(format!(
                    "value function returned {value} at {jumped:?}"
                )));
            }
            density * value
        },
        0.0,
        t,
        TAU_QUAD,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let z = kernel.z(pi, t)?;
    Ok(closed_form_terms(kernel, pi, &z) + jump_term)
}

/// `(inf_{t ≤ horizon} J w(t, π), smallest minimizer)`; `horizon = ∞` means the quadrature limit.
pub fn j0_eval(model: &ModelSpec, w: &dyn ValueFunction, pi: &BeliefPoint, horizon: f64) -> Result<(f64, f64)> {
    if !(horizon > 0.0) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    let kernel = FlowKernel::new(model)?;
    model.check_belief(pi)?;
    let horizon = if horizon.is_infinite() { quadrature_limit(model) } else { horizon };
    let mut failure = None;
    let (t, v) = minimize_on_interval(
        |t| match j_eval_with(&kernel, w, t, pi.as_slice()) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        horizon,
        PROBE_COUNT,
        REL_T_TOL * horizon,
        TIE_TOL,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok((v, t)),
    }
}
