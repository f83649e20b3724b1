//! Monte Carlo Bayes risk, the delay identity, and an independent discrete-time filter.

use std::io::Write;

use nalgebra::RowDVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{check_arrivals, flow, ModelSpec};
use crate::linalg::expm;
use crate::numerics::adaptive_simpson;
use crate::phase_type::BeliefPoint;
use crate::policy::{run_with_alarm, DetectionOutcome, Policy};
use crate::scenario::{sample_scenario, scenario_rng, Scenario};
use crate::tolerance::TAU_QUAD;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    /// `false_alarm_rate + c·mean_delay`.
    pub mean_risk: f64,
    pub std_error: f64,
    pub false_alarm_rate: f64,
    pub mean_delay: f64,
    pub mean_alarm_time: f64,
    pub alarm_time_std_error: f64,
    pub censored_fraction: f64,
    /// Largest risk the censored runs could add: `(1 + c·horizon)·censored_fraction`.
    pub censored_risk_bound: f64,
    pub samples: usize,
    pub seed: u64,
}

fn mean_and_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, f64::NAN);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates outcomes; censored runs enter with `τ = horizon`.
pub fn summarize(c: f64, horizon: f64, outcomes: &[DetectionOutcome], seed: u64) -> RiskEstimate {
    let n = outcomes.len() as f64;
    let false_alarm_rate = outcomes.iter().filter(|o| o.false_alarm).count() as f64 / n;
    let mean_delay = outcomes.iter().map(|o| o.delay).sum::<f64>() / n;
    let risks = outcomes.iter().map(|o| if o.false_alarm { 1.0 } else { 0.0 } + c * o.delay);
    let (_, std_error) = mean_and_se(risks);
    let (mean_alarm_time, alarm_time_std_error) = mean_and_se(outcomes.iter().map(|o| o.tau));
    let censored_fraction = outcomes.iter().filter(|o| o.censored).count() as f64 / n;
    RiskEstimate {
        mean_risk: false_alarm_rate + c * mean_delay,
        std_error,
        false_alarm_rate,
        mean_delay,
        mean_alarm_time,
        alarm_time_std_error,
        censored_fraction,
        censored_risk_bound: (1.0 + c * horizon) * censored_fraction,
        samples: outcomes.len(),
        seed,
    }
}

/// Outcomes of `count` simulated scenarios (scenario `i` uses stream `i` of `seed`).
pub fn simulate_outcomes(
    model: &ModelSpec,
    pi: &BeliefPoint,
    policy: &Policy,
    count: usize,
    horizon: f64,
    seed: u64,
) -> Result<Vec<DetectionOutcome>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scenario = sample_scenario(model, pi, horizon, &mut scenario_rng(seed, i as u64))?;
            Ok(run_with_alarm(policy, model, pi, &scenario)?.0)
        })
        .collect()
}

pub fn evaluate_policy(
    model: &ModelSpec,
    pi: &BeliefPoint,
    policy: &Policy,
    count: usize,
    horizon: f64,
    seed: u64,
) -> Result<RiskEstimate> {
    if count == 0 {
        return Err(Error::domain("risk evaluation needs at least one scenario"));
    }
    let outcomes = simulate_outcomes(model, pi, policy, count, horizon, seed)?;
    Ok(summarize(model.c, horizon, &outcomes, seed))
}

/// CSV with columns `tau, theta, fa, delay, censored`.
pub fn write_outcomes_csv<W: Write>(outcomes: &[DetectionOutcome], mut out: W) -> Result<()> {
    writeln!(out, "tau,theta,fa,delay,censored")?;
    for o in outcomes {
        writeln!(out, "{},{},{},{},{}", o.tau, o.theta, o.false_alarm as u8, o.delay, o.censored as u8)?;
    }
    Ok(())
}

/// Two estimators of the expected detection delay that must agree in expectation:
/// `E(τ - Θ)⁺` and `E ∫₀^τ Π_t dt`, where `Π_t` is the posterior disorder probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayIdentity {
    pub direct: f64,
    pub direct_se: f64,
    pub posterior: f64,
    pub posterior_se: f64,
    pub difference: f64,
    pub combined_se: f64,
    pub agrees: bool,
    pub samples: usize,
}

/// `∫₀^τ Π_t dt` along the posterior path of a scenario.
pub fn posterior_delay(model: &ModelSpec, pi: &BeliefPoint, scenario: &Scenario, tau: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut start = 0.0;
    let mut belief = pi.clone();
    let mut failure = None;
    let mut integrate = |b: &BeliefPoint, len: f64| {
        adaptive_simpson(
            |s| match flow(model, b, s) {
                Ok(x) => x.absorbed(),
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            },
            0.0,
            len,
            TAU_QUAD,
        )
    };
    for &a in scenario.arrivals.iter().take_while(|&&a| a < tau) {
        total += integrate(&belief, a - start);
        belief = crate::flow::jump(model, &flow(model, &belief, a - start)?);
        start = a;
    }
    total += integrate(&belief, tau - start);
    match failure {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

pub fn delay_identity_check(
    model: &ModelSpec,
    pi: &BeliefPoint,
    policy: &Policy,
    count: usize,
    horizon: f64,
    seed: u64,
) -> Result<DelayIdentity> {
    if count < 2 {
        return Err(Error::domain("delay identity needs at least two scenarios"));
    }
    let pairs: Vec<(f64, f64)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let scenario = sample_scenario(model, pi, horizon, &mut scenario_rng(seed, i as u64))?;
            let (outcome, _) = run_with_alarm(policy, model, pi, &scenario)?;
            Ok((outcome.delay, posterior_delay(model, pi, &scenario, outcome.tau)?))
        })
        .collect::<Result<_>>()?;
    let (direct, direct_se) = mean_and_se(pairs.iter().map(|p| p.0));
    let (posterior, posterior_se) = mean_and_se(pairs.iter().map(|p| p.1));
    let combined_se = (direct_se.powi(2) + posterior_se.powi(2)).sqrt();
    let difference = (direct - posterior).abs();
    Ok(DelayIdentity {
        direct,
        direct_se,
        posterior,
        posterior_se,
        difference,
        combined_se,
        agrees: difference <= 3.0 * combined_se || difference == 0.0,
        samples: count,
    })
}

/// Discrete-time Bayes filter on a step grid up to `end`.
///
/// Each step applies half the no-arrival likelihood, the exact chain
/// transition `exp(step·A)`, then the other half; arrivals split the step and
/// multiply by the state's arrival rate. Returns `(time, belief)` at every grid
/// time and, post-jump, at every arrival.
pub fn filter_oracle(
    model: &ModelSpec,
    pi: &BeliefPoint,
    arrivals: &[f64],
    step: f64,
    end: f64,
) -> Result<Vec<(f64, BeliefPoint)>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!("filter step must be positive, got {step}")));
    }
    model.check_belief(pi)?;
    check_arrivals(arrivals)?;
    let generator = model.gen.full_generator();
    let rates = model.state_rates();
    let full = expm(&(&generator * step))?;
    let advance = |v: &mut RowDVector<f64>, len: f64, full_step: bool| -> Result<()> {
        for (x, r) in v.iter_mut().zip(&rates) {
            *x *= (-r * len / 2.0).exp();
        }
        *v = if full_step { &*v * &full } else { &*v * expm(&(&generator * len))? };
        for (x, r) in v.iter_mut().zip(&rates) {
            *x *= (-r * len / 2.0).exp();
        }
        let s = v.sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateBelief(format!("filter normalizer {s}")));
        }
        *v /= s;
        Ok(())
    };
    let mut v = RowDVector::from_row_slice(pi.as_slice());
    let mut t = 0.0;
    let mut out = vec![(0.0, pi.clone())];
    let mut next_arrival = arrivals.iter().copied().filter(|&a| a <= end).peekable();
    let steps = (end / step).round() as usize;
    for k in 1..=steps {
        let grid_t = (k as f64 * step).min(end);
        let mut split = false;
        while let Some(&a) = next_arrival.peek() {
            if a > grid_t {
                break;
            }
            advance(&mut v, a - t, false)?;
            for (x, r) in v.iter_mut().zip(&rates) {
                *x *= r;
            }
            v /= v.sum();
            t = a;
            split = true;
            next_arrival.next();
            out.push((t, BeliefPoint::from_vec(v.iter().copied().collect())?));
        }
        if grid_t > t {
            advance(&mut v, grid_t - t, !split && (grid_t - t - step).abs() < 1e-15)?;
            t = grid_t;
            out.push((t, BeliefPoint::from_vec(v.iter().copied().collect())?));
        }
    }
    Ok(out)
}
