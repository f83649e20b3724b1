//! Ground-truth simulation of (initial state, disorder time, arrival times).

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{check_arrivals, ModelSpec};
use crate::phase_type::{sample_absorption, BeliefPoint, ChainState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Initial hidden state; absent for imported scenarios that only carry observations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<ChainState>,
    pub theta: f64,
    pub arrivals: Vec<f64>,
    pub horizon: f64,
}

impl Scenario {
    pub fn new(initial: Option<ChainState>, theta: f64, arrivals: Vec<f64>, horizon: f64) -> Result<Self> {
        let s = Self { initial, theta, arrivals, horizon };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.theta >= 0.0) {
            return Err(Error::domain(format!("disorder time must be ≥ 0, got {}", self.theta)));
        }
        check_arrivals(&self.arrivals)?;
        if self.arrivals.last().is_some_and(|&a| a > self.horizon) {
            return Err(Error::domain("arrival after the horizon"));
        }
        match self.initial {
            Some(ChainState::Absorbed) if self.theta != 0.0 => {
                Err(Error::domain("absorbed initial state requires a zero disorder time"))
            }
            Some(ChainState::Transient(_)) if self.theta == 0.0 => {
                Err(Error::domain("transient initial state requires a positive disorder time"))
            }
            _ => Ok(()),
        }
    }

    /// First arrival time, if any arrival occurs before the horizon.
    pub fn first_arrival(&self) -> Option<f64> {
        self.arrivals.first().copied()
    }
}

/// Per-scenario generator: stream `index` of the ChaCha8 key derived from `seed`.
pub fn scenario_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn poisson_times<R: Rng + ?Sized>(rate: f64, from: f64, to: f64, rng: &mut R, out: &mut Vec<f64>) {
    if !(to > from) {
        return;
    }
    let gap = Exp::new(rate).expect("rates are positive");
    let mut t = from;
    loop {
        t += gap.sample(rng);
        if t > to {
            break;
        }
        // A gap can round to zero far from the origin; keep times strictly increasing.
        if out.last().is_none_or(|&last| t > last) {
            out.push(t);
        }
    }
}

pub fn sample_scenario<R: Rng + ?Sized>(
    model: &ModelSpec,
    pi: &BeliefPoint,
    horizon: f64,
    rng: &mut R,
) -> Result<Scenario> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    model.check_belief(pi)?;
    let (initial, theta) = sample_absorption(&model.gen, pi, rng);
    let mut arrivals = Vec::new();
    let change = theta.min(horizon);
    poisson_times(model.lambda0, 0.0, change, rng, &mut arrivals);
    poisson_times(model.lambda1, change, horizon, rng, &mut arrivals);
    Ok(Scenario { initial: Some(initial), theta, arrivals, horizon })
}

/// `count` scenarios, scenario `i` drawn from [`scenario_rng`]`(seed, i)`.
pub fn sample_batch(
    model: &ModelSpec,
    pi: &BeliefPoint,
    horizon: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Scenario>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    model.check_belief(pi)?;
    (0..count)
        .into_par_iter()
        .map(|i| sample_scenario(model, pi, horizon, &mut scenario_rng(seed, i as u64)))
        .collect()
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(scenarios: &[Scenario], mut out: W) -> Result<()> {
    for s in scenarios {
        serde_json::to_writer(&mut out, s)?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Scenario = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("scenario line {}: {e}", k + 1)))?;
        s.check()?;
        out.push(s);
    }
    Ok(out)
}
