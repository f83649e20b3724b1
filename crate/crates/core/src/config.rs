//! Run configuration read from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bellman::{iteration_plan, value_iterate, IterationPlan, SolveOptions, ValueTable};
use crate::error::{Error, Result};
use crate::grid::SimplexGrid;
use crate::flow::ModelSpec;
use crate::phase_type::{build_erlang, build_hyperexponential, BeliefPoint, PhaseTypeGenerator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErlangSpec {
    pub n: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperexponentialSpec {
    pub mu: Vec<f64>,
}

/// Prior generator, given explicitly or through a builder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorSpec {
    Explicit {
        #[serde(rename = "R")]
        rates: Vec<Vec<f64>>,
        r: Vec<f64>,
    },
    Erlang {
        erlang: ErlangSpec,
    },
    Hyperexponential {
        hyperexponential: HyperexponentialSpec,
    },
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<PhaseTypeGenerator> {
        match self {
            GeneratorSpec::Explicit { rates, r } => PhaseTypeGenerator::new(rates, r),
            GeneratorSpec::Erlang { erlang } => build_erlang(erlang.n, erlang.lambda),
            GeneratorSpec::Hyperexponential { hyperexponential } => build_hyperexponential(&hyperexponential.mu),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub generator: GeneratorSpec,
    pub lambda0: f64,
    pub lambda1: f64,
    pub c: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    /// Sup-norm change at which value iteration stops early.
    pub empirical_stop: Option<f64>,
    /// Cap on the number of iterations, below the theoretical count.
    pub max_iterations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelConfig,
    #[serde(default)]
    initial_belief: Option<Vec<f64>>,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_resolution")]
    resolution: usize,
    #[serde(default)]
    tolerances: ToleranceOverrides,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_horizon")]
    horizon: f64,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    store_iterates: bool,
    #[serde(default)]
    refinement_check: bool,
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_resolution() -> usize {
    60
}
fn default_horizon() -> f64 {
    50.0
}
fn default_samples() -> usize {
    10_000
}

pub const DEFAULT_EMPIRICAL_STOP: f64 = 1e-6;

/// Validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub generator: GeneratorSpec,
    pub initial_belief: BeliefPoint,
    pub epsilon: f64,
    pub resolution: usize,
    pub empirical_stop: f64,
    pub max_iterations: Option<usize>,
    pub seed: u64,
    pub horizon: f64,
    pub samples: usize,
    pub store_iterates: bool,
    /// Also solve at twice the resolution and report the difference.
    pub refinement_check: bool,
}

fn field(name: &str, e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{name}: {e}"))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        let m = &raw.model;
        positive("model.lambda0", m.lambda0)?;
        positive("model.lambda1", m.lambda1)?;
        positive("model.c", m.c)?;
        let gen = m.generator.build().map_err(|e| field("model", e))?;
        let n = gen.n();
        let model = ModelSpec::new(gen, m.lambda0, m.lambda1, m.c).map_err(|e| field("model", e))?;
        let initial_belief = match &raw.initial_belief {
            None => BeliefPoint::transient_vertex(n, 0),
            Some(v) if v.len() != n + 1 => {
                return Err(field("initial_belief", format!("needs {} entries, got {}", n + 1, v.len())))
            }
            Some(v) => BeliefPoint::from_vec(v.clone()).map_err(|e| field("initial_belief", e))?,
        };
        positive("epsilon", raw.epsilon)?;
        positive("horizon", raw.horizon)?;
        if raw.resolution == 0 {
            return Err(field("resolution", "must be at least 1"));
        }
        if raw.samples == 0 {
            return Err(field("samples", "must be at least 1"));
        }
        let empirical_stop = raw.tolerances.empirical_stop.unwrap_or(DEFAULT_EMPIRICAL_STOP);
        positive("tolerances.empirical_stop", empirical_stop)?;
        if raw.tolerances.max_iterations == Some(0) {
            return Err(field("tolerances.max_iterations", "must be at least 1"));
        }
        Ok(Self {
            model,
            generator: raw.model.generator,
            initial_belief,
            epsilon: raw.epsilon,
            resolution: raw.resolution,
            empirical_stop,
            max_iterations: raw.tolerances.max_iterations,
            seed: raw.seed,
            horizon: raw.horizon,
            samples: raw.samples,
            store_iterates: raw.store_iterates,
            refinement_check: raw.refinement_check,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Theoretical plan at the initial belief, capped by `max_iterations`.
    pub fn plan(&self) -> Result<IterationPlan> {
        let plan = iteration_plan(&self.model, &self.initial_belief, self.epsilon)?;
        Ok(match self.max_iterations {
            Some(cap) if cap < plan.iterations => plan.with_iterations(cap),
            _ => plan,
        })
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { empirical_stop: Some(self.empirical_stop), store_iterates: self.store_iterates }
    }

    /// Value iteration on a grid of the given resolution.
    pub fn solve_at(&self, resolution: usize) -> Result<ValueTable> {
        let grid = SimplexGrid::new(self.model.n(), resolution)?;
        value_iterate(&self.model, &grid, &self.plan()?, &self.solve_options())
    }

    pub fn solve(&self) -> Result<ValueTable> {
        self.solve_at(self.resolution)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ERLANG: &str = r#"{
        "model": {"erlang": {"n": 2, "lambda": 3.0}, "lambda0": 6.0, "lambda1": 5.0, "c": 1.0},
        "initial_belief": [1.0, 0.0, 0.0],
        "epsilon": 0.05,
        "resolution": 40,
        "seed": 7
    }"#;

    #[test]
    fn parses_builder_forms() {
        let cfg = RunConfig::from_json(ERLANG).unwrap();
        assert_eq!(cfg.model.n(), 2);
        assert_eq!(cfg.resolution, 40);
        assert_eq!(cfg.empirical_stop, DEFAULT_EMPIRICAL_STOP);
        let hyper = r#"{"model": {"hyperexponential": {"mu": [3.0, 2.0]}, "lambda0": 2.0, "lambda1": 6.0, "c": 1.5}}"#;
        let cfg = RunConfig::from_json(hyper).unwrap();
        assert_eq!(cfg.initial_belief, BeliefPoint::transient_vertex(2, 0));
        let explicit = r#"{"model": {"R": [[-3.0, 3.0], [0.0, -3.0]], "r": [0.0, 3.0], "lambda0": 6.0, "lambda1": 5.0, "c": 1.0}}"#;
        assert_eq!(RunConfig::from_json(explicit).unwrap().model, RunConfig::from_json(ERLANG).unwrap().model);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = ERLANG.replace("\"c\": 1.0", "\"c\": -1.0");
        let msg = RunConfig::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("model.c"), "{msg}");
        let bad = ERLANG.replace("[1.0, 0.0, 0.0]", "[1.0, 0.0]");
        assert!(RunConfig::from_json(&bad).unwrap_err().to_string().contains("initial_belief"));
        let bad = ERLANG.replace("\"epsilon\": 0.05", "\"epsilon\": 0.0");
        assert!(RunConfig::from_json(&bad).unwrap_err().to_string().contains("epsilon"));
        let bad = r#"{"model": {"R": [[-3.0, 3.0], [0.0, -3.0]], "r": [0.0, 2.0], "lambda0": 6.0, "lambda1": 5.0, "c": 1.0}}"#;
        let msg = RunConfig::from_json(bad).unwrap_err().to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(RunConfig::from_json(&ERLANG.replace("\"seed\"", "\"sed\"")).is_err());
    }
}
