//! Bayesian quickest detection of a change in Poisson arrival rate when the
//! change time has a phase-type prior.

pub mod bellman;
pub mod config;
pub mod error;
pub mod flow;
pub mod grid;
pub mod linalg;
pub mod numerics;
pub mod phase_type;
pub mod policy;
pub mod risk;
pub mod scenario;
pub mod tolerance;
pub mod validate;

pub use error::{Error, Result};
pub use flow::{flow, jump, sigma1_law, trajectory, FlowKernel, ModelSpec, Sigma1Law, Trajectory};
pub use phase_type::{
    build_erlang, build_hyperexponential, validate_generator, BeliefPoint, PhaseTypeGenerator,
    Violation,
};
pub use bellman::{
    iteration_plan, r_epsilon, stopping_region, value_iterate, IterationPlan, Mode, SolveOptions, StoppingRegion,
    ValueTable,
};
pub use config::RunConfig;
pub use grid::SimplexGrid;
pub use policy::{run_policy, Alarm, DetectionOutcome, Detector, Event, Policy, RuleKind};
pub use risk::{evaluate_policy, RiskEstimate};
pub use scenario::{sample_batch, sample_scenario, Scenario};
