//! Online detectors driven by arrival streams.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::bellman::{ThresholdSolver, ValueTable};
use crate::error::{Error, Result};
use crate::flow::{jump, FlowKernel, ModelSpec};
use crate::phase_type::BeliefPoint;
use crate::scenario::Scenario;
use crate::tolerance::REL_T_TOL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    StopAtZero,
    FixedTime,
    Hitting,
    Sequential,
}

/// Alarm the first time `h(Π_t) ≤ V_M(Π_t) + ε/2`.
pub struct HittingRule {
    table: ValueTable,
    epsilon: f64,
    kernel: FlowKernel,
    scan_step: f64,
}

/// Threshold rule `S_M^{ε/2}`: wait `r_{m-1}` after each arrival, with the
/// slack halved and the depth reduced at every arrival.
pub struct SequentialRule {
    table: ValueTable,
    epsilon: f64,
    solver: ThresholdSolver,
    /// First-segment threshold for the first initial belief seen.
    initial: OnceLock<(BeliefPoint, f64)>,
}

pub enum Policy {
    StopAtZero,
    FixedTime(f64),
    Hitting(Box<HittingRule>),
    Sequential(Box<SequentialRule>),
}

// Distance below the region boundary at which the crossing scan halves its step.
const GUARD_BAND: f64 = 1e-3;

impl Policy {
    pub fn hitting(table: ValueTable, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let kernel = FlowKernel::new(&table.model)?;
        let model = &table.model;
        let scan_step = (0.01 / model.max_rate()).min(table.horizon / 1000.0);
        Ok(Policy::Hitting(Box::new(HittingRule { table, epsilon, kernel, scan_step })))
    }

    /// Needs a table solved with stored iterates.
    pub fn sequential(table: ValueTable, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let stored = table.iterates.as_ref().map_or(0, |v| v.len());
        if table.m == 0 || stored < table.m {
            return Err(Error::domain(format!(
                "sequential rule needs iterates v_0..v_{{M-1}} (M = {}), table stores {stored}",
                table.m
            )));
        }
        let solver = ThresholdSolver::new(&table.model, &table.grid)?;
        Ok(Policy::Sequential(Box::new(SequentialRule { table, epsilon, solver, initial: OnceLock::new() })))
    }

    pub fn kind(&self) -> RuleKind {
        match self {
            Policy::StopAtZero => RuleKind::StopAtZero,
            Policy::FixedTime(_) => RuleKind::FixedTime,
            Policy::Hitting(_) => RuleKind::Hitting,
            Policy::Sequential(_) => RuleKind::Sequential,
        }
    }

    pub fn table(&self) -> Option<&ValueTable> {
        match self {
            Policy::Hitting(r) => Some(&r.table),
            Policy::Sequential(r) => Some(&r.table),
            _ => None,
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("ε must be positive, got {epsilon}")));
    }
    Ok(())
}

impl HittingRule {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn scan_step(&self) -> f64 {
        self.scan_step
    }

    /// `V_M(p) + ε/2 - h(p)`; the rule stops where this is ≥ 0.
    pub fn margin(&self, p: &[f64]) -> f64 {
        self.table.value_at(p) + self.epsilon / 2.0 - (1.0 - p[p.len() - 1])
    }

    pub fn in_region(&self, p: &[f64]) -> bool {
        self.margin(p) >= 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub time: f64,
    pub belief: BeliefPoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    Arrival(f64),
    /// No arrival up to and including this time.
    Quiet(f64),
}

#[derive(Clone, Debug)]
struct Pending {
    time: f64,
    depth: usize,
    slack: f64,
}

/// Running state of one detector over one arrival stream.
pub struct Detector<'p> {
    policy: &'p Policy,
    model: ModelSpec,
    /// Time and (normalized) mass vector where the current scan position is.
    scan_time: f64,
    scan_z: Vec<f64>,
    /// Segment start (last arrival or 0) and the belief there.
    segment_start: f64,
    segment_belief: BeliefPoint,
    last_event: f64,
    last_arrival: Option<f64>,
    pending: Option<Pending>,
    alarm: Option<Alarm>,
}

impl<'p> Detector<'p> {
    pub fn new(policy: &'p Policy, model: &ModelSpec, pi0: &BeliefPoint) -> Result<Self> {
        model.check_belief(pi0)?;
        if let Some(t) = policy.table() {
            if t.model_hash != model.hash() {
                return Err(Error::domain("value table was solved for a different model"));
            }
        }
        let mut d = Self {
            policy,
            model: model.clone(),
            scan_time: 0.0,
            scan_z: pi0.as_slice().to_vec(),
            segment_start: 0.0,
            segment_belief: pi0.clone(),
            last_event: 0.0,
            last_arrival: None,
            pending: None,
            alarm: None,
        };
        match policy {
            Policy::StopAtZero => d.raise(0.0, pi0.clone()),
            Policy::FixedTime(t) => {
                if !(*t >= 0.0) {
                    return Err(Error::domain(format!("fixed alarm time must be ≥ 0, got {t}")));
                }
                if *t == 0.0 {
                    d.raise(0.0, pi0.clone());
                }
            }
            Policy::Hitting(rule) => {
                if rule.in_region(pi0.as_slice()) {
                    d.raise(0.0, pi0.clone());
                }
            }
            Policy::Sequential(rule) => {
                d.schedule(rule, rule.table.m, rule.epsilon / 2.0)?;
            }
        }
        Ok(d)
    }

    pub fn alarm(&self) -> Option<&Alarm> {
        self.alarm.as_ref()
    }

    pub fn belief(&self) -> &BeliefPoint {
        &self.segment_belief
    }

    fn raise(&mut self, time: f64, belief: BeliefPoint) {
        self.alarm.get_or_insert(Alarm { time, belief });
    }

    /// Sets the sequential threshold for the current segment.
    fn schedule(&mut self, rule: &SequentialRule, depth: usize, slack: f64) -> Result<()> {
        if depth == 0 {
            return Err(Error::Internal("sequential rule ran past depth 0".into()));
        }
        let (iterate, used) = if depth == 1 { (0, slack) } else { (depth - 1, slack / 2.0) };
        let values = rule
            .table
            .iterate(iterate)
            .ok_or_else(|| Error::Internal(format!("iterate {iterate} missing")))?;
        let first = depth == rule.table.m && self.segment_start == 0.0;
        let cached = rule.initial.get().filter(|(b, _)| first && *b == self.segment_belief).map(|c| c.1);
        let r = match cached {
            Some(r) => r,
            None => {
                let r = rule.solver.threshold(values, used, self.segment_belief.as_slice())?;
                if first {
                    let _ = rule.initial.set((self.segment_belief.clone(), r));
                }
                r
            }
        };
        self.pending = Some(Pending { time: self.segment_start + r, depth, slack });
        Ok(())
    }

    /// Feeds the next observation. Returns the alarm once raised.
    pub fn step(&mut self, event: Event) -> Result<Option<&Alarm>> {
        let (s, arrival) = match event {
            Event::Arrival(s) => (s, true),
            Event::Quiet(s) => (s, false),
        };
        let repeated = arrival && self.last_arrival.is_some_and(|a| s <= a);
        if !s.is_finite() || s < self.last_event || repeated {
            return Err(Error::domain(format!("event at {s} is out of order (last {})", self.last_event)));
        }
        self.last_event = s;
        if arrival {
            self.last_arrival = Some(s);
        }
        if self.alarm.is_some() {
            return Ok(self.alarm.as_ref());
        }
        match self.policy {
            Policy::StopAtZero => {}
            Policy::FixedTime(t) => {
                if *t <= s {
                    let b = self.flow_to(*t)?;
                    self.raise(*t, b);
                } else if arrival {
                    self.jump_at(s)?;
                }
            }
            Policy::Hitting(rule) => {
                if let Some((t, b)) = self.scan(rule, s)? {
                    self.raise(t, b);
                } else if arrival {
                    let b = self.jump_at(s)?;
                    if rule.in_region(b.as_slice()) {
                        self.raise(s, b);
                    }
                }
            }
            Policy::Sequential(rule) => {
                let pending = self.pending.clone().expect("sequential detector keeps a threshold");
                // The threshold wins only when strictly before the arrival.
                let fires = if arrival { pending.time < s } else { pending.time <= s };
                if fires {
                    let b = self.flow_to(pending.time)?;
                    self.raise(pending.time, b);
                } else if arrival {
                    let b = self.jump_at(s)?;
                    if pending.depth == 1 {
                        self.raise(s, b);
                    } else {
                        self.schedule(rule, pending.depth - 1, pending.slack / 2.0)?;
                    }
                }
            }
        }
        Ok(self.alarm.as_ref())
    }

    /// Belief at time `t` in the current segment (no arrival in between).
    fn flow_to(&self, t: f64) -> Result<BeliefPoint> {
        crate::flow::flow(&self.model, &self.segment_belief, t - self.segment_start)
    }

    /// Applies an arrival at `s`; returns the post-jump belief.
    fn jump_at(&mut self, s: f64) -> Result<BeliefPoint> {
        let pre = self.flow_to(s)?;
        let post = jump(&self.model, &pre);
        self.segment_start = s;
        self.segment_belief = post.clone();
        self.scan_time = s;
        self.scan_z = post.as_slice().to_vec();
        Ok(post)
    }

    /// Scans the flow from the scan position to `s` for the first entry into
    /// the hitting region. Leaves the scan position at `s` when none is found.
    fn scan(&mut self, rule: &HittingRule, s: f64) -> Result<Option<(f64, BeliefPoint)>> {
        let kernel = &rule.kernel;
        let full = kernel.exp_q(rule.scan_step)?;
        let half = kernel.exp_q(rule.scan_step / 2.0)?;
        let mut t = self.scan_time;
        let mut z = self.scan_z.clone();
        let mut next = vec![0.0; z.len()];
        let mut margin = rule.margin(&z);
        let t_tol = REL_T_TOL * rule.table.horizon;
        while t < s {
            let near = margin > -GUARD_BAND;
            let mut h = if near { rule.scan_step / 2.0 } else { rule.scan_step };
            if t + h >= s {
                h = s - t;
                let e = kernel.exp_q(h)?;
                crate::linalg::row_times(&z, &e, &mut next);
            } else {
                crate::linalg::row_times(&z, if near { &half } else { &full }, &mut next);
            }
            normalize(&mut next)?;
            let next_margin = rule.margin(&next);
            if next_margin >= 0.0 {
                let (tc, zc) = bisect_entry(rule, &z, t, t + h, t_tol)?;
                return Ok(Some((tc, BeliefPoint::from_vec(zc)?)));
            }
            t = if t + h >= s { s } else { t + h };
            std::mem::swap(&mut z, &mut next);
            margin = next_margin;
        }
        self.scan_time = s.max(self.scan_time);
        self.scan_z = z;
        Ok(None)
    }
}

fn normalize(z: &mut [f64]) -> Result<()> {
    let s: f64 = z.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::DegenerateBelief(format!("flow normalizer {s}")));
    }
    z.iter_mut().for_each(|v| *v /= s);
    Ok(())
}

/// Smallest time in `(a, b]` (to within `tol`) where the margin is ≥ 0, given it is ≥ 0 at `b`.
fn bisect_entry(rule: &HittingRule, za: &[f64], a: f64, b: f64, tol: f64) -> Result<(f64, Vec<f64>)> {
    let at = |t: f64| -> Result<Vec<f64>> {
        let mut z = rule.kernel.z(za, t - a)?;
        normalize(&mut z)?;
        Ok(z)
    };
    let (mut lo, mut hi) = (a, b);
    let mut z_hi = at(hi)?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let z = at(mid)?;
        if rule.margin(&z) >= 0.0 {
            hi = mid;
            z_hi = z;
        } else {
            lo = mid;
        }
    }
    Ok((hi, z_hi))
}

/// Result of running a policy on a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// Alarm time; the horizon when censored.
    pub tau: f64,
    pub theta: f64,
    pub false_alarm: bool,
    pub delay: f64,
    /// No alarm up to the scenario horizon.
    pub censored: bool,
}

impl DetectionOutcome {
    fn new(tau: f64, theta: f64, censored: bool) -> Self {
        Self { tau, theta, false_alarm: tau < theta, delay: (tau - theta).max(0.0), censored }
    }
}

/// Runs a detector over a scenario's arrivals, then observes quietly to the horizon.
pub fn run_policy(policy: &Policy, model: &ModelSpec, pi0: &BeliefPoint, scenario: &Scenario) -> Result<DetectionOutcome> {
    Ok(run_with_alarm(policy, model, pi0, scenario)?.0)
}

pub(crate) fn run_with_alarm(
    policy: &Policy,
    model: &ModelSpec,
    pi0: &BeliefPoint,
    scenario: &Scenario,
) -> Result<(DetectionOutcome, Option<Alarm>)> {
    let mut detector = Detector::new(policy, model, pi0)?;
    for &a in &scenario.arrivals {
        if detector.step(Event::Arrival(a))?.is_some() {
            break;
        }
    }
    detector.step(Event::Quiet(scenario.horizon))?;
    Ok(match detector.alarm() {
        Some(al) if al.time <= scenario.horizon => (DetectionOutcome::new(al.time, scenario.theta, false), Some(al.clone())),
        _ => (DetectionOutcome::new(scenario.horizon, scenario.theta, true), None),
    })
}
