//! Posterior dynamics between and at arrivals.
//!
//! Between arrivals the posterior follows the deterministic curve
//! `x(t, π) = π·exp(tG) / (π·exp(tG)·1)` with `G = [[R, r], [0, -(λ₁-λ₀)]]`;
//! at an arrival each coordinate is reweighted by its arrival rate.

use std::io::Write;

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::phase_type::{validate_generator, BeliefPoint, PhaseTypeGenerator};

/// Problem data: disorder prior, pre/post-disorder arrival rates and delay cost.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub gen: PhaseTypeGenerator,
    pub lambda0: f64,
    pub lambda1: f64,
    pub c: f64,
}

impl ModelSpec {
    pub fn new(gen: PhaseTypeGenerator, lambda0: f64, lambda1: f64, c: f64) -> Result<Self> {
        for (name, v) in [("lambda0", lambda0), ("lambda1", lambda1), ("c", c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        let violations = validate_generator(&gen);
        if !violations.is_empty() {
            return Err(Error::InvalidGenerator(violations));
        }
        Ok(Self { gen, lambda0, lambda1, c })
    }

    pub fn n(&self) -> usize {
        self.gen.n()
    }

    /// `λ₁ - λ₀`.
    pub fn rho(&self) -> f64 {
        self.lambda1 - self.lambda0
    }

    pub fn max_rate(&self) -> f64 {
        self.lambda0.max(self.lambda1)
    }

    /// Arrival rate of each hidden state (`λ₀` for transient states, `λ₁` for `Δ`).
    pub fn state_rates(&self) -> Vec<f64> {
        let mut v = vec![self.lambda0; self.n() + 1];
        v[self.n()] = self.lambda1;
        v
    }

    /// `(max(λ₀,λ₁) + B) / (c + max(λ₀,λ₁) + B)`, `B = max_i q_{iΔ}`: beliefs whose
    /// absorbed mass reaches this level always stop.
    pub fn stop_threshold(&self) -> f64 {
        let top = self.max_rate() + self.gen.max_exit_rate();
        top / (self.c + top)
    }

    /// Hex SHA-256 of the canonical JSON form; ties value tables and event logs to a model.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("model serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn check_belief(&self, pi: &BeliefPoint) -> Result<()> {
        if pi.n() != self.n() {
            return Err(Error::Dimension(format!(
                "belief has {} transient states, model has {}",
                pi.n(),
                self.n()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    #[serde(rename = "R")]
    rates: Vec<Vec<f64>>,
    r: Vec<f64>,
    lambda0: f64,
    lambda1: f64,
    c: f64,
}

impl Serialize for ModelSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelRepr {
            rates: self.gen.rate_rows(),
            r: self.gen.exit().iter().copied().collect(),
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            c: self.c,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = ModelRepr::deserialize(d)?;
        let gen = PhaseTypeGenerator::from_rows(&m.rates, &m.r).map_err(serde::de::Error::custom)?;
        ModelSpec::new(gen, m.lambda0, m.lambda1, m.c).map_err(serde::de::Error::custom)
    }
}

/// Matrices shared by every flow evaluation of one model.
///
/// `q = G - λ₀ I = [[R - λ₀ I, r], [0, -λ₁]]`; the row vector `z(s) = π·exp(sQ)`
/// is the joint law of (hidden state, no arrival in `[0, s]`), so that
/// `P{σ₁ > s} = z(s)·1`, the arrival density is `z(s)·λ` and `x(s, π) = z(s)/(z(s)·1)`.
#[derive(Clone, Debug)]
pub struct FlowKernel {
    n: usize,
    q: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    q_inv_rates: DMatrix<f64>,
    rates: Vec<f64>,
    c: f64,
}

impl FlowKernel {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        let n = model.n();
        let mut q = model.gen.augmented_generator(model.rho());
        for i in 0..=n {
            q[(i, i)] -= model.lambda0;
        }
        let q_inv = q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("no-arrival generator is singular".into()))?;
        let rates = model.state_rates();
        let q_inv_rates = &q_inv * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(rates.clone()));
        Ok(Self { n, q, q_inv, q_inv_rates, rates, c: model.c })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    /// `Q⁻¹ Λ`: maps `z(b) - z(a)` to `∫_a^b z(s) Λ ds`.
    pub fn q_inv_rates(&self) -> &DMatrix<f64> {
        &self.q_inv_rates
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn cost_rate(&self) -> f64 {
        self.c
    }

    pub fn exp_q(&self, t: f64) -> Result<DMatrix<f64>> {
        expm(&(&self.q * t))
    }

    /// `z(t) = π·exp(tQ)`.
    pub fn z(&self, pi: &[f64], t: f64) -> Result<Vec<f64>> {
        let e = self.exp_q(t)?;
        Ok((RowDVector::from_row_slice(pi) * e).iter().copied().collect())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be finite and ≥ 0, got {t}")));
    }
    Ok(())
}

// exp(tG) entries stay far from under/overflow when t·|G| is below this.
const FLOW_CHUNK: f64 = 200.0;

/// Deterministic posterior path `x(t, π)` without arrivals.
pub fn flow(model: &ModelSpec, pi: &BeliefPoint, t: f64) -> Result<BeliefPoint> {
    check_time(t)?;
    model.check_belief(pi)?;
    if t == 0.0 {
        return Ok(pi.clone());
    }
    let g = model.gen.augmented_generator(model.rho());
    let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let chunks = ((t * scale) / FLOW_CHUNK).ceil().max(1.0) as usize;
    let dt = t / chunks as f64;
    let e = expm(&(&g * dt))?;
    let mut row = RowDVector::from_row_slice(pi.as_slice());
    for _ in 0..chunks {
        row = &row * &e;
        let s: f64 = row.sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateBelief(format!(
                "flow normalizer {s} at t = {t} from {:?}",
                pi.as_slice()
            )));
        }
        row /= s;
    }
    BeliefPoint::from_mass(row.as_slice())
}

/// Posterior update at an arrival.
pub fn jump(model: &ModelSpec, pi: &BeliefPoint) -> BeliefPoint {
    let a = pi.absorbed();
    let den = model.lambda0 * (1.0 - a) + model.lambda1 * a;
    let n = pi.n();
    let mut v: Vec<f64> = pi.transient().iter().map(|p| model.lambda0 * p / den).collect();
    v.push(model.lambda1 * a / den);
    // Renormalize away round-off; `den ≥ min(λ₀, λ₁) > 0` so this cannot fail.
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    debug_assert_eq!(v.len(), n + 1);
    BeliefPoint::from_mass(&v).expect("jump preserves positive mass")
}

/// Law of the first arrival time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sigma1Law {
    /// `P{σ₁ > t}`.
    pub survival: f64,
    /// Density of `σ₁` at `t`.
    pub density: f64,
}

pub fn sigma1_law(model: &ModelSpec, pi: &BeliefPoint, t: f64) -> Result<Sigma1Law> {
    check_time(t)?;
    model.check_belief(pi)?;
    let y = crate::phase_type::discounted_state(&model.gen, pi, model.rho(), t)?;
    let n = model.n();
    let decay = (-model.lambda0 * t).exp();
    let transient: f64 = y[..n].iter().sum();
    let survival = decay * (transient + y[n]);
    let density = decay * (model.lambda0 * transient + model.lambda1 * y[n]);
    Ok(Sigma1Law { survival, density })
}

/// Posterior path driven by a fixed arrival sequence: one flow segment per
/// inter-arrival interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `(segment start time, belief at segment start)`; the first segment starts at 0.
    pub segments: Vec<(f64, BeliefPoint)>,
    pub arrivals: Vec<f64>,
}

impl Trajectory {
    pub fn build(model: &ModelSpec, pi: &BeliefPoint, arrivals: &[f64]) -> Result<Self> {
        model.check_belief(pi)?;
        check_arrivals(arrivals)?;
        let mut segments = Vec::with_capacity(arrivals.len() + 1);
        segments.push((0.0, pi.clone()));
        let mut start = 0.0;
        let mut belief = pi.clone();
        for &s in arrivals {
            let pre = flow(model, &belief, s - start)?;
            belief = jump(model, &pre);
            start = s;
            segments.push((s, belief.clone()));
        }
        Ok(Self { segments, arrivals: arrivals.to_vec() })
    }

    fn segment_index(&self, t: f64) -> usize {
        // Last segment whose start is ≤ t (paths are right-continuous).
        self.segments.partition_point(|(s, _)| *s <= t).saturating_sub(1)
    }

    /// `Π_t` (post-jump value at arrival instants).
    pub fn at(&self, model: &ModelSpec, t: f64) -> Result<BeliefPoint> {
        check_time(t)?;
        let (start, b) = &self.segments[self.segment_index(t)];
        flow(model, b, t - start)
    }

    /// `Π_{t-}`: differs from [`Trajectory::at`] only at arrival instants.
    pub fn left_limit(&self, model: &ModelSpec, t: f64) -> Result<BeliefPoint> {
        check_time(t)?;
        let k = self.segments.partition_point(|(s, _)| *s < t).saturating_sub(1);
        let (start, b) = &self.segments[k];
        flow(model, b, t - start)
    }

    pub fn is_arrival(&self, t: f64) -> bool {
        self.arrivals.binary_search_by(|a| a.total_cmp(&t)).is_ok()
    }

    /// CSV with columns `t, pi_1..pi_n, pi, is_arrival`.
    pub fn write_csv<W: Write>(&self, model: &ModelSpec, queries: &[f64], mut out: W) -> Result<()> {
        let n = model.n();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("pi_{i}")));
        header.push("pi".into());
        header.push("is_arrival".into());
        writeln!(out, "{}", header.join(","))?;
        for &t in queries {
            let b = self.at(model, t)?;
            let mut row = vec![format!("{t}")];
            row.extend(b.as_slice().iter().map(|v| format!("{v}")));
            row.push(if self.is_arrival(t) { "1".into() } else { "0".into() });
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn check_arrivals(arrivals: &[f64]) -> Result<()> {
    if arrivals.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::domain("arrival times must be finite and ≥ 0"));
    }
    if arrivals.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("arrival times must be strictly increasing"));
    }
    Ok(())
}

/// Evaluates the posterior at each (sorted) query time.
pub fn trajectory(
    model: &ModelSpec,
    pi: &BeliefPoint,
    arrivals: &[f64],
    queries: &[f64],
) -> Result<Vec<BeliefPoint>> {
    if queries.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("query times must be sorted"));
    }
    let traj = Trajectory::build(model, pi, arrivals)?;
    queries.iter().map(|&t| traj.at(model, t)).collect()
}
