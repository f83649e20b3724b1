//! Phase-type priors for the disorder time: the sub-generator of a finite
//! absorbing chain, beliefs over its states, and the distributional
//! functionals needed by the filter and the Bellman operator.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution as _, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::numerics::adaptive_simpson;
use crate::tolerance::{BELIEF_CONSTRUCTION_TOL, TAU_GEN, TAU_QUAD, TAU_RATE, TAU_SIMPLEX};

/// Sub-generator `R` (transient → transient rates) and absorption vector `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTypeGenerator {
    rates: DMatrix<f64>,
    exit: DVector<f64>,
}

/// A violated generator invariant. Rows and columns are 1-based in messages.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    NonNegativeDiagonal { row: usize, value: f64 },
    NegativeExitRate { row: usize, value: f64 },
    RowSum { row: usize, residual: f64 },
    Singular,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeOffDiagonal { row, col, value } => {
                write!(f, "R[{},{}] = {} is negative", row + 1, col + 1, value)
            }
            Violation::NonNegativeDiagonal { row, value } => {
                write!(f, "R[{},{}] = {} is not negative", row + 1, row + 1, value)
            }
            Violation::NegativeExitRate { row, value } => {
                write!(f, "r[{}] = {} is negative", row + 1, value)
            }
            Violation::RowSum { row, residual } => {
                write!(f, "R·1 + r ≠ 0 at row {}, residual {}", row + 1, residual)
            }
            Violation::Singular => write!(f, "R singular"),
        }
    }
}

impl PhaseTypeGenerator {
    /// Builds a generator after checking shapes only. Use [`validate_generator`]
    /// or [`PhaseTypeGenerator::new`] to check the rate invariants.
    pub fn from_rows(rates: &[Vec<f64>], exit: &[f64]) -> Result<Self> {
        let n = rates.len();
        if n == 0 {
            return Err(Error::Dimension("generator needs at least one transient state".into()));
        }
        if let Some((i, row)) = rates.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Dimension(format!(
                "row {} of R has {} entries, expected {}",
                i + 1,
                row.len(),
                n
            )));
        }
        if exit.len() != n {
            return Err(Error::Dimension(format!(
                "r has {} entries, expected {}",
                exit.len(),
                n
            )));
        }
        let flat: Vec<f64> = rates.iter().flatten().copied().collect();
        if flat.iter().chain(exit).any(|v| !v.is_finite()) {
            return Err(Error::Domain("generator entries must be finite".into()));
        }
        Ok(Self {
            rates: DMatrix::from_row_slice(n, n, &flat),
            exit: DVector::from_column_slice(exit),
        })
    }

    /// Builds and validates a generator.
    pub fn new(rates: &[Vec<f64>], exit: &[f64]) -> Result<Self> {
        let gen = Self::from_rows(rates, exit)?;
        let violations = validate_generator(&gen);
        if violations.is_empty() {
            Ok(gen)
        } else {
            Err(Error::InvalidGenerator(violations))
        }
    }

    /// Number of transient states.
    pub fn n(&self) -> usize {
        self.exit.len()
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn exit(&self) -> &DVector<f64> {
        &self.exit
    }

    pub fn rate_rows(&self) -> Vec<Vec<f64>> {
        self.rates.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Full generator on `{1..n, Δ}` with `Δ` absorbing.
    pub fn full_generator(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n)).copy_from(&self.rates);
        a.view_mut((0, n), (n, 1)).copy_from(&self.exit);
        a
    }

    /// Block matrix `[[R, r], [0, -ρ]]`; the row vector `π·exp(t·G)` carries the
    /// surviving transient mass and the `ρ`-discounted absorbed mass.
    pub fn augmented_generator(&self, rho: f64) -> DMatrix<f64> {
        let mut a = self.full_generator();
        let n = self.n();
        a[(n, n)] = -rho;
        a
    }

    /// Smallest absorption rate `min_i q_{iΔ}`.
    pub fn min_exit_rate(&self) -> f64 {
        self.exit.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest absorption rate `max_i q_{iΔ}`.
    pub fn max_exit_rate(&self) -> f64 {
        self.exit.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Checks every generator invariant and reports each violation.
pub fn validate_generator(gen: &PhaseTypeGenerator) -> Vec<Violation> {
    let n = gen.n();
    let r = &gen.rates;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = r[(i, j)];
            if i == j {
                if v >= 0.0 {
                    out.push(Violation::NonNegativeDiagonal { row: i, value: v });
                }
            } else if v < 0.0 {
                out.push(Violation::NegativeOffDiagonal { row: i, col: j, value: v });
            }
        }
        if gen.exit[i] < 0.0 {
            out.push(Violation::NegativeExitRate { row: i, value: gen.exit[i] });
        }
        let residual: f64 = r.row(i).sum() + gen.exit[i];
        if residual.abs() > TAU_GEN {
            out.push(Violation::RowSum { row: i, residual });
        }
    }
    let sv = r.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin <= smax * 1e-13 {
        out.push(Violation::Singular);
    }
    out
}

/// Erlang chain `1 → 2 → … → n → Δ`, every holding rate `lambda`.
pub fn build_erlang(n: usize, lambda: f64) -> Result<PhaseTypeGenerator> {
    if n == 0 {
        return Err(Error::domain("Erlang chain needs n ≥ 1"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("Erlang rate must be positive, got {lambda}")));
    }
    let mut rates = vec![vec![0.0; n]; n];
    for (i, row) in rates.iter_mut().enumerate() {
        row[i] = -lambda;
        if i + 1 < n {
            row[i + 1] = lambda;
        }
    }
    let mut exit = vec![0.0; n];
    exit[n - 1] = lambda;
    PhaseTypeGenerator::new(&rates, &exit)
}

/// Mixture of exponentials: state `i` is absorbed at rate `mu[i]`.
pub fn build_hyperexponential(mu: &[f64]) -> Result<PhaseTypeGenerator> {
    if mu.is_empty() {
        return Err(Error::domain("hyperexponential needs at least one rate"));
    }
    if let Some(m) = mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::domain(format!("hyperexponential rates must be positive, got {m}")));
    }
    let n = mu.len();
    let rates: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { -mu[i] } else { 0.0 }).collect())
        .collect();
    PhaseTypeGenerator::new(&rates, mu)
}

/// Probability vector over `{1, …, n, Δ}`; the absorbed mass is stored last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BeliefPoint {
    probs: Vec<f64>,
}

impl BeliefPoint {
    /// Builds a belief from `n + 1` probabilities (absorbed last). Round-off
    /// negatives are clamped and the vector renormalized; violations larger
    /// than `1e-6` are rejected.
    pub fn from_vec(mut probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidBelief(format!(
                "belief needs at least 2 entries, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidBelief(format!("non-finite entry in {probs:?}")));
        }
        let min = probs.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -BELIEF_CONSTRUCTION_TOL {
            return Err(Error::InvalidBelief(format!("negative entry {min} in {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > BELIEF_CONSTRUCTION_TOL {
            return Err(Error::InvalidBelief(format!("entries sum to {sum}, not 1")));
        }
        Ok(Self::normalized(&mut probs))
    }

    pub fn new(transient: &[f64], absorbed: f64) -> Result<Self> {
        let mut v = transient.to_vec();
        v.push(absorbed);
        Self::from_vec(v)
    }

    /// Normalizes an arbitrary nonnegative mass vector. Used for unnormalized
    /// filter states, which need no sum check.
    pub(crate) fn from_mass(mass: &[f64]) -> Result<Self> {
        let mut v: Vec<f64> = mass.iter().map(|m| m.max(0.0)).collect();
        let s: f64 = v.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateBelief(format!("mass vector {mass:?} has total {s}")));
        }
        for x in &mut v {
            *x /= s;
        }
        Ok(Self { probs: v })
    }

    fn normalized(probs: &mut Vec<f64>) -> Self {
        for p in probs.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let sum: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= sum;
        }
        Self { probs: std::mem::take(probs) }
    }

    /// All mass on transient state `i` (0-based).
    pub fn transient_vertex(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n + 1];
        v[i] = 1.0;
        Self { probs: v }
    }

    /// All mass on the absorbing state.
    pub fn absorbed_vertex(n: usize) -> Self {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        Self { probs: v }
    }

    /// Barycentre of the simplex.
    pub fn centroid(n: usize) -> Self {
        Self { probs: vec![1.0 / (n + 1) as f64; n + 1] }
    }

    /// Number of transient states.
    pub fn n(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn transient(&self) -> &[f64] {
        &self.probs[..self.n()]
    }

    pub fn absorbed(&self) -> f64 {
        self.probs[self.n()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_fully_absorbed(&self) -> bool {
        1.0 - self.absorbed() <= TAU_SIMPLEX
    }

    /// Componentwise sup distance.
    pub fn sup_distance(&self, other: &BeliefPoint) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_dim(&self, gen: &PhaseTypeGenerator) -> Result<()> {
        if self.n() != gen.n() {
            return Err(Error::Dimension(format!(
                "belief has {} transient states, generator has {}",
                self.n(),
                gen.n()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for BeliefPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_vec(v)
    }
}

impl From<BeliefPoint> for Vec<f64> {
    fn from(b: BeliefPoint) -> Self {
        b.probs
    }
}

/// Hazard rate of the disorder time, or the marker that no survival mass is left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hazard {
    Rate(f64),
    Absorbed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distribution {
    pub cdf: f64,
    pub density: f64,
    pub hazard: Hazard,
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be finite and ≥ 0, got {t}")));
    }
    Ok(())
}

/// `π_T · exp(tR)`: transient occupation probabilities at time `t`.
pub fn transient_mass(gen: &PhaseTypeGenerator, pi: &BeliefPoint, t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    pi.check_dim(gen)?;
    let e = expm(&(gen.rates() * t))?;
    let row = nalgebra::RowDVector::from_row_slice(pi.transient()) * e;
    Ok(row.iter().copied().collect())
}

/// CDF, density and hazard of the disorder time under `π` at time `t`.
pub fn distribution(gen: &PhaseTypeGenerator, pi: &BeliefPoint, t: f64) -> Result<Distribution> {
    let mass = transient_mass(gen, pi, t)?;
    let survival: f64 = mass.iter().sum::<f64>().max(0.0);
    let density: f64 = mass.iter().zip(gen.exit().iter()).map(|(m, r)| m * r).sum::<f64>().max(0.0);
    let cdf = (1.0 - survival).clamp(0.0, 1.0);
    let hazard = if survival <= TAU_SIMPLEX {
        Hazard::Absorbed
    } else {
        Hazard::Rate(density / survival)
    };
    Ok(Distribution { cdf, density, hazard })
}

/// `E^π[Θ] = -π_T R⁻¹ 1`.
pub fn mean_absorption(gen: &PhaseTypeGenerator, pi: &BeliefPoint) -> Result<f64> {
    pi.check_dim(gen)?;
    let ones = DVector::from_element(gen.n(), 1.0);
    let y = gen
        .rates()
        .clone()
        .lu()
        .solve(&ones)
        .ok_or_else(|| Error::InvalidGenerator(vec![Violation::Singular]))?;
    Ok(-pi.transient().iter().zip(y.iter()).map(|(p, v)| p * v).sum::<f64>())
}

/// Largest mean absorption time over the vertices of the simplex, i.e. `sup_π E^π[Θ]`.
pub fn max_mean_absorption(gen: &PhaseTypeGenerator) -> Result<f64> {
    let n = gen.n();
    (0..n)
        .map(|i| mean_absorption(gen, &BeliefPoint::transient_vertex(n, i)))
        .try_fold(0.0f64, |acc, m| m.map(|m| acc.max(m)))
}

/// `π · exp(t·[[R, r], [0, -ρ]])`: surviving transient mass followed by
/// `E^π[1{Θ ≤ t} e^{-ρ(t-Θ)}]`.
pub fn discounted_state(
    gen: &PhaseTypeGenerator,
    pi: &BeliefPoint,
    rho: f64,
    t: f64,
) -> Result<Vec<f64>> {
    check_time(t)?;
    pi.check_dim(gen)?;
    let e = expm(&(gen.augmented_generator(rho) * t))?;
    let row = nalgebra::RowDVector::from_row_slice(pi.as_slice()) * e;
    Ok(row.iter().copied().collect())
}

/// `E^π[e^{-ρ(t-Θ)⁺}]`.
pub fn discounted_survival(gen: &PhaseTypeGenerator, pi: &BeliefPoint, rho: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    pi.check_dim(gen)?;
    if rho.abs() < TAU_RATE {
        return Ok(1.0);
    }
    match discounted_state(gen, pi, rho, t) {
        Ok(v) if v.iter().all(|x| x.is_finite()) => Ok(v.iter().sum()),
        _ => discounted_survival_quadrature(gen, pi, rho, t),
    }
}

/// Quadrature route for [`discounted_survival`]: survival plus the discounted
/// absorbed mass as a convolution with the density.
pub fn discounted_survival_quadrature(
    gen: &PhaseTypeGenerator,
    pi: &BeliefPoint,
    rho: f64,
    t: f64,
) -> Result<f64> {
    let at_t = distribution(gen, pi, t)?;
    let mut err = None;
    let conv = adaptive_simpson(
        |s| match distribution(gen, pi, s) {
            Ok(d) => (-rho * (t - s)).exp() * d.density,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        0.0,
        t,
        TAU_QUAD,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok((1.0 - at_t.cdf) + pi.absorbed() * (-rho * t).exp() + conv)
}

/// State of the hidden chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainState {
    Transient(usize),
    Absorbed,
}

/// Draws the initial state from `π` and simulates the jump chain until absorption.
pub fn sample_absorption<R: Rng + ?Sized>(
    gen: &PhaseTypeGenerator,
    pi: &BeliefPoint,
    rng: &mut R,
) -> (ChainState, f64) {
    let n = gen.n();
    let initial = sample_index(pi.as_slice(), rng);
    if initial == n {
        return (ChainState::Absorbed, 0.0);
    }
    let mut state = initial;
    let mut theta = 0.0;
    let rates = gen.rates();
    loop {
        let out_rate = -rates[(state, state)];
        theta += Exp::new(out_rate).expect("diagonal is negative").sample(rng);
        // Next state proportional to the off-diagonal rates and the exit rate.
        let u: f64 = rng.gen::<f64>() * out_rate;
        let mut acc = 0.0;
        let mut next = n;
        for j in 0..n {
            if j == state {
                continue;
            }
            acc += rates[(state, j)];
            if u < acc {
                next = j;
                break;
            }
        }
        if next == n {
            return (ChainState::Transient(initial), theta);
        }
        state = next;
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u landed on the upper edge through round-off: take the last positive weight.
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn erlang2() -> PhaseTypeGenerator {
        build_erlang(2, 3.0).unwrap()
    }

    #[test]
    fn erlang_passes_validation() {
        let g = PhaseTypeGenerator::from_rows(&[vec![-3.0, 3.0], vec![0.0, -3.0]], &[0.0, 3.0]).unwrap();
        assert!(validate_generator(&g).is_empty());
    }

    #[test]
    fn row_sum_violation_names_row_and_residual() {
        let g = PhaseTypeGenerator::from_rows(&[vec![-3.0, 3.0], vec![0.0, -3.0]], &[0.0, 2.0]).unwrap();
        let v = validate_generator(&g);
        assert_eq!(v, vec![Violation::RowSum { row: 1, residual: -1.0 }]);
        assert_eq!(v[0].to_string(), "R·1 + r ≠ 0 at row 2, residual -1");
    }

    #[test]
    fn singular_rates_are_reported() {
        let g = PhaseTypeGenerator::from_rows(&[vec![-3.0, 3.0], vec![3.0, -3.0]], &[0.0, 0.0]).unwrap();
        assert!(validate_generator(&g).contains(&Violation::Singular));
        assert!(matches!(
            PhaseTypeGenerator::new(&[vec![-3.0, 3.0], vec![3.0, -3.0]], &[0.0, 0.0]),
            Err(Error::InvalidGenerator(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let e = PhaseTypeGenerator::from_rows(&[vec![-3.0, 3.0], vec![0.0]], &[0.0, 3.0]);
        assert!(matches!(e, Err(Error::Dimension(_))));
        let e = PhaseTypeGenerator::from_rows(&[vec![-3.0]], &[3.0, 1.0]);
        assert!(matches!(e, Err(Error::Dimension(_))));
    }

    #[test]
    fn builders_match_closed_forms() {
        let g = erlang2();
        assert_eq!(g.rate_rows(), vec![vec![-3.0, 3.0], vec![0.0, -3.0]]);
        assert_eq!(g.exit().as_slice(), &[0.0, 3.0]);
        let h = build_hyperexponential(&[3.0, 2.0]).unwrap();
        assert_eq!(h.rate_rows(), vec![vec![-3.0, 0.0], vec![0.0, -2.0]]);
        assert_eq!(h.exit().as_slice(), &[3.0, 2.0]);
        assert!(build_erlang(2, 0.0).is_err());
        assert!(build_erlang(0, 1.0).is_err());
        assert!(build_hyperexponential(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn single_state_distribution_at_zero() {
        let g = build_erlang(1, 3.0).unwrap();
        let pi = BeliefPoint::new(&[1.0], 0.0).unwrap();
        let d = distribution(&g, &pi, 0.0).unwrap();
        assert_eq!(d.cdf, 0.0);
        assert_relative_eq!(d.density, 3.0);
        assert_eq!(d.hazard, Hazard::Rate(3.0));
        for t in [0.1, 1.0, 2.5] {
            let d = distribution(&g, &pi, t).unwrap();
            assert_relative_eq!(d.cdf, 1.0 - (-3.0 * t).exp(), epsilon = 1e-14);
        }
    }

    #[test]
    fn absorbed_belief_is_degenerate_at_zero() {
        let g = erlang2();
        let pi = BeliefPoint::absorbed_vertex(2);
        for t in [0.0, 1.0, 7.0] {
            let d = distribution(&g, &pi, t).unwrap();
            assert_eq!(d.cdf, 1.0);
            assert_eq!(d.hazard, Hazard::Absorbed);
        }
    }

    #[test]
    fn erlang_cdf_matches_closed_form() {
        let g = erlang2();
        let pi = BeliefPoint::transient_vertex(2, 0);
        let d = distribution(&g, &pi, 1.0).unwrap();
        let expected = 1.0 - (-3.0f64).exp() * 4.0;
        assert_relative_eq!(d.cdf, expected, epsilon = 1e-13);
        assert_relative_eq!(d.cdf, 0.800851726528544, epsilon = 1e-12);
    }

    #[test]
    fn negative_time_is_a_domain_error() {
        let g = erlang2();
        let pi = BeliefPoint::transient_vertex(2, 0);
        assert!(matches!(distribution(&g, &pi, -1.0), Err(Error::Domain(_))));
        assert!(matches!(discounted_survival(&g, &pi, 1.0, -0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn mean_absorption_examples() {
        let g = erlang2();
        assert_eq!(mean_absorption(&g, &BeliefPoint::absorbed_vertex(2)).unwrap(), 0.0);
        assert_relative_eq!(
            mean_absorption(&g, &BeliefPoint::transient_vertex(2, 0)).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-14
        );
        let h = build_hyperexponential(&[3.0, 2.0]).unwrap();
        let pi = BeliefPoint::new(&[0.5, 0.5], 0.0).unwrap();
        assert_relative_eq!(mean_absorption(&h, &pi).unwrap(), 5.0 / 12.0, epsilon = 1e-14);
    }

    #[test]
    fn discounted_survival_trivial_cases() {
        let g = erlang2();
        let pi = BeliefPoint::new(&[0.3, 0.5], 0.2).unwrap();
        assert_eq!(discounted_survival(&g, &pi, 0.0, 3.0).unwrap(), 1.0);
        let abs = BeliefPoint::absorbed_vertex(2);
        assert_relative_eq!(
            discounted_survival(&g, &abs, 1.0, 2.0).unwrap(),
            (-2.0f64).exp(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn block_exponential_agrees_with_quadrature() {
        let g = erlang2();
        let pi = BeliefPoint::new(&[0.6, 0.3], 0.1).unwrap();
        for (rho, t) in [(1.0, 1.0), (-1.0, 2.0), (5.0, 0.3), (-4.0, 1.5)] {
            let a = discounted_survival(&g, &pi, rho, t).unwrap();
            let b = discounted_survival_quadrature(&g, &pi, rho, t).unwrap();
            assert!((a - b).abs() < 1e-7, "rho={rho} t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn discounted_survival_matches_monte_carlo() {
        let g = erlang2();
        let pi = BeliefPoint::transient_vertex(2, 0);
        let exact = discounted_survival(&g, &pi, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let (_, theta) = sample_absorption(&g, &pi, &mut rng);
            let v = (-(1.0 - theta).max(0.0)).exp();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn sampling_absorbed_belief_gives_zero() {
        let g = erlang2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(
                sample_absorption(&g, &BeliefPoint::absorbed_vertex(2), &mut rng),
                (ChainState::Absorbed, 0.0)
            );
        }
    }

    #[test]
    fn belief_construction_clamps_and_rejects() {
        let b = BeliefPoint::from_vec(vec![0.5, -1e-12, 0.5]).unwrap();
        assert_eq!(b.as_slice()[1], 0.0);
        assert!(BeliefPoint::from_vec(vec![0.5, -1e-3, 0.501]).is_err());
        assert!(BeliefPoint::from_vec(vec![0.5, 0.2, 0.2]).is_err());
        let parsed: BeliefPoint = serde_json::from_str("[0.2, 0.3, 0.5]").unwrap();
        assert_eq!(parsed.absorbed(), 0.5);
    }
}
