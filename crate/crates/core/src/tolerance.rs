//! Numerical tolerances shared across the crate.

/// Generator row-sum residual allowed in `R·1 + r = 0`.
pub const TAU_GEN: f64 = 1e-10;
/// Simplex slack for belief points.
pub const TAU_SIMPLEX: f64 = 1e-9;
/// Rate differences below this are treated as `λ₁ = λ₀`.
pub const TAU_RATE: f64 = 1e-12;
/// Relative accuracy of the matrix exponential.
pub const TAU_EXPM: f64 = 1e-12;
/// Maximum pre-clamp violation accepted when constructing a belief.
pub const BELIEF_CONSTRUCTION_TOL: f64 = 1e-6;
/// Absolute tolerance of adaptive quadrature inside the Bellman operator.
pub const TAU_QUAD: f64 = 1e-8;
/// Relative time resolution of the waiting-time minimization (`τ_t = REL_T_TOL · t_limit`).
pub const REL_T_TOL: f64 = 1e-6;
/// Number of probe times in the waiting-time minimization.
pub const PROBE_COUNT: usize = 64;
/// Truncation parameter used for the quadrature upper limit `T_max = t(δ_floor)`.
pub const DELTA_FLOOR: f64 = 1e-9;
/// Values closer than this are ties; ties go to the smaller waiting time.
pub const TIE_TOL: f64 = 1e-12;
/// Slack allowed in midpoint concavity of computed iterates.
pub const TAU_CONC: f64 = 1e-4;
