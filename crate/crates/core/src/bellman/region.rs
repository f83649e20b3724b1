use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowKernel, ModelSpec};
use crate::grid::SimplexGrid;
use crate::phase_type::BeliefPoint;
use crate::numerics::probe_times;
use crate::tolerance::{PROBE_COUNT, REL_T_TOL, TAU_CONC};

use super::profile::ProfileBuilder;
use super::quadrature_limit;
use super::table::ValueTable;

/// A chain of boundary points (beliefs, absorbed last).
pub type BoundaryPolyline = Vec<Vec<f64>>;

/// Nodes where `h ≤ value + ε/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingRegion {
    pub epsilon: f64,
    pub members: Vec<bool>,
    /// Level set `h - value = ε/2` traced through the triangulation (two-state priors only).
    pub boundary: Vec<BoundaryPolyline>,
    /// Member pairs whose lattice midpoint lies outside the region by more than the concavity slack.
    pub convexity_violations: usize,
}

impl StoppingRegion {
    pub fn is_convex(&self) -> bool {
        self.convexity_violations == 0
    }

    pub fn member_count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    /// `true` when every member of `self` is a member of `other`.
    pub fn is_subset_of(&self, other: &StoppingRegion) -> bool {
        self.members.iter().zip(&other.members).all(|(&a, &b)| !a || b)
    }

    /// CSV with columns `polyline, pi_1 .. pi_n, pi`, one row per boundary vertex.
    pub fn write_boundary_csv<W: Write>(&self, n: usize, mut out: W) -> Result<()> {
        let mut header = vec!["polyline".to_string()];
        header.extend((1..=n).map(|i| format!("pi_{i}")));
        header.push("pi".into());
        writeln!(out, "{}", header.join(","))?;
        for (i, line) in self.boundary.iter().enumerate() {
            for point in line {
                let cols: Vec<String> = point.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{i},{}", cols.join(","))?;
            }
        }
        Ok(())
    }
}

pub fn stopping_region(table: &ValueTable, epsilon: f64) -> StoppingRegion {
    region_of(&table.grid, &table.values, epsilon)
}

/// Stopping region of arbitrary node values (for example a stored iterate).
pub fn region_of(grid: &SimplexGrid, values: &[f64], epsilon: f64) -> StoppingRegion {
    let gap: Vec<f64> = (0..grid.node_count())
        .map(|k| (1.0 - grid.node_absorbed(k)) - values[k] - epsilon / 2.0)
        .collect();
    let members: Vec<bool> = gap.iter().map(|&g| g <= 0.0).collect();
    let boundary = if grid.n() == 2 { trace_boundary(grid, &gap) } else { Vec::new() };
    let convexity_violations = count_convexity_violations(grid, &members, &gap);
    StoppingRegion { epsilon, members, boundary, convexity_violations }
}

fn count_convexity_violations(grid: &SimplexGrid, members: &[bool], gap: &[f64]) -> usize {
    let inside: Vec<usize> = (0..members.len()).filter(|&k| members[k]).collect();
    let mut mid = vec![0u32; grid.n()];
    let mut count = 0;
    for (i, &a) in inside.iter().enumerate() {
        let ca = grid.node_coords(a);
        'pair: for &b in &inside[i + 1..] {
            let cb = grid.node_coords(b);
            for d in 0..grid.n() {
                let s = ca[d] + cb[d];
                if s % 2 == 1 {
                    continue 'pair;
                }
                mid[d] = s / 2;
            }
            let k = grid.node_index(&mid).expect("midpoint of nodes is a node");
            if gap[k] > TAU_CONC {
                count += 1;
            }
        }
    }
    count
}

fn trace_boundary(grid: &SimplexGrid, gap: &[f64]) -> Vec<BoundaryPolyline> {
    type Edge = (usize, usize);
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for cell in grid.cells() {
        let mut crossing = Vec::with_capacity(2);
        for (a, b) in [(cell[0], cell[1]), (cell[1], cell[2]), (cell[0], cell[2])] {
            if (gap[a] <= 0.0) != (gap[b] <= 0.0) {
                crossing.push((a.min(b), a.max(b)));
            }
        }
        if crossing.len() == 2 {
            segments.push((crossing[0], crossing[1]));
        }
    }
    let point = |(a, b): Edge| -> Vec<f64> {
        let (inner, outer) = if gap[a] <= 0.0 { (a, b) } else { (b, a) };
        let s = gap[inner] / (gap[inner] - gap[outer]);
        let (pa, pb) = (grid.node_probs(inner), grid.node_probs(outer));
        pa.iter().zip(&pb).map(|(x, y)| x + s * (y - x)).collect()
    };
    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (i, (e, f)) in segments.iter().enumerate() {
        by_edge.entry(*e).or_default().push(i);
        by_edge.entry(*f).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    // Open chains start at edges used once; whatever remains forms closed loops.
    let mut starts: Vec<Edge> = by_edge.iter().filter(|(_, s)| s.len() == 1).map(|(e, _)| *e).collect();
    starts.sort_unstable();
    let mut seeds: Vec<Edge> = segments.iter().map(|s| s.0).collect();
    starts.append(&mut seeds);
    for start in starts {
        let mut edge = start;
        let mut chain = vec![edge];
        while let Some(&seg) = by_edge[&edge].iter().find(|&&s| !used[s]) {
            used[seg] = true;
            let (e, f) = segments[seg];
            edge = if e == edge { f } else { e };
            chain.push(edge);
        }
        if chain.len() > 1 {
            polylines.push(chain.into_iter().map(point).collect());
        }
    }
    polylines
}

/// Computes the thresholds `r_m^ε(π) = inf{s > 0 : J v_m(s, π) ≤ J₀ v_m(π) + ε}`.
pub struct ThresholdSolver {
    builder: ProfileBuilder,
}

// J values this close to the target qualify; absorbs round-off in the comparison.
const THRESHOLD_SLACK: f64 = 1e-10;

impl ThresholdSolver {
    pub fn new(model: &ModelSpec, grid: &SimplexGrid) -> Result<Self> {
        let kernel = FlowKernel::new(model)?;
        let builder = ProfileBuilder::new(kernel, grid.clone(), quadrature_limit(model), Some(model.stop_threshold()))?;
        Ok(Self { builder })
    }

    /// `r^ε` for node values `values` at the belief `pi`; `f64::INFINITY` when no time qualifies.
    pub fn threshold(&self, values: &[f64], epsilon: f64, pi: &[f64]) -> Result<f64> {
        if !(epsilon >= 0.0) {
            return Err(Error::domain(format!("ε must be ≥ 0, got {epsilon}")));
        }
        let profile = self.builder.build(pi)?;
        let (best, argmin) = profile.minimize(&self.builder, values)?;
        let target = best + epsilon + THRESHOLD_SLACK;
        let cumulative = profile.cumulative_jump(values);
        let times = profile.probe_times();
        let probe_values = profile.probe_values(values, &cumulative);
        if times.len() < 2 {
            // The path starts in the guaranteed-stop set, where J w(·, π) ≥ J w(0, π):
            // with slack, small times qualify by continuity; without it none do.
            return Ok(if epsilon > 0.0 {
                probe_times(self.builder.limit(), PROBE_COUNT)[1]
            } else {
                f64::INFINITY
            });
        }
        if probe_values[0] <= target - THRESHOLD_SLACK {
            // Continuity at 0: arbitrarily small positive times qualify.
            return Ok(times[1]);
        }
        let first = (1..times.len()).find(|&k| probe_values[k] <= target);
        let mut upper = match first {
            Some(k) => times[k],
            None => f64::INFINITY,
        };
        if argmin > 0.0 && argmin < upper {
            upper = argmin;
        }
        if upper.is_infinite() {
            // Nothing qualifies up to the end of the profile. Past the guaranteed-stop
            // time J only increases, and past the quadrature limit it moves by less
            // than the truncation floor, so no later time qualifies either.
            return Ok(f64::INFINITY);
        }
        let k = times.partition_point(|&t| t < upper);
        if k <= 1 {
            return Ok(times[1].min(upper));
        }
        let mut lower = times[k - 1];
        let tol = REL_T_TOL * self.builder.limit();
        while upper - lower > tol {
            let mid = 0.5 * (lower + upper);
            if profile.j_at(&self.builder, values, &cumulative, mid)? <= target {
                upper = mid;
            } else {
                lower = mid;
            }
        }
        Ok(upper)
    }
}

/// `r_m^ε(π)` using iterate `m` stored in `table`.
pub fn r_epsilon(model: &ModelSpec, table: &ValueTable, m: usize, epsilon: f64, pi: &BeliefPoint) -> Result<f64> {
    model.check_belief(pi)?;
    let values: Vec<f64> = if m == 0 {
        (0..table.grid.node_count()).map(|k| 1.0 - table.grid.node_absorbed(k)).collect()
    } else if m == table.m {
        table.values.clone()
    } else {
        table
            .iterate(m)
            .ok_or_else(|| Error::domain(format!("iterate {m} is not stored in the table")))?
            .to_vec()
    };
    ThresholdSolver::new(model, &table.grid)?.threshold(&values, epsilon, pi.as_slice())
}
