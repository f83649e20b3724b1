use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowKernel, ModelSpec};
use crate::grid::SimplexGrid;
use crate::phase_type::max_mean_absorption;

use super::profile::{PathProfile, ProfileBuilder};
use super::region::{stopping_region, StoppingRegion};
use super::{bound_for_mean, GridFunction, IterationPlan, Mode};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveOptions {
    /// Stop early once the sup-norm change of one iteration is at most this.
    pub empirical_stop: Option<f64>,
    /// Keep `v_0 .. v_m` (needed by the sequential rule).
    pub store_iterates: bool,
}

/// Node values of an iterate on a grid, with the bookkeeping needed to trust them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub model: ModelSpec,
    pub model_hash: String,
    pub grid: SimplexGrid,
    pub mode: Mode,
    /// Number of iterations performed.
    pub m: usize,
    /// Waiting-time limit used: `t*` or `t(δ)`.
    pub horizon: f64,
    pub delta: f64,
    /// Uniform bound on the distance to the value function (excluding grid error).
    pub certified_bound: f64,
    /// Sup-norm change of the last iteration.
    pub residual: f64,
    /// Sup-norm change of every iteration.
    pub history: Vec<f64>,
    /// Largest amount any node was clipped by to keep iterates in `[0, v_{m-1}]`.
    pub max_clip: f64,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterates: Option<Vec<Vec<f64>>>,
}

impl ValueTable {
    pub fn function(&self) -> GridFunction<'_> {
        GridFunction { grid: &self.grid, values: &self.values }
    }

    /// Interpolated value at a belief (probabilities, absorbed last).
    pub fn value_at(&self, p: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, p)
    }

    /// Node values of `v_k`, when iterates were stored.
    pub fn iterate(&self, k: usize) -> Option<&[f64]> {
        self.iterates.as_ref().and_then(|its| its.get(k)).map(|v| v.as_slice())
    }

    /// Sup over this table's nodes of the distance to `other`, interpolated.
    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        (0..self.grid.node_count())
            .map(|k| (self.values[k] - other.value_at(&self.grid.node_probs(k))).abs())
            .fold(0.0, f64::max)
    }

    pub fn region(&self, epsilon: f64) -> StoppingRegion {
        stopping_region(self, epsilon)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    /// Reads a table and checks it against its own model and grid.
    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let table: ValueTable = serde_json::from_reader(input)?;
        if table.model.hash() != table.model_hash {
            return Err(Error::Parse("value table model hash does not match its model".into()));
        }
        if table.grid.n() != table.model.n() {
            return Err(Error::Dimension("value table grid does not match its model".into()));
        }
        let nodes = table.grid.node_count();
        let lengths_ok = table.values.len() == nodes
            && table.iterates.as_ref().is_none_or(|its| its.iter().all(|v| v.len() == nodes));
        if !lengths_ok {
            return Err(Error::Parse(format!("value table must hold {nodes} values per iterate")));
        }
        if table.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parse("value table entries must lie in [0, 1]".into()));
        }
        Ok(table)
    }

    /// CSV with columns `pi_1..pi_n, pi, value, h, in_region`, one row per node.
    pub fn write_surface_csv<W: Write>(&self, epsilon: f64, mut out: W) -> Result<()> {
        let n = self.grid.n();
        let region = self.region(epsilon);
        let mut header: Vec<String> = (1..=n).map(|i| format!("pi_{i}")).collect();
        header.extend(["pi", "value", "h", "in_region"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.grid.node_count() {
            let p = self.grid.node_probs(k);
            let mut row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            row.push(format!("{}", self.values[k]));
            row.push(format!("{}", 1.0 - p[n]));
            row.push(if region.members[k] { "1".into() } else { "0".into() });
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs `v_{m+1} = J₀ v_m` from `v_0 = h` on the grid nodes.
///
/// Each node's waiting time is limited to `plan.t_limit` and to the time its
/// path reaches the guaranteed-stop level.
pub fn value_iterate(
    model: &ModelSpec,
    grid: &SimplexGrid,
    plan: &IterationPlan,
    options: &SolveOptions,
) -> Result<ValueTable> {
    if grid.n() != model.n() {
        return Err(Error::Dimension(format!("grid n = {}, model n = {}", grid.n(), model.n())));
    }
    let kernel = FlowKernel::new(model)?;
    let builder = ProfileBuilder::new(kernel, grid.clone(), plan.t_limit, Some(model.stop_threshold()))?;
    let nodes = grid.node_count();
    let profiles: Vec<PathProfile> = (0..nodes)
        .into_par_iter()
        .map(|k| builder.build(&grid.node_probs(k)))
        .collect::<Result<_>>()?;

    let mut values: Vec<f64> = (0..nodes).map(|k| 1.0 - grid.node_absorbed(k)).collect();
    let mut iterates = options.store_iterates.then(|| vec![values.clone()]);
    let mut history = Vec::new();
    let mut max_clip = 0.0f64;
    let mut m = 0;
    while m < plan.iterations {
        let raw: Vec<(f64, f64)> = profiles
            .par_iter()
            .map(|p| p.minimize(&builder, &values))
            .collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(nodes);
        for (k, &(v, t)) in raw.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "iteration {}: value {v} at node {k} ({:?}), minimizer {t}",
                    m + 1,
                    grid.node_probs(k)
                )));
            }
            let clipped = v.clamp(0.0, values[k]);
            max_clip = max_clip.max((clipped - v).abs());
            next.push(clipped);
        }
        let delta = next.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        history.push(delta);
        values = next;
        m += 1;
        if let Some(its) = iterates.as_mut() {
            its.push(values.clone());
        }
        if options.empirical_stop.is_some_and(|tol| delta <= tol) {
            break;
        }
    }

    let certified_bound = if m < 2 {
        1.0
    } else {
        let bound = bound_for_mean(model, max_mean_absorption(&model.gen)?, m);
        match plan.mode {
            Mode::Bounded => bound,
            Mode::Truncated => bound + m as f64 * plan.delta,
        }
    };
    Ok(ValueTable {
        model: model.clone(),
        model_hash: model.hash(),
        grid: grid.clone(),
        mode: plan.mode,
        m,
        horizon: plan.t_limit,
        delta: plan.delta,
        certified_bound: certified_bound.min(1.0),
        residual: history.last().copied().unwrap_or(0.0),
        history,
        max_clip,
        values,
        iterates,
    })
}
