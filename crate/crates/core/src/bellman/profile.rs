//! Exact evaluation of `J w(·, π)` for piecewise-linear `w`.
//!
//! With `z(s) = π·exp(sQ)`, the jump term is `∫ w(jump(x(s)))·(z(s)·λ) ds`.
//! While the jumped point stays in one grid cell, `w(jump(x(s)))·(z(s)·λ)` is a
//! fixed linear functional of `z(s)Λ`, so its integral over `[a, b]` is that
//! functional applied to `(z(b) - z(a))·Q⁻¹Λ`. A profile records the cell
//! segments of one path once; each iteration only re-weights them.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::flow::FlowKernel;
use crate::grid::{Cell, SimplexGrid};
use crate::linalg::{expm, row_times};
use crate::numerics::{probe_times, refine_probes};
use crate::tolerance::{PROBE_COUNT, REL_T_TOL, TIE_TOL};

use super::closed_form_terms;

// Cell changes are located to within step / 2^SPLIT_DEPTH.
const SPLIT_DEPTH: usize = 12;
// Samples per unit of lattice distance travelled (upper estimate of the speed).
const SAMPLES_PER_CELL: f64 = 2.0;
// The step may grow to base·2^COARSE_DEPTH where the jumped point moves slowly.
const COARSE_DEPTH: usize = 10;
// Largest lattice displacement of the jumped point accepted in one step.
const MAX_MOVE: f64 = 0.5;
// Mass below this is treated as exhausted; later times change J by less than it.
const MASS_FLOOR: f64 = 1e-250;

/// Shared data for building profiles of many starting beliefs.
pub struct ProfileBuilder {
    kernel: FlowKernel,
    grid: SimplexGrid,
    limit: f64,
    step: f64,
    steps: usize,
    stop_level: Option<f64>,
    /// `exp(step·2^e · Q)` for `e = -SPLIT_DEPTH..=COARSE_DEPTH`, stored at `e + SPLIT_DEPTH`.
    step_exps: Vec<DMatrix<f64>>,
}

/// One path's cell segments and probe data.
#[derive(Clone, Debug)]
pub struct PathProfile {
    start: Vec<f64>,
    horizon: f64,
    /// Segment start times.
    seg_t: Vec<f64>,
    /// `z` at each segment start plus one final entry at the horizon, `n+1` per entry.
    seg_z: Vec<f64>,
    /// Cell vertex nodes, `n+1` per segment.
    seg_vertices: Vec<u32>,
    /// Homogeneous weights of the segment's integral, `n+1` per segment.
    seg_coef: Vec<f64>,
    probe_t: Vec<f64>,
    probe_seg: Vec<u32>,
    probe_coef: Vec<f64>,
    /// Running and stopping cost terms at each probe.
    probe_base: Vec<f64>,
}

impl ProfileBuilder {
    /// Paths are followed up to `limit`, or until the absorbed coordinate reaches
    /// `stop_level`, where waiting longer cannot help.
    pub fn new(kernel: FlowKernel, grid: SimplexGrid, limit: f64, stop_level: Option<f64>) -> Result<Self> {
        if !(limit > 0.0 && limit.is_finite()) {
            return Err(Error::domain(format!("profile limit must be positive and finite, got {limit}")));
        }
        if grid.n() != kernel.n() {
            return Err(Error::Dimension(format!("grid n = {}, model n = {}", grid.n(), kernel.n())));
        }
        let q = kernel.q();
        let n = kernel.n();
        let diag = (0..=n).map(|i| q[(i, i)].abs()).fold(0.0, f64::max);
        let rates = kernel.rates();
        let ratio = rates.iter().cloned().fold(0.0, f64::max) / rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let speed = grid.resolution() as f64 * diag * ratio;
        let target = (limit / 256.0).min(1.0 / (SAMPLES_PER_CELL * speed));
        let steps = (limit / target).ceil().max(1.0) as usize;
        let step = limit / steps as f64;
        let step_exps = (0..=SPLIT_DEPTH + COARSE_DEPTH)
            .map(|e| expm(&(q * (step * 2f64.powi(e as i32 - SPLIT_DEPTH as i32)))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernel, grid, limit, step, steps, stop_level, step_exps })
    }

    pub fn kernel(&self) -> &FlowKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    fn jumped_cell(&self, z: &[f64], scratch: &mut [f64]) -> Cell {
        for ((s, zi), r) in scratch.iter_mut().zip(z).zip(self.kernel.rates()) {
            *s = zi * r;
        }
        self.grid.locate_cell(scratch)
    }

    /// Profile of the path started at `pi` (probabilities, absorbed last).
    pub fn build(&self, pi: &[f64]) -> Result<PathProfile> {
        let n1 = self.kernel.n() + 1;
        let mut scratch = vec![0.0; n1];
        let mut segs = SegmentRecorder::new(n1);
        let mut z = pi.to_vec();
        let mut next = vec![0.0; n1];
        let mut cell = self.jumped_cell(&z, &mut scratch);
        segs.open(0.0, &z, cell.clone());
        let mut horizon = self.limit;
        let mut jumped = vec![0.0; n1];
        let mut moved = vec![0.0; n1];
        self.jumped_point(&z, &mut jumped);
        // Position in base steps and the current stride exponent.
        let mut k = 0usize;
        let mut level = 0usize;
        while k < self.steps {
            let t = k as f64 * self.step;
            let mass: f64 = z.iter().sum();
            if self.stop_level.is_some_and(|x| z[n1 - 1] >= x * mass) || mass < MASS_FLOOR {
                horizon = t;
                break;
            }
            while (1usize << level) > self.steps - k {
                level -= 1;
            }
            row_times(&z, &self.step_exps[SPLIT_DEPTH + level], &mut next);
            self.jumped_point(&next, &mut moved);
            let shift = self.lattice_shift(&jumped, &moved);
            if shift > MAX_MOVE && level > 0 {
                level -= 1;
                continue;
            }
            let next_cell = self.jumped_cell(&next, &mut scratch);
            if next_cell != cell {
                self.split(&mut segs, &z, t, &cell, &next_cell, SPLIT_DEPTH + level, &mut scratch);
            }
            std::mem::swap(&mut z, &mut next);
            std::mem::swap(&mut jumped, &mut moved);
            cell = next_cell;
            k += 1 << level;
            if shift < MAX_MOVE / 4.0 && level < COARSE_DEPTH {
                level += 1;
            }
        }
        if horizon == self.limit {
            // Pin the end point exactly rather than accumulating the step product.
            z = self.kernel.z(pi, horizon)?;
        }
        segs.close(&z);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("path from {pi:?} produced non-finite mass")));
        }
        self.finish(pi, horizon, segs)
    }

    /// Normalized `zΛ`.
    fn jumped_point(&self, z: &[f64], out: &mut [f64]) {
        for ((o, zi), r) in out.iter_mut().zip(z).zip(self.kernel.rates()) {
            *o = zi * r;
        }
        let s: f64 = out.iter().sum();
        if s > 0.0 {
            out.iter_mut().for_each(|o| *o /= s);
        }
    }

    /// Largest change of a lattice coordinate `N·Σ_{j≥i} p_j` between two points.
    fn lattice_shift(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut tail = 0.0;
        let mut worst = 0.0f64;
        for i in (0..a.len()).rev() {
            tail += b[i] - a[i];
            worst = worst.max(tail.abs());
        }
        worst * self.grid.resolution() as f64
    }

    /// Locates cell changes between `ta` (mass `za`, cell `ca`) and a step of
    /// `step·2^(index - SPLIT_DEPTH)` later (cell `cb`, `index ≥ 1`), by repeated halving.
    #[allow(clippy::too_many_arguments)]
    fn split(
        &self,
        segs: &mut SegmentRecorder,
        za: &[f64],
        ta: f64,
        ca: &Cell,
        cb: &Cell,
        index: usize,
        scratch: &mut [f64],
    ) {
        let half = index - 1;
        let mut mid = vec![0.0; za.len()];
        row_times(za, &self.step_exps[half], &mut mid);
        let tm = ta + self.step * 2f64.powi(half as i32 - SPLIT_DEPTH as i32);
        if half == 0 {
            segs.boundary(tm, &mid, cb.clone());
            return;
        }
        let cm = self.jumped_cell(&mid, scratch);
        if cm != *ca {
            self.split(segs, za, ta, ca, &cm, half, scratch);
        }
        if cm != *cb {
            self.split(segs, &mid, tm, &cm, cb, half, scratch);
        }
    }

    fn finish(&self, pi: &[f64], horizon: f64, segs: SegmentRecorder) -> Result<PathProfile> {
        let n1 = pi.len();
        let SegmentRecorder { seg_t, seg_z, seg_cells, .. } = segs;
        let count = seg_t.len();
        let mut seg_vertices = Vec::with_capacity(count * n1);
        let mut seg_coef = vec![0.0; count * n1];
        let mut diff = vec![0.0; n1];
        let mut integral = vec![0.0; n1];
        for (k, cell) in seg_cells.iter().enumerate() {
            seg_vertices.extend(self.grid.cell_vertices(cell).into_iter().map(|v| v as u32));
            for i in 0..n1 {
                diff[i] = seg_z[(k + 1) * n1 + i] - seg_z[k * n1 + i];
            }
            row_times(&diff, self.kernel.q_inv_rates(), &mut integral);
            self.grid.homogeneous_weights(cell, &integral, &mut seg_coef[k * n1..(k + 1) * n1]);
        }
        let mut profile = PathProfile {
            start: pi.to_vec(),
            horizon,
            seg_t,
            seg_z,
            seg_vertices,
            seg_coef,
            probe_t: probe_times(horizon, PROBE_COUNT),
            probe_seg: Vec::new(),
            probe_coef: Vec::new(),
            probe_base: Vec::new(),
        };
        let probes = profile.probe_t.clone();
        for t in probes {
            let z = if t == 0.0 { pi.to_vec() } else { self.kernel.z(pi, t)? };
            let k = profile.segment_of(t);
            let mut coef = vec![0.0; n1];
            self.partial_weights(&profile, k, &z, &mut coef);
            profile.probe_seg.push(k as u32);
            profile.probe_coef.extend_from_slice(&coef);
            let base = if t == 0.0 { 1.0 - pi[n1 - 1] } else { closed_form_terms(&self.kernel, pi, &z) };
            profile.probe_base.push(base);
        }
        Ok(profile)
    }

    /// Homogeneous weights of `∫_{seg start}^{t} z(s)Λ ds` in segment `k`, given `z(t)`.
    fn partial_weights(&self, profile: &PathProfile, k: usize, z: &[f64], out: &mut [f64]) {
        let n1 = z.len();
        let diff: Vec<f64> = (0..n1).map(|i| z[i] - profile.seg_z[k * n1 + i]).collect();
        let mut integral = vec![0.0; n1];
        row_times(&diff, self.kernel.q_inv_rates(), &mut integral);
        let verts: Vec<usize> = profile.seg_vertices[k * n1..(k + 1) * n1].iter().map(|&v| v as usize).collect();
        let cell = self.grid.cell_from_vertices(&verts);
        self.grid.homogeneous_weights(&cell, &integral, out);
    }
}

struct SegmentRecorder {
    n1: usize,
    seg_t: Vec<f64>,
    seg_z: Vec<f64>,
    seg_cells: Vec<Cell>,
}

impl SegmentRecorder {
    fn new(n1: usize) -> Self {
        Self { n1, seg_t: Vec::new(), seg_z: Vec::new(), seg_cells: Vec::new() }
    }

    fn open(&mut self, t: f64, z: &[f64], cell: Cell) {
        self.seg_t.push(t);
        self.seg_z.extend_from_slice(z);
        self.seg_cells.push(cell);
    }

    fn boundary(&mut self, t: f64, z: &[f64], cell: Cell) {
        if self.seg_cells.last() == Some(&cell) {
            return;
        }
        self.open(t, z, cell);
    }

    fn close(&mut self, z: &[f64]) {
        debug_assert_eq!(self.seg_z.len(), self.seg_t.len() * self.n1);
        self.seg_z.extend_from_slice(z);
    }
}

impl PathProfile {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn segment_count(&self) -> usize {
        self.seg_t.len()
    }

    pub fn probe_times(&self) -> &[f64] {
        &self.probe_t
    }

    fn segment_of(&self, t: f64) -> usize {
        self.seg_t.partition_point(|&s| s <= t).saturating_sub(1).min(self.seg_t.len() - 1)
    }

    fn weighted(&self, verts: &[u32], coef: &[f64], values: &[f64]) -> f64 {
        verts.iter().zip(coef).map(|(&v, c)| values[v as usize] * c).sum()
    }

    /// Jump-term integral up to each segment start (one extra entry at the horizon).
    pub fn cumulative_jump(&self, values: &[f64]) -> Vec<f64> {
        let n1 = self.start.len();
        let mut out = Vec::with_capacity(self.seg_t.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 0..self.seg_t.len() {
            acc += self.weighted(&self.seg_vertices[k * n1..(k + 1) * n1], &self.seg_coef[k * n1..(k + 1) * n1], values);
            out.push(acc);
        }
        out
    }

    /// `J w` at the probe times.
    pub fn probe_values(&self, values: &[f64], cumulative: &[f64]) -> Vec<f64> {
        let n1 = self.start.len();
        (0..self.probe_t.len())
            .map(|p| {
                let k = self.probe_seg[p] as usize;
                self.probe_base[p]
                    + cumulative[k]
                    + self.weighted(&self.seg_vertices[k * n1..(k + 1) * n1], &self.probe_coef[p * n1..(p + 1) * n1], values)
            })
            .collect()
    }

    /// `J w(t, π)` for `t` in `[0, horizon]`.
    pub fn j_at(&self, builder: &ProfileBuilder, values: &[f64], cumulative: &[f64], t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(1.0 - self.start[self.start.len() - 1]);
        }
        let t = t.min(self.horizon);
        let n1 = self.start.len();
        let z = builder.kernel.z(&self.start, t)?;
        let k = self.segment_of(t);
        let mut coef = vec![0.0; n1];
        builder.partial_weights(self, k, &z, &mut coef);
        Ok(closed_form_terms(&builder.kernel, &self.start, &z)
            + cumulative[k]
            + self.weighted(&self.seg_vertices[k * n1..(k + 1) * n1], &coef, values))
    }

    /// `(inf J w(t, π), smallest minimizer)` over `[0, horizon]`, with the
    /// global search on the probe grid and golden-section refinement.
    pub fn minimize(&self, builder: &ProfileBuilder, values: &[f64]) -> Result<(f64, f64)> {
        if self.horizon <= 0.0 || self.seg_t.is_empty() {
            return Ok((1.0 - self.start[self.start.len() - 1], 0.0));
        }
        let cumulative = self.cumulative_jump(values);
        let probe_values = self.probe_values(values, &cumulative);
        let mut failure = None;
        let (t, v) = refine_probes(
            &mut |t| match self.j_at(builder, values, &cumulative, t) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            },
            &self.probe_t,
            &probe_values,
            REL_T_TOL * builder.limit,
            TIE_TOL,
        );
        match failure {
            Some(e) => Err(e),
            None => Ok((v, t)),
        }
    }
}
