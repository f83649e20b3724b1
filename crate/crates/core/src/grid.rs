//! Uniform lattice on the belief simplex with a Freudenthal triangulation.
//!
//! A belief `p = (p_0, .., p_n)` (absorbed last) maps to lattice coordinates
//! `x_i = N·(p_i + .. + p_n)` for `i = 1..n`, so that `N ≥ x_1 ≥ .. ≥ x_n ≥ 0`.
//! The order simplex is a union of Kuhn simplices of the unit-cube lattice,
//! which gives the cells used for piecewise-linear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_type::BeliefPoint;

const NO_NODE: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct SimplexGrid {
    n: usize,
    resolution: usize,
    /// Lattice coordinates of each node, `n` per node.
    coords: Vec<u32>,
    /// Dense map from lattice coordinates (mixed radix `N+1`) to node index.
    lookup: Vec<u32>,
}

/// Cell containing a point: its vertices and barycentric weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CellWeights {
    pub vertices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// A Freudenthal cell: base lattice point and the order in which unit steps are taken.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub base: Vec<u32>,
    pub order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    n: usize,
    resolution: usize,
}

impl Serialize for SimplexGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GridRepr { n: self.n, resolution: self.resolution }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SimplexGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = GridRepr::deserialize(d)?;
        SimplexGrid::new(r.n, r.resolution).map_err(serde::de::Error::custom)
    }
}

impl PartialEq for SimplexGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.resolution == other.resolution
    }
}

impl SimplexGrid {
    pub fn new(n: usize, resolution: usize) -> Result<Self> {
        if n == 0 || resolution == 0 {
            return Err(Error::domain("grid needs n ≥ 1 and resolution ≥ 1"));
        }
        let side = resolution as u64 + 1;
        let dense = side
            .checked_pow(n as u32)
            .filter(|&d| d <= 1 << 28)
            .ok_or_else(|| Error::domain(format!("grid too large: n = {n}, resolution = {resolution}")))?;
        let mut coords = Vec::new();
        let mut lookup = vec![NO_NODE; dense as usize];
        let mut x = vec![0u32; n];
        let mut count = 0u32;
        // Enumerate N ≥ x_1 ≥ .. ≥ x_n ≥ 0 in lexicographic order.
        fn rec(
            i: usize,
            upper: u32,
            x: &mut [u32],
            coords: &mut Vec<u32>,
            lookup: &mut [u32],
            count: &mut u32,
            side: usize,
        ) {
            if i == x.len() {
                let key = x.iter().fold(0usize, |k, &v| k * side + v as usize);
                lookup[key] = *count;
                coords.extend_from_slice(x);
                *count += 1;
                return;
            }
            for v in 0..=upper {
                x[i] = v;
                rec(i + 1, v, x, coords, lookup, count, side);
            }
        }
        rec(0, resolution as u32, &mut x, &mut coords, &mut lookup, &mut count, side as usize);
        Ok(Self { n, resolution, coords, lookup })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn node_count(&self) -> usize {
        self.coords.len() / self.n
    }

    pub fn node_coords(&self, k: usize) -> &[u32] {
        &self.coords[k * self.n..(k + 1) * self.n]
    }

    pub fn node_index(&self, x: &[u32]) -> Option<usize> {
        let side = self.resolution + 1;
        if x.len() != self.n || x.iter().any(|&v| v as usize > self.resolution) {
            return None;
        }
        let key = x.iter().fold(0usize, |k, &v| k * side + v as usize);
        match self.lookup[key] {
            NO_NODE => None,
            k => Some(k as usize),
        }
    }

    /// Belief probabilities of node `k` (length `n+1`).
    pub fn node_probs(&self, k: usize) -> Vec<f64> {
        let x = self.node_coords(k);
        let big_n = self.resolution as f64;
        let mut p = Vec::with_capacity(self.n + 1);
        p.push((self.resolution as u32 - x[0]) as f64 / big_n);
        for i in 0..self.n - 1 {
            p.push((x[i] - x[i + 1]) as f64 / big_n);
        }
        p.push(x[self.n - 1] as f64 / big_n);
        p
    }

    pub fn node_belief(&self, k: usize) -> BeliefPoint {
        BeliefPoint::from_mass(&self.node_probs(k)).expect("lattice nodes are beliefs")
    }

    /// Absorbed coordinate of node `k`.
    pub fn node_absorbed(&self, k: usize) -> f64 {
        self.node_coords(k)[self.n - 1] as f64 / self.resolution as f64
    }

    /// Lattice coordinates of an unnormalized nonnegative vector (`n+1` entries).
    fn lattice_point(&self, v: &[f64], out: &mut [f64]) {
        let total: f64 = v.iter().sum();
        let big_n = self.resolution as f64;
        let mut acc = 0.0;
        for i in (1..=self.n).rev() {
            acc += v[i];
            out[i - 1] = (big_n * acc / total).clamp(0.0, big_n);
        }
        // Round-off can break the ordering by a few ulps; restore it.
        for i in 1..self.n {
            if out[i] > out[i - 1] {
                out[i] = out[i - 1];
            }
        }
    }

    /// Cell containing the point with homogeneous coordinates `v` (any positive multiple of a belief).
    pub fn locate_cell(&self, v: &[f64]) -> Cell {
        let n = self.n;
        let mut x = vec![0.0; n];
        self.lattice_point(v, &mut x);
        let top = self.resolution as u32 - 1;
        let mut base = vec![0u32; n];
        let mut frac = vec![0.0; n];
        for i in 0..n {
            let b = (x[i].floor() as u32).min(top);
            base[i] = b;
            frac[i] = x[i] - b as f64;
        }
        let mut order: Vec<usize> = (0..n).collect();
        // Descending fractional part, ties by ascending index (stable sort).
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]));
        Cell { base, order }
    }

    /// Node indices of a cell's vertices, `v_0 = base`, `v_j = v_{j-1} + e_{order_j}`.
    pub fn cell_vertices(&self, cell: &Cell) -> Vec<usize> {
        let mut x = cell.base.clone();
        let mut out = Vec::with_capacity(self.n + 1);
        out.push(self.node_index(&x).expect("cell base is a node"));
        for &i in &cell.order {
            x[i] += 1;
            out.push(self.node_index(&x).expect("cell vertex is a node"));
        }
        out
    }

    /// Rebuilds a cell from its vertex node indices.
    pub fn cell_from_vertices(&self, vertices: &[usize]) -> Cell {
        let base = self.node_coords(vertices[0]).to_vec();
        let order = vertices
            .windows(2)
            .map(|w| {
                let (a, b) = (self.node_coords(w[0]), self.node_coords(w[1]));
                (0..self.n).find(|&i| a[i] != b[i]).expect("consecutive vertices differ")
            })
            .collect();
        Cell { base, order }
    }

    /// Homogeneous barycentric weights: linear in `v`, summing to `Σv`.
    ///
    /// Inside the cell these equal `Σv` times the ordinary barycentric weights;
    /// outside it they extend the same affine functions.
    pub fn homogeneous_weights(&self, cell: &Cell, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let big_n = self.resolution as f64;
        let total: f64 = v.iter().sum();
        // f_i = N·cum_i(v) - b_i·Σv.
        let mut f = vec![0.0; n];
        let mut acc = 0.0;
        for i in (1..=n).rev() {
            acc += v[i];
            f[i - 1] = big_n * acc - cell.base[i - 1] as f64 * total;
        }
        out[0] = total - f[cell.order[0]];
        for j in 1..n {
            out[j] = f[cell.order[j - 1]] - f[cell.order[j]];
        }
        out[n] = f[cell.order[n - 1]];
    }

    /// Cell and barycentric weights of a belief given as probabilities (`n+1` entries).
    pub fn locate(&self, p: &[f64]) -> CellWeights {
        let cell = self.locate_cell(p);
        let vertices = self.cell_vertices(&cell);
        let mut weights = vec![0.0; self.n + 1];
        self.homogeneous_weights(&cell, p, &mut weights);
        let total: f64 = p.iter().sum();
        for w in &mut weights {
            *w = (*w / total).max(0.0);
        }
        CellWeights { vertices, weights }
    }

    /// Piecewise-linear interpolation of node values at belief `p`.
    pub fn interpolate(&self, values: &[f64], p: &[f64]) -> f64 {
        let cw = self.locate(p);
        cw.vertices.iter().zip(&cw.weights).map(|(&k, &w)| values[k] * w).sum()
    }

    /// Cells of the triangulation, as vertex index lists.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let n = self.n;
        let mut out = Vec::new();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut perms = Vec::new();
        permutations(&mut perm, 0, &mut perms);
        for k in 0..self.node_count() {
            let base = self.node_coords(k).to_vec();
            'perm: for order in &perms {
                let mut x = base.clone();
                let mut verts = vec![k];
                for &i in order {
                    x[i] += 1;
                    match self.node_index(&x) {
                        Some(v) => verts.push(v),
                        None => continue 'perm,
                    }
                }
                out.push(verts);
            }
        }
        out
    }
}

fn permutations(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, out);
        v.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binom(a: usize, b: usize) -> usize {
        (0..b).fold(1, |acc, i| acc * (a - i) / (i + 1))
    }

    #[test]
    fn node_counts_and_validity() {
        for (n, res) in [(1, 5), (2, 4), (3, 6)] {
            let g = SimplexGrid::new(n, res).unwrap();
            assert_eq!(g.node_count(), binom(res + n, n));
            for k in 0..g.node_count() {
                let p = g.node_probs(k);
                assert!(p.iter().all(|&x| x >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(g.node_index(g.node_coords(k)), Some(k));
            }
        }
    }

    #[test]
    fn cells_tile_the_simplex() {
        // N^n cells of volume 1/n! each.
        for (n, res) in [(2, 5), (3, 4)] {
            let g = SimplexGrid::new(n, res).unwrap();
            assert_eq!(g.cells().len(), res.pow(n as u32));
        }
    }

    #[test]
    fn nodes_interpolate_exactly() {
        let g = SimplexGrid::new(2, 7).unwrap();
        let values: Vec<f64> = (0..g.node_count()).map(|k| (k as f64).sin()).collect();
        for k in 0..g.node_count() {
            let v = g.interpolate(&values, &g.node_probs(k));
            assert!((v - values[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_cells_are_valid() {
        let g = SimplexGrid::new(2, 3).unwrap();
        for p in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let cw = g.locate(&p);
            let s: f64 = cw.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_round_trip() {
        let g = SimplexGrid::new(3, 5).unwrap();
        let cell = g.locate_cell(&[0.1, 0.2, 0.3, 0.4]);
        let verts = g.cell_vertices(&cell);
        assert_eq!(g.cell_from_vertices(&verts), cell);
    }

    proptest! {
        #[test]
        fn linear_functions_are_reproduced(raw in prop::collection::vec(0.0f64..1.0, 4), coef in prop::collection::vec(-2.0f64..2.0, 4)) {
            let g = SimplexGrid::new(3, 6).unwrap();
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let p: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / 4.0) / s).collect();
            let values: Vec<f64> = (0..g.node_count())
                .map(|k| g.node_probs(k).iter().zip(&coef).map(|(a, b)| a * b).sum())
                .collect();
            let want: f64 = p.iter().zip(&coef).map(|(a, b)| a * b).sum();
            prop_assert!((g.interpolate(&values, &p) - want).abs() < 1e-10);
            let cw = g.locate(&p);
            prop_assert!((cw.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            // Reconstruct the point from its barycentric combination.
            for i in 0..4 {
                let r: f64 = cw.vertices.iter().zip(&cw.weights).map(|(&k, &w)| w * g.node_probs(k)[i]).sum();
                prop_assert!((r - p[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn homogeneous_weights_scale(raw in prop::collection::vec(0.01f64..1.0, 3), scale in 0.01f64..100.0) {
            let g = SimplexGrid::new(2, 9).unwrap();
            let cell = g.locate_cell(&raw);
            let scaled: Vec<f64> = raw.iter().map(|v| v * scale).collect();
            let mut a = vec![0.0; 3];
            let mut b = vec![0.0; 3];
            g.homogeneous_weights(&cell, &raw, &mut a);
            g.homogeneous_weights(&cell, &scaled, &mut b);
            for i in 0..3 {
                prop_assert!((a[i] * scale - b[i]).abs() < 1e-9 * scale.max(1.0));
                prop_assert!(a[i] >= -1e-12);
            }
        }
    }
}
