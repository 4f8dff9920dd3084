//! Uniform tensor-product grids with multilinear (Q1) elements in one or two
//! dimensions.
//!
//! Multi-indices are stored row-major: in 2D the flat index of `(i0, i1)` is
//! `i0 * n1 + i1`. Element-local nodes and quadrature points are numbered by
//! their bit pattern, bit `a` selecting the upper side along axis `a`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadrature rule on each element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum QuadRule {
    /// Tensor Gauss-Legendre, two points per direction.
    #[default]
    Gauss2,
    /// One point at the element center.
    Midpoint,
}

impl QuadRule {
    fn points_1d(self) -> (&'static [f64], &'static [f64]) {
        const G: [f64; 2] = [
            0.5 - 0.288_675_134_594_812_9, // 0.5 / sqrt(3)
            0.5 + 0.288_675_134_594_812_9,
        ];
        const W: [f64; 2] = [0.5, 0.5];
        match self {
            QuadRule::Gauss2 => (&G, &W),
            QuadRule::Midpoint => (&[0.5], &[1.0]),
        }
    }
}

/// Shape-function tables for one element of a uniform grid. Every element of
/// a uniform grid shares the same tables.
#[derive(Debug, Clone)]
pub struct ElementTables {
    pub dim: usize,
    /// Quadrature points in reference coordinates, `[0,1]^d`.
    pub ref_points: Vec<[f64; 2]>,
    /// Physical weights (reference weight times element volume).
    pub weights: Vec<f64>,
    /// `values[q][l]`
    pub values: Vec<Vec<f64>>,
    /// `grads[q][l]`, physical gradients.
    pub grads: Vec<Vec<[f64; 2]>>,
}

impl ElementTables {
    pub fn new(dim: usize, h: [f64; 2], rule: QuadRule) -> Self {
        let (pts, wts) = rule.points_1d();
        let m = pts.len();
        let nq = m.pow(dim as u32);
        let nl = 1usize << dim;
        let vol: f64 = h[..dim].iter().product();
        let mut ref_points = Vec::with_capacity(nq);
        let mut weights = Vec::with_capacity(nq);
        for q in 0..nq {
            let mut p = [0.0; 2];
            let mut w = vol;
            let mut rem = q;
            for a in (0..dim).rev() {
                let k = rem % m;
                rem /= m;
                p[a] = pts[k];
                w *= wts[k];
            }
            ref_points.push(p);
            weights.push(w);
        }
        let values = ref_points
            .iter()
            .map(|p| (0..nl).map(|l| shape_value(dim, l, p)).collect())
            .collect();
        let grads = ref_points
            .iter()
            .map(|p| {
                (0..nl)
                    .map(|l| {
                        let g = shape_ref_grad(dim, l, p);
                        let mut out = [0.0; 2];
                        for a in 0..dim {
                            out[a] = g[a] / h[a];
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        ElementTables {
            dim,
            ref_points,
            weights,
            values,
            grads,
        }
    }

    pub fn n_quad(&self) -> usize {
        self.weights.len()
    }

    pub fn n_local(&self) -> usize {
        1 << self.dim
    }
}

#[inline]
fn local_bit(l: usize, a: usize, dim: usize) -> usize {
    // local node l: bit for axis a, with axis 0 the most significant
    (l >> (dim - 1 - a)) & 1
}

/// Q1 shape function `l` at reference point `p`.
pub fn shape_value(dim: usize, l: usize, p: &[f64; 2]) -> f64 {
    (0..dim)
        .map(|a| if local_bit(l, a, dim) == 1 { p[a] } else { 1.0 - p[a] })
        .product()
}

/// Reference-coordinate gradient of Q1 shape function `l`.
pub fn shape_ref_grad(dim: usize, l: usize, p: &[f64; 2]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for a in 0..dim {
        let mut v = if local_bit(l, a, dim) == 1 { 1.0 } else { -1.0 };
        for b in 0..dim {
            if b != a {
                v *= if local_bit(l, b, dim) == 1 { p[b] } else { 1.0 - p[b] };
            }
        }
        g[a] = v;
    }
    g
}

/// Uniform grid of `cells[a]` elements per axis over a box. Periodic grids
/// identify opposite faces and carry `cells[a]` nodes per axis; otherwise
/// there are `cells[a] + 1` nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredGrid {
    pub dim: usize,
    pub cells: [usize; 2],
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub periodic: bool,
}

impl StructuredGrid {
    pub fn h(&self) -> [f64; 2] {
        let mut h = [1.0; 2];
        for a in 0..self.dim {
            h[a] = (self.upper[a] - self.lower[a]) / self.cells[a] as f64;
        }
        h
    }

    pub fn nodes_per_axis(&self) -> [usize; 2] {
        let mut n = [1; 2];
        for a in 0..self.dim {
            n[a] = if self.periodic {
                self.cells[a]
            } else {
                self.cells[a] + 1
            };
        }
        n
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes_per_axis()[..self.dim].iter().product()
    }

    pub fn n_elements(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    pub fn tables(&self, rule: QuadRule) -> ElementTables {
        ElementTables::new(self.dim, self.h(), rule)
    }

    pub fn element_multi(&self, e: usize) -> [usize; 2] {
        if self.dim == 1 {
            [e, 0]
        } else {
            [e / self.cells[1], e % self.cells[1]]
        }
    }

    pub fn element_origin(&self, e: usize) -> [f64; 2] {
        let m = self.element_multi(e);
        let h = self.h();
        let mut o = [0.0; 2];
        for a in 0..self.dim {
            o[a] = self.lower[a] + m[a] as f64 * h[a];
        }
        o
    }

    pub fn node_index(&self, multi: [usize; 2]) -> usize {
        let n = self.nodes_per_axis();
        let i0 = multi[0] % n[0];
        if self.dim == 1 {
            i0
        } else {
            i0 * n[1] + multi[1] % n[1]
        }
    }

    pub fn node_multi(&self, i: usize) -> [usize; 2] {
        let n = self.nodes_per_axis();
        if self.dim == 1 {
            [i, 0]
        } else {
            [i / n[1], i % n[1]]
        }
    }

    pub fn node_coords(&self, i: usize) -> [f64; 2] {
        let m = self.node_multi(i);
        let h = self.h();
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            x[a] = self.lower[a] + m[a] as f64 * h[a];
        }
        x
    }

    /// Global node indices of the local nodes of element `e`.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let m = self.element_multi(e);
        let mut out = [0; 4];
        for (l, slot) in out.iter_mut().enumerate().take(1 << self.dim) {
            let mut mm = m;
            for (a, v) in mm.iter_mut().enumerate().take(self.dim) {
                *v += local_bit(l, a, self.dim);
            }
            *slot = self.node_index(mm);
        }
        out
    }

    /// Physical coordinates of quadrature point `q` in element `e`.
    pub fn quad_point(&self, tables: &ElementTables, e: usize, q: usize) -> [f64; 2] {
        let o = self.element_origin(e);
        let h = self.h();
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            x[a] = o[a] + tables.ref_points[q][a] * h[a];
        }
        x
    }

    pub fn is_boundary_node(&self, i: usize) -> bool {
        if self.periodic {
            return false;
        }
        let m = self.node_multi(i);
        (0..self.dim).any(|a| m[a] == 0 || m[a] == self.cells[a])
    }

    /// Element containing `x` and the reference coordinates of `x` in it.
    /// Points outside the box are clamped (non-periodic) or wrapped (periodic).
    pub fn locate(&self, x: &[f64]) -> (usize, [f64; 2]) {
        let h = self.h();
        let mut m = [0usize; 2];
        let mut r = [0.0; 2];
        for a in 0..self.dim {
            let n = self.cells[a];
            let mut s = (x[a] - self.lower[a]) / h[a];
            if self.periodic {
                s = s.rem_euclid(n as f64);
            }
            let k = (s.floor().max(0.0) as usize).min(n - 1);
            m[a] = k;
            r[a] = (s - k as f64).clamp(0.0, 1.0);
        }
        let e = if self.dim == 1 { m[0] } else { m[0] * self.cells[1] + m[1] };
        (e, r)
    }

    /// Multilinear interpolation of nodal values at `x`.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let (e, r) = self.locate(x);
        let nodes = self.element_nodes(e);
        (0..1 << self.dim)
            .map(|l| values[nodes[l]] * shape_value(self.dim, l, &r))
            .sum()
    }

    /// Gradient of the Q1 interpolant inside the element containing `x`.
    pub fn element_gradient(&self, values: &[f64], x: &[f64]) -> [f64; 2] {
        let (e, r) = self.locate(x);
        let nodes = self.element_nodes(e);
        let h = self.h();
        let mut g = [0.0; 2];
        for l in 0..1 << self.dim {
            let rg = shape_ref_grad(self.dim, l, &r);
            for a in 0..self.dim {
                g[a] += values[nodes[l]] * rg[a] / h[a];
            }
        }
        g
    }

    /// Nodal gradient recovered by averaging the element gradients of all
    /// elements sharing each node. Returns one field per axis.
    pub fn recover_gradient(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let nn = self.n_nodes();
        let mut acc = vec![vec![0.0; nn]; self.dim];
        let mut count = vec![0.0; nn];
        let h = self.h();
        for e in 0..self.n_elements() {
            let nodes = self.element_nodes(e);
            for corner in 0..1 << self.dim {
                // gradient at the element corner of local node `corner`
                let mut p = [0.0; 2];
                for (a, v) in p.iter_mut().enumerate().take(self.dim) {
                    *v = local_bit(corner, a, self.dim) as f64;
                }
                let mut g = [0.0; 2];
                for l in 0..1 << self.dim {
                    let rg = shape_ref_grad(self.dim, l, &p);
                    for a in 0..self.dim {
                        g[a] += values[nodes[l]] * rg[a] / h[a];
                    }
                }
                let node = nodes[corner];
                for a in 0..self.dim {
                    acc[a][node] += g[a];
                }
                count[node] += 1.0;
            }
        }
        for comp in acc.iter_mut() {
            for (v, c) in comp.iter_mut().zip(&count) {
                *v /= c;
            }
        }
        acc
    }
}

/// Periodic Q1 grid on the unit cell `[0,1)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCellGrid {
    grid: StructuredGrid,
}

impl UnitCellGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("dimension {dim} not supported")));
        }
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "cell grid needs an even number of cells >= 4, got {n}"
            )));
        }
        Ok(UnitCellGrid {
            grid: StructuredGrid {
                dim,
                cells: [n, if dim == 2 { n } else { 1 }],
                lower: [0.0; 2],
                upper: [1.0; 2],
                periodic: true,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn n(&self) -> usize {
        self.grid.cells[0]
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// The 2d periodic neighbors of a node.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let m = self.grid.node_multi(i);
        let n = self.n();
        let mut out = Vec::with_capacity(2 * self.dim());
        for a in 0..self.dim() {
            for step in [1, n - 1] {
                let mut mm = m;
                mm[a] = (mm[a] + step) % n;
                out.push(self.grid.node_index(mm));
            }
        }
        out
    }
}

/// Dirichlet Q1 mesh on an axis-aligned box; every boundary node is fixed to
/// zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StructuredGrid", into = "StructuredGrid")]
pub struct MacroMesh {
    grid: StructuredGrid,
    interior: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
}

impl MacroMesh {
    pub fn new(dim: usize, lower: &[f64], upper: &[f64], cells: &[usize]) -> Result<Self> {
        if !(1..=2).contains(&dim) || lower.len() != dim || upper.len() != dim || cells.len() != dim
        {
            return Err(Error::Config("macro mesh dimensions are inconsistent".into()));
        }
        let mut g = StructuredGrid {
            dim,
            cells: [1; 2],
            lower: [0.0; 2],
            upper: [1.0; 2],
            periodic: false,
        };
        for a in 0..dim {
            if cells[a] < 2 || upper[a] <= lower[a] {
                return Err(Error::Config(format!(
                    "macro mesh axis {a}: need >= 2 cells and lower < upper"
                )));
            }
            g.cells[a] = cells[a];
            g.lower[a] = lower[a];
            g.upper[a] = upper[a];
        }
        Ok(Self::from_grid(g))
    }

    /// Same number of cells along every axis.
    pub fn uniform(dim: usize, lower: &[f64], upper: &[f64], n: usize) -> Result<Self> {
        Self::new(dim, lower, upper, &vec![n; dim])
    }

    fn from_grid(grid: StructuredGrid) -> Self {
        let nn = grid.n_nodes();
        let mut interior = Vec::new();
        let mut dof_of_node = vec![None; nn];
        for (i, slot) in dof_of_node.iter_mut().enumerate() {
            if !grid.is_boundary_node(i) {
                *slot = Some(interior.len());
                interior.push(i);
            }
        }
        MacroMesh {
            grid,
            interior,
            dof_of_node,
        }
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn n_dofs(&self) -> usize {
        self.interior.len()
    }

    pub fn max_h(&self) -> f64 {
        let h = self.grid.h();
        h[..self.dim()].iter().cloned().fold(0.0, f64::max)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim())
            .map(|a| self.grid.upper[a] - self.grid.lower[a])
            .product()
    }

    /// Scatter interior values into a full nodal vector with zero boundary.
    pub fn expand(&self, interior_values: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes()];
        for (k, &node) in self.interior.iter().enumerate() {
            full[node] = interior_values[k];
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&n| full[n]).collect()
    }
}

impl From<StructuredGrid> for MacroMesh {
    fn from(grid: StructuredGrid) -> Self {
        MacroMesh::from_grid(grid)
    }
}

impl From<MacroMesh> for StructuredGrid {
    fn from(m: MacroMesh) -> Self {
        m.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_and_weights() {
        for dim in 1..=2 {
            let t = ElementTables::new(dim, [0.25, 0.5], QuadRule::Gauss2);
            let vol = if dim == 1 { 0.25 } else { 0.125 };
            assert!((t.weights.iter().sum::<f64>() - vol).abs() < 1e-15);
            for q in 0..t.n_quad() {
                let s: f64 = t.values[q].iter().sum();
                assert!((s - 1.0).abs() < 1e-15);
                for a in 0..dim {
                    let g: f64 = t.grads[q].iter().map(|g| g[a]).sum();
                    assert!(g.abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn periodic_neighbors() {
        for dim in 1..=2 {
            let g = UnitCellGrid::new(dim, 6).unwrap();
            for i in 0..g.n_nodes() {
                let nb = g.neighbors(i);
                assert_eq!(nb.len(), 2 * dim);
                let mut s = nb.clone();
                s.sort();
                s.dedup();
                assert_eq!(s.len(), 2 * dim);
                assert!(!nb.contains(&i));
            }
        }
        assert!(UnitCellGrid::new(1, 5).is_err());
        assert!(UnitCellGrid::new(1, 2).is_err());
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let m = MacroMesh::uniform(2, &[0.0, 0.0], &[2.0, 1.0], 4).unwrap();
        let f = |x: [f64; 2]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let vals: Vec<f64> = (0..m.n_nodes()).map(|i| f(m.grid().node_coords(i))).collect();
        for p in [[0.1, 0.9], [1.37, 0.2], [2.0, 1.0]] {
            assert!((m.grid().interpolate(&vals, &p) - f(p)).abs() < 1e-13);
            let g = m.grid().element_gradient(&vals, &p);
            assert!((g[0] - (2.0 + 0.5 * p[1])).abs() < 1e-12);
        }
        let rec = m.grid().recover_gradient(&vals);
        let i = m.grid().node_index([2, 2]);
        assert!((rec[1][i] - (-1.0 + 0.5 * m.grid().node_coords(i)[0])).abs() < 1e-12);
    }

    #[test]
    fn boundary_and_dofs() {
        let m = MacroMesh::uniform(2, &[0.0, 0.0], &[1.0, 1.0], 4).unwrap();
        assert_eq!(m.n_nodes(), 25);
        assert_eq!(m.n_dofs(), 9);
        let full = m.expand(&[1.0; 9]);
        assert_eq!(full.iter().sum::<f64>(), 9.0);
        for i in 0..m.n_nodes() {
            assert_eq!(m.grid().is_boundary_node(i), m.dof(i).is_none());
        }
    }
}
