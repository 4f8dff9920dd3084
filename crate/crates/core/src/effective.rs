//! Effective coefficients of the homogenized dual-continuum system.
//!
//! At each macro point the cell solutions yield, for continuum `k`:
//!
//! * `kappa*_k,ij = int_Y kappa_k (delta_ij + dN^j_k / dy_i)`
//! * convection `b_k = int_Y kappa_k grad_y M_k`
//! * drift `a_k^i = int_Y Q N^i_k`
//! * capacity `<C_kk> = int_Y C_kk`
//!
//! and the shared exchange coefficient `beta = int_Y Q (M_1 + M_2)`, which
//! enters the homogenized equations as `-beta`. All cell integrals use the
//! same 2-point Gauss rule as the cell assembly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{solve_cell_problems, CellField, CellSolutionSet, CellSolverOptions, QuadSamples};
use crate::coeffs::{validate, Domain, ProblemData, ValidationOptions};
use crate::error::{Error, Result};
use crate::mesh::{MacroMesh, QuadRule, UnitCellGrid};

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

pub fn assemble_kappa_star(kappa: &QuadSamples, n_corr: &[CellField]) -> Mat2 {
    let grid = &n_corr[0].grid;
    let dim = grid.dim();
    let tables = grid.grid().tables(QuadRule::Gauss2);
    let mut k = [[0.0; 2]; 2];
    for e in 0..grid.grid().n_elements() {
        for q in 0..tables.n_quad() {
            let w = tables.weights[q] * kappa.at(e, q);
            for (j, nj) in n_corr.iter().enumerate() {
                let g = nj.gradient_at_quad(&tables, e, q);
                for i in 0..dim {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    k[i][j] += w * (delta + g[i]);
                }
            }
        }
    }
    k
}

pub fn assemble_convection(kappa: &QuadSamples, m: &CellField) -> Vec2 {
    let tables = m.grid.grid().tables(QuadRule::Gauss2);
    let mut b = [0.0; 2];
    for e in 0..m.grid.grid().n_elements() {
        for q in 0..tables.n_quad() {
            let w = tables.weights[q] * kappa.at(e, q);
            let g = m.gradient_at_quad(&tables, e, q);
            for a in 0..m.grid.dim() {
                b[a] += w * g[a];
            }
        }
    }
    b
}

pub fn assemble_drift(exchange: &QuadSamples, n_corr: &[CellField]) -> Vec2 {
    let grid = &n_corr[0].grid;
    let tables = grid.grid().tables(QuadRule::Gauss2);
    let mut a = [0.0; 2];
    for e in 0..grid.grid().n_elements() {
        for q in 0..tables.n_quad() {
            let w = tables.weights[q] * exchange.at(e, q);
            for (i, ni) in n_corr.iter().enumerate() {
                a[i] += w * ni.value_at_quad(&tables, e, q);
            }
        }
    }
    a
}

pub fn assemble_exchange(exchange: &QuadSamples, m1: &CellField, m2: &CellField) -> f64 {
    let tables = m1.grid.grid().tables(QuadRule::Gauss2);
    let mut beta = 0.0;
    for e in 0..m1.grid.grid().n_elements() {
        for q in 0..tables.n_quad() {
            let m = m1.value_at_quad(&tables, e, q) + m2.value_at_quad(&tables, e, q);
            beta += tables.weights[q] * exchange.at(e, q) * m;
        }
    }
    beta
}

/// `int_Y kappa |grad_y M|^2`.
pub fn exchange_energy(kappa: &QuadSamples, m: &CellField) -> f64 {
    let tables = m.grid.grid().tables(QuadRule::Gauss2);
    let mut s = 0.0;
    for e in 0..m.grid.grid().n_elements() {
        for q in 0..tables.n_quad() {
            let g = m.gradient_at_quad(&tables, e, q);
            let g2: f64 = g[..m.grid.dim()].iter().map(|v| v * v).sum();
            s += tables.weights[q] * kappa.at(e, q) * g2;
        }
    }
    s
}

/// Eigenvalues of the symmetric part of a 1x1 or 2x2 matrix, ascending.
pub fn sym_eigenvalues(m: &Mat2, dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![m[0][0]];
    }
    let a = m[0][0];
    let d = m[1][1];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
    vec![mean - r, mean + r]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivePointData {
    pub dim: usize,
    pub macro_point: Vec<f64>,
    pub kappa_star: [Mat2; 2],
    pub convection: [Vec2; 2],
    pub drift: [Vec2; 2],
    pub beta: f64,
    pub capacity_bar: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub symmetry_defect: [f64; 2],
    pub eigenvalues: [Vec<f64>; 2],
    pub harmonic_mean: [f64; 2],
    pub arithmetic_mean: [f64; 2],
    /// `int kappa_k |grad M_k|^2` per continuum.
    pub exchange_energy: [f64; 2],
    pub violations: Vec<String>,
}

impl EffectivePointData {
    /// Constant coefficients, mainly for manufactured solutions.
    pub fn uniform(
        dim: usize,
        kappa_star: [Mat2; 2],
        convection: [Vec2; 2],
        drift: [Vec2; 2],
        beta: f64,
        capacity_bar: [f64; 2],
    ) -> Self {
        EffectivePointData {
            dim,
            macro_point: vec![],
            kappa_star,
            convection,
            drift,
            beta,
            capacity_bar,
        }
    }

    pub fn from_cells(set: &CellSolutionSet) -> Self {
        let tables = set.grid.grid().tables(QuadRule::Gauss2);
        EffectivePointData {
            dim: set.dim(),
            macro_point: set.macro_point.clone(),
            kappa_star: [
                assemble_kappa_star(&set.kappa[0], &set.n_corr[0]),
                assemble_kappa_star(&set.kappa[1], &set.n_corr[1]),
            ],
            convection: [
                assemble_convection(&set.kappa[0], &set.m_corr[0]),
                assemble_convection(&set.kappa[1], &set.m_corr[1]),
            ],
            drift: [
                assemble_drift(&set.exchange, &set.n_corr[0]),
                assemble_drift(&set.exchange, &set.n_corr[1]),
            ],
            beta: assemble_exchange(&set.exchange, &set.m_corr[0], &set.m_corr[1]),
            capacity_bar: [
                set.capacity[0].integral(&tables),
                set.capacity[1].integral(&tables),
            ],
        }
    }

    /// Checks symmetry and definiteness of `kappa*`, the arithmetic and
    /// harmonic mean bounds on its spectrum, and the sign of `beta`.
    pub fn diagnose(&self, set: &CellSolutionSet) -> PointDiagnostics {
        let tables = set.grid.grid().tables(QuadRule::Gauss2);
        let dim = self.dim;
        let mut violations = Vec::new();
        let mut symmetry_defect = [0.0; 2];
        let mut eigenvalues = [vec![], vec![]];
        let mut harmonic_mean = [0.0; 2];
        let mut arithmetic_mean = [0.0; 2];
        let mut energy = [0.0; 2];
        for k in 0..2 {
            let m = &self.kappa_star[k];
            let norm = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            symmetry_defect[k] = if dim == 2 { (m[0][1] - m[1][0]).abs() } else { 0.0 };
            if symmetry_defect[k] > 1e-10 * norm.max(1e-300) {
                violations.push(format!("kappa*_{} asymmetric by {:e}", k + 1, symmetry_defect[k]));
            }
            eigenvalues[k] = sym_eigenvalues(m, dim);
            arithmetic_mean[k] = set.kappa[k].integral(&tables);
            let inv = QuadSamples {
                n_quad: set.kappa[k].n_quad,
                values: set.kappa[k].values.iter().map(|v| 1.0 / v).collect(),
            };
            harmonic_mean[k] = 1.0 / inv.integral(&tables);
            let slack = 1e-8 * arithmetic_mean[k];
            let lo = eigenvalues[k][0];
            let hi = *eigenvalues[k].last().unwrap();
            if lo <= 0.0 {
                violations.push(format!("kappa*_{} not positive definite", k + 1));
            }
            if lo < harmonic_mean[k] - slack - 1e-3 * harmonic_mean[k] {
                violations.push(format!("kappa*_{} below harmonic mean", k + 1));
            }
            if hi > arithmetic_mean[k] + slack {
                violations.push(format!("kappa*_{} above arithmetic mean", k + 1));
            }
            energy[k] = exchange_energy(&set.kappa[k], &set.m_corr[k]);
        }
        if self.beta < -1e-10 * (energy[0] + energy[1]).max(1.0) {
            violations.push(format!("beta = {:e} is negative", self.beta));
        }
        PointDiagnostics {
            symmetry_defect,
            eigenvalues,
            harmonic_mean,
            arithmetic_mean,
            exchange_energy: energy,
            violations,
        }
    }

    fn axpy(&mut self, w: f64, other: &EffectivePointData) {
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    self.kappa_star[k][i][j] += w * other.kappa_star[k][i][j];
                }
                self.convection[k][i] += w * other.convection[k][i];
                self.drift[k][i] += w * other.drift[k][i];
            }
            self.capacity_bar[k] += w * other.capacity_bar[k];
        }
        self.beta += w * other.beta;
    }

    fn zero(dim: usize) -> Self {
        EffectivePointData::uniform(dim, [[[0.0; 2]; 2]; 2], [[0.0; 2]; 2], [[0.0; 2]; 2], 0.0, [0.0; 2])
    }
}

/// Anything that provides effective coefficients at macro points.
pub trait EffectiveCoefficients: Sync {
    fn dim(&self) -> usize;
    fn at(&self, x: &[f64]) -> Result<EffectivePointData>;
}

impl EffectiveCoefficients for EffectivePointData {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, _x: &[f64]) -> Result<EffectivePointData> {
        Ok(self.clone())
    }
}

/// Exact effective coefficients of data without `y`-dependence: every cell
/// corrector vanishes, so `kappa* = kappa(x) I`, `<C> = C(x)` and the
/// exchange-derived terms are zero.
pub struct YIndependentCoefficients<'a> {
    data: &'a ProblemData,
}

impl<'a> YIndependentCoefficients<'a> {
    pub fn new(data: &'a ProblemData) -> Result<Self> {
        if !data.is_y_independent() {
            return Err(Error::InvalidData("coefficients depend on y".into()));
        }
        Ok(YIndependentCoefficients { data })
    }
}

impl EffectiveCoefficients for YIndependentCoefficients<'_> {
    fn dim(&self) -> usize {
        self.data.dim
    }

    fn at(&self, x: &[f64]) -> Result<EffectivePointData> {
        let y = [0.0; 2];
        let y = &y[..self.data.dim];
        let mut p = EffectivePointData::zero(self.data.dim);
        for k in 0..2 {
            let kappa = self.data.kappa[k].evaluate(x, y, 0.0)?;
            for a in 0..self.data.dim {
                p.kappa_star[k][a][a] = kappa;
            }
            p.capacity_bar[k] = self.data.capacity[k].evaluate(x, y, 0.0)?;
        }
        p.macro_point = x.to_vec();
        Ok(p)
    }
}

/// Where cell problems are solved over the macro domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MacroSampling {
    /// `counts[a]` points per axis including both ends; a count of one puts
    /// the single sample at the center.
    Lattice { counts: Vec<usize> },
    /// One sample at the center of every element of a macro mesh.
    ElementCenters { cells: Vec<usize> },
}

impl MacroSampling {
    pub fn for_mesh(mesh: &MacroMesh) -> Self {
        MacroSampling::ElementCenters {
            cells: mesh.grid().cells[..mesh.dim()].to_vec(),
        }
    }

    /// A single sample when the coefficients do not vary with `x`, otherwise
    /// `per_axis` element centers along every axis.
    pub fn auto(data: &ProblemData, per_axis: usize) -> Self {
        if data.is_x_independent() {
            MacroSampling::Lattice { counts: vec![1; data.dim] }
        } else {
            MacroSampling::ElementCenters { cells: vec![per_axis; data.dim] }
        }
    }

    pub fn lattice(&self, domain: &Domain) -> Result<MacroLattice> {
        Ok(MacroLattice {
            axes: self.axes(&domain.lower, &domain.upper)?,
        })
    }

    fn axes(&self, lower: &[f64], upper: &[f64]) -> Result<Vec<Vec<f64>>> {
        let dim = lower.len();
        let counts = match self {
            MacroSampling::Lattice { counts } | MacroSampling::ElementCenters { cells: counts } => counts,
        };
        if counts.len() != dim || counts.contains(&0) {
            return Err(Error::Config("macro sampling does not match the domain".into()));
        }
        Ok((0..dim)
            .map(|a| {
                let (lo, hi, n) = (lower[a], upper[a], counts[a]);
                match self {
                    MacroSampling::Lattice { .. } if n == 1 => vec![0.5 * (lo + hi)],
                    MacroSampling::Lattice { .. } => (0..n)
                        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                        .collect(),
                    MacroSampling::ElementCenters { .. } => (0..n)
                        .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
                        .collect(),
                }
            })
            .collect())
    }
}

/// Tensor lattice of macro sample points with multilinear interpolation,
/// clamped outside the outermost samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroLattice {
    pub axes: Vec<Vec<f64>>,
}

impl MacroLattice {
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut idx = vec![0; self.axes.len()];
        for a in (0..self.axes.len()).rev() {
            idx[a] = rem % self.axes[a].len();
            rem /= self.axes[a].len();
        }
        idx.iter().enumerate().map(|(a, &i)| self.axes[a][i]).collect()
    }

    /// Interpolation stencil: (flat index, weight) pairs.
    pub fn stencil(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let dim = self.axes.len();
        let mut per_axis = Vec::with_capacity(dim);
        for a in 0..dim {
            let ax = &self.axes[a];
            if ax.len() == 1 {
                per_axis.push((0, 0, 0.0));
                continue;
            }
            let xa = x[a].clamp(ax[0], *ax.last().unwrap());
            let k = match ax.iter().position(|&v| v > xa) {
                Some(0) => 0,
                Some(p) => p - 1,
                None => ax.len() - 2,
            }
            .min(ax.len() - 2);
            let t = (xa - ax[k]) / (ax[k + 1] - ax[k]);
            per_axis.push((k, k + 1, t));
        }
        let mut out = Vec::with_capacity(1 << dim);
        for corner in 0..1usize << dim {
            let mut w = 1.0;
            let mut flat = 0;
            for (a, &(lo, hi, t)) in per_axis.iter().enumerate() {
                let up = (corner >> a) & 1 == 1;
                w *= if up { t } else { 1.0 - t };
                flat = flat * self.axes[a].len() + if up { hi } else { lo };
            }
            if w != 0.0 {
                out.push((flat, w));
            }
        }
        out
    }
}

/// Effective coefficients on a macro lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveField {
    pub dim: usize,
    pub lattice: MacroLattice,
    pub points: Vec<EffectivePointData>,
    pub diagnostics: Vec<PointDiagnostics>,
}

impl EffectiveField {
    pub fn violations(&self) -> Vec<String> {
        self.diagnostics
            .iter()
            .zip(&self.points)
            .flat_map(|(d, p)| d.violations.iter().map(move |v| format!("at {:?}: {v}", p.macro_point)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("effective field serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("effective field: {e}")))
    }
}

impl EffectiveCoefficients for EffectiveField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, x: &[f64]) -> Result<EffectivePointData> {
        let mut out = EffectivePointData::zero(self.dim);
        for (i, w) in self.lattice.stencil(x) {
            out.axpy(w, &self.points[i]);
        }
        out.macro_point = x.to_vec();
        Ok(out)
    }
}

/// Cell solutions on a macro lattice with recovered (nodal) `y`-gradients,
/// used to evaluate the first-order corrector at `(x, x/eps)`.
#[derive(Debug, Clone)]
pub struct CellLibrary {
    pub lattice: MacroLattice,
    pub sets: Vec<CellSolutionSet>,
    /// per set, per continuum: recovered gradients of `N^1..N^d` then `M`,
    /// each as `dim` nodal component fields
    grads: Vec<[Vec<Vec<Vec<f64>>>; 2]>,
}

/// Values and `y`-gradients of all correctors at one `(x, y)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CorrectorGradients {
    /// `dn[k][i]` is `grad_y N^i_k`.
    pub dn: [[Vec2; 2]; 2],
    /// `dm[k]` is `grad_y M_k`.
    pub dm: [Vec2; 2],
    /// `n[k][i]` is `N^i_k`.
    pub n: [Vec2; 2],
    /// `m[k]` is `M_k`.
    pub m: [f64; 2],
}

impl CellLibrary {
    pub fn new(lattice: MacroLattice, sets: Vec<CellSolutionSet>) -> Self {
        let grads = sets
            .iter()
            .map(|s| {
                let g = s.grid.grid();
                let per = |k: usize| -> Vec<Vec<Vec<f64>>> {
                    s.n_corr[k]
                        .iter()
                        .chain(std::iter::once(&s.m_corr[k]))
                        .map(|f| g.recover_gradient(&f.values))
                        .collect()
                };
                [per(0), per(1)]
            })
            .collect();
        CellLibrary { lattice, sets, grads }
    }

    pub fn dim(&self) -> usize {
        self.lattice.axes.len()
    }

    /// True when every corrector vanishes to `tol`.
    pub fn is_trivial(&self, tol: f64) -> bool {
        self.sets.iter().all(|s| s.max_corrector() <= tol)
    }

    pub fn gradients(&self, x: &[f64], y: &[f64]) -> CorrectorGradients {
        let dim = self.dim();
        let mut out = CorrectorGradients::default();
        for (si, w) in self.lattice.stencil(x) {
            let g = self.sets[si].grid.grid();
            for k in 0..2 {
                let fields = &self.grads[si][k];
                for i in 0..dim {
                    for a in 0..dim {
                        out.dn[k][i][a] += w * g.interpolate(&fields[i][a], y);
                    }
                }
                for a in 0..dim {
                    out.dm[k][a] += w * g.interpolate(&fields[dim][a], y);
                }
                for i in 0..dim {
                    out.n[k][i] += w * self.sets[si].n_corr[k][i].interpolate(y);
                }
                out.m[k] += w * self.sets[si].m_corr[k].interpolate(y);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EffectiveBuild {
    pub field: EffectiveField,
    pub cells: CellLibrary,
}

/// Solves the cell problems at every macro sample (in parallel) and
/// assembles the effective coefficients. Data failing validation is refused.
pub fn build_effective_field(
    data: &ProblemData,
    sampling: &MacroSampling,
    grid: &UnitCellGrid,
    opts: &CellSolverOptions,
) -> Result<EffectiveBuild> {
    if grid.dim() != data.dim {
        return Err(Error::Incompatible("cell grid dimension differs from the data".into()));
    }
    validate(
        data,
        &ValidationOptions {
            tol_mean: opts.tol_mean,
            ..Default::default()
        },
    )
    .into_result()?;
    let lattice = sampling.lattice(&data.domain)?;
    let points: Vec<Vec<f64>> = (0..lattice.len()).map(|i| lattice.point(i)).collect();
    let sets = points
        .par_iter()
        .map(|x| {
            solve_cell_problems(data, x, grid, opts).map_err(|e| Error::AtMacroPoint {
                point: x.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_from_sets(data.dim, lattice, sets))
}

/// Assembles effective data from already solved cell problems.
pub fn assemble_from_sets(dim: usize, lattice: MacroLattice, sets: Vec<CellSolutionSet>) -> EffectiveBuild {
    let (points, diagnostics): (Vec<_>, Vec<_>) = sets
        .par_iter()
        .map(|s| {
            let p = EffectivePointData::from_cells(s);
            let d = p.diagnose(s);
            (p, d)
        })
        .unzip();
    EffectiveBuild {
        field: EffectiveField {
            dim,
            lattice: lattice.clone(),
            points,
            diagnostics,
        },
        cells: CellLibrary::new(lattice, sets),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::sample_at_quadrature;
    use crate::cell::solve_cell_problems_sampled;
    use std::f64::consts::PI;

    fn set_for(
        dim: usize,
        n: usize,
        k1: impl Fn(&[f64]) -> f64,
        k2: impl Fn(&[f64]) -> f64,
        q: impl Fn(&[f64]) -> f64,
    ) -> CellSolutionSet {
        let grid = UnitCellGrid::new(dim, n).unwrap();
        let s = |f: &dyn Fn(&[f64]) -> f64| sample_at_quadrature(&grid, |y| Ok(f(y))).unwrap();
        solve_cell_problems_sampled(
            &vec![0.5; dim],
            &grid,
            [s(&k1), s(&k2)],
            [s(&|_| 1.0), s(&|_| 2.0)],
            s(&q),
            &Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn constant_kappa() {
        let set = set_for(2, 8, |_| 3.0, |_| 3.0, |_| 0.0);
        let p = EffectivePointData::from_cells(&set);
        for k in 0..2 {
            assert!((p.kappa_star[k][0][0] - 3.0).abs() < 1e-12);
            assert!((p.kappa_star[k][1][1] - 3.0).abs() < 1e-12);
            assert!(p.kappa_star[k][0][1].abs() < 1e-12);
            assert_eq!(p.convection[k], [0.0, 0.0]);
            assert!(p.drift[k].iter().all(|v| v.abs() < 1e-12));
        }
        assert_eq!(p.beta, 0.0);
        assert!((p.capacity_bar[1] - 2.0).abs() < 1e-12);
        assert!(p.diagnose(&set).violations.is_empty());
    }

    #[test]
    fn unit_kappa_convection_vanishes() {
        let set = set_for(2, 16, |_| 1.0, |_| 1.0, |y| (2.0 * PI * y[0]).sin() + (2.0 * PI * y[1]).cos());
        let p = EffectivePointData::from_cells(&set);
        for k in 0..2 {
            assert!(p.convection[k].iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn scaling_kappa_scales_kappa_star() {
        let k = |y: &[f64]| 1.0 + 0.5 * (2.0 * PI * y[0]).sin() * (2.0 * PI * y[1]).cos();
        let a = set_for(2, 16, k, move |y| 2.5 * k(y), |_| 0.0);
        let p = EffectivePointData::from_cells(&a);
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.kappa_star[1][i][j] - 2.5 * p.kappa_star[0][i][j]).abs() < 1e-9);
            }
        }
        for i in 0..2 {
            for (u, v) in a.n_corr[0][i].values.iter().zip(&a.n_corr[1][i].values) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn swap_symmetry() {
        let k1 = |y: &[f64]| 1.0 + 0.5 * (2.0 * PI * y[0]).sin();
        let k2 = |y: &[f64]| 2.0 + (2.0 * PI * y[1]).cos() * 0.7;
        let q = |y: &[f64]| (2.0 * PI * (y[0] + y[1])).sin();
        let a = EffectivePointData::from_cells(&set_for(2, 16, k1, k2, q));
        let b = EffectivePointData::from_cells(&set_for(2, 16, k2, k1, q));
        let close = |u: f64, v: f64| (u - v).abs() < 1e-10;
        assert!(close(a.beta, b.beta));
        for i in 0..2 {
            assert!(close(a.convection[0][i], b.convection[1][i]));
            assert!(close(a.drift[0][i], b.drift[1][i]));
            for j in 0..2 {
                assert!(close(a.kappa_star[0][i][j], b.kappa_star[1][i][j]));
            }
        }
    }

    #[test]
    fn lattice_interpolation() {
        let lat = MacroLattice { axes: vec![vec![0.0, 0.5, 1.0], vec![0.25]] };
        assert_eq!(lat.len(), 3);
        assert_eq!(lat.point(2), vec![1.0, 0.25]);
        let st = lat.stencil(&[0.75, 0.9]);
        assert_eq!(st, vec![(1, 0.5), (2, 0.5)]);
        assert_eq!(lat.stencil(&[-3.0, 0.0]), vec![(0, 1.0)]);
    }

    #[test]
    fn eigenvalues_of_symmetric_part() {
        let e = sym_eigenvalues(&[[2.0, 1.0], [1.0, 2.0]], 2);
        assert!((e[0] - 1.0).abs() < 1e-15 && (e[1] - 3.0).abs() < 1e-15);
    }
}
