//! Resolved two-scale solver: coefficients are evaluated at `(x, frac(x/eps))`
//! on a mesh fine enough to resolve the oscillation, and the exchange
//! `Q(x, x/eps) (u_j - u_k) / eps` is treated implicitly.
//!
//! With `E = (1/eps) int Q phi_i phi_j` the coupling blocks are
//! `[[E, -E], [-E, E]]`, so the exchange vanishes when tested with equal
//! functions in both continua.

use serde::{Deserialize, Serialize};

use crate::coeffs::ProblemData;
use crate::error::{Error, Result};
use crate::fem::{for_each_quad, interpolate_pair, march, LoadPlan, Scheme, TimeGrid};
use crate::linalg::CsrMatrix;
use crate::macrosolve::{MacroData, TransientField};
use crate::mesh::{MacroMesh, QuadRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineRunSpec {
    pub epsilon: f64,
    /// Required resolution: `h <= eps / rho`.
    pub rho: f64,
    pub time: TimeGrid,
    pub scheme: Scheme,
    pub tol_lin: f64,
    /// Refuse runs whose banded factor would exceed this many entries.
    pub max_band_entries: usize,
}

impl FineRunSpec {
    pub fn new(epsilon: f64, time: TimeGrid) -> Self {
        FineRunSpec {
            epsilon,
            rho: 16.0,
            time,
            scheme: Scheme::ImplicitEuler,
            tol_lin: 1e-10,
            max_band_entries: 400_000_000,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("eps = {} must lie in (0, 1)", self.epsilon)));
        }
        if !(self.rho >= 1.0) {
            return Err(Error::Config(format!("rho = {} must be at least 1", self.rho)));
        }
        Ok(())
    }

    /// Coarsest uniform mesh of the domain meeting the resolution rule.
    pub fn mesh(&self, data: &ProblemData) -> Result<MacroMesh> {
        self.check()?;
        let h = self.epsilon / self.rho;
        let cells: Vec<f64> = (0..data.dim)
            .map(|a| {
                let len = data.domain.upper[a] - data.domain.lower[a];
                ((len / h) * (1.0 - 1e-12)).ceil().max(2.0)
            })
            .collect();
        self.check_budget(&cells)?;
        let cells: Vec<usize> = cells.iter().map(|&c| c as usize).collect();
        MacroMesh::new(data.dim, &data.domain.lower, &data.domain.upper, &cells)
    }

    /// Banded factor size for a mesh with `cells` per axis, checked before
    /// anything is allocated.
    fn check_budget(&self, cells: &[f64]) -> Result<()> {
        let nodes: f64 = cells.iter().map(|c| c + 1.0).product();
        let half_band = if cells.len() == 1 { 3.0 } else { 2.0 * (cells[1] + 2.0) };
        let entries = 2.0 * nodes * (3.0 * half_band + 1.0);
        if entries > self.max_band_entries as f64 {
            return Err(Error::Resolution(format!(
                "eps = {} needs a factor with {entries:e} entries, above the budget of {}",
                self.epsilon, self.max_band_entries
            )));
        }
        Ok(())
    }

    /// Refuses meshes coarser than `eps / rho`.
    pub fn check_mesh(&self, mesh: &MacroMesh) -> Result<()> {
        self.check()?;
        let limit = self.epsilon / self.rho;
        if mesh.max_h() > limit * (1.0 + 1e-12) {
            return Err(Error::Resolution(format!(
                "mesh width {:e} exceeds eps/rho = {:e}",
                mesh.max_h(),
                limit
            )));
        }
        let cells: Vec<f64> = mesh.grid().cells.iter().map(|&c| c as f64).collect();
        self.check_budget(&cells)
    }
}

/// `frac(x / eps)` per axis.
pub fn fast_variable(x: &[f64], eps: f64) -> [f64; 2] {
    let mut y = [0.0; 2];
    for (a, v) in x.iter().enumerate() {
        let s = v / eps;
        y[a] = s - s.floor();
    }
    y
}

/// Scalar matrices of the resolved problem on interior dofs.
#[derive(Debug, Clone)]
pub struct FineOperators {
    /// `int C_kk^eps phi_i phi_j`
    pub mass: [CsrMatrix; 2],
    /// `int kappa_k^eps grad phi_i . grad phi_j`
    pub stiffness: [CsrMatrix; 2],
    /// `(1/eps) int Q^eps phi_i phi_j`
    pub exchange: CsrMatrix,
}

impl FineOperators {
    /// Exchange blocks `(B11, B12, B21, B22)` of the two-field operator.
    pub fn coupling_blocks(&self) -> [CsrMatrix; 4] {
        let e = &self.exchange;
        let neg = e.add(-1.0, e, 0.0);
        [e.clone(), neg.clone(), neg.transpose(), e.clone()]
    }

    pub fn is_decoupled(&self) -> bool {
        self.exchange.max_abs() == 0.0
    }

    /// Interleaved two-field `(mass, stiffness + exchange)`.
    pub fn interleaved(&self) -> (CsrMatrix, CsrMatrix) {
        let n = self.exchange.nrows();
        let mut mass = Vec::new();
        let mut stiff = Vec::new();
        for k in 0..2 {
            for (i, j, v) in self.mass[k].triplets() {
                mass.push((2 * i + k, 2 * j + k, v));
            }
            for (i, j, v) in self.stiffness[k].triplets() {
                stiff.push((2 * i + k, 2 * j + k, v));
            }
        }
        for (bi, block) in self.coupling_blocks().iter().enumerate() {
            let (k, l) = (bi / 2, bi % 2);
            for (i, j, v) in block.triplets() {
                stiff.push((2 * i + k, 2 * j + l, v));
            }
        }
        (
            CsrMatrix::from_triplets(2 * n, 2 * n, &mass),
            CsrMatrix::from_triplets(2 * n, 2 * n, &stiff),
        )
    }
}

pub fn assemble_fine_operators(data: &ProblemData, eps: f64, mesh: &MacroMesh) -> Result<FineOperators> {
    let dim = mesh.dim();
    let n = mesh.n_dofs();
    let mut mass = [Vec::new(), Vec::new()];
    let mut stiff = [Vec::new(), Vec::new()];
    let mut exch = Vec::new();
    for_each_quad(mesh, QuadRule::Gauss2, |c| {
        let x = &c.x[..dim];
        let y = fast_variable(x, eps);
        let y = &y[..dim];
        let kappa = [data.kappa[0].evaluate(x, y, 0.0)?, data.kappa[1].evaluate(x, y, 0.0)?];
        let cap = [data.capacity[0].evaluate(x, y, 0.0)?, data.capacity[1].evaluate(x, y, 0.0)?];
        let q = data.exchange.evaluate(x, y, 0.0)? / eps;
        for k in 0..2 {
            if !(kappa[k] > 0.0 && cap[k] > 0.0) {
                return Err(Error::Coercivity(format!(
                    "continuum {} at x = {x:?}: kappa = {}, C = {}",
                    k + 1,
                    kappa[k],
                    cap[k]
                )));
            }
        }
        let w = c.weight;
        for (l, dl) in c.dofs.iter().enumerate() {
            let Some(i) = *dl else { continue };
            for (m, dm) in c.dofs.iter().enumerate() {
                let Some(j) = *dm else { continue };
                let pp = w * c.values[l] * c.values[m];
                let gg: f64 = w * (0..dim).map(|a| c.grads[l][a] * c.grads[m][a]).sum::<f64>();
                for k in 0..2 {
                    mass[k].push((i, j, cap[k] * pp));
                    stiff[k].push((i, j, kappa[k] * gg));
                }
                exch.push((i, j, q * pp));
            }
        }
        Ok(())
    })?;
    Ok(FineOperators {
        mass: [
            CsrMatrix::from_triplets(n, n, &mass[0]),
            CsrMatrix::from_triplets(n, n, &mass[1]),
        ],
        stiffness: [
            CsrMatrix::from_triplets(n, n, &stiff[0]),
            CsrMatrix::from_triplets(n, n, &stiff[1]),
        ],
        exchange: CsrMatrix::from_triplets(n, n, &exch),
    })
}

/// Implicit-Euler solve of one parabolic field `M u' + K u = f` with zero
/// Dirichlet data. Returns interior values at every level.
pub fn solve_single_field(
    mesh: &MacroMesh,
    mass: &CsrMatrix,
    stiffness: &CsrMatrix,
    forcing: impl Fn(f64, &[f64]) -> Result<f64>,
    initial: Vec<f64>,
    time: TimeGrid,
    tol_lin: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let dt = time.dt();
    let lhs = mass.add(1.0, stiffness, dt);
    let plan = LoadPlan::new(mesh, QuadRule::Gauss2);
    let out = march(&lhs, mass, initial, time.steps, tol_lin, |n| {
        let t = time.time(n + 1);
        Ok(plan.assemble(|x| forcing(t, x))?.iter().map(|v| dt * v).collect())
    })?;
    Ok((out.states, out.residuals))
}

/// Solves the resolved system on the coarsest admissible mesh.
pub fn solve_fine(data: &ProblemData, spec: &FineRunSpec) -> Result<TransientField> {
    let mesh = spec.mesh(data)?;
    solve_fine_on(data, spec, &mesh)
}

/// Solves the resolved system on a given mesh, which must satisfy the
/// resolution rule. Without exchange the continua are solved separately.
pub fn solve_fine_on(data: &ProblemData, spec: &FineRunSpec, mesh: &MacroMesh) -> Result<TransientField> {
    spec.check_mesh(mesh)?;
    if mesh.dim() != data.dim {
        return Err(Error::Incompatible("mesh and data dimensions differ".into()));
    }
    let ops = assemble_fine_operators(data, spec.epsilon, mesh)?;
    let mut field = if ops.is_decoupled() && spec.scheme == Scheme::ImplicitEuler {
        solve_decoupled(data, spec, mesh, &ops)?
    } else {
        let (mass, stiffness) = ops.interleaved();
        crate::macrosolve::integrate(mesh, &mass, &stiffness, data, spec.time, spec.scheme, spec.tol_lin)?
    };
    field.epsilon = Some(spec.epsilon);
    Ok(field)
}

fn solve_decoupled(
    data: &ProblemData,
    spec: &FineRunSpec,
    mesh: &MacroMesh,
    ops: &FineOperators,
) -> Result<TransientField> {
    let initial = interpolate_pair(mesh, |x| data.initial(x))?;
    let mut u = [Vec::new(), Vec::new()];
    let mut residuals = vec![0.0f64; spec.time.steps];
    for k in 0..2 {
        let init: Vec<f64> = initial.iter().skip(k).step_by(2).copied().collect();
        let (states, res) = solve_single_field(
            mesh,
            &ops.mass[k],
            &ops.stiffness[k],
            |t, x| Ok(data.forcing(t, x)?[k]),
            init,
            spec.time,
            spec.tol_lin,
        )?;
        u[k] = states.iter().map(|s| mesh.expand(s)).collect();
        for (r, v) in residuals.iter_mut().zip(res) {
            *r = r.max(v);
        }
    }
    Ok(TransientField {
        mesh: mesh.clone(),
        time: spec.time,
        scheme: spec.scheme,
        epsilon: Some(spec.epsilon),
        u,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_variable_wraps() {
        let y = fast_variable(&[0.3, 1.0], 0.125);
        assert!((y[0] - 0.4).abs() < 1e-12);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn resolution_rule_is_enforced() {
        let data = ProblemData::from_expressions(1, ["1", "1"], "sin(2*pi*y1)", "1", ["0", "0"], 0.1).unwrap();
        let spec = FineRunSpec::new(0.125, TimeGrid::new(0.1, 2).unwrap());
        assert_eq!(spec.mesh(&data).unwrap().grid().cells[0], 128);
        let coarse = MacroMesh::uniform(1, &[0.0], &[1.0], 64).unwrap();
        assert!(matches!(solve_fine_on(&data, &spec, &coarse), Err(Error::Resolution(_))));
        let bad = FineRunSpec { epsilon: 1.5, ..spec };
        assert!(bad.mesh(&data).is_err());
    }

    #[test]
    fn coupling_blocks_are_antisymmetric() {
        let data = ProblemData::from_expressions(1, ["1", "1"], "sin(2*pi*y1)", "1", ["0", "0"], 0.1).unwrap();
        let mesh = MacroMesh::uniform(1, &[0.0], &[1.0], 64).unwrap();
        let ops = assemble_fine_operators(&data, 0.25, &mesh).unwrap();
        assert_eq!(ops.exchange.asymmetry(), 0.0);
        let [b11, b12, b21, b22] = ops.coupling_blocks();
        assert_eq!(b12.triplets(), b21.transpose().triplets());
        assert_eq!(b11.add(1.0, &b12, 1.0).max_abs(), 0.0);
        assert_eq!(b22.triplets(), b11.triplets());
    }
}
