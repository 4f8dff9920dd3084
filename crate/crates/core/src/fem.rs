//! Q1 Galerkin plumbing shared by the homogenized and resolved solvers:
//! quadrature loops over a Dirichlet mesh, two-field interleaving and the
//! time-stepping loop with its per-step residual check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandedLu, CsrMatrix};
use crate::mesh::{MacroMesh, QuadRule};

/// Uniform time grid `t_n = n T / m`, `n = 0..=m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config("time grid needs T > 0 and at least one step".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    /// Grid with step closest to `dt` that divides `T` evenly.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config("time step must be positive".into()));
        }
        Self::new(horizon, ((horizon / dt).round() as usize).max(1))
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / self.steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Scheme {
    #[default]
    ImplicitEuler,
    CrankNicolson,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ie" | "implicit-euler" => Ok(Scheme::ImplicitEuler),
            "cn" | "crank-nicolson" => Ok(Scheme::CrankNicolson),
            other => Err(Error::Config(format!("unknown scheme {other:?} (expected ie or cn)"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::ImplicitEuler => "ie",
            Scheme::CrankNicolson => "cn",
        })
    }
}

/// One quadrature point of one element, as seen by an assembly callback.
pub struct QuadContext<'a> {
    pub element: usize,
    /// Interior dof of each local node, `None` on the boundary.
    pub dofs: &'a [Option<usize>],
    pub x: [f64; 2],
    pub weight: f64,
    pub values: &'a [f64],
    pub grads: &'a [[f64; 2]],
}

/// Visits every quadrature point of the mesh in element order.
pub fn for_each_quad(
    mesh: &MacroMesh,
    rule: QuadRule,
    mut visit: impl FnMut(&QuadContext) -> Result<()>,
) -> Result<()> {
    let grid = mesh.grid();
    let tables = grid.tables(rule);
    let nl = tables.n_local();
    let mut dofs = vec![None; nl];
    for e in 0..grid.n_elements() {
        let nodes = grid.element_nodes(e);
        for l in 0..nl {
            dofs[l] = mesh.dof(nodes[l]);
        }
        for q in 0..tables.n_quad() {
            visit(&QuadContext {
                element: e,
                dofs: &dofs,
                x: grid.quad_point(&tables, e, q),
                weight: tables.weights[q],
                values: &tables.values[q],
                grads: &tables.grads[q],
            })?;
        }
    }
    Ok(())
}

/// Load vector `int f phi_i` over interior dofs, with `f` sampled at the
/// quadrature points.
pub fn load_vector(mesh: &MacroMesh, rule: QuadRule, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mesh.n_dofs()];
    let dim = mesh.dim();
    for_each_quad(mesh, rule, |c| {
        let v = f(&c.x[..dim])? * c.weight;
        if v != 0.0 {
            for (l, d) in c.dofs.iter().enumerate() {
                if let Some(i) = d {
                    out[*i] += v * c.values[l];
                }
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Cached quadrature points for repeated load assembly.
pub struct LoadPlan {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
    entries: Vec<Vec<(usize, f64)>>,
    n_dofs: usize,
    dim: usize,
}

impl LoadPlan {
    pub fn new(mesh: &MacroMesh, rule: QuadRule) -> Self {
        let mut plan = LoadPlan {
            points: vec![],
            weights: vec![],
            entries: vec![],
            n_dofs: mesh.n_dofs(),
            dim: mesh.dim(),
        };
        for_each_quad(mesh, rule, |c| {
            plan.points.push(c.x);
            plan.weights.push(c.weight);
            plan.entries.push(
                c.dofs
                    .iter()
                    .enumerate()
                    .filter_map(|(l, d)| d.map(|i| (i, c.values[l])))
                    .collect(),
            );
            Ok(())
        })
        .expect("infallible visitor");
        plan
    }

    /// Interleaved two-field load `(int f_1 phi_i, int f_2 phi_i)`.
    pub fn assemble_pair(&self, mut f: impl FnMut(&[f64]) -> Result<[f64; 2]>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 2 * self.n_dofs];
        for (q, x) in self.points.iter().enumerate() {
            let v = f(&x[..self.dim])?;
            if v == [0.0, 0.0] {
                continue;
            }
            let w = self.weights[q];
            for &(i, phi) in &self.entries[q] {
                out[2 * i] += w * v[0] * phi;
                out[2 * i + 1] += w * v[1] * phi;
            }
        }
        Ok(out)
    }

    pub fn assemble(&self, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_dofs];
        for (q, x) in self.points.iter().enumerate() {
            let v = f(&x[..self.dim])?;
            if v == 0.0 {
                continue;
            }
            let w = self.weights[q];
            for &(i, phi) in &self.entries[q] {
                out[i] += w * v * phi;
            }
        }
        Ok(out)
    }
}

/// Nodal interpolation of a two-field initial state on interior dofs,
/// interleaved.
pub fn interpolate_pair(mesh: &MacroMesh, mut g: impl FnMut(&[f64]) -> Result<[f64; 2]>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; 2 * mesh.n_dofs()];
    let dim = mesh.dim();
    for (i, &node) in mesh.interior_nodes().iter().enumerate() {
        let x = mesh.grid().node_coords(node);
        let v = g(&x[..dim])?;
        out[2 * i] = v[0];
        out[2 * i + 1] = v[1];
    }
    Ok(out)
}

/// Relative residual `|A u - b|_inf / max(|b|_inf, |A|_max |u|_inf)`.
pub fn relative_residual(a: &CsrMatrix, u: &[f64], b: &[f64]) -> f64 {
    let au = a.mul_vec(u);
    let r = au.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(b).max(a.max_abs() * inf(u));
    if scale == 0.0 {
        0.0
    } else {
        r / scale
    }
}

/// Result of [`march`]: the state after every step and its residual.
pub struct MarchOutcome {
    pub states: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

/// Steps `lhs u^{n+1} = rhs_matrix u^n + load(n)` for `n = 0..steps`,
/// factoring `lhs` once. Each step's residual must stay below `tol_lin`.
pub fn march(
    lhs: &CsrMatrix,
    rhs_matrix: &CsrMatrix,
    initial: Vec<f64>,
    steps: usize,
    tol_lin: f64,
    mut load: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<MarchOutcome> {
    let lu = BandedLu::factor(lhs)?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut residuals = Vec::with_capacity(steps);
    states.push(initial);
    for n in 0..steps {
        let mut b = rhs_matrix.mul_vec(&states[n]);
        for (bi, li) in b.iter_mut().zip(load(n)?) {
            *bi += li;
        }
        let u = lu.solve(&b);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NoConvergence {
                iterations: n + 1,
                residual: f64::INFINITY,
                history: residuals,
            });
        }
        let res = relative_residual(lhs, &u, &b);
        residuals.push(res);
        if res > tol_lin {
            return Err(Error::NoConvergence {
                iterations: n + 1,
                residual: res,
                history: residuals,
            });
        }
        states.push(u);
    }
    Ok(MarchOutcome { states, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_grid() {
        let t = TimeGrid::with_step(0.1, 1e-3).unwrap();
        assert_eq!(t.steps, 100);
        assert_eq!(t.time(100), 0.1);
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn load_of_one_sums_to_volume() {
        let mesh = MacroMesh::uniform(2, &[0.0, 0.0], &[2.0, 1.0], 8).unwrap();
        let plan = LoadPlan::new(&mesh, QuadRule::Gauss2);
        let v = plan.assemble(|_| Ok(1.0)).unwrap();
        let direct = load_vector(&mesh, QuadRule::Gauss2, |_| Ok(1.0)).unwrap();
        assert_eq!(v, direct);
        // interior hat functions of a 8x8 grid: each integrates to h1*h2
        let h = 2.0 / 8.0 * (1.0 / 8.0);
        assert!(v.iter().all(|x| (x - h).abs() < 1e-15));
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("cn".parse::<Scheme>().unwrap(), Scheme::CrankNicolson);
        assert!("rk4".parse::<Scheme>().is_err());
        assert_eq!(Scheme::ImplicitEuler.to_string(), "ie");
    }
}
