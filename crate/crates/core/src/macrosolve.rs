//! Homogenized dual-continuum solver.
//!
//! For continuum `k` with partner `j`, the Galerkin rows tested with `phi` read
//!
//! ```text
//! <C_kk> du_k/dt phi + kappa*_k grad u_k . grad phi + (b_k . grad phi)(u_j - u_k)
//!     + (a_k . grad u_k - a_j . grad u_j) phi - beta (u_k - u_j) phi = f_k phi
//! ```
//!
//! with zero Dirichlet data. Both fields are solved monolithically with
//! unknowns interleaved per interior node, `2 * dof + k`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coeffs::ProblemData;
use crate::effective::{sym_eigenvalues, EffectiveCoefficients};
use crate::error::{Error, Result};
use crate::fem::{for_each_quad, interpolate_pair, march, LoadPlan, Scheme, TimeGrid};
use crate::linalg::CsrMatrix;
use crate::mesh::{MacroMesh, QuadRule, StructuredGrid};

/// Right-hand side and initial data of a two-field parabolic problem.
pub trait MacroData: Sync {
    fn forcing(&self, t: f64, x: &[f64]) -> Result<[f64; 2]>;
    fn initial(&self, x: &[f64]) -> Result<[f64; 2]>;
}

impl MacroData for ProblemData {
    fn forcing(&self, t: f64, x: &[f64]) -> Result<[f64; 2]> {
        let q = self.source.evaluate(x, &[0.0; 2][..self.dim], t)?;
        Ok([q, q])
    }

    fn initial(&self, x: &[f64]) -> Result<[f64; 2]> {
        let y = &[0.0; 2][..self.dim];
        Ok([self.initial[0].evaluate(x, y, 0.0)?, self.initial[1].evaluate(x, y, 0.0)?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroOptions {
    pub scheme: Scheme,
    /// Bound on the relative residual of every step solve.
    pub tol_lin: f64,
    /// Runs whose element Peclet number exceeds this are refused.
    pub peclet_limit: f64,
}

impl Default for MacroOptions {
    fn default() -> Self {
        MacroOptions {
            scheme: Scheme::ImplicitEuler,
            tol_lin: 1e-10,
            peclet_limit: 2.0,
        }
    }
}

/// Interleaved mass and stiffness matrices of the homogenized system.
#[derive(Debug, Clone)]
pub struct HomogenizedOperators {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    /// Largest element Peclet number seen during assembly.
    pub peclet: f64,
}

pub fn assemble_homogenized(
    coeffs: &dyn EffectiveCoefficients,
    mesh: &MacroMesh,
) -> Result<HomogenizedOperators> {
    let dim = mesh.dim();
    if coeffs.dim() != dim {
        return Err(Error::Incompatible("effective field and mesh dimensions differ".into()));
    }
    let h = mesh.max_h();
    let n = 2 * mesh.n_dofs();
    let mut mass = Vec::new();
    let mut stiff = Vec::new();
    let mut peclet = 0.0f64;
    let dotv = |u: &[f64; 2], v: &[f64; 2]| (0..dim).map(|a| u[a] * v[a]).sum::<f64>();
    for_each_quad(mesh, QuadRule::Gauss2, |c| {
        let p = coeffs.at(&c.x[..dim])?;
        for k in 0..2 {
            let lam = sym_eigenvalues(&p.kappa_star[k], dim)[0];
            if !(lam > 0.0) || !(p.capacity_bar[k] > 0.0) {
                return Err(Error::NotSpd(format!(
                    "continuum {} at x = {:?}: min eig(kappa*) = {lam:e}, <C> = {:e}",
                    k + 1,
                    &c.x[..dim],
                    p.capacity_bar[k]
                )));
            }
            let speed = dotv(&p.convection[k], &p.convection[k])
                .sqrt()
                .max(dotv(&p.drift[k], &p.drift[k]).sqrt());
            peclet = peclet.max(speed * h / (2.0 * lam));
        }
        let w = c.weight;
        for (l, dl) in c.dofs.iter().enumerate() {
            let Some(dl) = *dl else { continue };
            let (phi, gphi) = (c.values[l], c.grads[l]);
            for (m, dm) in c.dofs.iter().enumerate() {
                let Some(dm) = *dm else { continue };
                let (psi, gpsi) = (c.values[m], c.grads[m]);
                let pp = psi * phi;
                for k in 0..2 {
                    let j = 1 - k;
                    let (row, col_k, col_j) = (2 * dl + k, 2 * dm + k, 2 * dm + j);
                    mass.push((row, col_k, w * p.capacity_bar[k] * pp));
                    let kap = &p.kappa_star[k];
                    let mut diff = 0.0;
                    for a in 0..dim {
                        for b in 0..dim {
                            diff += gphi[a] * kap[a][b] * gpsi[b];
                        }
                    }
                    let conv = dotv(&p.convection[k], &gphi) * psi;
                    let drift_k = dotv(&p.drift[k], &gpsi) * phi;
                    let drift_j = dotv(&p.drift[j], &gpsi) * phi;
                    stiff.push((row, col_k, w * (diff - conv + drift_k - p.beta * pp)));
                    stiff.push((row, col_j, w * (conv - drift_j + p.beta * pp)));
                }
            }
        }
        Ok(())
    })?;
    Ok(HomogenizedOperators {
        mass: CsrMatrix::from_triplets(n, n, &mass),
        stiffness: CsrMatrix::from_triplets(n, n, &stiff),
        peclet,
    })
}

/// Step matrices `(lhs, rhs)` of the chosen scheme.
pub fn step_matrices(mass: &CsrMatrix, stiffness: &CsrMatrix, dt: f64, scheme: Scheme) -> (CsrMatrix, CsrMatrix) {
    match scheme {
        Scheme::ImplicitEuler => (mass.add(1.0, stiffness, dt), mass.clone()),
        Scheme::CrankNicolson => (
            mass.add(1.0, stiffness, 0.5 * dt),
            mass.add(1.0, stiffness, -0.5 * dt),
        ),
    }
}

/// Runs the two-field time loop given assembled operators. Forcing enters
/// at `t_{n+1}` (implicit Euler) or as the average of both ends
/// (Crank-Nicolson).
pub fn integrate(
    mesh: &MacroMesh,
    mass: &CsrMatrix,
    stiffness: &CsrMatrix,
    data: &dyn MacroData,
    time: TimeGrid,
    scheme: Scheme,
    tol_lin: f64,
) -> Result<TransientField> {
    let dt = time.dt();
    let (lhs, rhs) = step_matrices(mass, stiffness, dt, scheme);
    let plan = LoadPlan::new(mesh, QuadRule::Gauss2);
    let initial = interpolate_pair(mesh, |x| data.initial(x))?;
    let load_at = |n: usize| plan.assemble_pair(|x| data.forcing(time.time(n), x));
    let mut previous = match scheme {
        Scheme::CrankNicolson => Some(load_at(0)?),
        Scheme::ImplicitEuler => None,
    };
    let out = march(&lhs, &rhs, initial, time.steps, tol_lin, |n| {
        let next = load_at(n + 1)?;
        Ok(match scheme {
            Scheme::ImplicitEuler => next.iter().map(|v| dt * v).collect(),
            Scheme::CrankNicolson => {
                let prev = previous.replace(next.clone()).expect("previous load");
                prev.iter().zip(&next).map(|(a, b)| 0.5 * dt * (a + b)).collect()
            }
        })
    })?;
    Ok(TransientField::from_interleaved(
        mesh.clone(),
        time,
        scheme,
        &out.states,
        out.residuals,
    ))
}

/// Solves the homogenized system on `mesh` over `time`.
pub fn solve_homogenized(
    coeffs: &dyn EffectiveCoefficients,
    data: &dyn MacroData,
    mesh: &MacroMesh,
    time: TimeGrid,
    opts: &MacroOptions,
) -> Result<TransientField> {
    let ops = assemble_homogenized(coeffs, mesh)?;
    if ops.peclet > opts.peclet_limit {
        return Err(Error::Resolution(format!(
            "element Peclet number {:.3} exceeds {}; refine the macro mesh",
            ops.peclet, opts.peclet_limit
        )));
    }
    integrate(mesh, &ops.mass, &ops.stiffness, data, time, opts.scheme, opts.tol_lin)
}

/// Nodal values of `(u_1, u_2)` at every time level, boundary included.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientField {
    pub mesh: MacroMesh,
    pub time: TimeGrid,
    pub scheme: Scheme,
    /// Set for resolved two-scale runs.
    pub epsilon: Option<f64>,
    /// `u[k][n]` is the full nodal vector of continuum `k` at step `n`.
    pub u: [Vec<Vec<f64>>; 2],
    /// Relative residual of every step solve.
    pub residuals: Vec<f64>,
}

const SERIES_MAGIC: &[u8; 8] = b"DHSERIES";

impl TransientField {
    pub fn from_interleaved(
        mesh: MacroMesh,
        time: TimeGrid,
        scheme: Scheme,
        states: &[Vec<f64>],
        residuals: Vec<f64>,
    ) -> Self {
        let split = |k: usize| -> Vec<Vec<f64>> {
            states
                .iter()
                .map(|s| mesh.expand(&s.iter().skip(k).step_by(2).copied().collect::<Vec<_>>()))
                .collect()
        };
        let u = [split(0), split(1)];
        TransientField {
            mesh,
            time,
            scheme,
            epsilon: None,
            u,
            residuals,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.u[0].len()
    }

    pub fn grid(&self) -> &StructuredGrid {
        self.mesh.grid()
    }

    pub fn value(&self, k: usize, n: usize, x: &[f64]) -> f64 {
        self.grid().interpolate(&self.u[k][n], x)
    }

    pub fn gradient(&self, k: usize, n: usize, x: &[f64]) -> [f64; 2] {
        self.grid().element_gradient(&self.u[k][n], x)
    }

    pub fn max_abs(&self) -> f64 {
        self.u.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `max |u_1 - u_2|` over all nodes and time levels.
    pub fn max_difference(&self) -> f64 {
        self.u[0]
            .iter()
            .zip(&self.u[1])
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// `(int v^2, int |grad v|^2)` of a nodal field on this mesh, by 2-point
    /// Gauss quadrature.
    pub fn norms_sq(&self, values: &[f64]) -> (f64, f64) {
        let grid = self.grid();
        let tables = grid.tables(QuadRule::Gauss2);
        let (mut l2, mut h1) = (0.0, 0.0);
        for e in 0..grid.n_elements() {
            let nodes = grid.element_nodes(e);
            for q in 0..tables.n_quad() {
                let mut v = 0.0;
                let mut g = [0.0; 2];
                for l in 0..tables.n_local() {
                    let u = values[nodes[l]];
                    v += u * tables.values[q][l];
                    for a in 0..grid.dim {
                        g[a] += u * tables.grads[q][l][a];
                    }
                }
                l2 += tables.weights[q] * v * v;
                h1 += tables.weights[q] * (g[0] * g[0] + g[1] * g[1]);
            }
        }
        (l2, h1)
    }

    /// `||u_k||_{L^2(0,T;H^1_0)}` with the rectangle rule over steps `1..=m`.
    pub fn energy_norm(&self, k: usize) -> f64 {
        let dt = self.time.dt();
        (1..self.n_levels())
            .map(|n| dt * self.norms_sq(&self.u[k][n]).1)
            .sum::<f64>()
            .sqrt()
    }

    /// CSV rows `step,t,x1[,x2],u1,u2` for the selected time levels.
    pub fn write_csv(&self, w: &mut impl Write, levels: &[usize]) -> std::io::Result<()> {
        let grid = self.grid();
        let dim = grid.dim;
        let coords = if dim == 1 { "x1" } else { "x1,x2" };
        writeln!(w, "step,t,{coords},u1,u2")?;
        for &n in levels {
            let t = self.time.time(n);
            for node in 0..grid.n_nodes() {
                let x = grid.node_coords(node);
                write!(w, "{n},{t:?}")?;
                for v in &x[..dim] {
                    write!(w, ",{v:?}")?;
                }
                writeln!(w, ",{:?},{:?}", self.u[0][n][node], self.u[1][n][node])?;
            }
        }
        Ok(())
    }

    /// Binary time series: magic, `u64` dim, `u64` cells per axis, `f64`
    /// lower and upper corners, `f64` T, `u64` steps, `f64` eps (NaN when
    /// absent), `u8` scheme, then `u_1, u_2` for every level, little endian.
    pub fn encode_binary(&self) -> Vec<u8> {
        let g = self.grid();
        let mut out = SERIES_MAGIC.to_vec();
        out.extend((g.dim as u64).to_le_bytes());
        for a in 0..g.dim {
            out.extend((g.cells[a] as u64).to_le_bytes());
        }
        for a in 0..g.dim {
            out.extend(g.lower[a].to_le_bytes());
        }
        for a in 0..g.dim {
            out.extend(g.upper[a].to_le_bytes());
        }
        out.extend(self.time.horizon.to_le_bytes());
        out.extend((self.time.steps as u64).to_le_bytes());
        out.extend(self.epsilon.unwrap_or(f64::NAN).to_le_bytes());
        out.push(match self.scheme {
            Scheme::ImplicitEuler => 0,
            Scheme::CrankNicolson => 1,
        });
        for n in 0..self.n_levels() {
            for k in 0..2 {
                for v in &self.u[k][n] {
                    out.extend(v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode_binary(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Format("truncated or malformed time-series dump".into());
        if bytes.len() < 8 || &bytes[..8] != SERIES_MAGIC {
            return Err(Error::Format("not a time-series dump".into()));
        }
        let mut pos = 8;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
            pos += n;
            Ok(s)
        };
        let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
        let dim = u64_at(take(8)?) as usize;
        if !(1..=2).contains(&dim) {
            return Err(bad());
        }
        let mut cells = vec![0; dim];
        let mut lower = vec![0.0; dim];
        let mut upper = vec![0.0; dim];
        for c in cells.iter_mut() {
            *c = u64_at(take(8)?) as usize;
        }
        for v in lower.iter_mut() {
            *v = f64_at(take(8)?);
        }
        for v in upper.iter_mut() {
            *v = f64_at(take(8)?);
        }
        let horizon = f64_at(take(8)?);
        let steps = u64_at(take(8)?) as usize;
        let eps = f64_at(take(8)?);
        let scheme = match take(1)?[0] {
            0 => Scheme::ImplicitEuler,
            1 => Scheme::CrankNicolson,
            _ => return Err(bad()),
        };
        let mesh = MacroMesh::new(dim, &lower, &upper, &cells)?;
        let time = TimeGrid::new(horizon, steps)?;
        let nn = mesh.n_nodes();
        let mut u = [Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1)];
        for _ in 0..=steps {
            for field in u.iter_mut() {
                let raw = take(8 * nn)?;
                field.push(raw.chunks_exact(8).map(f64_at).collect());
            }
        }
        if pos != bytes.len() {
            return Err(bad());
        }
        Ok(TransientField {
            mesh,
            time,
            scheme,
            epsilon: (!eps.is_nan()).then_some(eps),
            u,
            residuals: vec![],
        })
    }
}

/// Manufactured solutions for the homogenized system with constant
/// effective coefficients:
/// `u_1 = e^{-t} prod sin(pi x_a)`, `u_2 = e^{-t} prod x_a (1 - x_a)`
/// on the unit box.
pub mod manufactured {
    use std::f64::consts::PI;

    use super::*;
    use crate::effective::EffectivePointData;

    #[derive(Debug, Clone, PartialEq)]
    pub struct Manufactured {
        pub coeffs: EffectivePointData,
    }

    /// Value, gradient and Hessian of a spatial factor.
    type Jet = (f64, [f64; 2], [[f64; 2]; 2]);

    impl Manufactured {
        /// `kappa* = I`, `beta = 1`, `b = (0.1, 0)`, `a = (0.05, 0)`, unit
        /// capacities, for both continua.
        pub fn standard(dim: usize) -> Self {
            let mut eye = [[0.0; 2]; 2];
            for (a, row) in eye.iter_mut().enumerate().take(dim) {
                row[a] = 1.0;
            }
            Manufactured {
                coeffs: EffectivePointData::uniform(
                    dim,
                    [eye; 2],
                    [[0.1, 0.0]; 2],
                    [[0.05, 0.0]; 2],
                    1.0,
                    [1.0; 2],
                ),
            }
        }

        pub fn dim(&self) -> usize {
            self.coeffs.dim
        }

        fn jet(&self, k: usize, x: &[f64]) -> Jet {
            let dim = self.dim();
            // per-axis factor value, first and second derivative
            let f: Vec<[f64; 3]> = (0..dim)
                .map(|a| {
                    let s = x[a];
                    if k == 0 {
                        let (sn, cs) = (PI * s).sin_cos();
                        [sn, PI * cs, -PI * PI * sn]
                    } else {
                        [s * (1.0 - s), 1.0 - 2.0 * s, -2.0]
                    }
                })
                .collect();
            let prod_except = |skip: &[usize]| -> f64 {
                (0..dim).filter(|a| !skip.contains(a)).map(|a| f[a][0]).product()
            };
            let value = prod_except(&[]);
            let mut grad = [0.0; 2];
            let mut hess = [[0.0; 2]; 2];
            for a in 0..dim {
                grad[a] = f[a][1] * prod_except(&[a]);
                for b in 0..dim {
                    hess[a][b] = if a == b {
                        f[a][2] * prod_except(&[a])
                    } else {
                        f[a][1] * f[b][1] * prod_except(&[a, b])
                    };
                }
            }
            (value, grad, hess)
        }

        pub fn exact(&self, t: f64, x: &[f64]) -> [f64; 2] {
            let e = (-t).exp();
            [e * self.jet(0, x).0, e * self.jet(1, x).0]
        }

        pub fn exact_gradient(&self, k: usize, t: f64, x: &[f64]) -> [f64; 2] {
            let g = self.jet(k, x).1;
            let e = (-t).exp();
            [e * g[0], e * g[1]]
        }
    }

    impl MacroData for Manufactured {
        fn forcing(&self, t: f64, x: &[f64]) -> Result<[f64; 2]> {
            let p = &self.coeffs;
            let dim = self.dim();
            let e = (-t).exp();
            let jets = [self.jet(0, x), self.jet(1, x)];
            let mut out = [0.0; 2];
            for k in 0..2 {
                let j = 1 - k;
                let (uk, gk, hk) = jets[k];
                let (uj, gj, _) = jets[j];
                let mut div = 0.0;
                for a in 0..dim {
                    for b in 0..dim {
                        div += p.kappa_star[k][a][b] * hk[a][b];
                    }
                }
                let mut conv = 0.0;
                let mut drift = 0.0;
                for a in 0..dim {
                    conv += p.convection[k][a] * (gj[a] - gk[a]);
                    drift += p.drift[j][a] * gj[a] - p.drift[k][a] * gk[a];
                }
                out[k] = e
                    * (-p.capacity_bar[k] * uk - div - conv - drift + p.beta * (uj - uk));
            }
            Ok(out)
        }

        fn initial(&self, x: &[f64]) -> Result<[f64; 2]> {
            Ok(self.exact(0.0, x))
        }
    }

    /// L2 error of both fields at level `n`, by 2-point Gauss quadrature.
    pub fn l2_error(field: &TransientField, man: &Manufactured, n: usize) -> [f64; 2] {
        let grid = field.grid();
        let tables = grid.tables(QuadRule::Gauss2);
        let t = field.time.time(n);
        let mut err = [0.0; 2];
        for e in 0..grid.n_elements() {
            let nodes = grid.element_nodes(e);
            for q in 0..tables.n_quad() {
                let x = grid.quad_point(&tables, e, q);
                let exact = man.exact(t, &x[..grid.dim]);
                for k in 0..2 {
                    let uh: f64 = (0..tables.n_local())
                        .map(|l| field.u[k][n][nodes[l]] * tables.values[q][l])
                        .sum();
                    err[k] += tables.weights[q] * (uh - exact[k]).powi(2);
                }
            }
        }
        [err[0].sqrt(), err[1].sqrt()]
    }

    /// `L2` distance between two runs on the same mesh at their final levels.
    pub fn final_distance(a: &TransientField, b: &TransientField) -> [f64; 2] {
        let na = a.n_levels() - 1;
        let nb = b.n_levels() - 1;
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let d: Vec<f64> = a.u[k][na].iter().zip(&b.u[k][nb]).map(|(x, y)| x - y).collect();
            *o = a.norms_sq(&d).0.sqrt();
        }
        out
    }

    /// Runs the manufactured problem on an `n`-cell mesh.
    pub fn run(man: &Manufactured, n: usize, time: TimeGrid, scheme: Scheme) -> Result<TransientField> {
        let dim = man.dim();
        let mesh = MacroMesh::uniform(dim, &vec![0.0; dim], &vec![1.0; dim], n)?;
        solve_homogenized(
            &man.coeffs,
            man,
            &mesh,
            time,
            &MacroOptions {
                scheme,
                ..Default::default()
            },
        )
    }

    /// `(h, error)` pairs over mesh refinements at a fixed time grid; the
    /// error is the larger of the two fields' final-time L2 errors.
    pub fn spatial_errors(man: &Manufactured, ns: &[usize], time: TimeGrid, scheme: Scheme) -> Result<Vec<(f64, f64)>> {
        ns.iter()
            .map(|&n| {
                let f = run(man, n, time, scheme)?;
                let e = l2_error(&f, man, time.steps);
                Ok((1.0 / n as f64, e[0].max(e[1])))
            })
            .collect()
    }

    /// `(dt, error)` pairs over time refinements on one mesh, measured
    /// against a run of the same scheme with `reference_steps` steps.
    pub fn temporal_errors(
        man: &Manufactured,
        n: usize,
        horizon: f64,
        steps: &[usize],
        reference_steps: usize,
        scheme: Scheme,
    ) -> Result<Vec<(f64, f64)>> {
        let reference = run(man, n, TimeGrid::new(horizon, reference_steps)?, scheme)?;
        steps
            .iter()
            .map(|&m| {
                let time = TimeGrid::new(horizon, m)?;
                let f = run(man, n, time, scheme)?;
                let d = final_distance(&f, &reference);
                Ok((time.dt(), d[0].max(d[1])))
            })
            .collect()
    }
}
