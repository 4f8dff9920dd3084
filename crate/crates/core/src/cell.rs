//! Periodic unit-cell problems.
//!
//! For a frozen macro point `x` the correctors solve, with periodic boundary
//! conditions on `Y = [0,1)^d`,
//!
//! ```text
//! div_y(kappa_k (e_i + grad_y N^i_k)) = 0
//! div_y(kappa_k grad_y M_k) + Q = 0
//! ```
//!
//! discretized with Q1 elements on a uniform periodic grid and 2-point Gauss
//! quadrature. Solutions are normalized to zero mean, the representative of
//! `H^1_per(Y) / R`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientField, ProblemData, TOL_MEAN_EXPRESSION, TOL_MEAN_SAMPLED};
use crate::error::{Error, Result};
use crate::linalg::{deflated_pcg, CgOptions, CsrMatrix};
use crate::mesh::{ElementTables, QuadRule, UnitCellGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSolverOptions {
    /// Relative residual tolerance of the conjugate-gradient solves.
    pub tol_lin: f64,
    /// Iteration cap is `max_iter_factor * n^d`.
    pub max_iter_factor: usize,
    /// Zero-mean tolerance for the exchange field; `None` picks the default
    /// for the field kind.
    pub tol_mean: Option<f64>,
}

impl Default for CellSolverOptions {
    fn default() -> Self {
        CellSolverOptions {
            tol_lin: 1e-10,
            max_iter_factor: 10,
            tol_mean: None,
        }
    }
}

impl CellSolverOptions {
    fn cg(&self, grid: &UnitCellGrid) -> CgOptions {
        CgOptions {
            rel_tol: self.tol_lin,
            max_iter: self.max_iter_factor * grid.n_nodes(),
        }
    }
}

/// Values of a coefficient at every quadrature point of a cell grid, ordered
/// element-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadSamples {
    pub n_quad: usize,
    pub values: Vec<f64>,
}

impl QuadSamples {
    pub fn at(&self, e: usize, q: usize) -> f64 {
        self.values[e * self.n_quad + q]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, c: f64) -> QuadSamples {
        QuadSamples {
            n_quad: self.n_quad,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Quadrature of the sampled function over the cell.
    pub fn integral(&self, tables: &ElementTables) -> f64 {
        self.values
            .chunks(self.n_quad)
            .map(|c| c.iter().zip(&tables.weights).map(|(v, w)| v * w).sum::<f64>())
            .sum()
    }
}

/// Samples `f(y)` at the Gauss points of every element of `grid`.
pub fn sample_at_quadrature(
    grid: &UnitCellGrid,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<QuadSamples> {
    let g = grid.grid();
    let tables = g.tables(QuadRule::Gauss2);
    let nq = tables.n_quad();
    let mut values = Vec::with_capacity(g.n_elements() * nq);
    for e in 0..g.n_elements() {
        for q in 0..nq {
            let y = g.quad_point(&tables, e, q);
            values.push(f(&y[..grid.dim()])?);
        }
    }
    Ok(QuadSamples { n_quad: nq, values })
}

/// Samples a coefficient field frozen at macro point `x`.
pub fn sample_field(
    field: &CoefficientField,
    x: &[f64],
    grid: &UnitCellGrid,
) -> Result<QuadSamples> {
    sample_at_quadrature(grid, |y| field.evaluate(x, y, 0.0))
}

/// Nodal field on the unit cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellField {
    pub grid: UnitCellGrid,
    pub values: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: &UnitCellGrid) -> Self {
        CellField {
            grid: grid.clone(),
            values: vec![0.0; grid.n_nodes()],
        }
    }

    /// Mean with the nodal quadrature weights (uniform on a uniform grid).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn value_at_quad(&self, tables: &ElementTables, e: usize, q: usize) -> f64 {
        let nodes = self.grid.grid().element_nodes(e);
        (0..tables.n_local())
            .map(|l| self.values[nodes[l]] * tables.values[q][l])
            .sum()
    }

    pub fn gradient_at_quad(&self, tables: &ElementTables, e: usize, q: usize) -> [f64; 2] {
        let nodes = self.grid.grid().element_nodes(e);
        let mut g = [0.0; 2];
        for l in 0..tables.n_local() {
            let v = self.values[nodes[l]];
            for (a, ga) in g.iter_mut().enumerate().take(tables.dim) {
                *ga += v * tables.grads[q][l][a];
            }
        }
        g
    }

    /// Periodic multilinear interpolation at any `y`.
    pub fn interpolate(&self, y: &[f64]) -> f64 {
        self.grid.grid().interpolate(&self.values, y)
    }
}

/// Stiffness matrix of `-div_y(kappa grad_y .)` with periodic identification.
/// Symmetric positive semidefinite with the constants as kernel.
pub fn assemble_periodic_operator(kappa: &QuadSamples, grid: &UnitCellGrid) -> Result<CsrMatrix> {
    let g = grid.grid();
    let tables = g.tables(QuadRule::Gauss2);
    if kappa.values.len() != g.n_elements() * tables.n_quad() {
        return Err(Error::Incompatible("coefficient samples do not match the cell grid".into()));
    }
    let nl = tables.n_local();
    let mut trip = Vec::with_capacity(g.n_elements() * nl * nl);
    for e in 0..g.n_elements() {
        let nodes = g.element_nodes(e);
        let mut local = [[0.0; 4]; 4];
        for q in 0..tables.n_quad() {
            let k = kappa.at(e, q);
            if !(k > 0.0) {
                let y = g.quad_point(&tables, e, q);
                return Err(Error::Coercivity(format!(
                    "kappa = {k:e} at cell point {:?}",
                    &y[..grid.dim()]
                )));
            }
            let w = tables.weights[q] * k;
            let gr = &tables.grads[q];
            for i in 0..nl {
                for j in 0..nl {
                    let mut s = 0.0;
                    for a in 0..grid.dim() {
                        s += gr[i][a] * gr[j][a];
                    }
                    local[i][j] += w * s;
                }
            }
        }
        for i in 0..nl {
            for j in 0..nl {
                trip.push((nodes[i], nodes[j], local[i][j]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(grid.n_nodes(), grid.n_nodes(), &trip))
}

/// Solution of one cell problem together with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSolve {
    pub field: CellField,
    pub iterations: usize,
    pub residual: f64,
}

fn solve_periodic(
    op: &CsrMatrix,
    rhs: &[f64],
    grid: &UnitCellGrid,
    opts: &CellSolverOptions,
) -> Result<CellSolve> {
    let out = deflated_pcg(op, rhs, opts.cg(grid))?;
    let residual = out.final_residual();
    Ok(CellSolve {
        field: CellField {
            grid: grid.clone(),
            values: out.x,
        },
        iterations: out.iterations,
        residual,
    })
}

/// Load vector of `-div_y(kappa e_i)` in weak form: `-int kappa d(phi)/dy_i`.
fn corrector_rhs(kappa: &QuadSamples, direction: usize, grid: &UnitCellGrid) -> Vec<f64> {
    let g = grid.grid();
    let tables = g.tables(QuadRule::Gauss2);
    let mut rhs = vec![0.0; grid.n_nodes()];
    for e in 0..g.n_elements() {
        let nodes = g.element_nodes(e);
        for q in 0..tables.n_quad() {
            let w = tables.weights[q] * kappa.at(e, q);
            for l in 0..tables.n_local() {
                rhs[nodes[l]] -= w * tables.grads[q][l][direction];
            }
        }
    }
    rhs
}

/// Load vector `int f phi`.
fn source_rhs(f: &QuadSamples, grid: &UnitCellGrid) -> Vec<f64> {
    let g = grid.grid();
    let tables = g.tables(QuadRule::Gauss2);
    let mut rhs = vec![0.0; grid.n_nodes()];
    for e in 0..g.n_elements() {
        let nodes = g.element_nodes(e);
        for q in 0..tables.n_quad() {
            let w = tables.weights[q] * f.at(e, q);
            for l in 0..tables.n_local() {
                rhs[nodes[l]] += w * tables.values[q][l];
            }
        }
    }
    rhs
}

/// Corrector `N^i` for unit macroscopic gradient along axis `direction`
/// (zero-based).
pub fn solve_corrector_n(
    kappa: &QuadSamples,
    direction: usize,
    grid: &UnitCellGrid,
    opts: &CellSolverOptions,
) -> Result<CellSolve> {
    if direction >= grid.dim() {
        return Err(Error::Config(format!("direction {direction} out of range")));
    }
    let op = assemble_periodic_operator(kappa, grid)?;
    solve_corrector_n_with(&op, kappa, direction, grid, opts)
}

fn solve_corrector_n_with(
    op: &CsrMatrix,
    kappa: &QuadSamples,
    direction: usize,
    grid: &UnitCellGrid,
    opts: &CellSolverOptions,
) -> Result<CellSolve> {
    let rhs = corrector_rhs(kappa, direction, grid);
    solve_periodic(op, &rhs, grid, opts)
}

fn check_solvable(exchange: &QuadSamples, grid: &UnitCellGrid, tol: f64) -> Result<()> {
    let tables = grid.grid().tables(QuadRule::Gauss2);
    let mean = exchange.integral(&tables);
    if mean.abs() > tol {
        return Err(Error::Solvability { mean });
    }
    Ok(())
}

/// Exchange corrector `M` with `div_y(kappa grad_y M) + Q = 0`.
pub fn solve_exchange_m(
    kappa: &QuadSamples,
    exchange: &QuadSamples,
    grid: &UnitCellGrid,
    opts: &CellSolverOptions,
) -> Result<CellSolve> {
    check_solvable(exchange, grid, opts.tol_mean.unwrap_or(TOL_MEAN_EXPRESSION))?;
    let op = assemble_periodic_operator(kappa, grid)?;
    solve_periodic(&op, &source_rhs(exchange, grid), grid, opts)
}

/// Periodic vector field with `div_y P = Q`, built as `P = grad_y chi` with
/// `Laplace_y chi = Q` and `chi` of zero mean.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPotential {
    /// Zero-mean scalar potential `chi`.
    pub chi: CellField,
    /// Nodal components of `P`, recovered by averaging element gradients.
    pub components: Vec<CellField>,
}

impl VectorPotential {
    /// Element gradient of `chi` at a quadrature point.
    pub fn at_quad(&self, tables: &ElementTables, e: usize, q: usize) -> [f64; 2] {
        self.chi.gradient_at_quad(tables, e, q)
    }

    /// Relative L2 distance between the divergence of the nodal field and
    /// `Q`, both evaluated at the quadrature points.
    pub fn divergence_error(&self, exchange: &QuadSamples) -> f64 {
        let grid = &self.chi.grid;
        let tables = grid.grid().tables(QuadRule::Gauss2);
        let (mut num, mut den) = (0.0, 0.0);
        for e in 0..grid.grid().n_elements() {
            for q in 0..tables.n_quad() {
                let div: f64 = (0..grid.dim())
                    .map(|a| self.components[a].gradient_at_quad(&tables, e, q)[a])
                    .sum();
                let qv = exchange.at(e, q);
                num += tables.weights[q] * (div - qv).powi(2);
                den += tables.weights[q] * qv * qv;
            }
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Largest `|int P . grad phi_j + int Q phi_j|` over basis functions,
    /// with `P` taken elementwise; zero up to solver tolerance.
    pub fn weak_divergence_defect(&self, exchange: &QuadSamples) -> f64 {
        let grid = &self.chi.grid;
        let g = grid.grid();
        let tables = g.tables(QuadRule::Gauss2);
        let mut r = vec![0.0; grid.n_nodes()];
        for e in 0..g.n_elements() {
            let nodes = g.element_nodes(e);
            for q in 0..tables.n_quad() {
                let p = self.at_quad(&tables, e, q);
                let w = tables.weights[q];
                for l in 0..tables.n_local() {
                    let mut s = 0.0;
                    for a in 0..grid.dim() {
                        s += p[a] * tables.grads[q][l][a];
                    }
                    r[nodes[l]] += w * (s + exchange.at(e, q) * tables.values[q][l]);
                }
            }
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn compute_vector_potential(
    exchange: &QuadSamples,
    grid: &UnitCellGrid,
    opts: &CellSolverOptions,
) -> Result<VectorPotential> {
    check_solvable(exchange, grid, opts.tol_mean.unwrap_or(TOL_MEAN_EXPRESSION))?;
    let ones = QuadSamples {
        n_quad: exchange.n_quad,
        values: vec![1.0; exchange.values.len()],
    };
    let op = assemble_periodic_operator(&ones, grid)?;
    // -Laplace chi = -Q
    let rhs: Vec<f64> = source_rhs(exchange, grid).iter().map(|v| -v).collect();
    let chi = solve_periodic(&op, &rhs, grid, opts)?.field;
    let components = grid
        .grid()
        .recover_gradient(&chi.values)
        .into_iter()
        .map(|values| CellField {
            grid: grid.clone(),
            values,
        })
        .collect();
    Ok(VectorPotential { chi, components })
}

/// Every cell solution at one macro point, with the coefficient samples they
/// were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSolutionSet {
    pub macro_point: Vec<f64>,
    pub grid: UnitCellGrid,
    /// `n_corr[k][i]` is `N^i_k`.
    pub n_corr: [Vec<CellField>; 2],
    /// `m_corr[k]` is `M_k`.
    pub m_corr: [CellField; 2],
    pub kappa: [QuadSamples; 2],
    pub capacity: [QuadSamples; 2],
    pub exchange: QuadSamples,
    /// Final relative residual of every solve, in the order
    /// `N^1_1..N^d_1, M_1, N^1_2..N^d_2, M_2`.
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl CellSolutionSet {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn max_corrector(&self) -> f64 {
        self.n_corr
            .iter()
            .flatten()
            .chain(self.m_corr.iter())
            .fold(0.0, |m, f| m.max(f.max_abs()))
    }

    pub fn max_n(&self) -> f64 {
        self.n_corr.iter().flatten().fold(0.0, |m, f| m.max(f.max_abs()))
    }
}

/// Solves all `2d + 2` cell problems for the data frozen at `x`.
pub fn solve_cell_problems(
    data: &ProblemData,
    x: &[f64],
    grid: &UnitCellGrid,
    opts: &CellSolverOptions,
) -> Result<CellSolutionSet> {
    let kappa = [
        sample_field(&data.kappa[0], x, grid)?,
        sample_field(&data.kappa[1], x, grid)?,
    ];
    let capacity = [
        sample_field(&data.capacity[0], x, grid)?,
        sample_field(&data.capacity[1], x, grid)?,
    ];
    let exchange = sample_field(&data.exchange, x, grid)?;
    let tol_mean = opts.tol_mean.unwrap_or(if data.exchange.is_sampled() {
        TOL_MEAN_SAMPLED
    } else {
        TOL_MEAN_EXPRESSION
    });
    solve_cell_problems_sampled(x, grid, kappa, capacity, exchange, &CellSolverOptions {
        tol_mean: Some(tol_mean),
        ..*opts
    })
}

/// Same as [`solve_cell_problems`] for pre-sampled coefficients.
pub fn solve_cell_problems_sampled(
    x: &[f64],
    grid: &UnitCellGrid,
    kappa: [QuadSamples; 2],
    capacity: [QuadSamples; 2],
    exchange: QuadSamples,
    opts: &CellSolverOptions,
) -> Result<CellSolutionSet> {
    check_solvable(&exchange, grid, opts.tol_mean.unwrap_or(TOL_MEAN_EXPRESSION))?;
    let mut residuals = Vec::new();
    let mut iterations = Vec::new();
    let mut n_corr: [Vec<CellField>; 2] = [Vec::new(), Vec::new()];
    let mut m_corr = Vec::new();
    let q_rhs = source_rhs(&exchange, grid);
    for k in 0..2 {
        let op = assemble_periodic_operator(&kappa[k], grid)?;
        for i in 0..grid.dim() {
            let s = solve_corrector_n_with(&op, &kappa[k], i, grid, opts)?;
            residuals.push(s.residual);
            iterations.push(s.iterations);
            n_corr[k].push(s.field);
        }
        let s = solve_periodic(&op, &q_rhs, grid, opts)?;
        residuals.push(s.residual);
        iterations.push(s.iterations);
        m_corr.push(s.field);
    }
    let m1 = m_corr.remove(0);
    let m2 = m_corr.remove(0);
    Ok(CellSolutionSet {
        macro_point: x.to_vec(),
        grid: grid.clone(),
        n_corr,
        m_corr: [m1, m2],
        kappa,
        capacity,
        exchange,
        residuals,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Export

/// CSV with node coordinates and one column per field.
pub fn write_cell_csv(w: &mut impl Write, fields: &[(&str, &CellField)]) -> std::io::Result<()> {
    let Some((_, first)) = fields.first() else {
        return Ok(());
    };
    let grid = &first.grid;
    let dim = grid.dim();
    let mut header: Vec<String> = (1..=dim).map(|a| format!("y{a}")).collect();
    header.extend(fields.iter().map(|(n, _)| n.to_string()));
    writeln!(w, "{}", header.join(","))?;
    for i in 0..grid.n_nodes() {
        let y = grid.grid().node_coords(i);
        let mut row: Vec<String> = y[..dim].iter().map(|v| format!("{v:?}")).collect();
        row.extend(fields.iter().map(|(_, f)| format!("{:?}", f.values[i])));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Binary dump: little-endian `u64` header `(d, n, field_count)` followed by
/// `f64` payload, one field after another, nodes row-major.
pub fn encode_cell_binary(fields: &[&CellField]) -> Vec<u8> {
    let (dim, n) = fields
        .first()
        .map(|f| (f.grid.dim(), f.grid.n()))
        .unwrap_or((0, 0));
    let mut out = Vec::new();
    for v in [dim as u64, n as u64, fields.len() as u64] {
        out.extend(v.to_le_bytes());
    }
    for f in fields {
        for v in &f.values {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

pub fn decode_cell_binary(bytes: &[u8]) -> Result<Vec<CellField>> {
    if bytes.len() < 24 {
        return Err(Error::Format("cell dump shorter than its header".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap()) as usize;
    let (dim, n, count) = (word(0), word(1), word(2));
    let grid = UnitCellGrid::new(dim, n)?;
    let per = grid.n_nodes();
    if bytes.len() != 24 + 8 * per * count {
        return Err(Error::Format("cell dump payload size mismatch".into()));
    }
    let payload = &bytes[24..];
    Ok((0..count)
        .map(|f| CellField {
            grid: grid.clone(),
            values: payload[8 * per * f..8 * per * (f + 1)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
        .collect())
}

impl CellSolutionSet {
    /// Fields in dump order `N^1_1..N^d_1, M_1, N^1_2..N^d_2, M_2`.
    pub fn fields(&self) -> Vec<(String, &CellField)> {
        let mut out = Vec::new();
        for k in 0..2 {
            for (i, f) in self.n_corr[k].iter().enumerate() {
                out.push((format!("N{}_{}", i + 1, k + 1), f));
            }
            out.push((format!("M_{}", k + 1), &self.m_corr[k]));
        }
        out
    }

    /// Rebuilds a set from dumped correctors and freshly sampled coefficients.
    pub fn from_dump(
        x: &[f64],
        fields: Vec<CellField>,
        data: &ProblemData,
    ) -> Result<CellSolutionSet> {
        let Some(first) = fields.first() else {
            return Err(Error::Format("empty cell dump".into()));
        };
        let grid = first.grid.clone();
        let d = grid.dim();
        if fields.len() != 2 * (d + 1) {
            return Err(Error::Format("cell dump has the wrong field count".into()));
        }
        let mut it = fields.into_iter();
        let mut n_corr: [Vec<CellField>; 2] = [Vec::new(), Vec::new()];
        let mut m = Vec::new();
        for nk in n_corr.iter_mut() {
            for _ in 0..d {
                nk.push(it.next().unwrap());
            }
            m.push(it.next().unwrap());
        }
        let m2 = m.pop().unwrap();
        let m1 = m.pop().unwrap();
        Ok(CellSolutionSet {
            macro_point: x.to_vec(),
            kappa: [
                sample_field(&data.kappa[0], x, &grid)?,
                sample_field(&data.kappa[1], x, &grid)?,
            ],
            capacity: [
                sample_field(&data.capacity[0], x, &grid)?,
                sample_field(&data.capacity[1], x, &grid)?,
            ],
            exchange: sample_field(&data.exchange, x, &grid)?,
            grid,
            n_corr,
            m_corr: [m1, m2],
            residuals: vec![],
            iterations: vec![],
        })
    }
}
