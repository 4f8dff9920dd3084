//! First-order corrector, error norms and convergence-rate fits across a
//! sweep of `eps`.
//!
//! The corrector gradient of continuum `k` (partner `j`) is
//!
//! ```text
//! G_k = grad u_k0 + tau (grad_y N^i_k d_i u_k0 + grad_y M_k (u_j0 - u_k0))
//! ```
//!
//! with the cell gradients taken at `(x, frac(x/eps))` and `tau` either one
//! or a boundary cutoff.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cell::CellSolverOptions;
use crate::coeffs::{Domain, ProblemData};
use crate::effective::{build_effective_field, CellLibrary, EffectiveBuild, MacroSampling};
use crate::error::{Error, Result};
use crate::fem::{for_each_quad, Scheme, TimeGrid};
use crate::finesolve::{fast_variable, solve_fine_on, FineRunSpec};
use crate::macrosolve::{solve_homogenized, MacroOptions, TransientField};
use crate::mesh::{MacroMesh, QuadRule, UnitCellGrid};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSpec {
    pub use_cutoff: bool,
}

/// Boundary cutoff: 0 within `eps` of the boundary, 1 beyond `2 eps`, a
/// cubic smoothstep in between.
pub fn cutoff(x: &[f64], domain: &Domain, eps: f64) -> f64 {
    cutoff_with_gradient(x, domain, eps).0
}

/// Cutoff value and its gradient (one-sided at kinks of the distance).
pub fn cutoff_with_gradient(x: &[f64], domain: &Domain, eps: f64) -> (f64, [f64; 2]) {
    let mut d = f64::INFINITY;
    let mut dd = [0.0; 2];
    for a in 0..domain.dim() {
        let (lo, hi) = (x[a] - domain.lower[a], domain.upper[a] - x[a]);
        if lo < d {
            d = lo;
            dd = [0.0; 2];
            dd[a] = 1.0;
        }
        if hi < d {
            d = hi;
            dd = [0.0; 2];
            dd[a] = -1.0;
        }
    }
    let s = (d - eps) / eps;
    if s <= 0.0 {
        return (0.0, [0.0; 2]);
    }
    if s >= 1.0 {
        return (1.0, [0.0; 2]);
    }
    let slope = 6.0 * s * (1.0 - s) / eps;
    (s * s * (3.0 - 2.0 * s), [slope * dd[0], slope * dd[1]])
}

/// How the gradient of the homogenized solution is evaluated on the target
/// mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoarseGradient {
    /// Gradient of the Q1 interpolant in the containing element.
    Elementwise,
    /// Nodal gradient recovered by averaging, then interpolated.
    Recovered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOptions {
    /// Element quadrature for all error integrals on the fine mesh. The
    /// midpoint default samples Q1 gradients where they are superconvergent,
    /// which keeps the `O(h / eps)` interpolation error of the resolved
    /// gradient out of the corrector-gradient norm.
    pub rule: QuadRule,
    /// `None` picks elementwise gradients when the homogenized solution lives
    /// on the fine mesh itself and recovered gradients otherwise.
    pub coarse_gradient: Option<CoarseGradient>,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        EvaluationOptions {
            rule: QuadRule::Midpoint,
            coarse_gradient: None,
        }
    }
}

/// Quadrature points of a mesh with their element shape data.
#[derive(Debug, Clone)]
struct PointSet {
    x: Vec<[f64; 2]>,
    weight: Vec<f64>,
    element: Vec<usize>,
    /// index into the rule's tables
    slot: Vec<usize>,
}

impl PointSet {
    fn new(mesh: &MacroMesh, rule: QuadRule) -> Self {
        let nq = mesh.grid().tables(rule).n_quad();
        let mut s = PointSet {
            x: vec![],
            weight: vec![],
            element: vec![],
            slot: vec![],
        };
        let mut k = 0;
        for_each_quad(mesh, rule, |c| {
            s.x.push(c.x);
            s.weight.push(c.weight);
            s.element.push(c.element);
            s.slot.push(k % nq);
            k += 1;
            Ok(())
        })
        .expect("infallible visitor");
        s
    }
}

/// Corrector gradients `G_1, G_2` at every quadrature point of a target mesh
/// and every time level.
#[derive(Debug, Clone)]
pub struct CorrectorGradientField {
    pub mesh: MacroMesh,
    pub rule: QuadRule,
    pub epsilon: f64,
    pub time: TimeGrid,
    pub points: Vec<[f64; 2]>,
    /// `values[k][n][q]`
    pub values: [Vec<Vec<[f64; 2]>>; 2],
    /// `u_k0` at the same points, `coarse[k][n][q]`.
    pub coarse: [Vec<Vec<f64>>; 2],
}

pub fn build_corrector_gradient(
    coarse: &TransientField,
    cells: &CellLibrary,
    eps: f64,
    spec: &CorrectorSpec,
    target: &MacroMesh,
    opts: &EvaluationOptions,
) -> Result<CorrectorGradientField> {
    let dim = target.dim();
    if coarse.mesh.dim() != dim || cells.dim() != dim {
        return Err(Error::Incompatible("corrector inputs differ in dimension".into()));
    }
    let cg = coarse.grid();
    let tg = target.grid();
    if (0..dim).any(|a| (cg.lower[a] - tg.lower[a]).abs() > 1e-12 || (cg.upper[a] - tg.upper[a]).abs() > 1e-12) {
        return Err(Error::Incompatible("homogenized and target meshes cover different domains".into()));
    }
    let mode = opts.coarse_gradient.unwrap_or(if &coarse.mesh == target {
        CoarseGradient::Elementwise
    } else {
        CoarseGradient::Recovered
    });
    let domain = Domain {
        lower: tg.lower[..dim].to_vec(),
        upper: tg.upper[..dim].to_vec(),
    };
    let pts = PointSet::new(target, opts.rule);
    let local: Vec<_> = pts
        .x
        .iter()
        .map(|x| {
            let x = &x[..dim];
            let y = fast_variable(x, eps);
            let tau = if spec.use_cutoff {
                cutoff_with_gradient(x, &domain, eps)
            } else {
                (1.0, [0.0; 2])
            };
            (cells.gradients(x, &y[..dim]), tau)
        })
        .collect();
    let levels = coarse.n_levels();
    let mut values = [Vec::with_capacity(levels), Vec::with_capacity(levels)];
    let mut coarse_vals = [Vec::with_capacity(levels), Vec::with_capacity(levels)];
    for n in 0..levels {
        let recovered = match mode {
            CoarseGradient::Recovered => Some([cg.recover_gradient(&coarse.u[0][n]), cg.recover_gradient(&coarse.u[1][n])]),
            CoarseGradient::Elementwise => None,
        };
        let mut step = [Vec::with_capacity(pts.x.len()), Vec::with_capacity(pts.x.len())];
        let mut step_u = [Vec::with_capacity(pts.x.len()), Vec::with_capacity(pts.x.len())];
        for (x, (corr, tau)) in pts.x.iter().zip(&local) {
            let x = &x[..dim];
            let u = [coarse.value(0, n, x), coarse.value(1, n, x)];
            let grads: [[f64; 2]; 2] = std::array::from_fn(|k| match &recovered {
                Some(r) => {
                    let mut g = [0.0; 2];
                    for a in 0..dim {
                        g[a] = cg.interpolate(&r[k][a], x);
                    }
                    g
                }
                None => coarse.gradient(k, n, x),
            });
            for k in 0..2 {
                let j = 1 - k;
                let mut g = grads[k];
                // eps * u_k1 itself, for the gradient of the cutoff
                let mut first = corr.m[k] * (u[j] - u[k]);
                for i in 0..dim {
                    first += corr.n[k][i] * grads[k][i];
                }
                for a in 0..dim {
                    let mut c = corr.dm[k][a] * (u[j] - u[k]);
                    for i in 0..dim {
                        c += corr.dn[k][i][a] * grads[k][i];
                    }
                    g[a] += tau.0 * c + eps * tau.1[a] * first;
                }
                step[k].push(g);
                step_u[k].push(u[k]);
            }
        }
        let [s0, s1] = step;
        values[0].push(s0);
        values[1].push(s1);
        let [u0, u1] = step_u;
        coarse_vals[0].push(u0);
        coarse_vals[1].push(u1);
    }
    Ok(CorrectorGradientField {
        mesh: target.clone(),
        rule: opts.rule,
        epsilon: eps,
        time: coarse.time,
        points: pts.x,
        values,
        coarse: coarse_vals,
    })
}

/// Weights of the time quadrature matching a scheme: rectangle rule on
/// levels `1..=m` for implicit Euler, trapezoid for Crank-Nicolson.
pub fn time_weights(time: &TimeGrid, scheme: Scheme) -> Vec<f64> {
    let dt = time.dt();
    let mut w = vec![dt; time.steps + 1];
    match scheme {
        Scheme::ImplicitEuler => w[0] = 0.0,
        Scheme::CrankNicolson => {
            w[0] = 0.5 * dt;
            w[time.steps] = 0.5 * dt;
        }
    }
    w
}

/// Norms of one sweep member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub epsilon: f64,
    /// `||u_k^eps - u_k0||_{L2(0,T;L2)}`
    pub l2: [f64; 2],
    /// `||grad u_k^eps - G_k||_{L2(0,T;L2)}`
    pub grad: [f64; 2],
    /// `||u_k^eps||_{L2(0,T;H1_0)}`
    pub energy: [f64; 2],
}

pub fn error_norms(fine: &TransientField, g: &CorrectorGradientField) -> Result<ErrorRow> {
    if fine.mesh != g.mesh {
        return Err(Error::Incompatible("corrector gradients were built on another mesh".into()));
    }
    if fine.time != g.time {
        return Err(Error::Incompatible("fine and homogenized time grids differ".into()));
    }
    let dim = fine.mesh.dim();
    let grid = fine.grid();
    let tables = grid.tables(g.rule);
    let pts = PointSet::new(&fine.mesh, g.rule);
    let tw = time_weights(&fine.time, fine.scheme);
    let mut l2 = [0.0; 2];
    let mut gr = [0.0; 2];
    let mut en = [0.0; 2];
    for (n, &wt) in tw.iter().enumerate() {
        if wt == 0.0 {
            continue;
        }
        for k in 0..2 {
            let u = &fine.u[k][n];
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for (q, &e) in pts.element.iter().enumerate() {
                let nodes = grid.element_nodes(e);
                let s = pts.slot[q];
                let mut v = 0.0;
                let mut gv = [0.0; 2];
                for l in 0..tables.n_local() {
                    let ul = u[nodes[l]];
                    v += ul * tables.values[s][l];
                    for ax in 0..dim {
                        gv[ax] += ul * tables.grads[s][l][ax];
                    }
                }
                let w = pts.weight[q];
                a += w * (v - g.coarse[k][n][q]).powi(2);
                let gk = g.values[k][n][q];
                b += w * (0..dim).map(|ax| (gv[ax] - gk[ax]).powi(2)).sum::<f64>();
                c += w * (0..dim).map(|ax| gv[ax] * gv[ax]).sum::<f64>();
            }
            l2[k] += wt * a;
            gr[k] += wt * b;
            en[k] += wt * c;
        }
    }
    Ok(ErrorRow {
        epsilon: fine.epsilon.unwrap_or(g.epsilon),
        l2: l2.map(f64::sqrt),
        grad: gr.map(f64::sqrt),
        energy: en.map(f64::sqrt),
    })
}

/// Least-squares line through `(ln eps, ln error)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    /// 95% confidence band of the slope; unbounded with fewer than 3 points.
    pub band: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateFit {
    /// Every error is zero.
    Exact,
    Fitted(LineFit),
}

impl RateFit {
    pub fn slope(&self) -> Option<f64> {
        match self {
            RateFit::Exact => None,
            RateFit::Fitted(f) => Some(f.slope),
        }
    }

    /// True when the rate is at least `threshold` (exact fits always pass).
    pub fn at_least(&self, threshold: f64) -> bool {
        self.slope().is_none_or(|s| s >= threshold)
    }
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InvalidData(format!("a rate fit needs at least 3 rows, got {}", points.len())));
    }
    if points.iter().any(|&(e, v)| !(e > 0.0) || !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidData("rate fit needs positive eps and finite, non-negative errors".into()));
    }
    let zeros = points.iter().filter(|p| p.1 == 0.0).count();
    if zeros == points.len() {
        return Ok(RateFit::Exact);
    }
    if zeros > 0 {
        return Err(Error::InvalidData("some but not all errors are zero; no rate can be fitted".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidData("rate fit needs distinct eps values".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let dof = n - 2.0;
    let half = if dof > 0.0 {
        let t = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
        t.inverse_cdf(0.975) * (ssr / dof / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(RateFit::Fitted(LineFit {
        slope,
        intercept,
        residual: (ssr / n).sqrt(),
        band: [slope - half, slope + half],
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Sorted by decreasing `eps`.
    pub rows: Vec<ErrorRow>,
    pub fits: BTreeMap<String, RateFit>,
    pub checks: Vec<StudyCheck>,
    pub flags: Vec<String>,
    pub passed: bool,
}

/// Names of the reported norms, in CSV column order.
pub const NORMS: [&str; 6] = ["l2_u1", "l2_u2", "grad_u1", "grad_u2", "energy_u1", "energy_u2"];

impl ErrorRow {
    pub fn norm(&self, name: &str) -> f64 {
        match name {
            "l2_u1" => self.l2[0],
            "l2_u2" => self.l2[1],
            "grad_u1" => self.grad[0],
            "grad_u2" => self.grad[1],
            "energy_u1" => self.energy[0],
            "energy_u2" => self.energy[1],
            _ => panic!("unknown norm {name}"),
        }
    }
}

impl ErrorReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("eps,{}\n", NORMS.join(","));
        for r in &self.rows {
            let _ = write!(s, "{:?}", r.epsilon);
            for name in NORMS {
                let _ = write!(s, ",{:?}", r.norm(name));
            }
            s.push('\n');
        }
        s
    }

    /// Two columns, `log10(eps) log10(error)`, for one norm.
    pub fn loglog(&self, norm: &str) -> String {
        let mut s = format!("# log10(eps) log10({norm})\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:?} {:?}", r.epsilon.log10(), r.norm(norm).log10());
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("error report: {e}")))
    }

    pub fn check(&self, name: &str) -> Option<&StudyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Test hook: replaces every solve by errors `scale * eps^rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticErrors {
    pub scale: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Strictly decreasing, at least three entries.
    pub eps: Vec<f64>,
    pub rho: f64,
    pub dt: f64,
    pub cell_n: usize,
    /// Cell-problem samples per axis when coefficients vary with `x`.
    pub macro_samples: usize,
    pub scheme: Scheme,
    pub corrector: CorrectorSpec,
    pub evaluation: EvaluationOptions,
    pub tol_lin: f64,
    pub slope_threshold: f64,
    pub bound_factor: f64,
    /// Largest admissible ratio of the estimated macro discretization error
    /// to the smallest-eps homogenization error.
    pub floor_ratio: f64,
    /// Worker threads; zero means the rayon default.
    pub jobs: usize,
    pub synthetic: Option<SyntheticErrors>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            eps: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            rho: 16.0,
            dt: 1e-3,
            cell_n: 256,
            macro_samples: 8,
            scheme: Scheme::ImplicitEuler,
            corrector: CorrectorSpec::default(),
            evaluation: EvaluationOptions::default(),
            tol_lin: 1e-10,
            slope_threshold: 0.4,
            bound_factor: 2.0,
            floor_ratio: 0.2,
            jobs: 0,
            synthetic: None,
        }
    }
}

impl StudyConfig {
    pub fn check(&self) -> Result<()> {
        if self.eps.len() < 3 {
            return Err(Error::Config("a study needs at least three eps values".into()));
        }
        if self.eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("eps list must be strictly decreasing".into()));
        }
        if self.eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::Config("every eps must lie in (0, 1)".into()));
        }
        if !(self.dt > 0.0) || self.cell_n < 4 || self.macro_samples == 0 {
            return Err(Error::Config("dt, cell-n and macro samples must be positive".into()));
        }
        Ok(())
    }
}

/// Wall-clock seconds spent per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyTimings {
    pub cells: f64,
    pub per_eps: Vec<f64>,
    pub floor_check: f64,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub report: ErrorReport,
    pub timings: StudyTimings,
    /// Richardson estimate of the macro L2 discretization error at the
    /// smallest eps, per continuum.
    pub floor_estimate: Option<[f64; 2]>,
}

/// Runs the full sweep, building the cell solutions first.
pub fn run_study(data: &ProblemData, cfg: &StudyConfig) -> Result<StudyOutcome> {
    cfg.check()?;
    if cfg.synthetic.is_some() {
        return run_study_with(data, cfg, None, 0.0);
    }
    let start = Instant::now();
    let grid = UnitCellGrid::new(data.dim, cfg.cell_n)?;
    let build = build_effective_field(
        data,
        &MacroSampling::auto(data, cfg.macro_samples),
        &grid,
        &CellSolverOptions {
            tol_lin: cfg.tol_lin,
            ..Default::default()
        },
    )?;
    run_study_with(data, cfg, Some(&build), start.elapsed().as_secs_f64())
}

/// Runs the sweep with prebuilt cell solutions.
pub fn run_study_with(
    data: &ProblemData,
    cfg: &StudyConfig,
    build: Option<&EffectiveBuild>,
    cell_seconds: f64,
) -> Result<StudyOutcome> {
    cfg.check()?;
    let mut timings = StudyTimings {
        cells: cell_seconds,
        ..Default::default()
    };
    let mut flags = Vec::new();
    let (rows, degenerate, floor_estimate) = if let Some(syn) = cfg.synthetic {
        flags.push("synthetic".to_string());
        let rows = cfg
            .eps
            .iter()
            .map(|&e| {
                let v = syn.scale * e.powf(syn.rate);
                ErrorRow {
                    epsilon: e,
                    l2: [v; 2],
                    grad: [v; 2],
                    energy: [1.0; 2],
                }
            })
            .collect();
        (rows, false, None)
    } else {
        let build = build.ok_or_else(|| Error::Config("study needs cell solutions".into()))?;
        let time = TimeGrid::with_step(data.horizon, cfg.dt)?;
        let degenerate = data.has_no_exchange() && build.cells.is_trivial(1e-12);
        let member = |&eps: &f64| -> Result<(ErrorRow, f64, TransientField)> {
            let t0 = Instant::now();
            let spec = FineRunSpec {
                rho: cfg.rho,
                scheme: cfg.scheme,
                tol_lin: cfg.tol_lin,
                ..FineRunSpec::new(eps, time)
            };
            let mesh = spec.mesh(data)?;
            let fine = solve_fine_on(data, &spec, &mesh)?;
            let coarse = solve_homogenized(
                &build.field,
                data,
                &mesh,
                time,
                &MacroOptions {
                    scheme: cfg.scheme,
                    tol_lin: cfg.tol_lin,
                    ..Default::default()
                },
            )?;
            let g = build_corrector_gradient(&coarse, &build.cells, eps, &cfg.corrector, &mesh, &cfg.evaluation)?;
            let row = error_norms(&fine, &g)?;
            Ok((row, t0.elapsed().as_secs_f64(), coarse))
        };
        let results: Vec<_> = if cfg.jobs > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(|| cfg.eps.par_iter().map(member).collect::<Result<Vec<_>>>())?
        } else {
            cfg.eps.par_iter().map(member).collect::<Result<Vec<_>>>()?
        };
        let mut rows = Vec::new();
        let mut last_coarse = None;
        for (row, secs, coarse) in results {
            rows.push(row);
            timings.per_eps.push(secs);
            last_coarse = Some(coarse);
        }
        let mut floor = None;
        if degenerate {
            flags.push("degenerate: no oscillation".to_string());
        } else {
            let t0 = Instant::now();
            let coarse = last_coarse.expect("at least three members");
            let est = richardson_floor(data, build, &coarse, cfg)?;
            timings.floor_check = t0.elapsed().as_secs_f64();
            let smallest = rows.last().expect("rows");
            for k in 0..2 {
                if est[k] > cfg.floor_ratio * smallest.l2[k] {
                    return Err(Error::Resolution(format!(
                        "estimated macro discretization error {:e} of u{} exceeds {} x the eps = {} distance {:e}",
                        est[k],
                        k + 1,
                        cfg.floor_ratio,
                        smallest.epsilon,
                        smallest.l2[k]
                    )));
                }
            }
            floor = Some(est);
        }
        (rows, degenerate, floor)
    };
    let report = assemble_report(rows, flags, degenerate, cfg)?;
    Ok(StudyOutcome {
        report,
        timings,
        floor_estimate,
    })
}

/// `||u_h - u_{2h}||_{L2(0,T;L2)} / 3` at the resolution of `coarse`.
fn richardson_floor(
    data: &ProblemData,
    build: &EffectiveBuild,
    coarse: &TransientField,
    cfg: &StudyConfig,
) -> Result<[f64; 2]> {
    let g = coarse.grid();
    let dim = g.dim;
    let cells: Vec<usize> = (0..dim).map(|a| (g.cells[a] / 2).max(2)).collect();
    let half = MacroMesh::new(dim, &g.lower[..dim], &g.upper[..dim], &cells)?;
    let other = solve_homogenized(
        &build.field,
        data,
        &half,
        coarse.time,
        &MacroOptions {
            scheme: cfg.scheme,
            tol_lin: cfg.tol_lin,
            ..Default::default()
        },
    )?;
    let pts = PointSet::new(&coarse.mesh, QuadRule::Gauss2);
    let tw = time_weights(&coarse.time, coarse.scheme);
    let mut out = [0.0; 2];
    for (n, &wt) in tw.iter().enumerate() {
        if wt == 0.0 {
            continue;
        }
        for (k, o) in out.iter_mut().enumerate() {
            for (q, x) in pts.x.iter().enumerate() {
                let d = coarse.value(k, n, &x[..dim]) - other.value(k, n, &x[..dim]);
                *o += wt * pts.weight[q] * d * d;
            }
        }
    }
    Ok(out.map(|v| v.sqrt() / 3.0))
}

fn assemble_report(rows: Vec<ErrorRow>, flags: Vec<String>, degenerate: bool, cfg: &StudyConfig) -> Result<ErrorReport> {
    let mut fits = BTreeMap::new();
    let mut checks = Vec::new();
    let series = |name: &str| -> Vec<(f64, f64)> { rows.iter().map(|r| (r.epsilon, r.norm(name))).collect() };
    let scale = rows
        .iter()
        .map(|r| r.energy[0] + r.energy[1])
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for name in ["grad_u1", "grad_u2", "l2_u1", "l2_u2"] {
        let s = series(name);
        let fit = if s.iter().all(|p| p.1 <= 1e-12 * scale) {
            RateFit::Exact
        } else {
            fit_rate(&s)?
        };
        fits.insert(name.to_string(), fit);
    }
    if degenerate {
        for name in ["grad_u1", "grad_u2", "l2_u1", "l2_u2"] {
            let s = series(name);
            let max = s.iter().map(|p| p.1).fold(0.0, f64::max);
            let min = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let passed = max <= 1e-10 * scale || max - min <= 0.1 * max;
            checks.push(StudyCheck {
                name: format!("eps-independent {name}"),
                passed,
                detail: format!("min {min:e}, max {max:e}"),
            });
        }
    } else {
        for (k, name) in ["grad_u1", "grad_u2"].iter().enumerate() {
            let fit = &fits[*name];
            checks.push(StudyCheck {
                name: format!("corrector-gradient slope u{}", k + 1),
                passed: fit.at_least(cfg.slope_threshold),
                detail: match fit.slope() {
                    Some(s) => format!("slope {s:.4} (threshold {})", cfg.slope_threshold),
                    None => "exact".into(),
                },
            });
        }
        for k in 0..2 {
            let decreasing = rows.windows(2).all(|w| w[1].l2[k] < w[0].l2[k]);
            checks.push(StudyCheck {
                name: format!("distance decreases u{}", k + 1),
                passed: decreasing,
                detail: format!("{:?}", rows.iter().map(|r| r.l2[k]).collect::<Vec<_>>()),
            });
        }
    }
    let sums: Vec<f64> = rows.iter().map(|r| r.energy[0] + r.energy[1]).collect();
    let first = sums[0];
    let bounded = sums.iter().all(|&s| s <= cfg.bound_factor * first && s * cfg.bound_factor >= first);
    checks.push(StudyCheck {
        name: "uniform energy bound".into(),
        passed: bounded,
        detail: format!("{sums:?}"),
    });
    let passed = checks.iter().all(|c| c.passed);
    Ok(ErrorReport {
        rows,
        fits,
        checks,
        flags,
        passed,
    })
}
