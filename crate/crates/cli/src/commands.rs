//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;

use rayon::prelude::*;
use serde_json::{json, Value};

use dualhom::cell::write_cell_csv;
use dualhom::coeffs::{validate as validate_data, ProblemData, ValidationOptions, ValidationReport};
use dualhom::effective::{
    assemble_from_sets, EffectiveBuild, EffectivePointData, MacroLattice, MacroSampling,
    YIndependentCoefficients,
};
use dualhom::fem::{Scheme, TimeGrid};
use dualhom::finesolve::{solve_fine, FineRunSpec};
use dualhom::macrosolve::manufactured::{spatial_errors, temporal_errors, Manufactured};
use dualhom::macrosolve::{solve_homogenized, MacroOptions, TransientField};
use dualhom::mesh::{MacroMesh, UnitCellGrid};
use dualhom::verify::{fit_rate, run_study_with, ErrorReport, StudyConfig, SyntheticErrors, NORMS};
use dualhom::Error;

use crate::output::{cell_sets, load_problem, Run};
use crate::{CellArgs, CommonArgs, Failure, HomogenizeArgs, StudyArgs};

fn init_threads(jobs: usize) {
    if jobs > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
}

fn scheme(args: &CommonArgs) -> Result<Scheme, Failure> {
    Ok(args.scheme.parse::<Scheme>()?)
}

fn time_grid(args: &CommonArgs, data: &ProblemData) -> Result<TimeGrid, Failure> {
    Ok(match args.dt {
        Some(dt) => TimeGrid::with_step(data.horizon, dt)?,
        None => TimeGrid::new(data.horizon, 100)?,
    })
}

fn print_validation(report: &ValidationReport) {
    for c in &report.checks {
        let status = if c.passed { "ok  " } else { "FAIL" };
        eprintln!("{status} {:<22} worst {:>12.4e}  {}", c.name, c.worst_value, c.detail);
    }
    for u in &report.unchecked {
        eprintln!("note {u}");
    }
}

/// Loads and validates the problem; invalid data is refused with exit 2.
fn checked_problem(args: &CommonArgs) -> Result<(ProblemData, Vec<u8>), Failure> {
    let (data, bytes) = load_problem(args)?;
    let report = validate_data(&data, &ValidationOptions::default());
    if !report.passed() {
        print_validation(&report);
        return Err(Failure::validation(format!("invalid problem data: {}", report.failures().join("; "))));
    }
    Ok((data, bytes))
}

fn cell_grid(args: &CommonArgs, data: &ProblemData) -> Result<UnitCellGrid, Failure> {
    Ok(UnitCellGrid::new(data.dim, args.cell_n)?)
}

fn effective_build(args: &CommonArgs, data: &ProblemData, run: &mut Run, samples: usize) -> Result<EffectiveBuild, Failure> {
    let grid = cell_grid(args, data)?;
    let lattice = MacroSampling::auto(data, samples).lattice(&data.domain)?;
    let (sets, hits) = run.time("cells", || cell_sets(args, data, &lattice, &grid))?;
    run.record("cell_cache_hits", hits);
    run.record("cell_solves", sets.len());
    Ok(run.time("effective", || assemble_from_sets(data.dim, lattice, sets)))
}

fn write_series(run: &mut Run, prefix: &str, field: &TransientField) -> Result<(), Failure> {
    run.write(&format!("{prefix}solution.bin"), &field.encode_binary())?;
    let mut csv = Vec::new();
    field
        .write_csv(&mut csv, &[0, field.n_levels() - 1])
        .expect("writing to memory");
    run.write(&format!("{prefix}solution.csv"), &csv)
}

fn series_summary(field: &TransientField) -> Value {
    json!({
        "levels": field.n_levels(),
        "nodes": field.mesh.n_nodes(),
        "max_abs": field.max_abs(),
        "max_abs_u1_minus_u2": field.max_difference(),
        "max_step_residual": field.residuals.iter().cloned().fold(0.0, f64::max),
        "energy_norm": [field.energy_norm(0), field.energy_norm(1)],
    })
}

pub fn validate(args: &CommonArgs) -> Result<(), Failure> {
    let (data, bytes) = load_problem(args)?;
    let mut run = Run::new(args, "validate", Some(&bytes), Value::Null)?;
    let report = run.time("validate", || validate_data(&data, &ValidationOptions::default()));
    print_validation(&report);
    run.write("validation.json", serde_json::to_string_pretty(&report).expect("json").as_bytes())?;
    run.record("passed", report.passed());
    run.finish()?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::validation(format!("validation failed: {}", report.failures().join("; "))))
    }
}

pub fn cell(args: &CellArgs) -> Result<(), Failure> {
    let common = &args.common;
    init_threads(common.jobs);
    let (data, bytes) = checked_problem(common)?;
    let x = match &args.at {
        Some(x) => x.clone(),
        None => (0..data.dim)
            .map(|a| 0.5 * (data.domain.lower[a] + data.domain.upper[a]))
            .collect(),
    };
    if x.len() != data.dim {
        return Err(Failure::validation(format!("--at needs {} coordinates", data.dim)));
    }
    let mut run = Run::new(common, "cell", Some(&bytes), json!({ "at": x }))?;
    let grid = cell_grid(common, &data)?;
    let lattice = MacroLattice {
        axes: x.iter().map(|v| vec![*v]).collect(),
    };
    let (mut sets, hits) = run.time("cells", || cell_sets(common, &data, &lattice, &grid))?;
    let set = sets.pop().expect("one set");
    let point = EffectivePointData::from_cells(&set);
    let diag = point.diagnose(&set);
    let fields = set.fields();
    let named: Vec<(&str, _)> = fields.iter().map(|(n, f)| (n.as_str(), *f)).collect();
    let mut csv = Vec::new();
    write_cell_csv(&mut csv, &named).expect("writing to memory");
    run.write("cells.csv", &csv)?;
    let refs: Vec<_> = fields.iter().map(|(_, f)| *f).collect();
    run.write("cells.bin", &dualhom::cell::encode_cell_binary(&refs))?;
    let per_field: Vec<Value> = fields
        .iter()
        .map(|(n, f)| json!({ "name": n, "mean": f.mean(), "max_abs": f.max_abs() }))
        .collect();
    let summary = json!({
        "macro_point": x,
        "n": grid.n(),
        "cache_hit": hits > 0,
        "residuals": set.residuals,
        "iterations": set.iterations,
        "fields": per_field,
        "max_abs_N": set.max_n(),
        "max_abs_corrector": set.max_corrector(),
        "kappa_star": point.kappa_star,
        "convection": point.convection,
        "drift": point.drift,
        "beta": point.beta,
        "capacity_bar": point.capacity_bar,
        "exchange_energy": diag.exchange_energy,
        "violations": diag.violations,
    });
    run.write("summary.json", (serde_json::to_string_pretty(&summary).expect("json") + "\n").as_bytes())?;
    run.record("beta", point.beta);
    run.record("max_abs_N", set.max_n());
    eprintln!("beta = {:.6e}, max|N| = {:.3e}, max|M| = {:.3e}", point.beta, set.max_n(), set.m_corr[0].max_abs().max(set.m_corr[1].max_abs()));
    run.finish()
}

pub fn effective(args: &CommonArgs) -> Result<(), Failure> {
    init_threads(args.jobs);
    let (data, bytes) = checked_problem(args)?;
    let mut run = Run::new(args, "effective", Some(&bytes), Value::Null)?;
    let build = effective_build(args, &data, &mut run, args.macro_n)?;
    run.write("effective.json", (build.field.to_json() + "\n").as_bytes())?;
    let violations = build.field.violations();
    run.record("samples", build.field.points.len());
    run.record("violations", &violations);
    run.finish()?;
    if !violations.is_empty() {
        return Err(Failure {
            code: 3,
            message: format!("effective coefficients violate invariants: {}", violations.join("; ")),
        });
    }
    Ok(())
}

pub fn homogenize(args: &HomogenizeArgs) -> Result<(), Failure> {
    let common = &args.common;
    init_threads(common.jobs);
    if args.manufactured {
        return homogenize_manufactured(args);
    }
    let (data, bytes) = checked_problem(common)?;
    let mut run = Run::new(common, "homogenize", Some(&bytes), Value::Null)?;
    let mesh = MacroMesh::uniform(data.dim, &data.domain.lower, &data.domain.upper, common.macro_n)?;
    let time = time_grid(common, &data)?;
    let opts = MacroOptions {
        scheme: scheme(common)?,
        tol_lin: common.tol_lin,
        ..Default::default()
    };
    let field = if data.is_y_independent() {
        let coeffs = YIndependentCoefficients::new(&data)?;
        run.time("solve", || solve_homogenized(&coeffs, &data, &mesh, time, &opts))?
    } else {
        let build = effective_build(common, &data, &mut run, common.macro_n)?;
        run.write("effective.json", (build.field.to_json() + "\n").as_bytes())?;
        run.time("solve", || solve_homogenized(&build.field, &data, &mesh, time, &opts))?
    };
    write_series(&mut run, "", &field)?;
    run.record("solution", series_summary(&field));
    eprintln!("max|u| = {:.4e}, max|u1 - u2| = {:.3e}", field.max_abs(), field.max_difference());
    run.finish()
}

fn homogenize_manufactured(args: &HomogenizeArgs) -> Result<(), Failure> {
    let common = &args.common;
    if !(1..=2).contains(&args.dim) {
        return Err(Failure::validation("--dim must be 1 or 2"));
    }
    let mut run = Run::new(common, "homogenize", None, json!({ "manufactured": true, "dim": args.dim }))?;
    let man = Manufactured::standard(args.dim);
    let n = common.macro_n.max(16);
    let ns = [n / 4, n / 2, n];
    let spatial = run.time("spatial", || {
        spatial_errors(&man, &ns, TimeGrid::new(0.5, 100)?, Scheme::CrankNicolson)
    })?;
    let scheme = scheme(common)?;
    let temporal = run.time("temporal", || temporal_errors(&man, n / 4, 1.0, &[10, 20, 40], 2560, scheme))?;
    let spatial_order = fit_rate(&spatial)?.slope();
    let temporal_order = fit_rate(&temporal)?.slope();
    let finest = dualhom::macrosolve::manufactured::run(&man, n, TimeGrid::new(0.5, 100)?, Scheme::CrankNicolson)?;
    write_series(&mut run, "", &finest)?;
    run.record("spatial_errors", &spatial);
    run.record("spatial_order", spatial_order);
    run.record("temporal_scheme", scheme.to_string());
    run.record("temporal_errors", &temporal);
    run.record("temporal_order", temporal_order);
    eprintln!(
        "spatial order {:.3}, temporal order ({scheme}) {:.3}",
        spatial_order.unwrap_or(f64::NAN),
        temporal_order.unwrap_or(f64::NAN)
    );
    run.finish()
}

pub fn fine(args: &CommonArgs) -> Result<(), Failure> {
    init_threads(args.jobs);
    let (data, bytes) = checked_problem(args)?;
    let mut run = Run::new(args, "fine", Some(&bytes), Value::Null)?;
    let time = time_grid(args, &data)?;
    let scheme = scheme(args)?;
    let results = run.time("solve", || {
        args.eps
            .par_iter()
            .map(|&eps| {
                let spec = FineRunSpec {
                    rho: args.rho as f64,
                    scheme,
                    tol_lin: args.tol_lin,
                    ..FineRunSpec::new(eps, time)
                };
                solve_fine(&data, &spec)
            })
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let mut summary = Vec::new();
    for field in &results {
        let eps = field.epsilon.expect("resolved runs carry eps");
        write_series(&mut run, &format!("eps_{eps:?}/"), field)?;
        let mut s = series_summary(field);
        s["eps"] = json!(eps);
        summary.push(s);
        eprintln!("eps = {eps:?}: max|u| = {:.4e}, energy = {:.4e} + {:.4e}", field.max_abs(), field.energy_norm(0), field.energy_norm(1));
    }
    run.record("runs", summary);
    run.finish()
}

pub fn study(args: &StudyArgs) -> Result<(), Failure> {
    let common = &args.common;
    init_threads(common.jobs);
    let synthetic = args.synthetic_rate.map(|rate| SyntheticErrors {
        scale: args.synthetic_scale,
        rate,
    });
    let (data, bytes) = match (&common.config, synthetic) {
        (None, Some(_)) => (
            ProblemData::from_expressions(1, ["1", "1"], "0", "0", ["0", "0"], 1.0)?,
            Vec::new(),
        ),
        _ => checked_problem(common)?,
    };
    let mut cfg = StudyConfig {
        eps: common.eps.clone(),
        rho: common.rho as f64,
        dt: common.dt.unwrap_or(data.horizon / 100.0),
        cell_n: common.cell_n,
        macro_samples: args.macro_samples,
        scheme: scheme(common)?,
        tol_lin: common.tol_lin,
        slope_threshold: args.slope_threshold,
        synthetic,
        ..Default::default()
    };
    cfg.corrector.use_cutoff = common.cutoff;
    cfg.check()?;
    let extra = json!({
        "macro_samples": args.macro_samples,
        "slope_threshold": args.slope_threshold,
        "synthetic": synthetic,
    });
    let mut run = Run::new(common, "study", Some(&bytes), extra)?;
    let outcome = if synthetic.is_some() {
        run_study_with(&data, &cfg, None, 0.0)?
    } else {
        let build = effective_build(common, &data, &mut run, args.macro_samples)?;
        run_study_with(&data, &cfg, Some(&build), 0.0)?
    };
    let report = &outcome.report;
    run.write("report.csv", report.to_csv().as_bytes())?;
    run.write("report.json", (report.to_json() + "\n").as_bytes())?;
    for norm in NORMS {
        run.write(&format!("loglog_{norm}.dat"), report.loglog(norm).as_bytes())?;
    }
    run.stage("sweep", outcome.timings.per_eps.iter().sum());
    run.record("per_eps_seconds", &outcome.timings.per_eps);
    run.record("floor_estimate", outcome.floor_estimate);
    run.record("passed", report.passed);
    run.record("flags", &report.flags);
    eprint!("{}", summarize(report));
    run.finish()?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::threshold("study thresholds not met (report written)"))
    }
}

fn summarize(report: &ErrorReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>10} {:>12} {:>12} {:>12} {:>12}", "eps", "l2_u1", "l2_u2", "grad_u1", "grad_u2");
    for r in &report.rows {
        let _ = writeln!(s, "{:>10.6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}", r.epsilon, r.l2[0], r.l2[1], r.grad[0], r.grad[1]);
    }
    for (name, fit) in &report.fits {
        match fit.slope() {
            Some(v) => {
                let _ = writeln!(s, "slope {name}: {v:.4}");
            }
            None => {
                let _ = writeln!(s, "slope {name}: exact");
            }
        }
    }
    for flag in &report.flags {
        let _ = writeln!(s, "flag: {flag}");
    }
    for c in &report.checks {
        let _ = writeln!(s, "{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    s
}

pub fn report(args: &CommonArgs) -> Result<(), Failure> {
    let path = args.out.join("study").join("report.json");
    if !path.is_file() {
        return Err(Failure::validation(format!("file not found: {}", path.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| Failure::from(Error::io(&path, e)))?;
    let report = ErrorReport::from_json(&text)?;
    let mut run = Run::new(args, "report", Some(text.as_bytes()), Value::Null)?;
    let summary = summarize(&report);
    print!("{summary}");
    run.write("summary.txt", summary.as_bytes())?;
    run.record("passed", report.passed);
    run.finish()?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::threshold("study did not meet its thresholds"))
    }
}
