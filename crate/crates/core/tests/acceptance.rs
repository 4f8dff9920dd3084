//! Acceptance gate: one line per criterion, non-zero exit if any fails.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use dualhom::cell::{sample_at_quadrature, solve_cell_problems, solve_exchange_m, CellSolverOptions, CellSolutionSet};
use dualhom::coeffs::ProblemData;
use dualhom::effective::{exchange_energy, EffectivePointData, YIndependentCoefficients};
use dualhom::fem::{interpolate_pair, Scheme, TimeGrid};
use dualhom::finesolve::{assemble_fine_operators, solve_fine, solve_fine_on, solve_single_field, FineRunSpec};
use dualhom::macrosolve::manufactured::{spatial_errors, temporal_errors, Manufactured};
use dualhom::macrosolve::{solve_homogenized, MacroData, MacroOptions};
use dualhom::mesh::UnitCellGrid;
use dualhom::verify::{fit_rate, run_study, StudyConfig};
use dualhom::Result;

use common::{random_exchange_problem, standard_problem, STANDARD_KAPPA};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn tight() -> CellSolverOptions {
    CellSolverOptions {
        tol_lin: 1e-12,
        ..Default::default()
    }
}

fn cells(data: &ProblemData, n: usize) -> Result<(EffectivePointData, CellSolutionSet)> {
    let grid = UnitCellGrid::new(data.dim, n)?;
    let set = solve_cell_problems(data, &vec![0.5; data.dim], &grid, &tight())?;
    Ok((EffectivePointData::from_cells(&set), set))
}

fn order(points: &[(f64, f64)]) -> Result<f64> {
    Ok(fit_rate(points)?.slope().unwrap_or(f64::INFINITY))
}

fn cell_oracle() -> Result<Verdict> {
    let start = Instant::now();
    let mut errs = Vec::new();
    for n in [16usize, 32, 64, 128] {
        let grid = UnitCellGrid::new(2, n)?;
        let k = sample_at_quadrature(&grid, |_| Ok(1.0))?;
        let q = sample_at_quadrature(&grid, |y| Ok((2.0 * PI * y[0]).sin()))?;
        let m = solve_exchange_m(&k, &q, &grid, &tight())?.field;
        let g = grid.grid();
        let e = (0..grid.n_nodes())
            .map(|i| (m.values[i] - (2.0 * PI * g.node_coords(i)[0]).sin() / (4.0 * PI * PI)).abs())
            .fold(0.0, f64::max);
        errs.push((1.0 / n as f64, e));
    }
    let seconds = start.elapsed().as_secs_f64();
    let p = order(&errs)?;
    let listed: Vec<String> = errs.iter().map(|e| format!("{:.3e}", e.1)).collect();
    Ok(verdict(
        (p - 2.0).abs() <= 0.2 && seconds < 10.0,
        format!("order {p:.3} (want 2.0 +- 0.2), errors [{}], {seconds:.2} s", listed.join(", ")),
    ))
}

fn laminate_tensor() -> Result<Verdict> {
    let data = ProblemData::from_expressions(2, [STANDARD_KAPPA, STANDARD_KAPPA], "0", "0", ["0", "0"], 1.0)?;
    let (p, _) = cells(&data, 128)?;
    let expected = [[0.75f64.sqrt(), 0.0], [0.0, 1.0]];
    let mut deviation = 0.0f64;
    let mut asymmetry = 0.0f64;
    for k in 0..2 {
        let m = p.kappa_star[k];
        for i in 0..2 {
            for j in 0..2 {
                deviation = deviation.max((m[i][j] - expected[i][j]).abs());
            }
        }
        asymmetry = asymmetry.max((m[0][1] - m[1][0]).abs());
    }
    Ok(verdict(
        deviation < 1e-3 && asymmetry < 1e-10,
        format!(
            "kappa* = [[{:.6}, {:.1e}], [{:.1e}, {:.6}]], max deviation {deviation:.2e}, asymmetry {asymmetry:.1e}",
            p.kappa_star[0][0][0], p.kappa_star[0][0][1], p.kappa_star[0][1][0], p.kappa_star[0][1][1]
        ),
    ))
}

/// Seeded draws shared by the sign and energy-identity criteria.
fn draws() -> Result<Vec<(f64, f64)>> {
    (0..20)
        .map(|seed| {
            let (p, set) = cells(&random_exchange_problem(seed, 2), 32)?;
            let energy = (0..2).map(|k| exchange_energy(&set.kappa[k], &set.m_corr[k])).sum();
            Ok((p.beta, energy))
        })
        .collect()
}

fn exchange_sign(draws: &[(f64, f64)]) -> Result<Verdict> {
    let data = ProblemData::from_expressions(2, ["1", "1"], "sin(2*pi*y1)", "0", ["0", "0"], 1.0)?;
    let beta = cells(&data, 128)?.0.beta;
    let exact = 1.0 / (4.0 * PI * PI);
    let smallest = draws.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let signed = draws.iter().all(|&(b, _)| b >= -1e-10 && -b <= 0.0);
    Ok(verdict(
        (beta - exact).abs() <= 1e-4 && signed,
        format!(
            "beta {beta:.6} vs {exact:.6} (diff {:.1e}); smallest of {} random beta {smallest:.4e}",
            (beta - exact).abs(),
            draws.len()
        ),
    ))
}

fn energy_identity(draws: &[(f64, f64)]) -> Verdict {
    let worst = draws
        .iter()
        .map(|&(b, e)| (b - e).abs() / b.max(1.0))
        .fold(0.0, f64::max);
    verdict(worst <= 1e-8, format!("worst |beta - energy| / max(1, beta) = {worst:.2e} over {} draws", draws.len()))
}

fn manufactured_orders() -> Result<Verdict> {
    let start = Instant::now();
    let man = Manufactured::standard(2);
    let spatial = order(&spatial_errors(&man, &[8, 16, 32], TimeGrid::new(0.5, 100)?, Scheme::CrankNicolson)?)?;
    let ie = order(&temporal_errors(&man, 8, 1.0, &[10, 20, 40], 2560, Scheme::ImplicitEuler)?)?;
    let cn = order(&temporal_errors(&man, 8, 1.0, &[10, 20, 40], 2560, Scheme::CrankNicolson)?)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(verdict(
        (spatial - 2.0).abs() <= 0.2 && (ie - 1.0).abs() <= 0.2 && (cn - 2.0).abs() <= 0.3 && seconds < 60.0,
        format!("spatial {spatial:.3}, implicit Euler {ie:.3}, Crank-Nicolson {cn:.3}, {seconds:.2} s"),
    ))
}

fn rate_study() -> Result<(Verdict, Verdict)> {
    let start = Instant::now();
    let report = run_study(&standard_problem(), &StudyConfig::default())?.report;
    let seconds = start.elapsed().as_secs_f64();
    let slopes: Vec<f64> = ["grad_u1", "grad_u2"]
        .iter()
        .map(|n| report.fits[*n].slope().unwrap_or(f64::INFINITY))
        .collect();
    let monotone = (0..2).all(|k| report.rows.windows(2).all(|w| w[1].l2[k] < w[0].l2[k]));
    let l2: Vec<String> = report.rows.iter().map(|r| format!("{:.3e}", r.l2[0])).collect();
    let rates = verdict(
        slopes.iter().all(|&s| s >= 0.4) && monotone && seconds < 300.0,
        format!(
            "gradient slopes {:.3} / {:.3}, distance [{}] monotone {monotone}, {seconds:.1} s",
            slopes[0],
            slopes[1],
            l2.join(", ")
        ),
    );
    let sums: Vec<f64> = report.rows.iter().map(|r| r.energy[0] + r.energy[1]).collect();
    let worst = sums.iter().map(|s| (s / sums[0]).max(sums[0] / s)).fold(1.0, f64::max);
    let listed: Vec<String> = sums.iter().map(|s| format!("{s:.5}")).collect();
    let bound = verdict(worst <= 2.0, format!("energy sums [{}], worst ratio {worst:.4}", listed.join(", ")));
    Ok((rates, bound))
}

fn degenerate_suite() -> Result<Verdict> {
    let time = TimeGrid::new(0.1, 20)?;
    let run = |eps: f64, scheme: Scheme| FineRunSpec {
        scheme,
        ..FineRunSpec::new(eps, time)
    };

    // without exchange the two continua are independent scalar problems
    let data = ProblemData::from_expressions(
        2,
        ["1 + 0.5*sin(2*pi*y1)*cos(2*pi*y2)", "2 + sin(2*pi*(y1 - y2))"],
        "0",
        "1 + x1",
        ["sin(pi*x1)*sin(pi*x2)", "0"],
        0.1,
    )?;
    let s = run(0.5, Scheme::ImplicitEuler);
    let mesh = s.mesh(&data)?;
    let fine = solve_fine_on(&data, &s, &mesh)?;
    let ops = assemble_fine_operators(&data, s.epsilon, &mesh)?;
    let initial = interpolate_pair(&mesh, |x| data.initial(x))?;
    let mut decoupled = ops.is_decoupled();
    for k in 0..2 {
        let init: Vec<f64> = initial.iter().skip(k).step_by(2).copied().collect();
        let (states, _) =
            solve_single_field(&mesh, &ops.mass[k], &ops.stiffness[k], |t, x| Ok(data.forcing(t, x)?[k]), init, time, s.tol_lin)?;
        decoupled &= states.iter().enumerate().all(|(n, st)| fine.u[k][n] == mesh.expand(st));
    }

    // constant in y: the fine and homogenized solvers share one discrete problem
    let data = ProblemData::from_expressions(2, ["1 + 0.5*x1", "2 + x2*x1"], "0", "sin(pi*x1) + t", ["x1*(1 - x1)*x2", "0"], 0.1)?;
    let coeffs = YIndependentCoefficients::new(&data)?;
    let mut coincidence = 0.0f64;
    for scheme in [Scheme::ImplicitEuler, Scheme::CrankNicolson] {
        let s = run(0.5, scheme);
        let mesh = s.mesh(&data)?;
        let fine = solve_fine_on(&data, &s, &mesh)?;
        let homog = solve_homogenized(&coeffs, &data, &mesh, time, &MacroOptions { scheme, ..Default::default() })?;
        for k in 0..2 {
            for n in 0..fine.n_levels() {
                for (a, b) in fine.u[k][n].iter().zip(&homog.u[k][n]) {
                    coincidence = coincidence.max((a - b).abs());
                }
            }
        }
    }

    let mut symmetric = 0.0f64;
    for scheme in [Scheme::ImplicitEuler, Scheme::CrankNicolson] {
        symmetric = symmetric.max(solve_fine(&standard_problem(), &run(0.125, scheme))?.max_difference());
    }

    let zero = ProblemData::from_expressions(1, [STANDARD_KAPPA, "3"], "cos(2*pi*y1)", "0", ["0", "0"], 0.1)?;
    let zero_max = solve_fine(&zero, &run(0.125, Scheme::CrankNicolson))?.max_abs();

    Ok(verdict(
        decoupled && coincidence <= 1e-10 && symmetric <= 1e-11 && zero_max == 0.0,
        format!(
            "decoupled bit-identically {decoupled}, fine vs macro {coincidence:.1e}, |u1 - u2| {symmetric:.1e}, zero data max {zero_max:e}"
        ),
    ))
}

type Outcome = std::result::Result<Verdict, String>;

fn report(id: usize, name: &str, outcome: Outcome) -> bool {
    let v = outcome.unwrap_or_else(|e| verdict(false, format!("error: {e}")));
    println!("{} [{id}] {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    v.passed
}

fn main() -> ExitCode {
    let text = |e: dualhom::Error| e.to_string();
    let mut passed = report(1, "cell-problem oracle order", cell_oracle().map_err(text));
    passed &= report(2, "laminate effective tensor", laminate_tensor().map_err(text));
    let sampled = draws().map_err(text);
    let sign = sampled.clone().and_then(|d| exchange_sign(&d).map_err(text));
    passed &= report(3, "exchange coefficient value and sign", sign);
    passed &= report(4, "exchange energy identity", sampled.map(|d| energy_identity(&d)));
    passed &= report(5, "manufactured solution orders", manufactured_orders().map_err(text));
    let (rates, bound) = match rate_study() {
        Ok((a, b)) => (Ok(a), Ok(b)),
        Err(e) => (Err(e.to_string()), Err(e.to_string())),
    };
    passed &= report(6, "corrector rate study", rates);
    passed &= report(7, "uniform energy bound", bound);
    passed &= report(8, "degenerate inputs", degenerate_suite().map_err(text));
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
