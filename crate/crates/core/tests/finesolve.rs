mod common;

use dualhom::coeffs::ProblemData;
use dualhom::effective::YIndependentCoefficients;
use dualhom::fem::{interpolate_pair, Scheme, TimeGrid};
use dualhom::finesolve::{assemble_fine_operators, solve_fine, solve_fine_on, solve_single_field, FineRunSpec};
use dualhom::macrosolve::{integrate, solve_homogenized, MacroData, MacroOptions};
use dualhom::mesh::MacroMesh;
use dualhom::Error;

use common::standard_problem;

fn spec(eps: f64, steps: usize, scheme: Scheme) -> FineRunSpec {
    FineRunSpec {
        scheme,
        ..FineRunSpec::new(eps, TimeGrid::new(0.1, steps).unwrap())
    }
}

#[test]
fn mesh_resolves_eps() {
    let data = standard_problem();
    for eps in [0.125, 0.1, 0.03] {
        let s = spec(eps, 10, Scheme::ImplicitEuler);
        let mesh = s.mesh(&data).unwrap();
        assert!(mesh.max_h() <= eps / 16.0 * (1.0 + 1e-12));
        assert!(mesh.max_h() > eps / 16.0 * 0.9);
    }
    let coarse = MacroMesh::uniform(1, &[0.0], &[1.0], 64).unwrap();
    assert!(matches!(solve_fine_on(&data, &spec(0.125, 10, Scheme::ImplicitEuler), &coarse), Err(Error::Resolution(_))));
    for eps in [0.0, 1.0, -0.5] {
        assert!(spec(eps, 10, Scheme::ImplicitEuler).check().is_err());
    }
}

#[test]
fn without_exchange_the_continua_decouple_bit_identically() {
    let data = ProblemData::from_expressions(
        2,
        ["1 + 0.5*sin(2*pi*y1)*cos(2*pi*y2)", "2 + sin(2*pi*(y1 - y2))"],
        "0",
        "1 + x1",
        ["sin(pi*x1)*sin(pi*x2)", "0"],
        0.1,
    )
    .unwrap();
    let s = spec(0.5, 10, Scheme::ImplicitEuler);
    let mesh = s.mesh(&data).unwrap();
    let fine = solve_fine_on(&data, &s, &mesh).unwrap();
    let ops = assemble_fine_operators(&data, s.epsilon, &mesh).unwrap();
    assert!(ops.is_decoupled());
    let initial = interpolate_pair(&mesh, |x| data.initial(x)).unwrap();
    for k in 0..2 {
        let init: Vec<f64> = initial.iter().skip(k).step_by(2).copied().collect();
        let (states, _) = solve_single_field(&mesh, &ops.mass[k], &ops.stiffness[k], |t, x| Ok(data.forcing(t, x)?[k]), init, s.time, s.tol_lin).unwrap();
        for (n, state) in states.iter().enumerate() {
            assert_eq!(&fine.u[k][n], &mesh.expand(state), "continuum {k}, level {n}");
        }
    }
    // the coupled two-field path agrees to rounding
    let (mass, stiffness) = ops.interleaved();
    let coupled = integrate(&mesh, &mass, &stiffness, &data, s.time, Scheme::ImplicitEuler, s.tol_lin).unwrap();
    for k in 0..2 {
        for n in 0..coupled.n_levels() {
            for (a, b) in coupled.u[k][n].iter().zip(&fine.u[k][n]) {
                assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
            }
        }
    }
}

#[test]
fn coupling_blocks_are_transposed_negatives() {
    let data = standard_problem();
    let s = spec(0.25, 1, Scheme::ImplicitEuler);
    let mesh = s.mesh(&data).unwrap();
    let ops = assemble_fine_operators(&data, s.epsilon, &mesh).unwrap();
    let [b11, b12, b21, b22] = ops.coupling_blocks();
    assert!(b12.add(1.0, &b21.transpose(), -1.0).max_abs() == 0.0);
    assert!(b11.add(1.0, &b12, 1.0).max_abs() == 0.0);
    assert!(b22.add(1.0, &b21, 1.0).max_abs() == 0.0);
    assert!(b12.asymmetry() == 0.0);
    // tested with (phi, phi) the two exchange contributions cancel
    let (_, stiff) = ops.interleaved();
    let (_, plain) = dualhom::finesolve::FineOperators {
        exchange: ops.exchange.add(0.0, &ops.exchange, 0.0),
        ..ops.clone()
    }
    .interleaved();
    let diff = stiff.add(1.0, &plain, -1.0);
    for s in diff.row_sums() {
        assert!(s.abs() < 1e-12);
    }
    assert!(ops.exchange.max_abs() > 0.0);
}

#[test]
fn y_independent_data_matches_the_macro_solver() {
    let data = ProblemData::from_expressions(
        2,
        ["1 + 0.5*x1", "2 + x2*x1"],
        "0",
        "sin(pi*x1) + t",
        ["x1*(1 - x1)*x2", "0"],
        0.2,
    )
    .unwrap();
    let coeffs = YIndependentCoefficients::new(&data).unwrap();
    for scheme in [Scheme::ImplicitEuler, Scheme::CrankNicolson] {
        let s = FineRunSpec {
            scheme,
            ..FineRunSpec::new(0.5, TimeGrid::new(0.2, 20).unwrap())
        };
        let mesh = s.mesh(&data).unwrap();
        let fine = solve_fine_on(&data, &s, &mesh).unwrap();
        let homog = solve_homogenized(&coeffs, &data, &mesh, s.time, &MacroOptions { scheme, ..Default::default() }).unwrap();
        for k in 0..2 {
            for n in 0..fine.n_levels() {
                for (a, b) in fine.u[k][n].iter().zip(&homog.u[k][n]) {
                    assert!((a - b).abs() <= 1e-10, "{scheme}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn symmetric_data_gives_equal_fields() {
    let data = standard_problem();
    for scheme in [Scheme::ImplicitEuler, Scheme::CrankNicolson] {
        let fine = solve_fine(&data, &spec(0.125, 50, scheme)).unwrap();
        assert!(fine.max_difference() <= 1e-11);
        assert!(fine.max_abs() > 0.05);
    }
}

#[test]
fn zero_data_gives_exact_zeros() {
    let data = ProblemData::from_expressions(1, ["1 + 0.5*sin(2*pi*y1)", "3"], "cos(2*pi*y1)", "0", ["0", "0"], 0.1).unwrap();
    let fine = solve_fine(&data, &spec(0.125, 20, Scheme::CrankNicolson)).unwrap();
    assert_eq!(fine.max_abs(), 0.0);
}

#[test]
fn energy_stays_bounded_across_the_sweep() {
    let data = standard_problem();
    let sums: Vec<f64> = [0.125, 0.0625, 0.03125, 0.015625]
        .iter()
        .map(|&eps| {
            let f = solve_fine(&data, &spec(eps, 100, Scheme::ImplicitEuler)).unwrap();
            f.energy_norm(0) + f.energy_norm(1)
        })
        .collect();
    for s in &sums {
        assert!(*s <= 2.0 * sums[0] && *s >= 0.5 * sums[0], "{sums:?}");
    }
}

#[test]
fn step_residuals_are_below_tolerance() {
    let data = standard_problem();
    let fine = solve_fine(&data, &spec(0.0625, 20, Scheme::CrankNicolson)).unwrap();
    assert_eq!(fine.residuals.len(), 20);
    assert!(fine.residuals.iter().all(|&r| r <= 1e-10));
    let grid = fine.grid();
    for n in 0..fine.n_levels() {
        for k in 0..2 {
            assert_eq!(fine.u[k][n][0], 0.0);
            assert_eq!(fine.u[k][n][grid.n_nodes() - 1], 0.0);
        }
    }
}
