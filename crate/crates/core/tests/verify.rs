mod common;

use proptest::prelude::*;

use dualhom::cell::CellSolverOptions;
use dualhom::coeffs::{Domain, ProblemData};
use dualhom::effective::{build_effective_field, EffectiveBuild, MacroSampling};
use dualhom::fem::{Scheme, TimeGrid};
use dualhom::finesolve::{solve_fine_on, FineRunSpec};
use dualhom::macrosolve::{solve_homogenized, MacroOptions, TransientField};
use dualhom::mesh::{MacroMesh, UnitCellGrid};
use dualhom::verify::{
    build_corrector_gradient, cutoff_with_gradient, error_norms, fit_rate, run_study, time_weights, CoarseGradient,
    CorrectorSpec, ErrorReport, EvaluationOptions, RateFit, StudyConfig, SyntheticErrors,
};

use common::{standard_problem, STANDARD_KAPPA};

fn effective(data: &ProblemData, n: usize) -> EffectiveBuild {
    build_effective_field(
        data,
        &MacroSampling::auto(data, 4),
        &UnitCellGrid::new(data.dim, n).unwrap(),
        &CellSolverOptions::default(),
    )
    .unwrap()
}

/// A field whose two continua are `f(x)` at every level.
fn static_field(mesh: &MacroMesh, time: TimeGrid, scheme: Scheme, f: impl Fn(&[f64]) -> f64) -> TransientField {
    let g = mesh.grid();
    let values: Vec<f64> = (0..g.n_nodes()).map(|i| f(&g.node_coords(i)[..mesh.dim()])).collect();
    TransientField {
        mesh: mesh.clone(),
        time,
        scheme,
        epsilon: None,
        u: [vec![values.clone(); time.steps + 1], vec![values; time.steps + 1]],
        residuals: vec![0.0; time.steps],
    }
}

#[test]
fn laminate_corrector_gradient_matches_the_derivative_formula() {
    let data = ProblemData::from_expressions(1, [STANDARD_KAPPA, STANDARD_KAPPA], "0", "0", ["0", "0"], 1.0).unwrap();
    let build = effective(&data, 256);
    let eps = 0.125;
    let mesh = MacroMesh::uniform(1, &[0.0], &[1.0], 128).unwrap();
    let time = TimeGrid::new(1.0, 2).unwrap();
    let slope = 0.7;
    let coarse = static_field(&mesh, time, Scheme::ImplicitEuler, |x| slope * x[0]);
    let g = build_corrector_gradient(&coarse, &build.cells, eps, &CorrectorSpec::default(), &mesh, &EvaluationOptions::default()).unwrap();
    let kh = 0.75f64.sqrt();
    for (q, x) in g.points.iter().enumerate() {
        let y = (x[0] / eps).fract();
        let kappa = 1.0 + 0.5 * (2.0 * std::f64::consts::PI * y).sin();
        let expected = (1.0 + kh / kappa - 1.0) * slope;
        for k in 0..2 {
            assert!((g.values[k][1][q][0] - expected).abs() < 2e-3 * slope, "x = {}", x[0]);
        }
    }
}

#[test]
fn y_independent_data_gives_the_plain_gradient() {
    let data = ProblemData::from_expressions(2, ["1 + x1", "2"], "0", "0", ["0", "0"], 1.0).unwrap();
    let build = effective(&data, 8);
    let mesh = MacroMesh::uniform(2, &[0.0, 0.0], &[1.0, 1.0], 8).unwrap();
    let time = TimeGrid::new(1.0, 1).unwrap();
    let coarse = static_field(&mesh, time, Scheme::ImplicitEuler, |x| x[0] * x[0] + x[1]);
    let g = build_corrector_gradient(&coarse, &build.cells, 0.1, &CorrectorSpec::default(), &mesh, &EvaluationOptions::default()).unwrap();
    for (q, x) in g.points.iter().enumerate() {
        let plain = coarse.gradient(0, 1, &x[..2]);
        for k in 0..2 {
            for a in 0..2 {
                assert!((g.values[k][1][q][a] - plain[a]).abs() <= 1e-14);
            }
        }
    }
    // identical fine and coarse fields: every distance vanishes
    let row = error_norms(&coarse, &g).unwrap();
    assert_eq!(row.l2, [0.0; 2]);
    assert!(row.grad.iter().all(|&v| v <= 1e-14));
    assert!(row.energy[0] > 0.0);
}

#[test]
fn constant_offset_has_known_norm() {
    let data = ProblemData::from_expressions(1, ["1", "1"], "0", "0", ["0", "0"], 1.0).unwrap();
    let build = effective(&data, 8);
    let mesh = MacroMesh::uniform(1, &[0.0], &[2.0], 16).unwrap();
    for scheme in [Scheme::ImplicitEuler, Scheme::CrankNicolson] {
        let time = TimeGrid::new(0.5, 7).unwrap();
        let coarse = static_field(&mesh, time, scheme, |x| (3.0 * x[0]).sin());
        let fine = static_field(&mesh, time, scheme, |x| (3.0 * x[0]).sin() + 0.25);
        let g = build_corrector_gradient(&coarse, &build.cells, 0.1, &CorrectorSpec::default(), &mesh, &EvaluationOptions::default()).unwrap();
        let row = error_norms(&fine, &g).unwrap();
        let expected = 0.25 * (0.5f64 * 2.0).sqrt();
        for k in 0..2 {
            assert!((row.l2[k] - expected).abs() < 1e-13, "{scheme}");
            assert!(row.grad[k] < 1e-13);
        }
    }
}

#[test]
fn mismatched_inputs_are_refused() {
    let data = ProblemData::from_expressions(1, ["1", "1"], "0", "0", ["0", "0"], 1.0).unwrap();
    let build = effective(&data, 8);
    let a = MacroMesh::uniform(1, &[0.0], &[1.0], 8).unwrap();
    let b = MacroMesh::uniform(1, &[0.0], &[1.0], 16).unwrap();
    let time = TimeGrid::new(1.0, 2).unwrap();
    let coarse = static_field(&a, time, Scheme::ImplicitEuler, |_| 0.0);
    let g = build_corrector_gradient(&coarse, &build.cells, 0.1, &CorrectorSpec::default(), &a, &EvaluationOptions::default()).unwrap();
    assert!(error_norms(&static_field(&b, time, Scheme::ImplicitEuler, |_| 0.0), &g).is_err());
    let other_time = TimeGrid::new(1.0, 3).unwrap();
    assert!(error_norms(&static_field(&a, other_time, Scheme::ImplicitEuler, |_| 0.0), &g).is_err());
    let shifted = MacroMesh::uniform(1, &[0.5], &[1.0], 8).unwrap();
    assert!(build_corrector_gradient(&coarse, &build.cells, 0.1, &CorrectorSpec::default(), &shifted, &EvaluationOptions::default()).is_err());
}

#[test]
fn standard_study_passes_its_checks() {
    let data = standard_problem();
    let outcome = run_study(&data, &StudyConfig { cell_n: 128, ..Default::default() }).unwrap();
    let report = &outcome.report;
    assert!(report.passed, "{:#?}", report.checks);
    assert_eq!(report.rows.len(), 4);
    assert!(report.rows.windows(2).all(|w| w[0].epsilon > w[1].epsilon));
    for k in 0..2 {
        assert!(report.rows.windows(2).all(|w| w[1].l2[k] < w[0].l2[k]));
        assert!(report.rows.iter().all(|r| r.l2[k] >= 0.0 && r.grad[k] >= 0.0));
    }
    assert!(report.flags.is_empty());
    assert!(outcome.floor_estimate.is_some());
    let back = ErrorReport::from_json(&report.to_json()).unwrap();
    assert_eq!(&back, report);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn cutoff_changes_the_error_by_order_root_eps() {
    let data = standard_problem();
    let run = |use_cutoff| {
        let cfg = StudyConfig {
            cell_n: 128,
            corrector: CorrectorSpec { use_cutoff },
            ..Default::default()
        };
        run_study(&data, &cfg).unwrap().report
    };
    let plain = run(false);
    let cut = run(true);
    for k in 0..2 {
        let scaled: Vec<f64> = plain
            .rows
            .iter()
            .zip(&cut.rows)
            .map(|(a, b)| (a.grad[k] - b.grad[k]).abs() / a.epsilon.sqrt())
            .collect();
        let first = scaled[0];
        assert!(first > 0.0);
        assert!(scaled.iter().all(|&s| s <= 2.0 * first), "{scaled:?}");
    }
}

#[test]
fn zero_oscillation_error_is_eps_independent() {
    let data = ProblemData::from_expressions(1, ["1 + 0.5*x1", "2"], "0", "1", ["0", "0"], 0.1).unwrap();
    let build = effective(&data, 8);
    let time = TimeGrid::new(0.1, 20).unwrap();
    let coarse_mesh = MacroMesh::uniform(1, &[0.0], &[1.0], 8).unwrap();
    let coarse = solve_homogenized(&build.field, &data, &coarse_mesh, time, &MacroOptions::default()).unwrap();
    let errs: Vec<f64> = [0.25, 0.125, 0.0625]
        .iter()
        .map(|&eps| {
            let spec = FineRunSpec::new(eps, time);
            let mesh = spec.mesh(&data).unwrap();
            let fine = solve_fine_on(&data, &spec, &mesh).unwrap();
            let opts = EvaluationOptions { coarse_gradient: Some(CoarseGradient::Elementwise), ..Default::default() };
            let g = build_corrector_gradient(&coarse, &build.cells, eps, &CorrectorSpec::default(), &mesh, &opts).unwrap();
            error_norms(&fine, &g).unwrap().grad[0]
        })
        .collect();
    let (lo, hi) = errs.iter().fold((f64::MAX, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    assert!(hi <= 1.1 * lo, "{errs:?}");
}

#[test]
fn degenerate_study_is_flagged() {
    let data = ProblemData::from_expressions(1, ["1", "2"], "0", "1", ["0", "0"], 0.1).unwrap();
    let outcome = run_study(&data, &StudyConfig { dt: 1e-2, ..Default::default() }).unwrap();
    let report = outcome.report;
    assert!(report.passed);
    assert!(report.flags.iter().any(|f| f == "degenerate: no oscillation"));
    assert!(report.fits.values().all(|f| *f == RateFit::Exact));
    for norm in ["l2_u1", "grad_u1"] {
        assert!(report.check(&format!("eps-independent {norm}")).unwrap().passed);
    }
}

#[test]
fn study_configuration_is_checked() {
    let data = standard_problem();
    for eps in [vec![0.1, 0.2, 0.05], vec![0.1, 0.05], vec![1.5, 0.5, 0.25]] {
        assert!(run_study(&data, &StudyConfig { eps, ..Default::default() }).is_err());
    }
}

#[test]
fn time_weights_match_the_schemes() {
    let time = TimeGrid::new(0.3, 6).unwrap();
    for scheme in [Scheme::ImplicitEuler, Scheme::CrankNicolson] {
        let w = time_weights(&time, scheme);
        assert!((w.iter().sum::<f64>() - 0.3).abs() < 1e-15);
    }
    assert_eq!(time_weights(&time, Scheme::ImplicitEuler)[0], 0.0);
}

#[test]
fn rate_fit_edge_cases() {
    assert!(fit_rate(&[(0.1, 1.0), (0.05, 0.5)]).is_err());
    assert_eq!(fit_rate(&[(0.1, 0.0), (0.05, 0.0), (0.02, 0.0)]).unwrap(), RateFit::Exact);
    assert!(fit_rate(&[(0.1, 1.0), (0.05, 0.0), (0.02, 0.3)]).is_err());
    assert!(fit_rate(&[(0.1, 1.0), (0.1, 0.5), (0.1, 0.3)]).is_err());
}

proptest! {
    #[test]
    fn power_laws_fit_exactly(c in 1e-3f64..1e3, r in 0.1f64..3.0) {
        let pts: Vec<(f64, f64)> = [0.125f64, 0.0625, 0.03125, 0.015625].iter().map(|&e| (e, c * e.powf(r))).collect();
        match fit_rate(&pts).unwrap() {
            RateFit::Fitted(f) => {
                prop_assert!((f.slope - r).abs() < 1e-10);
                prop_assert!(f.band[0] <= r + 1e-10 && f.band[1] >= r - 1e-10);
                prop_assert!(f.residual < 1e-10);
            }
            RateFit::Exact => prop_assert!(false),
        }
    }

    #[test]
    fn synthetic_study_reports_the_injected_rate(r in 0.05f64..2.0) {
        let cfg = StudyConfig { synthetic: Some(SyntheticErrors { scale: 2.0, rate: r }), ..Default::default() };
        let report = run_study(&standard_problem(), &cfg).unwrap().report;
        prop_assert!((report.fits["grad_u1"].slope().unwrap() - r).abs() < 1e-10);
        prop_assert_eq!(report.passed, r >= 0.4);
    }

    #[test]
    fn cutoff_profile(x in 0.0f64..1.0, y in 0.0f64..1.0, eps in 0.01f64..0.2) {
        let domain = Domain::unit(2);
        let (tau, grad) = cutoff_with_gradient(&[x, y], &domain, eps);
        let d = x.min(1.0 - x).min(y).min(1.0 - y);
        prop_assert!((0.0..=1.0).contains(&tau));
        if d <= eps { prop_assert_eq!(tau, 0.0); }
        if d >= 2.0 * eps { prop_assert_eq!(tau, 1.0); }
        prop_assert!(grad[0].hypot(grad[1]) <= 1.5 / eps + 1e-12);
    }
}
