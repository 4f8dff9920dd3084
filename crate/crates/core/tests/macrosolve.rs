use dualhom::coeffs::ProblemData;
use dualhom::effective::{EffectivePointData, YIndependentCoefficients};
use dualhom::fem::{Scheme, TimeGrid};
use dualhom::macrosolve::manufactured::{spatial_errors, temporal_errors, Manufactured};
use dualhom::macrosolve::{solve_homogenized, MacroOptions};
use dualhom::mesh::MacroMesh;

fn slope(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn manufactured_spatial_order_is_two() {
    let man = Manufactured::standard(2);
    let errs = spatial_errors(&man, &[8, 16, 32], TimeGrid::new(0.5, 100).unwrap(), Scheme::CrankNicolson).unwrap();
    let s = slope(&errs);
    println!("spatial {errs:?} slope {s}");
    assert!((s - 2.0).abs() <= 0.2, "spatial order {s}");
}

#[test]
fn manufactured_temporal_orders() {
    let man = Manufactured::standard(2);
    let ie = temporal_errors(&man, 8, 1.0, &[10, 20, 40], 2560, Scheme::ImplicitEuler).unwrap();
    let cn = temporal_errors(&man, 8, 1.0, &[10, 20, 40], 2560, Scheme::CrankNicolson).unwrap();
    let (si, sc) = (slope(&ie), slope(&cn));
    println!("ie {ie:?} {si}\ncn {cn:?} {sc}");
    assert!((si - 1.0).abs() <= 0.2, "implicit Euler order {si}");
    assert!((sc - 2.0).abs() <= 0.3, "Crank-Nicolson order {sc}");
}

#[test]
fn zero_data_gives_exact_zeros() {
    let data = ProblemData::from_expressions(2, ["1", "2"], "0", "0", ["0", "0"], 0.2).unwrap();
    let coeffs = YIndependentCoefficients::new(&data).unwrap();
    let mesh = MacroMesh::uniform(2, &[0.0, 0.0], &[1.0, 1.0], 8).unwrap();
    let f = solve_homogenized(&coeffs, &data, &mesh, TimeGrid::new(0.2, 5).unwrap(), &MacroOptions::default()).unwrap();
    assert_eq!(f.n_levels(), 6);
    assert_eq!(f.max_abs(), 0.0);
}

#[test]
fn symmetric_data_gives_equal_fields() {
    let k = [[1.3, 0.2], [0.2, 0.9]];
    let p = EffectivePointData::uniform(2, [k, k], [[0.1, -0.05]; 2], [[0.03, 0.02]; 2], 0.4, [1.5; 2]);
    let data = ProblemData::from_expressions(2, ["1", "1"], "0", "1 + x1", ["sin(pi*x1)*x2*(1-x2)"; 2], 0.5).unwrap();
    let mesh = MacroMesh::uniform(2, &[0.0, 0.0], &[1.0, 1.0], 12).unwrap();
    for scheme in [Scheme::ImplicitEuler, Scheme::CrankNicolson] {
        let f = solve_homogenized(&p, &data, &mesh, TimeGrid::new(0.5, 20).unwrap(), &MacroOptions { scheme, ..Default::default() }).unwrap();
        assert!(f.max_difference() <= 1e-11, "{}", f.max_difference());
        assert!(f.max_abs() > 1e-2);
    }
}

#[test]
fn pure_diffusion_energy_is_non_increasing() {
    let eye = [[1.0, 0.0], [0.0, 1.0]];
    let p = EffectivePointData::uniform(2, [eye, [[0.5, 0.0], [0.0, 2.0]]], [[0.0; 2]; 2], [[0.0; 2]; 2], 0.0, [1.0, 3.0]);
    let data = ProblemData::from_expressions(2, ["1", "1"], "0", "0", ["x1*(1-x1)*x2", "sin(3*pi*x1)*sin(pi*x2)"], 1.0).unwrap();
    let mesh = MacroMesh::uniform(2, &[0.0, 0.0], &[1.0, 1.0], 10).unwrap();
    let f = solve_homogenized(&p, &data, &mesh, TimeGrid::new(1.0, 40).unwrap(), &MacroOptions::default()).unwrap();
    let energy = |n: usize| 0.5 * (f.norms_sq(&f.u[0][n]).0 + 3.0 * f.norms_sq(&f.u[1][n]).0);
    for n in 1..f.n_levels() {
        assert!(energy(n) <= energy(n - 1) * (1.0 + 1e-12));
    }
}

#[test]
fn exchange_term_amplifies_the_difference() {
    // -beta (u_k - u_j) with beta > 0 feeds u_1 - u_2 at rate 2 beta / <C>
    let eye = [[1.0, 0.0], [0.0, 1.0]];
    let zero = [[0.0; 2]; 2];
    let data = ProblemData::from_expressions(2, ["1", "1"], "0", "0", ["sin(pi*x1)*sin(pi*x2)", "0.5*sin(pi*x1)*sin(pi*x2)"], 0.5).unwrap();
    let mesh = MacroMesh::uniform(2, &[0.0, 0.0], &[1.0, 1.0], 12).unwrap();
    let time = TimeGrid::new(0.5, 100).unwrap();
    let ratio = |beta: f64| {
        let p = EffectivePointData::uniform(2, [eye, eye], zero, zero, beta, [1.0; 2]);
        let opts = MacroOptions { scheme: Scheme::CrankNicolson, ..Default::default() };
        let f = solve_homogenized(&p, &data, &mesh, time, &opts).unwrap();
        (0..f.n_levels())
            .map(|n| {
                let d: Vec<f64> = f.u[0][n].iter().zip(&f.u[1][n]).map(|(a, b)| a - b).collect();
                let s: Vec<f64> = f.u[0][n].iter().zip(&f.u[1][n]).map(|(a, b)| a + b).collect();
                (f.norms_sq(&d).0 / f.norms_sq(&s).0).sqrt()
            })
            .collect::<Vec<_>>()
    };
    let neutral = ratio(0.0);
    let coupled = ratio(2.0);
    assert!(neutral.windows(2).all(|w| (w[1] - w[0]).abs() < 1e-12));
    assert!(coupled.windows(2).all(|w| w[1] > w[0]));
    let growth = coupled.last().unwrap() / coupled[0];
    // the sum mode is untouched by beta; the difference grows like e^{2 beta t}
    assert!((growth - (2.0 * 2.0 * 0.5f64).exp()).abs() / growth < 0.02, "{growth}");
}
