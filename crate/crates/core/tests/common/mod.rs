//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualhom::coeffs::ProblemData;

/// `c0 + sum a sin(2 pi m.y) + b cos(2 pi m.y)` with up to `modes` random
/// nonzero wave vectors; `c0 = 0` gives a zero-mean field.
fn trig_series(rng: &mut ChaCha8Rng, dim: usize, modes: usize, amplitude: f64, c0: f64) -> String {
    let mut s = format!("{c0:?}");
    for _ in 0..modes {
        let m1: i32 = rng.random_range(-2..=2);
        let m2: i32 = if dim == 2 { rng.random_range(-2..=2) } else { 0 };
        let (m1, m2) = if m1 == 0 && m2 == 0 { (1, 0) } else { (m1, m2) };
        let arg = if dim == 2 {
            format!("2*pi*(({m1:?})*y1 + ({m2:?})*y2)")
        } else {
            format!("2*pi*({m1:?})*y1")
        };
        let a = rng.random_range(-1.0..1.0) * amplitude / (2 * modes) as f64;
        let b = rng.random_range(-1.0..1.0) * amplitude / (2 * modes) as f64;
        s.push_str(&format!(" + ({a:?})*sin({arg}) + ({b:?})*cos({arg})"));
    }
    s
}

/// Seeded draw: zero-mean trigonometric exchange and conductivities with
/// values in `[0.5, 2]`.
pub fn random_exchange_problem(seed: u64, dim: usize) -> ProblemData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k1 = trig_series(&mut rng, dim, 2, 0.7, 1.25);
    let k2 = trig_series(&mut rng, dim, 2, 0.7, 1.25);
    let q = trig_series(&mut rng, dim, 3, 1.0, 0.0);
    ProblemData::from_expressions(dim, [&k1, &k2], &q, "1", ["0", "0"], 1.0).unwrap()
}

pub const STANDARD_KAPPA: &str = "1 + 0.5*sin(2*pi*y1)";
pub const STANDARD_EXCHANGE: &str = "sin(2*pi*y1)";

/// The one-dimensional rate-study problem.
pub fn standard_problem() -> ProblemData {
    ProblemData::from_expressions(1, [STANDARD_KAPPA, STANDARD_KAPPA], STANDARD_EXCHANGE, "1", ["0", "0"], 0.1).unwrap()
}
