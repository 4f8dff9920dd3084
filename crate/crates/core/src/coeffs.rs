//! Problem data for the two-scale dual-continuum system: coefficient fields
//! of `(x, y)`, the shared source `q(t, x)`, initial data and the domain.
//!
//! A field is either a parsed expression or a sampled grid on `Omega x Y`.
//! Sampled grids interpolate multilinearly, clamping in `x` and wrapping
//! periodically in `y`.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Point};

/// Default zero-mean tolerance for expression fields.
pub const TOL_MEAN_EXPRESSION: f64 = 1e-10;
/// Default zero-mean tolerance for sampled fields.
pub const TOL_MEAN_SAMPLED: f64 = 1e-8;

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn unit(dim: usize) -> Self {
        Domain {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Samples on a tensor lattice over `Omega x Y`. The `x` lattice includes
/// both ends of each axis (a single sample means constant in that axis);
/// the `y` lattice places `ny` samples at `j / ny`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGrid {
    pub dim: usize,
    pub x_res: Vec<usize>,
    pub y_res: Vec<usize>,
    /// Row-major over `(x_1..x_d, y_1..y_d)`, last axis fastest.
    pub values: Vec<f64>,
    pub domain: Domain,
}

impl SampledGrid {
    pub fn new(
        dim: usize,
        x_res: Vec<usize>,
        y_res: Vec<usize>,
        values: Vec<f64>,
        domain: Domain,
    ) -> Result<Self> {
        if x_res.len() != dim || y_res.len() != dim || domain.dim() != dim {
            return Err(Error::Format("sampled grid dimensions are inconsistent".into()));
        }
        if x_res.iter().chain(&y_res).any(|&r| r == 0) {
            return Err(Error::Format("sampled grid resolution must be positive".into()));
        }
        let expected: usize = x_res.iter().chain(&y_res).product();
        if values.len() != expected {
            return Err(Error::Format(format!(
                "sampled grid expects {expected} values, found {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("sampled grid contains non-finite values".into()));
        }
        Ok(SampledGrid {
            dim,
            x_res,
            y_res,
            values,
            domain,
        })
    }

    fn axes(&self) -> Vec<usize> {
        self.x_res.iter().chain(&self.y_res).copied().collect()
    }

    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> f64 {
        let axes = self.axes();
        let naxes = axes.len();
        // per-axis (lower index, upper index, weight of upper)
        let mut stencil = Vec::with_capacity(naxes);
        for a in 0..self.dim {
            let n = self.x_res[a];
            if n == 1 {
                stencil.push((0, 0, 0.0));
                continue;
            }
            let (lo, hi) = (self.domain.lower[a], self.domain.upper[a]);
            let s = ((x[a] - lo) / (hi - lo) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
            let k = (s.floor() as usize).min(n - 2);
            stencil.push((k, k + 1, s - k as f64));
        }
        for a in 0..self.dim {
            let n = self.y_res[a];
            let s = (y[a] * n as f64).rem_euclid(n as f64);
            let k = (s.floor() as usize).min(n - 1);
            stencil.push((k, (k + 1) % n, s - k as f64));
        }
        let mut total = 0.0;
        for corner in 0..1usize << naxes {
            let mut w = 1.0;
            let mut flat = 0;
            for (a, &(lo, hi, t)) in stencil.iter().enumerate() {
                let upper = (corner >> a) & 1 == 1;
                w *= if upper { t } else { 1.0 - t };
                flat = flat * axes[a] + if upper { hi } else { lo };
            }
            if w != 0.0 {
                total += w * self.values[flat];
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    Expression { text: String, expr: Expr },
    Sampled(SampledGrid),
}

/// Scalar field of `(t, x, y)`; coefficient fields ignore `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    dim: usize,
    source: FieldSource,
}

impl CoefficientField {
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let expr = Expr::parse(text, dim).map_err(|source| Error::Parse {
            field: text.to_string(),
            source,
        })?;
        Ok(CoefficientField {
            dim,
            source: FieldSource::Expression {
                text: text.to_string(),
                expr,
            },
        })
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        CoefficientField {
            dim,
            source: FieldSource::Expression {
                text: format!("{value:?}"),
                expr: Expr::Const(value),
            },
        }
    }

    pub fn sampled(grid: SampledGrid) -> Self {
        CoefficientField {
            dim: grid.dim,
            source: FieldSource::Sampled(grid),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &FieldSource {
        &self.source
    }

    pub fn is_sampled(&self) -> bool {
        matches!(self.source, FieldSource::Sampled(_))
    }

    pub fn evaluate(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        match &self.source {
            FieldSource::Expression { expr, .. } => Ok(expr.eval(&Point::new(t, x, y))?),
            FieldSource::Sampled(g) => Ok(g.evaluate(x, y)),
        }
    }

    pub fn depends_on_y(&self) -> bool {
        match &self.source {
            FieldSource::Expression { expr, .. } => expr.depends_on_y(),
            FieldSource::Sampled(g) => g.y_res.iter().any(|&r| r > 1),
        }
    }

    pub fn depends_on_x(&self) -> bool {
        match &self.source {
            FieldSource::Expression { expr, .. } => expr.depends_on_x(),
            FieldSource::Sampled(g) => g.x_res.iter().any(|&r| r > 1),
        }
    }

    pub fn depends_on_t(&self) -> bool {
        match &self.source {
            FieldSource::Expression { expr, .. } => expr.depends_on_t(),
            FieldSource::Sampled(_) => false,
        }
    }

    /// Stable textual identity used for hashing and metadata.
    pub fn fingerprint(&self) -> String {
        match &self.source {
            FieldSource::Expression { expr, .. } => format!("expr:{expr}"),
            FieldSource::Sampled(g) => {
                let mut s = format!("grid:{:?}:{:?}:", g.x_res, g.y_res);
                for v in &g.values {
                    s.push_str(&format!("{:016x}", v.to_bits()));
                }
                s
            }
        }
    }
}

impl fmt::Display for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            FieldSource::Expression { text, .. } => write!(f, "{text}"),
            FieldSource::Sampled(g) => {
                write!(f, "<sampled grid x{:?} y{:?}>", g.x_res, g.y_res)
            }
        }
    }
}

/// Complete data of one two-scale problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub dim: usize,
    pub domain: Domain,
    pub horizon: f64,
    pub kappa: [CoefficientField; 2],
    pub capacity: [CoefficientField; 2],
    pub exchange: CoefficientField,
    pub source: CoefficientField,
    pub initial: [CoefficientField; 2],
}

impl ProblemData {
    /// Data from expression strings on the unit box, with unit capacities.
    pub fn from_expressions(
        dim: usize,
        kappa: [&str; 2],
        exchange: &str,
        source: &str,
        initial: [&str; 2],
        horizon: f64,
    ) -> Result<Self> {
        let data = ProblemData {
            dim,
            domain: Domain::unit(dim),
            horizon,
            kappa: [
                CoefficientField::parse(kappa[0], dim)?,
                CoefficientField::parse(kappa[1], dim)?,
            ],
            capacity: [
                CoefficientField::constant(1.0, dim),
                CoefficientField::constant(1.0, dim),
            ],
            exchange: CoefficientField::parse(exchange, dim)?,
            source: CoefficientField::parse(source, dim)?,
            initial: [
                CoefficientField::parse(initial[0], dim)?,
                CoefficientField::parse(initial[1], dim)?,
            ],
        };
        data.check_structure()?;
        Ok(data)
    }

    /// Structural checks that do not need sampling.
    pub fn check_structure(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return Err(Error::InvalidData(format!("dimension {} not supported", self.dim)));
        }
        if self.domain.dim() != self.dim || self.domain.upper.len() != self.dim {
            return Err(Error::InvalidData("domain dimension mismatch".into()));
        }
        if (0..self.dim).any(|a| self.domain.upper[a] <= self.domain.lower[a]) {
            return Err(Error::InvalidData("domain has empty extent".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidData("horizon T must be positive".into()));
        }
        let named = self.named_fields();
        for (name, f) in &named {
            if f.dim() != self.dim {
                return Err(Error::InvalidData(format!("{name}: dimension mismatch")));
            }
            if *name != "source" && f.depends_on_t() {
                return Err(Error::InvalidData(format!("{name} must not depend on t")));
            }
        }
        for (name, f) in [("source", &self.source), ("initial1", &self.initial[0]), ("initial2", &self.initial[1])] {
            if f.depends_on_y() {
                return Err(Error::InvalidData(format!("{name} must not depend on y")));
            }
        }
        Ok(())
    }

    pub fn named_fields(&self) -> Vec<(&'static str, &CoefficientField)> {
        vec![
            ("kappa1", &self.kappa[0]),
            ("kappa2", &self.kappa[1]),
            ("capacity1", &self.capacity[0]),
            ("capacity2", &self.capacity[1]),
            ("exchange", &self.exchange),
            ("source", &self.source),
            ("initial1", &self.initial[0]),
            ("initial2", &self.initial[1]),
        ]
    }

    pub fn fingerprint(&self) -> String {
        let mut s = format!("dim={};lower={:?};upper={:?};T={:?}", self.dim, self.domain.lower, self.domain.upper, self.horizon);
        for (name, f) in self.named_fields() {
            s.push_str(&format!(";{name}={}", f.fingerprint()));
        }
        s
    }

    /// True when no coefficient oscillates in `y`.
    pub fn is_y_independent(&self) -> bool {
        !(self.kappa.iter().any(|f| f.depends_on_y())
            || self.capacity.iter().any(|f| f.depends_on_y())
            || self.exchange.depends_on_y())
    }

    /// True when no cell-problem coefficient varies with `x`.
    pub fn is_x_independent(&self) -> bool {
        !(self.kappa.iter().any(|f| f.depends_on_x())
            || self.capacity.iter().any(|f| f.depends_on_x())
            || self.exchange.depends_on_x())
    }

    /// True when the exchange field is the literal constant zero.
    pub fn has_no_exchange(&self) -> bool {
        match self.exchange.source() {
            FieldSource::Expression { expr, .. } => matches!(expr, Expr::Const(c) if *c == 0.0),
            FieldSource::Sampled(g) => g.values.iter().all(|&v| v == 0.0),
        }
    }

    /// Same data with continuum labels exchanged.
    pub fn swapped(&self) -> ProblemData {
        let mut d = self.clone();
        d.kappa.swap(0, 1);
        d.capacity.swap(0, 1);
        d.initial.swap(0, 1);
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    /// Minimum value for coercivity checks; largest |mean| for the
    /// zero-mean check.
    pub worst_value: f64,
    pub worst_x: Vec<f64>,
    pub worst_y: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
    /// Assumptions the validator cannot verify numerically.
    pub unchecked: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::InvalidData(self.failures().join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Overrides the per-field-kind zero-mean tolerance.
    pub tol_mean: Option<f64>,
    pub sample_resolution: usize,
    /// Coercivity floor for `kappa_k` and `C_kk`.
    pub lower_bound: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            tol_mean: None,
            sample_resolution: 32,
            lower_bound: 1e-8,
        }
    }
}

/// Points of the validation lattice: `res` cell midpoints per axis of `Omega`.
fn macro_samples(domain: &Domain, res: usize) -> Vec<Vec<f64>> {
    let dim = domain.dim();
    let axis = |a: usize| -> Vec<f64> {
        let (lo, hi) = (domain.lower[a], domain.upper[a]);
        (0..res)
            .map(|i| lo + (i as f64 + 0.5) / res as f64 * (hi - lo))
            .collect()
    };
    if dim == 1 {
        axis(0).into_iter().map(|x| vec![x]).collect()
    } else {
        let (a0, a1) = (axis(0), axis(1));
        a0.iter()
            .flat_map(|&u| a1.iter().map(move |&v| vec![u, v]))
            .collect()
    }
}

/// Two-point Gauss rule on `res` uniform sub-intervals of each unit-cell axis.
pub fn cell_quadrature(dim: usize, res: usize) -> Vec<(Vec<f64>, f64)> {
    let g = 0.5 / 3f64.sqrt();
    let pts: Vec<f64> = (0..res)
        .flat_map(|i| {
            let c = (i as f64 + 0.5) / res as f64;
            [c - g / res as f64, c + g / res as f64]
        })
        .collect();
    let w = 0.5 / res as f64;
    if dim == 1 {
        pts.iter().map(|&p| (vec![p], w)).collect()
    } else {
        pts.iter()
            .flat_map(|&p| pts.iter().map(move |&q| (vec![p, q], w * w)))
            .collect()
    }
}

/// Cell mean of a field at a fixed macro point.
pub fn cell_mean(field: &CoefficientField, x: &[f64], res: usize) -> Result<f64> {
    let mut s = 0.0;
    for (y, w) in cell_quadrature(field.dim(), res) {
        s += w * field.evaluate(x, &y, 0.0)?;
    }
    Ok(s)
}

/// Samples the problem data and reports coercivity of `kappa_k`, `C_kk` and
/// the zero cell mean of the exchange field. Failures are reported, never
/// raised; evaluation errors count as failures of the affected check.
pub fn validate(data: &ProblemData, opts: &ValidationOptions) -> ValidationReport {
    let res = opts.sample_resolution.max(8);
    let xs = macro_samples(&data.domain, res);
    let quad = cell_quadrature(data.dim, res);
    let mut checks = Vec::new();

    if let Err(e) = data.check_structure() {
        checks.push(ValidationCheck {
            name: "structure".into(),
            passed: false,
            worst_value: f64::NAN,
            worst_x: vec![],
            worst_y: vec![],
            detail: e.to_string(),
        });
    }

    let coercive = [
        ("coercivity kappa1", &data.kappa[0]),
        ("coercivity kappa2", &data.kappa[1]),
        ("coercivity capacity1", &data.capacity[0]),
        ("coercivity capacity2", &data.capacity[1]),
    ];
    for (name, field) in coercive {
        let mut worst = (f64::INFINITY, vec![], vec![]);
        let mut failure = None;
        'outer: for x in &xs {
            // quadrature points and cell nodes
            let nodes = (0..res).map(|i| i as f64 / res as f64);
            let node_pts: Vec<Vec<f64>> = if data.dim == 1 {
                nodes.map(|v| vec![v]).collect()
            } else {
                let v: Vec<f64> = nodes.collect();
                v.iter().flat_map(|&a| v.iter().map(move |&b| vec![a, b])).collect()
            };
            for y in quad.iter().map(|(y, _)| y).chain(node_pts.iter()) {
                match field.evaluate(x, y, 0.0) {
                    Ok(v) if v < worst.0 => worst = (v, x.clone(), y.clone()),
                    Ok(_) => {}
                    Err(e) => {
                        failure = Some(format!("evaluation failed at x={x:?} y={y:?}: {e}"));
                        break 'outer;
                    }
                }
            }
        }
        let passed = failure.is_none() && worst.0 >= opts.lower_bound;
        let detail = failure.unwrap_or_else(|| {
            format!("minimum {:.6e} (lower bound {:e})", worst.0, opts.lower_bound)
        });
        checks.push(ValidationCheck {
            name: name.into(),
            passed,
            worst_value: worst.0,
            worst_x: worst.1,
            worst_y: worst.2,
            detail,
        });
    }

    let tol = opts.tol_mean.unwrap_or(if data.exchange.is_sampled() {
        TOL_MEAN_SAMPLED
    } else {
        TOL_MEAN_EXPRESSION
    });
    let mut worst = (0.0f64, vec![]);
    let mut failure = None;
    for x in &xs {
        let mut s = 0.0;
        for (y, w) in &quad {
            match data.exchange.evaluate(x, y, 0.0) {
                Ok(v) => s += w * v,
                Err(e) => {
                    failure = Some(format!("evaluation failed at x={x:?}: {e}"));
                    break;
                }
            }
        }
        if failure.is_some() {
            break;
        }
        if s.abs() >= worst.0.abs() {
            worst = (s, x.clone());
        }
    }
    checks.push(ValidationCheck {
        name: "zero-mean exchange".into(),
        passed: failure.is_none() && worst.0.abs() <= tol,
        worst_value: worst.0,
        worst_x: worst.1,
        worst_y: vec![],
        detail: failure
            .unwrap_or_else(|| format!("largest |cell mean| {:.6e} (tolerance {tol:e})", worst.0.abs())),
    });

    ValidationReport {
        checks,
        unchecked: vec![
            "regularity of cell correctors (C^2 in x and y) is not verified".into(),
            "integrability of the source q is not verified".into(),
        ],
    }
}

// ---------------------------------------------------------------------------
// Problem files and grid files

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Expression(String),
    Grid { grid: PathBuf },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub dimension: usize,
    pub horizon: f64,
    pub domain: Option<Domain>,
    pub fields: ProblemFields,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFields {
    pub kappa1: FieldSpec,
    pub kappa2: FieldSpec,
    #[serde(default = "unit_spec")]
    pub capacity1: FieldSpec,
    #[serde(default = "unit_spec")]
    pub capacity2: FieldSpec,
    pub exchange: FieldSpec,
    #[serde(default = "zero_spec")]
    pub source: FieldSpec,
    #[serde(default = "zero_spec")]
    pub initial1: FieldSpec,
    #[serde(default = "zero_spec")]
    pub initial2: FieldSpec,
}

fn unit_spec() -> FieldSpec {
    FieldSpec::Expression("1".into())
}

fn zero_spec() -> FieldSpec {
    FieldSpec::Expression("0".into())
}

impl ProblemData {
    /// Parses a problem document (TOML). Grid paths are resolved relative to
    /// `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ProblemFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("problem file: {e}")))?;
        let dim = file.dimension;
        let domain = file.domain.unwrap_or_else(|| Domain::unit(dim));
        if domain.dim() != dim || domain.upper.len() != dim {
            return Err(Error::InvalidData("domain dimension mismatch".into()));
        }
        let load = |name: &str, spec: &FieldSpec| -> Result<CoefficientField> {
            match spec {
                FieldSpec::Expression(s) => {
                    CoefficientField::parse(s, dim).map_err(|e| match e {
                        Error::Parse { source, .. } => Error::Parse {
                            field: name.to_string(),
                            source,
                        },
                        other => other,
                    })
                }
                FieldSpec::Grid { grid } => {
                    let path = base_dir.join(grid);
                    Ok(CoefficientField::sampled(read_grid_file(&path, &domain)?))
                }
            }
        };
        let f = &file.fields;
        let data = ProblemData {
            dim,
            domain: domain.clone(),
            horizon: file.horizon,
            kappa: [load("kappa1", &f.kappa1)?, load("kappa2", &f.kappa2)?],
            capacity: [load("capacity1", &f.capacity1)?, load("capacity2", &f.capacity2)?],
            exchange: load("exchange", &f.exchange)?,
            source: load("source", &f.source)?,
            initial: [load("initial1", &f.initial1)?, load("initial2", &f.initial2)?],
        };
        data.check_structure()?;
        Ok(data)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }
}

const GRID_MAGIC: &[u8; 8] = b"DHGRID01";

/// Reads a sampled grid. Binary files start with the magic `DHGRID01`, then
/// little-endian `u64` dimension, `d` x-resolutions, `d` y-resolutions and
/// the `f64` payload (row-major, last axis fastest). Text files are CSV whose
/// first record is `grid,<d>,<nx..>,<ny..>`, followed by the values separated
/// by commas or newlines.
pub fn read_grid_file(path: &Path, domain: &Domain) -> Result<SampledGrid> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(GRID_MAGIC) {
        parse_binary_grid(&bytes, domain)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{}: not UTF-8 text", path.display())))?;
        parse_csv_grid(&text, domain)
    }
}

pub fn parse_csv_grid(text: &str, domain: &Domain) -> Result<SampledGrid> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty grid file".into()))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.first() != Some(&"grid") || fields.len() < 2 {
        return Err(Error::Format("grid header must start with 'grid,<d>'".into()));
    }
    let ints: Vec<usize> = fields[1..]
        .iter()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("grid header: {e}")))?;
    let dim = ints[0];
    if ints.len() != 1 + 2 * dim {
        return Err(Error::Format("grid header resolution count mismatch".into()));
    }
    let mut values = Vec::new();
    for line in lines {
        for tok in line.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            values.push(
                tok.parse::<f64>()
                    .map_err(|e| Error::Format(format!("grid value {tok}: {e}")))?,
            );
        }
    }
    SampledGrid::new(
        dim,
        ints[1..1 + dim].to_vec(),
        ints[1 + dim..].to_vec(),
        values,
        domain.clone(),
    )
}

pub fn parse_binary_grid(bytes: &[u8], domain: &Domain) -> Result<SampledGrid> {
    let mut pos = GRID_MAGIC.len();
    let next_u64 = |pos: &mut usize| -> Result<u64> {
        let b = bytes
            .get(*pos..*pos + 8)
            .ok_or_else(|| Error::Format("truncated grid header".into()))?;
        *pos += 8;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    };
    let dim = next_u64(&mut pos)? as usize;
    if !(1..=2).contains(&dim) {
        return Err(Error::Format(format!("grid dimension {dim} not supported")));
    }
    let mut res = Vec::new();
    for _ in 0..2 * dim {
        res.push(next_u64(&mut pos)? as usize);
    }
    let payload = &bytes[pos..];
    if !payload.len().is_multiple_of(8) {
        return Err(Error::Format("grid payload is not a whole number of f64".into()));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SampledGrid::new(dim, res[..dim].to_vec(), res[dim..].to_vec(), values, domain.clone())
}

pub fn encode_binary_grid(grid: &SampledGrid) -> Vec<u8> {
    let mut out = GRID_MAGIC.to_vec();
    out.extend((grid.dim as u64).to_le_bytes());
    for r in grid.x_res.iter().chain(&grid.y_res) {
        out.extend((*r as u64).to_le_bytes());
    }
    for v in &grid.values {
        out.extend(v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_with(kappa1: &str, exchange: &str) -> ProblemData {
        ProblemData::from_expressions(2, [kappa1, "1"], exchange, "1", ["0", "0"], 1.0).unwrap()
    }

    #[test]
    fn constant_and_analytic_evaluation() {
        let c = CoefficientField::constant(3.0, 2);
        assert_eq!(c.evaluate(&[0.1, 0.7], &[0.3, 0.9], 0.0).unwrap(), 3.0);
        let s = CoefficientField::parse("sin(2*pi*y1)", 1).unwrap();
        assert!((s.evaluate(&[0.5], &[0.25], 0.0).unwrap() - 1.0).abs() < 1e-15);
        let k = CoefficientField::parse("1 + 0.5*sin(2*pi*y1)", 1).unwrap();
        assert_eq!(k.evaluate(&[0.5], &[0.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn odd_harmonic_has_zero_mean() {
        let report = validate(&data_with("1", "sin(2*pi*y1)"), &ValidationOptions::default());
        let c = report.check("zero-mean exchange").unwrap();
        assert!(c.passed);
        assert!(c.worst_value.abs() < 1e-12);
        assert!(report.passed());
    }

    #[test]
    fn nonzero_mean_fails() {
        let report = validate(&data_with("1", "1"), &ValidationOptions::default());
        let c = report.check("zero-mean exchange").unwrap();
        assert!(!c.passed);
        assert!((c.worst_value - 1.0).abs() < 1e-12);
        assert!(report.clone().into_result().is_err());
    }

    #[test]
    fn sign_changing_kappa_fails_coercivity() {
        let report = validate(&data_with("cos(2*pi*y1)", "0"), &ValidationOptions::default());
        let c = report.check("coercivity kappa1").unwrap();
        assert!(!c.passed);
        assert!(c.worst_value <= -1.0 + 1e-2);
        assert!(report.check("coercivity kappa2").unwrap().passed);
    }

    #[test]
    fn quadrature_exact_for_multilinear_fields() {
        let f = CoefficientField::parse("0.3 + 2*y1 - 5*y2 + 7*y1*y2", 2).unwrap();
        let exact = 0.3 + 1.0 - 2.5 + 7.0 / 4.0;
        for res in [8, 32] {
            assert!((cell_mean(&f, &[0.2, 0.2], res).unwrap() - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn evaluation_errors_fail_the_check() {
        let report = validate(&data_with("1/(y1 - y1)", "0"), &ValidationOptions::default());
        assert!(!report.check("coercivity kappa1").unwrap().passed);
    }

    #[test]
    fn sampled_grid_wraps_in_y() {
        // constant in x (one sample), four samples in y
        let g = SampledGrid::new(1, vec![1], vec![4], vec![0.0, 1.0, 0.0, -1.0], Domain::unit(1))
            .unwrap();
        let f = CoefficientField::sampled(g);
        assert_eq!(f.evaluate(&[0.3], &[0.25], 0.0).unwrap(), 1.0);
        assert_eq!(f.evaluate(&[0.3], &[1.25], 0.0).unwrap(), 1.0);
        assert!((f.evaluate(&[0.3], &[0.875], 0.0).unwrap() + 0.5).abs() < 1e-15);
        assert!((f.evaluate(&[0.3], &[0.9], 0.0).unwrap() - f.evaluate(&[0.3], &[-0.1], 0.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn sampled_grid_interpolates_in_x() {
        let g = SampledGrid::new(1, vec![2], vec![1], vec![1.0, 3.0], Domain::unit(1)).unwrap();
        assert_eq!(g.evaluate(&[0.25], &[0.7]), 1.5);
        assert_eq!(g.evaluate(&[2.0], &[0.7]), 3.0);
    }

    #[test]
    fn problem_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = SampledGrid::new(1, vec![1], vec![4], vec![1.0, 2.0, 1.0, 2.0], Domain::unit(1)).unwrap();
        std::fs::write(dir.path().join("k.bin"), encode_binary_grid(&grid)).unwrap();
        std::fs::write(dir.path().join("q.csv"), "grid,1,1,4\n1,0\n-1,0\n").unwrap();
        let text = r#"
            dimension = 1
            horizon = 0.5
            [fields]
            kappa1 = { grid = "k.bin" }
            kappa2 = "2 + cos(2*pi*y1)"
            exchange = { grid = "q.csv" }
            source = "1"
        "#;
        let data = ProblemData::from_toml_str(text, dir.path()).unwrap();
        assert!(data.kappa[0].is_sampled());
        assert_eq!(data.kappa[0].evaluate(&[0.5], &[0.25], 0.0).unwrap(), 2.0);
        assert_eq!(data.capacity[0].evaluate(&[0.5], &[0.25], 0.0).unwrap(), 1.0);
        assert!(validate(&data, &ValidationOptions::default()).passed());
    }

    #[test]
    fn problem_file_errors() {
        let bad = "dimension = 1\nhorizon = 1\n[fields]\nkappa1 = \"y2\"\nkappa2 = \"1\"\nexchange = \"0\"\n";
        match ProblemData::from_toml_str(bad, Path::new(".")) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "kappa1"),
            other => panic!("{other:?}"),
        }
        let time_dep = "dimension = 1\nhorizon = 1\n[fields]\nkappa1 = \"1 + t\"\nkappa2 = \"1\"\nexchange = \"0\"\n";
        assert!(ProblemData::from_toml_str(time_dep, Path::new(".")).is_err());
    }
}
