//! Output directories, metadata, hashing and the cell-solution cache.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use dualhom::cell::{decode_cell_binary, encode_cell_binary, solve_cell_problems, CellSolutionSet, CellSolverOptions};
use dualhom::coeffs::ProblemData;
use dualhom::effective::MacroLattice;
use dualhom::mesh::UnitCellGrid;
use dualhom::Error;

use crate::{CommonArgs, Failure};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::from(Error::io(path, e))
}

/// Reads the problem file named by `--config`.
pub fn load_problem(args: &CommonArgs) -> Result<(ProblemData, Vec<u8>), Failure> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| Failure::validation("--config <path> is required"))?;
    if !path.is_file() {
        return Err(Failure::validation(format!("file not found: {}", path.display())));
    }
    let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
    let data = ProblemData::from_file(path)?;
    Ok((data, bytes))
}

/// Flags that influence results; output directory and thread count do not.
fn canonical_flags(args: &CommonArgs, extra: &Value) -> Value {
    json!({
        "eps": args.eps,
        "cell_n": args.cell_n,
        "macro_n": args.macro_n,
        "dt": args.dt,
        "scheme": args.scheme,
        "rho": args.rho,
        "cutoff": args.cutoff,
        "tol_lin": args.tol_lin,
        "extra": extra,
    })
}

/// One subcommand's output directory and the metadata written beside its
/// files.
pub struct Run {
    pub dir: PathBuf,
    command: &'static str,
    config_hash: String,
    config_path: Option<PathBuf>,
    flags: Value,
    started: Instant,
    stages: BTreeMap<String, f64>,
    outputs: Vec<String>,
    results: serde_json::Map<String, Value>,
}

impl Run {
    pub fn new(args: &CommonArgs, command: &'static str, problem: Option<&[u8]>, extra: Value) -> Result<Self, Failure> {
        let dir = args.out.join(command);
        fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
        let flags = canonical_flags(args, &extra);
        let mut hashed = problem.unwrap_or_default().to_vec();
        hashed.push(b'\n');
        hashed.extend(serde_json::to_vec(&json!({ "command": command, "flags": flags })).expect("json"));
        Ok(Run {
            dir,
            command,
            config_hash: sha256_hex(&hashed),
            config_path: args.config.clone(),
            flags,
            started: Instant::now(),
            stages: BTreeMap::new(),
            outputs: Vec::new(),
            results: serde_json::Map::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        *self.stages.entry(stage.to_string()).or_default() += t0.elapsed().as_secs_f64();
        out
    }

    pub fn stage(&mut self, stage: &str, seconds: f64) {
        *self.stages.entry(stage.to_string()).or_default() += seconds;
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) {
        self.results
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable result"));
    }

    /// Writes `metadata.json` next to the outputs.
    pub fn finish(mut self) -> Result<(), Failure> {
        let total = self.started.elapsed().as_secs_f64();
        self.stages.insert("total".into(), total);
        let meta = json!({
            "tool": "dualhom",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_path": self.config_path,
            "config_hash": self.config_hash,
            "flags": self.flags,
            "outputs": self.outputs,
            "timings_seconds": self.stages,
            "results": self.results,
        });
        let path = self.dir.join("metadata.json");
        let text = serde_json::to_string_pretty(&meta).expect("json") + "\n";
        fs::write(&path, text).map_err(|e| io_failure(&path, e))
    }
}

/// Hash of everything a cell solve depends on at macro point `x`.
pub fn cell_key(data: &ProblemData, x: &[f64], n: usize, tol_lin: f64) -> String {
    let mut s = format!("dim={};lower={:?};upper={:?}", data.dim, data.domain.lower, data.domain.upper);
    for (name, f) in data.named_fields() {
        if matches!(name, "kappa1" | "kappa2" | "capacity1" | "capacity2" | "exchange") {
            s.push_str(&format!(";{name}={}", f.fingerprint()));
        }
    }
    s.push_str(&format!(";x={x:?};n={n};tol={tol_lin:?}"));
    sha256_hex(s.as_bytes())
}

/// Cell solutions at every lattice point, reusing `<out>/cache/cells`.
/// Returns the sets and the number of cache hits.
pub fn cell_sets(
    args: &CommonArgs,
    data: &ProblemData,
    lattice: &MacroLattice,
    grid: &UnitCellGrid,
) -> Result<(Vec<CellSolutionSet>, usize), Failure> {
    let cache = args.out.join("cache").join("cells");
    fs::create_dir_all(&cache).map_err(|e| io_failure(&cache, e))?;
    let opts = CellSolverOptions {
        tol_lin: args.tol_lin,
        ..Default::default()
    };
    let points: Vec<Vec<f64>> = (0..lattice.len()).map(|i| lattice.point(i)).collect();
    let results = points
        .par_iter()
        .map(|x| -> Result<(CellSolutionSet, bool), Error> {
            let path = cache.join(format!("{}.bin", cell_key(data, x, grid.n(), args.tol_lin)));
            if let Ok(bytes) = fs::read(&path) {
                if let Ok(set) = decode_cell_binary(&bytes).and_then(|f| CellSolutionSet::from_dump(x, f, data)) {
                    return Ok((set, true));
                }
            }
            let set = solve_cell_problems(data, x, grid, &opts).map_err(|e| Error::AtMacroPoint {
                point: x.clone(),
                source: Box::new(e),
            })?;
            let fields: Vec<_> = set.fields().into_iter().map(|(_, f)| f).collect();
            fs::write(&path, encode_cell_binary(&fields)).map_err(|e| Error::io(&path, e))?;
            Ok((set, false))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let hits = results.iter().filter(|r| r.1).count();
    Ok((results.into_iter().map(|r| r.0).collect(), hits))
}
