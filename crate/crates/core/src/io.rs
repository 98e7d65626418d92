//! CSV and JSON artefacts.
//!
//! Every CSV starts with a `# atpinn <schema> v<version>` line followed by a
//! column header. Readers reject files whose schema line does not match.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::metrics::{Bands, EnsemblePrediction, MetricReport};
use crate::sampler::CollocationSet;

pub const SCHEMA_VERSION: u32 = 1;

pub const GRID_COLUMNS: [&str; 3] = ["S", "t", "value"];
pub const LOG_COLUMNS: [&str; 7] = ["epoch", "residual", "terminal", "boundary", "obstacle", "anchor", "total"];
pub const ENSEMBLE_COLUMNS: [&str; 6] = ["S", "t", "mu", "sigma", "lower_k2", "upper_k2"];
pub const ERROR_COLUMNS: [&str; 4] = ["S", "t", "error", "sigma"];
pub const COLLOCATION_COLUMNS: [&str; 4] = ["role", "S", "t", "target"];
pub const RESULT_COLUMNS: [&str; 10] =
    ["run_id", "instrument", "slice", "n", "mae", "rmse", "ev", "rel_percent", "max_rel_percent", "rel_excluded"];

fn schema_line(schema: &str) -> String {
    format!("# atpinn {schema} v{SCHEMA_VERSION}")
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(File::create(path)?)
}

fn write_table(path: &Path, schema: &str, columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut file = create(path)?;
    writeln!(file, "{}", schema_line(schema))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric table written by `write_table`.
fn read_table(path: &Path, schema: &str, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let expect = schema_line(schema);
    if first.trim_end() != expect {
        return Err(Error::Format(format!(
            "{}: expected schema line {expect:?}, found {:?}",
            path.display(),
            first.trim_end()
        )));
    }
    let mut rest = String::new();
    reader.read_to_string(&mut rest)?;
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != columns {
        return Err(Error::Format(format!("{}: columns {header:?}, expected {columns:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Format(format!("{}: {f:?}: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn num(x: f64) -> String {
    // Shortest representation that parses back to the same value.
    format!("{x:?}")
}

/// `S,t,value` rows.
pub fn write_grid(path: impl AsRef<Path>, rows: &[(f64, f64, f64)]) -> Result<()> {
    write_table(
        path.as_ref(),
        "grid",
        &GRID_COLUMNS,
        rows.iter().map(|&(s, t, v)| vec![num(s), num(t), num(v)]),
    )
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Vec<(f64, f64, f64)>> {
    Ok(read_table(path.as_ref(), "grid", &GRID_COLUMNS)?
        .into_iter()
        .map(|r| (r[0], r[1], r[2]))
        .collect())
}

/// One row per epoch, numbered from 1.
pub fn write_training_log(path: impl AsRef<Path>, log: &[LossBreakdown]) -> Result<()> {
    write_table(
        path.as_ref(),
        "training-log",
        &LOG_COLUMNS,
        log.iter().enumerate().map(|(i, b)| {
            vec![
                (i + 1).to_string(),
                num(b.residual),
                num(b.terminal),
                num(b.boundary),
                num(b.obstacle),
                num(b.anchor),
                num(b.total),
            ]
        }),
    )
}

pub fn read_training_log(path: impl AsRef<Path>) -> Result<Vec<LossBreakdown>> {
    Ok(read_table(path.as_ref(), "training-log", &LOG_COLUMNS)?
        .into_iter()
        .map(|r| LossBreakdown {
            residual: r[1],
            terminal: r[2],
            boundary: r[3],
            obstacle: r[4],
            anchor: r[5],
            total: r[6],
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleRow {
    pub s: f64,
    pub t: f64,
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn write_ensemble(path: impl AsRef<Path>, pred: &EnsemblePrediction, bands: &Bands) -> Result<()> {
    if bands.lower.len() != pred.mean.len() || bands.upper.len() != pred.mean.len() {
        return Err(Error::Shape("bands do not match the prediction".into()));
    }
    write_table(
        path.as_ref(),
        "ensemble",
        &ENSEMBLE_COLUMNS,
        (0..pred.mean.len()).map(|i| {
            let (s, t) = pred.points[i];
            vec![num(s), num(t), num(pred.mean[i]), num(pred.std[i]), num(bands.lower[i]), num(bands.upper[i])]
        }),
    )
}

pub fn read_ensemble(path: impl AsRef<Path>) -> Result<Vec<EnsembleRow>> {
    Ok(read_table(path.as_ref(), "ensemble", &ENSEMBLE_COLUMNS)?
        .into_iter()
        .map(|r| EnsembleRow { s: r[0], t: r[1], mu: r[2], sigma: r[3], lower: r[4], upper: r[5] })
        .collect())
}

/// Signed errors `prediction - reference` with the ensemble spread (0 when absent).
pub fn write_errors(path: impl AsRef<Path>, points: &[(f64, f64)], error: &[f64], sigma: &[f64]) -> Result<()> {
    if error.len() != points.len() || sigma.len() != points.len() {
        return Err(Error::Shape("error columns differ in length".into()));
    }
    write_table(
        path.as_ref(),
        "errors",
        &ERROR_COLUMNS,
        (0..points.len()).map(|i| vec![num(points[i].0), num(points[i].1), num(error[i]), num(sigma[i])]),
    )
}

pub fn read_errors(path: impl AsRef<Path>) -> Result<Vec<[f64; 4]>> {
    Ok(read_table(path.as_ref(), "errors", &ERROR_COLUMNS)?
        .into_iter()
        .map(|r| [r[0], r[1], r[2], r[3]])
        .collect())
}

/// Dumps a collocation set; `role` is 0 interior, 1 terminal, 2 boundary.
/// Interior rows carry a NaN target.
pub fn write_collocation(path: impl AsRef<Path>, set: &CollocationSet) -> Result<()> {
    let interior = set.interior.iter().map(|&(s, t)| vec!["0".into(), num(s), num(t), num(f64::NAN)]);
    let terminal = set.terminal.iter().zip(&set.terminal_targets).map(|(&(s, t), &y)| vec!["1".into(), num(s), num(t), num(y)]);
    let boundary = set.boundary.iter().zip(&set.boundary_targets).map(|(&(s, t), &y)| vec!["2".into(), num(s), num(t), num(y)]);
    write_table(path.as_ref(), "collocation", &COLLOCATION_COLUMNS, interior.chain(terminal).chain(boundary))
}

pub fn read_collocation(path: impl AsRef<Path>) -> Result<Vec<[f64; 4]>> {
    Ok(read_table(path.as_ref(), "collocation", &COLLOCATION_COLUMNS)?
        .into_iter()
        .map(|r| [r[0], r[1], r[2], r[3]])
        .collect())
}

/// Appends one row per report, writing the schema and header first if the
/// file is new or empty.
pub fn append_results(path: impl AsRef<Path>, run_id: &str, instrument: &str, reports: &[MetricReport]) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    if fresh {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(file, "{}", schema_line("results"))?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(RESULT_COLUMNS)?;
    }
    for r in reports {
        w.write_record([
            run_id.to_string(),
            instrument.to_string(),
            r.slice.label(),
            r.n.to_string(),
            num(r.mae),
            num(r.rmse),
            num(r.ev),
            num(r.relative_error_percent),
            num(r.max_relative_error_percent),
            r.relative_excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Hex SHA-256 of the canonical (compact JSON) form of a config.
pub fn config_hash(cfg: &RunConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serialises");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to reproduce a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, seeds: Vec<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config_hash: config_hash(config),
            config: config.clone(),
            seeds,
            artifacts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = create(path.as_ref())?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

/// Writes a value as pretty JSON.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut f = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}
