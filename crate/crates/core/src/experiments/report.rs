//! Writing sweep reports: trace CSVs, the aggregate table, charts and a
//! hashed manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{add_gaussian_noise, write_signal_csv};

use super::config::{Method, ScenarioConfig};
use super::scenario::{build_system, prepare_signals, Cell, CellOutcome, SweepReport};
use super::svg::{render_chart, Series};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_DIR: &str = "traces";
pub const CHART_DIR: &str = "charts";
pub const SIGNAL_DIR: &str = "signals";

pub const AGGREGATE_COLUMNS: [&str; 17] = [
    "p0",
    "method",
    "eps",
    "delta",
    "threshold_rel",
    "seed",
    "dt",
    "status",
    "records",
    "skipped",
    "steps_to_target",
    "observables_to_target",
    "final_energy",
    "final_error",
    "success",
    "trace_file",
    "message",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Svg,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            other => Err(format!("unknown format \"{other}\" (expected csv or svg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub label: String,
    pub target_accuracy: f64,
    pub reference_energy: f64,
    pub files: Vec<ManifestEntry>,
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// File name of a cell's trace, unique within a report.
pub fn trace_file_name(cell: &Cell) -> String {
    let k = &cell.key;
    let mut name = format!("{}_eps{:e}_delta{}_seed{}", k.method, k.eps, k.delta, k.seed);
    if let Some(p0) = k.p0 {
        name.push_str(&format!("_p0{p0:e}"));
    }
    name.push_str(".csv");
    name
}

fn aggregate_row(cell: &Cell, target: f64) -> Vec<String> {
    let k = &cell.key;
    let trace = cell.trace();
    let (status, message) = match &cell.outcome {
        CellOutcome::Trace(_) => ("ok", String::new()),
        CellOutcome::Failed(msg) => ("failed", msg.replace('\n', " ")),
    };
    vec![
        opt(k.p0),
        k.method.to_string(),
        k.eps.to_string(),
        k.delta.to_string(),
        cell.threshold_rel.to_string(),
        k.seed.to_string(),
        cell.dt.to_string(),
        status.into(),
        opt(trace.map(|t| t.records.len())),
        opt(trace.map(|t| t.skipped_count())),
        opt(cell.steps_to_target(target)),
        opt(cell.observables_to_target(target)),
        opt(trace.and_then(|t| t.final_energy())),
        opt(cell.final_error()),
        u8::from(cell.success(target)).to_string(),
        if trace.is_some() {
            format!("{TRACE_DIR}/{}", trace_file_name(cell))
        } else {
            String::new()
        },
        message,
    ]
}

/// The aggregate table; every number in it is recomputed from the traces.
pub fn aggregate_csv(report: &SweepReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(AGGREGATE_COLUMNS)?;
    for cell in &report.cells {
        w.write_record(aggregate_row(cell, report.target_accuracy))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One chart per `(p0, eps, delta)` group: per method, the median error
/// over seeds at each observable count.
pub fn chart_groups(report: &SweepReport) -> Vec<(String, String, Vec<Series>)> {
    let mut order: Vec<String> = Vec::new();
    // name -> (title, method -> observable count -> errors over seeds)
    type Group = (String, BTreeMap<Method, BTreeMap<usize, Vec<f64>>>);
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for cell in &report.cells {
        let k = &cell.key;
        let mut name = format!("eps{:e}_delta{}", k.eps, k.delta);
        let mut title = format!("{}: eps = {:e}, delta = {}", report.label, k.eps, k.delta);
        if let Some(p0) = k.p0 {
            name.push_str(&format!("_p0{p0:e}"));
            title.push_str(&format!(", p0 = {p0}"));
        }
        if !groups.contains_key(&name) {
            order.push(name.clone());
        }
        let (_, methods) = groups.entry(name).or_insert_with(|| (title, BTreeMap::new()));
        let per_count = methods.entry(k.method).or_default();
        if let Some(trace) = cell.trace() {
            for r in trace.valid() {
                if let Some(e) = r.abs_error {
                    per_count.entry(r.n_observables).or_default().push(e);
                }
            }
        }
    }
    order
        .into_iter()
        .map(|name| {
            let (title, methods) = groups.remove(&name).expect("group recorded");
            let series = methods
                .into_iter()
                .map(|(method, per_count)| Series {
                    name: method.to_string(),
                    points: per_count
                        .into_iter()
                        .map(|(n, mut errs)| (n as f64, median(&mut errs)))
                        .collect(),
                })
                .collect();
            (format!("chart_{name}.svg"), title, series)
        })
        .collect()
}

struct Emitter<'a> {
    out_dir: &'a Path,
    files: Vec<ManifestEntry>,
    failures: Vec<String>,
}

impl Emitter<'_> {
    fn write(&mut self, rel: &str, contents: &[u8]) {
        let path: PathBuf = self.out_dir.join(rel);
        let result = path
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| std::fs::write(&path, contents));
        match result {
            Ok(()) => self.files.push(ManifestEntry {
                path: rel.to_string(),
                sha256: hex::encode(Sha256::digest(contents)),
                bytes: contents.len(),
            }),
            Err(e) => self.failures.push(format!("{}: {e}", path.display())),
        }
    }

    /// Write the manifest and surface any per-file failures.
    fn finish(mut self, label: String, target_accuracy: f64, reference_energy: f64) -> Result<Manifest> {
        let manifest = Manifest {
            label,
            target_accuracy,
            reference_energy,
            files: self.files,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.out_dir.join(MANIFEST_FILE);
        if let Err(e) = std::fs::create_dir_all(self.out_dir).and_then(|_| std::fs::write(&path, text)) {
            self.failures.push(format!("{}: {e}", path.display()));
        }
        if self.failures.is_empty() {
            Ok(manifest)
        } else {
            Err(Error::Emit(self.failures))
        }
    }
}

/// Write the report under `out_dir` and return the manifest of what was
/// written. `Csv` writes one trace per successful cell plus the aggregate
/// table; `Svg` writes the charts. A failed file does not stop the others;
/// the failures are returned together after the manifest is written.
pub fn emit_report(report: &SweepReport, out_dir: &Path, formats: &[Format]) -> Result<Manifest> {
    let mut em = Emitter {
        out_dir,
        files: Vec::new(),
        failures: Vec::new(),
    };
    if formats.contains(&Format::Csv) {
        for cell in &report.cells {
            if let Some(trace) = cell.trace() {
                let text = trace.to_csv_string(true)?;
                em.write(&format!("{TRACE_DIR}/{}", trace_file_name(cell)), text.as_bytes());
            }
        }
        em.write(AGGREGATE_FILE, aggregate_csv(report)?.as_bytes());
    }
    if formats.contains(&Format::Svg) {
        for (name, title, series) in chart_groups(report) {
            let svg = render_chart(&title, &series, report.target_accuracy);
            em.write(&format!("{CHART_DIR}/{name}"), svg.as_bytes());
        }
    }
    em.finish(report.label.clone(), report.target_accuracy, report.reference_energy)
}

/// Write every noisy signal a scenario would feed its methods, one CSV
/// per signal kind, `eps` and seed.
pub fn emit_signals(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let raw = build_system(&cfg.system)?;
    let prepared = prepare_signals(&raw, cfg)?;
    let mut em = Emitter {
        out_dir,
        files: Vec::new(),
        failures: Vec::new(),
    };
    for (ws, clean) in [&prepared.complex, &prepared.real].into_iter().flatten() {
        for &eps in &cfg.eps_list {
            for &seed in &cfg.seeds {
                let noisy = add_gaussian_noise(clean, eps, seed)?;
                let mut buf = Vec::new();
                write_signal_csv(&noisy, &mut buf)?;
                let name = format!("{SIGNAL_DIR}/{}_eps{eps:e}_seed{seed}.csv", ws.parts.as_str());
                em.write(&name, &buf);
            }
        }
    }
    em.finish(cfg.label.clone(), cfg.target_accuracy, raw.original_ground_energy())
}
