//! Flat key/value scenario files.
//!
//! Every key is validated and every problem is collected before the
//! file is rejected, so one run reports all of them.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::odmd::PhaseWindow;
use crate::signal::DEFAULT_TIMESTEP_FRACTION;
use crate::spectral::NeelKind;

/// Default target accuracy in original energy units.
pub const CHEMICAL_ACCURACY: f64 = 1.6e-3;

pub const MIN_MAX_STEPS: usize = 4;

const KNOWN_KEYS: [&str; 19] = [
    "label",
    "system",
    "sites",
    "coupling",
    "periodic",
    "reference",
    "spectrum_file",
    "levels",
    "probabilities",
    "dt",
    "window",
    "rescale",
    "eps_list",
    "delta_list",
    "seeds",
    "methods",
    "max_steps",
    "target_accuracy",
    "p0_list",
];

#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    Heisenberg {
        sites: usize,
        coupling: f64,
        periodic: bool,
        reference: NeelKind,
    },
    SpectrumFile(PathBuf),
    Synthetic {
        levels: Vec<f64>,
        probabilities: Vec<f64>,
    },
}

impl SystemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            SystemSpec::Heisenberg { .. } => "heisenberg",
            SystemSpec::SpectrumFile(_) => "spectrum_file",
            SystemSpec::Synthetic { .. } => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimestepSpec {
    Fixed(f64),
    /// Fraction `C` of the aliasing limit for the working spectrum.
    Auto(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaSpec {
    /// `10 ε`, or the noiseless default at `ε = 0`.
    Auto,
    Fixed(f64),
}

impl fmt::Display for DeltaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaSpec::Auto => f.write_str("auto"),
            DeltaSpec::Fixed(v) => write!(f, "{v:e}"),
        }
    }
}

/// Estimation methods in canonical report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Odmd,
    OdmdReal,
    Uvqpe,
    Vqpe,
    Qcels,
    Esprit,
    Prony,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Odmd,
        Method::OdmdReal,
        Method::Uvqpe,
        Method::Vqpe,
        Method::Qcels,
        Method::Esprit,
        Method::Prony,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Odmd => "odmd",
            Method::OdmdReal => "odmd_real",
            Method::Uvqpe => "uvqpe",
            Method::Vqpe => "vqpe",
            Method::Qcels => "qcels",
            Method::Esprit => "esprit",
            Method::Prony => "prony",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == name)
    }

    pub fn real_only(self) -> bool {
        self == Method::OdmdReal
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub label: String,
    pub system: SystemSpec,
    pub dt: TimestepSpec,
    pub window: PhaseWindow,
    /// Map the spectrum affinely onto the phase window and use `Δt = 1`.
    pub rescale: bool,
    pub eps_list: Vec<f64>,
    pub delta_list: Vec<DeltaSpec>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub max_steps: usize,
    /// Original units.
    pub target_accuracy: f64,
    pub p0_list: Option<Vec<f64>>,
}

impl ScenarioConfig {
    /// A single-seed, noiseless ODMD scenario on `system`.
    pub fn new(label: impl Into<String>, system: SystemSpec) -> Self {
        Self {
            label: label.into(),
            system,
            dt: TimestepSpec::Auto(DEFAULT_TIMESTEP_FRACTION),
            window: PhaseWindow::Symmetric,
            rescale: false,
            eps_list: vec![0.0],
            delta_list: vec![DeltaSpec::Auto],
            seeds: vec![0],
            methods: vec![Method::Odmd],
            max_steps: 100,
            target_accuracy: CHEMICAL_ACCURACY,
            p0_list: None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parse config text. Relative `spectrum_file` paths resolve against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let table: Table = toml::from_str(text).map_err(|e| Error::Config(vec![format!("syntax: {e}")]))?;
        let mut p = Parser {
            table: &table,
            errors: Vec::new(),
        };
        for key in table.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                p.errors.push(format!("unknown key `{key}`"));
            }
        }
        let cfg = p.build(base_dir);
        match cfg {
            Some(cfg) if p.errors.is_empty() => {
                cfg.validate()?;
                Ok(cfg)
            }
            _ => Err(Error::Config(p.errors)),
        }
    }

    /// Check value ranges, reporting every violation.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.methods.is_empty() {
            errors.push("methods: must not be empty".to_string());
        }
        let unique: BTreeSet<_> = self.methods.iter().collect();
        if unique.len() != self.methods.len() {
            errors.push("methods: duplicate entries".into());
        }
        if self.eps_list.is_empty() {
            errors.push("eps_list: must not be empty".into());
        }
        for (i, &e) in self.eps_list.iter().enumerate() {
            if !(e >= 0.0 && e.is_finite()) {
                errors.push(format!("eps_list[{i}]: must be finite and >= 0, got {e}"));
            }
        }
        if self.delta_list.is_empty() {
            errors.push("delta_list: must not be empty".into());
        }
        for (i, d) in self.delta_list.iter().enumerate() {
            if let DeltaSpec::Fixed(v) = d {
                if !(*v > 0.0 && *v < 1.0) {
                    errors.push(format!("delta_list[{i}]: must lie in (0, 1), got {v}"));
                }
            }
        }
        if self.seeds.is_empty() {
            errors.push("seeds: must not be empty".into());
        }
        if self.max_steps < MIN_MAX_STEPS {
            errors.push(format!("max_steps: must be >= {MIN_MAX_STEPS}, got {}", self.max_steps));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy.is_finite()) {
            errors.push(format!(
                "target_accuracy: must be positive, got {}",
                self.target_accuracy
            ));
        }
        match self.dt {
            TimestepSpec::Fixed(dt) if !(dt > 0.0 && dt.is_finite()) => {
                errors.push(format!("dt: must be positive, got {dt}"));
            }
            TimestepSpec::Fixed(_) if self.rescale => {
                errors.push("dt: rescaled systems need dt = \"auto(C)\"".into());
            }
            TimestepSpec::Auto(c) if !(c > 0.0 && c < 1.0) => {
                errors.push(format!("dt: auto fraction must lie in (0, 1), got {c}"));
            }
            _ => {}
        }
        match &self.system {
            SystemSpec::Heisenberg { sites, coupling, .. } => {
                if !(2..=14).contains(sites) || sites % 2 != 0 {
                    errors.push(format!("sites: must be even and in 2..=14, got {sites}"));
                }
                if !coupling.is_finite() || *coupling == 0.0 {
                    errors.push(format!("coupling: must be finite and nonzero, got {coupling}"));
                }
            }
            SystemSpec::SpectrumFile(path) => {
                if !path.is_file() {
                    errors.push(format!("spectrum_file: {} does not exist", path.display()));
                }
            }
            SystemSpec::Synthetic { levels, probabilities } => {
                if levels.is_empty() {
                    errors.push("levels: must not be empty".into());
                }
                if levels.len() != probabilities.len() {
                    errors.push(format!(
                        "probabilities: {} values for {} levels",
                        probabilities.len(),
                        levels.len()
                    ));
                }
                if levels.windows(2).any(|w| !(w[1] >= w[0])) || levels.iter().any(|e| !e.is_finite()) {
                    errors.push("levels: must be finite and ascending".into());
                }
                if probabilities.iter().any(|p| !(*p >= 0.0)) {
                    errors.push("probabilities: must be >= 0".into());
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    errors.push(format!("probabilities: sum to {total}, expected 1"));
                }
            }
        }
        if let Some(p0s) = &self.p0_list {
            if matches!(self.system, SystemSpec::Heisenberg { .. }) {
                errors.push("p0_list: needs a synthetic or spectrum_file system".into());
            }
            if p0s.is_empty() {
                errors.push("p0_list: must not be empty".into());
            }
            for (i, &p) in p0s.iter().enumerate() {
                if !(p > 0.0 && p <= 1.0) {
                    errors.push(format!("p0_list[{i}]: must lie in (0, 1], got {p}"));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

struct Parser<'a> {
    table: &'a Table,
    errors: Vec<String>,
}

impl<'a> Parser<'a> {
    fn build(&mut self, base_dir: &Path) -> Option<ScenarioConfig> {
        let system = self.system(base_dir);
        let label = self.string("label").unwrap_or_else(|| "scenario".into());
        let dt = self.timestep();
        let window = match self.string("window").as_deref() {
            None | Some("symmetric") => Some(PhaseWindow::Symmetric),
            Some("positive") => Some(PhaseWindow::Positive),
            Some(other) => {
                self.errors.push(format!(
                    "window: expected \"symmetric\" or \"positive\", got \"{other}\""
                ));
                None
            }
        };
        let rescale = self.boolean("rescale").unwrap_or(false);
        let eps_list = self.required("eps_list").and_then(|_| self.floats("eps_list"));
        let delta_list = self.deltas();
        let seeds = self.required("seeds").and_then(|_| self.seeds());
        let methods = self.required("methods").and_then(|_| self.methods());
        let max_steps = self.required("max_steps").and_then(|_| self.count("max_steps"));
        let target_accuracy = self.float("target_accuracy").unwrap_or(CHEMICAL_ACCURACY);
        let p0_list = if self.table.contains_key("p0_list") {
            Some(self.floats("p0_list")?)
        } else {
            None
        };
        Some(ScenarioConfig {
            label,
            system: system?,
            dt: dt?,
            window: window?,
            rescale,
            eps_list: eps_list?,
            delta_list: delta_list?,
            seeds: seeds?,
            methods: methods?,
            max_steps: max_steps?,
            target_accuracy,
            p0_list,
        })
    }

    fn required(&mut self, key: &str) -> Option<()> {
        if self.table.contains_key(key) {
            Some(())
        } else {
            self.errors.push(format!("{key}: missing required key"));
            None
        }
    }

    fn wrong(&mut self, key: &str, want: &str, got: &Value) {
        self.errors
            .push(format!("{key}: expected {want}, got {} `{got}`", got.type_str()));
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.get(key)? {
            Value::String(s) => Some(s.clone()),
            v => {
                self.wrong(key, "a string", v);
                None
            }
        }
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        match self.table.get(key)? {
            Value::Boolean(b) => Some(*b),
            v => {
                self.wrong(key, "a boolean", v);
                None
            }
        }
    }

    fn number(v: &Value) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        let v = self.table.get(key)?;
        let x = Self::number(v);
        if x.is_none() {
            self.wrong(key, "a number", v);
        }
        x
    }

    fn count(&mut self, key: &str) -> Option<usize> {
        match self.table.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            v => {
                self.wrong(key, "a nonnegative integer", v);
                None
            }
        }
    }

    fn array(&mut self, key: &str) -> Option<&'a [Value]> {
        match self.table.get(key)? {
            Value::Array(a) => Some(a.as_slice()),
            v => {
                self.wrong(key, "an array", v);
                None
            }
        }
    }

    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        let items = self.array(key)?;
        let mut out = Vec::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            match Self::number(v) {
                Some(x) => out.push(x),
                None => self.wrong(&format!("{key}[{i}]"), "a number", v),
            }
        }
        (out.len() == items.len()).then_some(out)
    }

    fn seeds(&mut self) -> Option<Vec<u64>> {
        let items = self.array("seeds")?;
        let mut out = Vec::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            match v {
                Value::Integer(s) if *s >= 0 => out.push(*s as u64),
                _ => self.wrong(&format!("seeds[{i}]"), "a nonnegative integer", v),
            }
        }
        (out.len() == items.len()).then_some(out)
    }

    fn methods(&mut self) -> Option<Vec<Method>> {
        let items = self.array("methods")?;
        let mut out = Vec::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            match v.as_str().map(|s| (s, Method::parse(s))) {
                Some((_, Some(m))) => out.push(m),
                Some((s, None)) => self.errors.push(format!(
                    "methods[{i}]: unknown method \"{s}\" (expected one of {})",
                    Method::ALL.map(Method::as_str).join(", ")
                )),
                None => self.wrong(&format!("methods[{i}]"), "a string", v),
            }
        }
        (out.len() == items.len()).then_some(out)
    }

    fn deltas(&mut self) -> Option<Vec<DeltaSpec>> {
        if !self.table.contains_key("delta_list") {
            return Some(vec![DeltaSpec::Auto]);
        }
        let items = self.array("delta_list")?;
        let mut out = Vec::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            match (v, Self::number(v)) {
                (_, Some(x)) => out.push(DeltaSpec::Fixed(x)),
                (Value::String(s), None) if s == "auto" => out.push(DeltaSpec::Auto),
                _ => self.wrong(&format!("delta_list[{i}]"), "a number or \"auto\"", v),
            }
        }
        (out.len() == items.len()).then_some(out)
    }

    fn timestep(&mut self) -> Option<TimestepSpec> {
        let Some(v) = self.table.get("dt") else {
            return Some(TimestepSpec::Auto(DEFAULT_TIMESTEP_FRACTION));
        };
        if let Some(x) = Self::number(v) {
            return Some(TimestepSpec::Fixed(x));
        }
        let parsed = v.as_str().and_then(|s| {
            let inner = s.trim().strip_prefix("auto(")?.strip_suffix(')')?;
            inner.trim().parse::<f64>().ok()
        });
        match (parsed, v.as_str()) {
            (Some(c), _) => Some(TimestepSpec::Auto(c)),
            (None, Some("auto")) => Some(TimestepSpec::Auto(DEFAULT_TIMESTEP_FRACTION)),
            _ => {
                self.wrong("dt", "a number or \"auto(C)\"", v);
                None
            }
        }
    }

    fn forbid(&mut self, keys: &[&str], system: &str) {
        for key in keys {
            if self.table.contains_key(*key) {
                self.errors.push(format!("{key}: not used by system = \"{system}\""));
            }
        }
    }

    fn system(&mut self, base_dir: &Path) -> Option<SystemSpec> {
        self.required("system")?;
        let kind = self.string("system")?;
        match kind.as_str() {
            "heisenberg" => {
                self.forbid(&["spectrum_file", "levels", "probabilities"], "heisenberg");
                let sites = self.required("sites").and_then(|_| self.count("sites"));
                let coupling = self.float("coupling").unwrap_or(4.0);
                let periodic = self.boolean("periodic").unwrap_or(true);
                let reference = match self.string("reference").as_deref() {
                    None | Some("product") => Some(NeelKind::Product),
                    Some("superposition") => Some(NeelKind::Superposition),
                    Some(other) => {
                        self.errors.push(format!(
                            "reference: expected \"product\" or \"superposition\", got \"{other}\""
                        ));
                        None
                    }
                };
                Some(SystemSpec::Heisenberg {
                    sites: sites?,
                    coupling,
                    periodic,
                    reference: reference?,
                })
            }
            "spectrum_file" => {
                self.forbid(
                    &["sites", "coupling", "periodic", "reference", "levels", "probabilities"],
                    "spectrum_file",
                );
                let path = self
                    .required("spectrum_file")
                    .and_then(|_| self.string("spectrum_file"))?;
                Some(SystemSpec::SpectrumFile(base_dir.join(path)))
            }
            "synthetic" => {
                self.forbid(
                    &["sites", "coupling", "periodic", "reference", "spectrum_file"],
                    "synthetic",
                );
                let levels = self.required("levels").and_then(|_| self.floats("levels"));
                let probabilities = self
                    .required("probabilities")
                    .and_then(|_| self.floats("probabilities"));
                Some(SystemSpec::Synthetic {
                    levels: levels?,
                    probabilities: probabilities?,
                })
            }
            other => {
                self.errors.push(format!(
                    "system: expected \"heisenberg\", \"spectrum_file\" or \"synthetic\", got \"{other}\""
                ));
                None
            }
        }
    }
}
