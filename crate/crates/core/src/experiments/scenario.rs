//! Building systems, signals and the per-cell method runs of a sweep.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::baselines::{esprit_trace, prony_trace, qcels_trace, uvqpe_trace, vqpe_trace, BaselineConfig};
use crate::error::{Error, Result};
use crate::odmd::{run_odmd, OdmdConfig, PhaseWindow};
use crate::signal::{
    add_gaussian_noise, choose_timestep, generate_overlap, take_real_part, OverlapSignal, SignalParts, DEFAULT_ALPHA,
};
use crate::spectral::{
    affine_rescale, build_heisenberg, load_spectrum, neel_reference, spectral_decompose, SpectralModel,
};
use crate::trace::EstimateTrace;

use super::config::{DeltaSpec, Method, ScenarioConfig, SystemSpec, TimestepSpec};

/// Minimum embedding rows before ESPRIT starts, as for complex ODMD.
const ESPRIT_MIN_ROWS: usize = 2;

/// Exact spectral model of the configured system, in its original units.
pub fn build_system(system: &SystemSpec) -> Result<SpectralModel> {
    match system {
        SystemSpec::Heisenberg {
            sites,
            coupling,
            periodic,
            reference,
        } => {
            let h = build_heisenberg(*sites, *coupling, *periodic)?;
            let phi = neel_reference(*sites, *reference)?;
            spectral_decompose(&h, &phi)
        }
        SystemSpec::SpectrumFile(path) => load_spectrum(path),
        SystemSpec::Synthetic { levels, probabilities } => {
            SpectralModel::new(levels.clone(), probabilities.clone(), "synthetic")
        }
    }
}

/// A spectrum placed where one signal kind can resolve its ground level,
/// with the timestep chosen for it.
#[derive(Debug, Clone)]
pub struct WorkingSystem {
    pub parts: SignalParts,
    /// Energies in working units; `affine` maps original units onto them.
    pub spec: SpectralModel,
    pub dt: f64,
}

fn auto_step(c: f64, e_min: f64, e_max: f64) -> Result<f64> {
    if e_max > e_min {
        choose_timestep(e_min, e_max, c, None)
    } else {
        Ok(1.0)
    }
}

/// Place `raw` for `parts` signals read in `window`.
///
/// Complex signals see the spectrum unchanged. Real-only signals need the
/// ground level to carry the largest magnitude, so the spectrum is shifted
/// to end at zero when `|E_0|` is not already the spectral norm. The
/// positive window needs nonnegative energies, so it shifts `E_0` to zero
/// when `E_0 < 0`. With `rescale`, the spectrum is instead mapped onto
/// `C` times the resolvable band and `Δt = 1`.
pub fn working_system(
    raw: &SpectralModel,
    parts: SignalParts,
    window: PhaseWindow,
    rescale: bool,
    dt: TimestepSpec,
) -> Result<WorkingSystem> {
    let real = parts == SignalParts::RealOnly;
    if rescale {
        let TimestepSpec::Auto(c) = dt else {
            return Err(Error::Validation("rescaled systems need an automatic timestep".into()));
        };
        let (lo, hi) = match (window, real) {
            (PhaseWindow::Symmetric, false) => (-c * PI, c * PI),
            (PhaseWindow::Symmetric, true) => (-c * PI, 0.0),
            (PhaseWindow::Positive, false) => (0.0, 2.0 * c * PI),
            (PhaseWindow::Positive, true) => (0.0, c * PI),
        };
        let spec = if raw.max_energy() > raw.ground_energy() {
            affine_rescale(raw, lo, hi)?
        } else {
            affine_rescale(raw, lo, lo)?
        };
        return Ok(WorkingSystem { parts, spec, dt: 1.0 });
    }
    let (e0, emax) = (raw.ground_energy(), raw.max_energy());
    let spec = match window {
        PhaseWindow::Symmetric if real && !(-e0 > emax) => raw.shifted(-emax),
        PhaseWindow::Positive if e0 < 0.0 => raw.shifted(-e0),
        _ => raw.clone(),
    };
    let dt = match dt {
        TimestepSpec::Fixed(dt) => dt,
        TimestepSpec::Auto(c) => {
            let norm = spec.spectral_norm();
            match (window, real) {
                (PhaseWindow::Symmetric, _) | (PhaseWindow::Positive, true) => auto_step(c, -norm, norm)?,
                (PhaseWindow::Positive, false) => auto_step(c, 0.0, spec.max_energy())?,
            }
        }
    };
    Ok(WorkingSystem { parts, spec, dt })
}

/// Grid coordinates of one method run.
#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub p0: Option<f64>,
    pub method: Method,
    pub eps: f64,
    pub delta: DeltaSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Trace(EstimateTrace),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: CellKey,
    /// Resolved relative singular-value cutoff.
    pub threshold_rel: f64,
    pub dt: f64,
    pub outcome: CellOutcome,
}

impl Cell {
    pub fn trace(&self) -> Option<&EstimateTrace> {
        match &self.outcome {
            CellOutcome::Trace(t) => Some(t),
            CellOutcome::Failed(_) => None,
        }
    }

    pub fn failed(&self) -> bool {
        matches!(self.outcome, CellOutcome::Failed(_))
    }

    pub fn steps_to_target(&self, target: f64) -> Option<usize> {
        self.trace()?.steps_to_target(target)
    }

    pub fn observables_to_target(&self, target: f64) -> Option<usize> {
        self.trace()?.observables_to_target(target)
    }

    pub fn final_error(&self) -> Option<f64> {
        self.trace()?.final_error()
    }

    pub fn success(&self, target: f64) -> bool {
        self.steps_to_target(target).is_some()
    }
}

/// Traces of every grid cell, in canonical order: `p0`, method, `eps`,
/// `delta`, seed, each following its configured list order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub label: String,
    /// Original units.
    pub target_accuracy: f64,
    pub reference_energy: f64,
    pub cells: Vec<Cell>,
}

impl SweepReport {
    pub fn empty(label: impl Into<String>, target_accuracy: f64, reference_energy: f64) -> Self {
        Self {
            label: label.into(),
            target_accuracy,
            reference_energy,
            cells: Vec::new(),
        }
    }

    pub fn failed_count(&self) -> usize {
        self.cells.iter().filter(|c| c.failed()).count()
    }
}

/// Clean signals for the working systems a method list needs.
#[derive(Debug, Clone)]
pub struct PreparedSignals {
    pub complex: Option<(WorkingSystem, OverlapSignal)>,
    pub real: Option<(WorkingSystem, OverlapSignal)>,
}

/// One clean signal per working system, `max_steps` samples long.
pub fn prepare_signals(raw: &SpectralModel, cfg: &ScenarioConfig) -> Result<PreparedSignals> {
    let build = |parts: SignalParts| -> Result<(WorkingSystem, OverlapSignal)> {
        let ws = working_system(raw, parts, cfg.window, cfg.rescale, cfg.dt)?;
        let clean = generate_overlap(&ws.spec, ws.dt, cfg.max_steps - 1)?;
        let clean = match parts {
            SignalParts::Complex => clean,
            SignalParts::RealOnly => take_real_part(&clean),
        };
        Ok((ws, clean))
    };
    let complex = cfg.methods.iter().any(|m| !m.real_only());
    let real = cfg.methods.iter().any(|m| m.real_only());
    Ok(PreparedSignals {
        complex: complex.then(|| build(SignalParts::Complex)).transpose()?,
        real: real.then(|| build(SignalParts::RealOnly)).transpose()?,
    })
}

fn resolve_delta(delta: DeltaSpec, eps: f64) -> f64 {
    match delta {
        DeltaSpec::Auto => OdmdConfig::threshold_for_noise(eps),
        DeltaSpec::Fixed(v) => v,
    }
}

fn run_method(
    method: Method,
    ws: &WorkingSystem,
    noisy: &OverlapSignal,
    threshold_rel: f64,
    cfg: &ScenarioConfig,
    reference: f64,
) -> Result<EstimateTrace> {
    let mut ocfg = OdmdConfig::new(ws.dt, ws.parts);
    ocfg.threshold_rel = threshold_rel;
    ocfg.phase_window = cfg.window;
    ocfg.max_steps = cfg.max_steps;
    ocfg.affine = ws.spec.affine_map();
    let bcfg = BaselineConfig::from(&ocfg);
    let reference = Some(reference);
    match method {
        Method::Odmd | Method::OdmdReal => run_odmd(noisy, &ocfg, reference),
        Method::Uvqpe => uvqpe_trace(noisy, &bcfg, reference),
        Method::Vqpe => vqpe_trace(noisy, &ws.spec, &bcfg, reference),
        Method::Qcels => qcels_trace(noisy, &bcfg, reference),
        Method::Esprit => esprit_trace(noisy, &bcfg, DEFAULT_ALPHA, ESPRIT_MIN_ROWS, reference),
        Method::Prony => prony_trace(noisy, &bcfg, ws.spec.len(), reference),
    }
}

fn run_grid(raw: &SpectralModel, cfg: &ScenarioConfig, p0: Option<f64>, reference: f64) -> Result<Vec<Cell>> {
    let prepared = prepare_signals(raw, cfg)?;
    let mut keys = Vec::new();
    for &method in &cfg.methods {
        for &eps in &cfg.eps_list {
            for &delta in &cfg.delta_list {
                for &seed in &cfg.seeds {
                    keys.push(CellKey {
                        p0,
                        method,
                        eps,
                        delta,
                        seed,
                    });
                }
            }
        }
    }
    // collect() on an indexed parallel iterator keeps input order
    let cells = keys
        .into_par_iter()
        .map(|key| {
            let (ws, clean) = if key.method.real_only() {
                prepared.real.as_ref()
            } else {
                prepared.complex.as_ref()
            }
            .expect("signal prepared for every configured method");
            let threshold_rel = resolve_delta(key.delta, key.eps);
            let outcome = add_gaussian_noise(clean, key.eps, key.seed)
                .and_then(|noisy| run_method(key.method, ws, &noisy, threshold_rel, cfg, reference));
            Cell {
                threshold_rel,
                dt: ws.dt,
                outcome: match outcome {
                    Ok(trace) => CellOutcome::Trace(trace),
                    Err(e) => CellOutcome::Failed(e.to_string()),
                },
                key,
            }
        })
        .collect();
    Ok(cells)
}

/// Run every configured cell. Per-cell numerical failures are recorded in
/// the report; only configuration and system-construction errors abort.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let raw = build_system(&cfg.system)?;
    let reference = raw.original_ground_energy();
    let mut report = SweepReport::empty(cfg.label.clone(), cfg.target_accuracy, reference);
    match &cfg.p0_list {
        None => report.cells = run_grid(&raw, cfg, None, reference)?,
        Some(p0s) => {
            for &p0 in p0s {
                let adjusted = raw.with_ground_probability(p0)?;
                report.cells.extend(run_grid(&adjusted, cfg, Some(p0), reference)?);
            }
        }
    }
    Ok(report)
}

/// Run `base` once per ground-state probability in `p0_list`.
pub fn sweep_overlap(base: &ScenarioConfig, p0_list: &[f64]) -> Result<SweepReport> {
    if let Some(&bad) = p0_list.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Validation(format!(
            "ground probability must lie in (0, 1], got {bad}"
        )));
    }
    let cfg = ScenarioConfig {
        p0_list: Some(p0_list.to_vec()),
        ..base.clone()
    };
    run_scenario(&cfg)
}
