//! Configuration-driven sweeps over methods, noise levels, thresholds,
//! seeds and ground-state overlaps.

pub mod config;
pub mod report;
pub mod scenario;
pub mod svg;

pub use config::{DeltaSpec, Method, ScenarioConfig, SystemSpec, TimestepSpec, CHEMICAL_ACCURACY};
pub use report::{emit_report, Format, Manifest, ManifestEntry};
pub use scenario::{build_system, run_scenario, sweep_overlap, Cell, CellKey, CellOutcome, SweepReport};
