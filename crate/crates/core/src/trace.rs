//! Per-step estimate histories shared by ODMD and the baseline methods.

use std::io::Write;

use crate::error::{Error, Result};
use crate::spectral::AffineMap;

/// Trace CSV columns, in order. `method` is prepended when requested.
pub const TRACE_COLUMNS: [&str; 8] = [
    "k",
    "n_observables",
    "energy",
    "abs_error",
    "rank_kept",
    "sigma_max",
    "sigma_min_kept",
    "skipped",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Index of the newest sample used, so `s_0 … s_k` were measured.
    pub k: usize,
    pub n_observables: usize,
    /// Estimate in original units; `None` when the step was skipped.
    pub energy: Option<f64>,
    pub abs_error: Option<f64>,
    pub rank_kept: usize,
    pub sigma_max: Option<f64>,
    pub sigma_min_kept: Option<f64>,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTrace {
    pub method: String,
    pub observables_per_step: usize,
    /// Original-to-window map, used for tolerances stated in window units.
    pub affine: AffineMap,
    pub reference_energy: Option<f64>,
    pub records: Vec<TraceRecord>,
}

impl EstimateTrace {
    pub fn new(
        method: impl Into<String>,
        observables_per_step: usize,
        affine: AffineMap,
        reference_energy: Option<f64>,
    ) -> Self {
        Self {
            method: method.into(),
            observables_per_step,
            affine,
            reference_energy,
            records: Vec::new(),
        }
    }

    fn check_order(&self, k: usize) {
        if let Some(last) = self.records.last() {
            assert!(k > last.k, "trace steps must increase: {k} after {}", last.k);
        }
    }

    pub fn push_estimate(
        &mut self,
        k: usize,
        energy: f64,
        rank_kept: usize,
        sigma_max: Option<f64>,
        sigma_min_kept: Option<f64>,
    ) {
        self.check_order(k);
        self.records.push(TraceRecord {
            k,
            n_observables: (k + 1) * self.observables_per_step,
            energy: Some(energy),
            abs_error: self.reference_energy.map(|e0| (energy - e0).abs()),
            rank_kept,
            sigma_max,
            sigma_min_kept,
            skipped: false,
        });
    }

    pub fn push_skipped(&mut self, k: usize, sigma_max: Option<f64>) {
        self.check_order(k);
        self.records.push(TraceRecord {
            k,
            n_observables: (k + 1) * self.observables_per_step,
            energy: None,
            abs_error: None,
            rank_kept: 0,
            sigma_max,
            sigma_min_kept: None,
            skipped: true,
        });
    }

    pub fn valid(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| !r.skipped)
    }

    pub fn skipped_count(&self) -> usize {
        self.records.iter().filter(|r| r.skipped).count()
    }

    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.iter().rev().find(|r| !r.skipped)
    }

    pub fn final_energy(&self) -> Option<f64> {
        self.final_record().and_then(|r| r.energy)
    }

    pub fn final_error(&self) -> Option<f64> {
        self.final_record().and_then(|r| r.abs_error)
    }

    /// First valid record from which every later valid error stays
    /// `<= target`.
    pub fn first_within(&self, target: f64) -> Option<&TraceRecord> {
        let mut candidate = None;
        for r in self.valid() {
            match r.abs_error {
                Some(err) if err <= target => {
                    if candidate.is_none() {
                        candidate = Some(r);
                    }
                }
                _ => candidate = None,
            }
        }
        candidate
    }

    /// Step index `k` at which the error enters the target band for good.
    pub fn steps_to_target(&self, target: f64) -> Option<usize> {
        self.first_within(target).map(|r| r.k)
    }

    pub fn observables_to_target(&self, target: f64) -> Option<usize> {
        self.first_within(target).map(|r| r.n_observables)
    }

    /// First step `k` whose estimate and the following `run - 1` valid
    /// estimates span at most `tol` in window units.
    pub fn stabilized_at(&self, tol: f64, run: usize) -> Option<usize> {
        let valid: Vec<(usize, f64)> = self
            .valid()
            .filter_map(|r| r.energy.map(|e| (r.k, self.affine.apply(e))))
            .collect();
        if run == 0 || valid.len() < run {
            return None;
        }
        valid.windows(run).find_map(|w| {
            let lo = w.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
            let hi = w.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            (hi - lo <= tol).then_some(w[0].0)
        })
    }

    pub fn write_csv<W: Write>(&self, out: W, with_method: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = Vec::with_capacity(TRACE_COLUMNS.len() + 1);
        if with_method {
            header.push("method");
        }
        header.extend(TRACE_COLUMNS);
        w.write_record(&header)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = Vec::with_capacity(header.len());
            if with_method {
                row.push(self.method.clone());
            }
            row.extend([
                r.k.to_string(),
                r.n_observables.to_string(),
                opt(r.energy),
                opt(r.abs_error),
                r.rank_kept.to_string(),
                opt(r.sigma_max),
                opt(r.sigma_min_kept),
                u8::from(r.skipped).to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush().map_err(Error::from)
    }

    pub fn to_csv_string(&self, with_method: bool) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, with_method)?;
        String::from_utf8(buf).map_err(|e| Error::Validation(e.to_string()))
    }
}
