//! Observable dynamic mode decomposition.
//!
//! The propagator `A = X' X⁺` is never formed. After truncating the SVD
//! `X ≈ U_r Σ_r V_r†`, the reduced matrix
//! `B = Σ_r^{-1/2} U_r† X' V_r Σ_r^{-1/2}` shares the nonzero spectrum of
//! `A` and is what gets diagonalised. Ground-state weights are the left
//! eigenvector of `B` lifted back to the `d`-dimensional embedding.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::{eig_with_vectors, eigenvalues, EigenDecomposition};
use crate::error::{Error, Result};
use crate::signal::{
    default_alpha, embedding_rows, hankelize_rows, largest_layout, HankelPair, OverlapSignal, SignalParts,
};
use crate::spectral::{AffineMap, SpectralModel};
use crate::trace::EstimateTrace;

type C64 = Complex64;

/// Relative cutoff for noiseless data.
pub const DEFAULT_THRESHOLD: f64 = 1e-8;

/// Ratio `δ̃ / ε` used when the noise level is known.
pub const THRESHOLD_PER_NOISE: f64 = 10.0;

/// Upper edge of the positive phase window, just above zero so that an
/// exactly real positive eigenvalue reads as phase `0` and not `-2π`.
pub const POSITIVE_WINDOW_EDGE: f64 = 1e-9;

/// Eigenphases closer than this are considered tied.
pub const PHASE_TIE: f64 = 1e-12;

/// Eigenvalues this small carry no phase and are only selected as a last
/// resort.
const NEGLIGIBLE_MODULUS: f64 = 1e-10;

/// Minimum separation between the ground eigenvalue and any other.
pub const GROUND_SEPARATION: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseWindow {
    /// Phases in `(-π, π]`; energies in `[-π/Δt, π/Δt)`.
    Symmetric,
    /// Phases in `(-2π, 0]`; energies in `[0, 2π/Δt)`.
    Positive,
}

impl PhaseWindow {
    pub fn phase(self, lambda: C64) -> f64 {
        let a = lambda.arg();
        match self {
            PhaseWindow::Symmetric if a <= -PI => a + 2.0 * PI,
            PhaseWindow::Symmetric => a,
            PhaseWindow::Positive if a > POSITIVE_WINDOW_EDGE => a - 2.0 * PI,
            PhaseWindow::Positive => a,
        }
    }

    /// Energies that the window can represent at timestep `dt`.
    pub fn energy_range(self, dt: f64) -> (f64, f64) {
        match self {
            PhaseWindow::Symmetric => (-PI / dt, PI / dt),
            PhaseWindow::Positive => (0.0, 2.0 * PI / dt),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseWindow::Symmetric => "symmetric",
            PhaseWindow::Positive => "positive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdmdConfig {
    pub dt: f64,
    pub threshold_rel: f64,
    pub alpha: f64,
    pub parts: SignalParts,
    pub phase_window: PhaseWindow,
    /// Samples `s_0 … s_{max_steps-1}` are used at most.
    pub max_steps: usize,
    /// Original-to-window map of the spectrum that produced the signal.
    pub affine: AffineMap,
    /// Stabilisation band in window units.
    pub stabilization_tol: f64,
    pub stabilization_run: usize,
}

impl OdmdConfig {
    pub fn new(dt: f64, parts: SignalParts) -> Self {
        Self {
            dt,
            threshold_rel: DEFAULT_THRESHOLD,
            alpha: default_alpha(parts),
            parts,
            phase_window: PhaseWindow::Symmetric,
            max_steps: 250,
            affine: AffineMap::IDENTITY,
            stabilization_tol: 1e-6,
            stabilization_run: 10,
        }
    }

    /// `δ̃ = 10 ε` for noisy data, the noiseless default otherwise.
    pub fn threshold_for_noise(eps: f64) -> f64 {
        if eps > 0.0 {
            THRESHOLD_PER_NOISE * eps
        } else {
            DEFAULT_THRESHOLD
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.threshold_rel > 0.0 && self.threshold_rel < 1.0) {
            problems.push(format!("threshold_rel must lie in (0, 1), got {}", self.threshold_rel));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            problems.push(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.stabilization_tol >= 0.0) {
            problems.push(format!(
                "stabilization_tol must be >= 0, got {}",
                self.stabilization_tol
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    /// Smallest embedding dimension at which the driver starts estimating.
    pub fn min_rows(&self) -> usize {
        match self.parts {
            SignalParts::Complex => 2,
            SignalParts::RealOnly => 4,
        }
    }
}

/// Leading singular triplets of a matrix, with the full singular spectrum.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `rows × r`.
    pub u: DMatrix<C64>,
    /// `cols × r`.
    pub v: DMatrix<C64>,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

impl TruncatedSvd {
    pub fn kept(&self) -> &[f64] {
        &self.singular_values[..self.rank]
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }
}

/// SVD keeping `σ_ℓ > threshold_rel · σ_max`.
pub fn truncated_svd(x: &DMatrix<C64>, threshold_rel: f64) -> Result<TruncatedSvd> {
    if x.is_empty() {
        return Err(Error::Dimension("cannot decompose an empty matrix".into()));
    }
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Validation("data matrix has non-finite entries".into()));
    }
    let mat = faer::Mat::<C64>::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]);
    let svd = mat.thin_svd().map_err(|e| Error::NoConvergence {
        iterations: 0,
        dim: x.nrows().min(x.ncols()),
        dump: format!("svd failed: {e:?}\n{x}"),
    })?;
    let s = svd.S().column_vector();
    let singular_values: Vec<f64> = (0..s.nrows()).map(|i| s[i].re).collect();
    let sigma_max = singular_values[0];
    let cutoff = threshold_rel * sigma_max;
    let rank = singular_values.iter().take_while(|&&s| s > cutoff && s > 0.0).count();
    if rank == 0 {
        return Err(Error::EmptyRank {
            threshold_rel,
            sigma_max,
        });
    }
    let (u, v) = (svd.U(), svd.V());
    Ok(TruncatedSvd {
        u: DMatrix::from_fn(x.nrows(), rank, |i, j| u[(i, j)]),
        v: DMatrix::from_fn(x.ncols(), rank, |i, j| v[(i, j)]),
        singular_values,
        rank,
    })
}

#[derive(Debug, Clone)]
pub struct SystemMatrix {
    /// `r × r` reduced propagator.
    pub reduced: DMatrix<C64>,
    pub rank_kept: usize,
    /// All singular values of `X`, descending.
    pub singular_values: Vec<f64>,
    pub d: usize,
    pub k: usize,
    /// Kept left singular vectors of `X`, `d × r`.
    pub u_kept: DMatrix<C64>,
}

impl SystemMatrix {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values[0]
    }

    pub fn sigma_min_kept(&self) -> f64 {
        self.singular_values[self.rank_kept - 1]
    }
}

pub fn system_matrix(pair: &HankelPair, threshold_rel: f64) -> Result<SystemMatrix> {
    if !(threshold_rel > 0.0 && threshold_rel < 1.0) {
        return Err(Error::Validation(format!(
            "threshold_rel must lie in (0, 1), got {threshold_rel}"
        )));
    }
    if pair.x.shape() != pair.x_prime.shape() {
        return Err(Error::Dimension(format!(
            "X is {:?} but X' is {:?}",
            pair.x.shape(),
            pair.x_prime.shape()
        )));
    }
    let svd = truncated_svd(&pair.x, threshold_rel)?;
    let r = svd.rank;
    let inv_root: Vec<f64> = svd.kept().iter().map(|s| s.sqrt().recip()).collect();
    let core = svd.u.adjoint() * &pair.x_prime * &svd.v;
    let reduced = DMatrix::from_fn(r, r, |i, j| core[(i, j)] * (inv_root[i] * inv_root[j]));
    Ok(SystemMatrix {
        reduced,
        rank_kept: r,
        singular_values: svd.singular_values,
        d: pair.d,
        k: pair.k,
        u_kept: svd.u,
    })
}

/// All eigenvalues of the reduced matrix, with left and right eigenvectors.
pub fn eig_general(m: &SystemMatrix) -> Result<EigenDecomposition> {
    eig_with_vectors(&m.reduced)
}

/// Index and window phase of the eigenvalue with maximal phase.
///
/// Ties within `PHASE_TIE` go to the larger modulus, then the smaller index.
pub fn select_ground(eigs: &[C64], window: PhaseWindow) -> Option<(usize, f64)> {
    let scale = eigs.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let pick = |allow_small: bool| {
        let mut best: Option<(usize, f64)> = None;
        for (i, &l) in eigs.iter().enumerate() {
            if !allow_small && l.norm() <= NEGLIGIBLE_MODULUS * scale {
                continue;
            }
            let p = window.phase(l);
            best = match best {
                None => Some((i, p)),
                Some((_, q)) if p > q + PHASE_TIE => Some((i, p)),
                Some((j, q)) if (p - q).abs() <= PHASE_TIE && l.norm() > eigs[j].norm() => Some((i, p)),
                keep => keep,
            };
        }
        best
    };
    pick(false).or_else(|| pick(true))
}

/// `Ẽ₀ = -arg(λ̃₀)/Δt` for the maximal-phase eigenvalue, in original
/// units. `NaN` for an empty list.
pub fn ground_energy_from_eigs(eigs: &[C64], dt: f64, window: PhaseWindow, affine: &AffineMap) -> f64 {
    match select_ground(eigs, window) {
        Some((_, phase)) => affine.invert(-phase / dt),
        None => f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenEstimate {
    pub eigenvalues: Vec<C64>,
    pub ground_index: usize,
    /// Original units.
    pub energy: f64,
    /// Window units, i.e. the units of the signal.
    pub window_energy: f64,
    pub phase: f64,
}

pub fn estimate_from_matrix(
    m: &SystemMatrix,
    dt: f64,
    window: PhaseWindow,
    affine: &AffineMap,
) -> Result<EigenEstimate> {
    let eigenvalues = eigenvalues(&m.reduced)?;
    let (ground_index, phase) =
        select_ground(&eigenvalues, window).ok_or_else(|| Error::Dimension("reduced matrix is empty".into()))?;
    let window_energy = -phase / dt;
    Ok(EigenEstimate {
        eigenvalues,
        ground_index,
        energy: affine.invert(window_energy),
        window_energy,
        phase,
    })
}

/// One ODMD estimate from a Hankel pair.
pub fn estimate(pair: &HankelPair, cfg: &OdmdConfig) -> Result<(SystemMatrix, EigenEstimate)> {
    let m = system_matrix(pair, cfg.threshold_rel)?;
    let est = estimate_from_matrix(&m, cfg.dt, cfg.phase_window, &cfg.affine)?;
    Ok((m, est))
}

fn check_signal(sig: &OverlapSignal, cfg: &OdmdConfig) -> Result<OverlapSignal> {
    if (sig.dt - cfg.dt).abs() > 1e-14 * cfg.dt.abs().max(1.0) {
        return Err(Error::Validation(format!(
            "signal timestep {} differs from configured {}",
            sig.dt, cfg.dt
        )));
    }
    match (sig.parts, cfg.parts) {
        (SignalParts::RealOnly, SignalParts::Complex) => Err(Error::Validation(
            "complex estimation needs the imaginary part, but the signal is real-only".into(),
        )),
        (SignalParts::Complex, SignalParts::RealOnly) => Ok(crate::signal::take_real_part(sig)),
        _ => Ok(sig.clone()),
    }
}

/// Samples needed before the driver records its first step.
pub fn first_step_samples(cfg: &OdmdConfig) -> usize {
    let min_rows = cfg.min_rows();
    let k = (0..)
        .find(|&k| embedding_rows(k, cfg.alpha) >= min_rows)
        .expect("alpha > 0 eventually reaches any row count");
    // `d` can overshoot `min_rows` by one step of the floor.
    let d = embedding_rows(k, cfg.alpha);
    k + d + 1
}

/// Estimate the ground energy at every step `k < max_steps`, each time
/// from the prefix `s_0 … s_k` and the largest Hankel pair it supports.
pub fn run_odmd(sig: &OverlapSignal, cfg: &OdmdConfig, reference_energy: Option<f64>) -> Result<EstimateTrace> {
    cfg.validate()?;
    let sig = check_signal(sig, cfg)?;
    let method = match cfg.parts {
        SignalParts::Complex => "odmd",
        SignalParts::RealOnly => "odmd_real",
    };
    let mut trace = EstimateTrace::new(method, cfg.parts.observables_per_step(), cfg.affine, reference_energy);
    let last = cfg.max_steps.min(sig.len());
    let min_rows = cfg.min_rows();
    for k in 0..last {
        let Some((big_k, d)) = largest_layout(k + 1, cfg.alpha) else {
            continue;
        };
        if d < min_rows {
            continue;
        }
        let pair = hankelize_rows(&sig, big_k, d)?;
        match estimate(&pair, cfg) {
            Ok((m, est)) => trace.push_estimate(
                k,
                est.energy,
                m.rank_kept,
                Some(m.sigma_max()),
                Some(m.sigma_min_kept()),
            ),
            Err(Error::EmptyRank { sigma_max, .. }) => trace.push_skipped(k, Some(sigma_max)),
            Err(Error::NoConvergence { .. }) => trace.push_skipped(k, None),
            Err(e) => return Err(e),
        }
    }
    if trace.records.is_empty() {
        return Err(Error::InsufficientSamples {
            required: first_step_samples(cfg),
            available: last,
        });
    }
    Ok(trace)
}

/// Coefficients `z_ℓ` of `|ψ̃₀⟩ = Σ_ℓ z_ℓ e^{-iHℓΔt} |φ₀⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundWeights {
    pub z: Vec<C64>,
    pub normalized: bool,
    pub dt: f64,
    pub ground_eigenvalue: C64,
}

fn polynomial_at(z: &[C64], x: C64) -> C64 {
    z.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

/// Lift the left eigenvector of the ground eigenvalue to the embedding.
///
/// The global phase is fixed so that `Σ_ℓ z_ℓ λ̃₀^ℓ` is real and positive.
pub fn ground_state_weights(
    pair: &HankelPair,
    m: &SystemMatrix,
    window: PhaseWindow,
    dt: f64,
) -> Result<GroundWeights> {
    if pair.d != m.d || pair.k != m.k {
        return Err(Error::Dimension(format!(
            "system matrix built for (d, K) = ({}, {}) but pair is ({}, {})",
            m.d, m.k, pair.d, pair.k
        )));
    }
    let eig = eig_general(m)?;
    let (idx, _) =
        select_ground(&eig.values, window).ok_or_else(|| Error::Dimension("reduced matrix is empty".into()))?;
    let lambda = eig.values[idx];
    let separation = eig
        .values
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != idx)
        .map(|(_, l)| (l - lambda).norm())
        .fold(f64::INFINITY, f64::min);
    if separation <= GROUND_SEPARATION {
        return Err(Error::DegenerateGround { separation });
    }
    let r = m.rank_kept;
    let inv_root: Vec<f64> = m.singular_values[..r].iter().map(|s| s.sqrt().recip()).collect();
    let scaled = DMatrix::from_fn(1, r, |_, j| eig.left[(idx, j)] * inv_root[j]);
    let lifted = scaled * m.u_kept.adjoint();
    let mut z: Vec<C64> = lifted.iter().copied().collect();
    let anchor = polynomial_at(&z, lambda);
    if anchor.norm() > 0.0 {
        let gauge = anchor.conj() / anchor.norm();
        z.iter_mut().for_each(|c| *c *= gauge);
    }
    Ok(GroundWeights {
        z,
        normalized: false,
        dt,
        ground_eigenvalue: lambda,
    })
}

/// `Σ_n p_n |Σ_ℓ z_ℓ e^{-iE_nℓΔt}|²`, the squared norm of `|ψ̃₀⟩`.
pub fn gram_norm_squared(w: &GroundWeights, spec: &SpectralModel) -> f64 {
    spec.energies
        .iter()
        .zip(&spec.probabilities)
        .map(|(&e, &p)| p * polynomial_at(&w.z, C64::from_polar(1.0, -e * w.dt)).norm_sqr())
        .sum()
}

pub fn normalize(w: &GroundWeights, spec: &SpectralModel) -> Result<GroundWeights> {
    let n2 = gram_norm_squared(w, spec);
    if !(n2 > 0.0) || !n2.is_finite() {
        return Err(Error::Consistency(format!(
            "ground-state estimate has squared norm {n2:e}; cannot normalize"
        )));
    }
    let inv = n2.sqrt().recip();
    Ok(GroundWeights {
        z: w.z.iter().map(|c| c * inv).collect(),
        normalized: true,
        ..w.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Energy,
    EnergySquared,
}

impl Observable {
    fn eval(self, e: f64) -> f64 {
        match self {
            Observable::Energy => e,
            Observable::EnergySquared => e * e,
        }
    }
}

/// `⟨ψ̃₀|O|ψ̃₀⟩ = Σ_{k,ℓ} z_k* z_ℓ m_{ℓ-k}` with moments
/// `m_j = Σ_n p_n O(E_n) e^{-iE_n jΔt}`, in the units of `spec`.
pub fn expectation_from_weights(w: &GroundWeights, spec: &SpectralModel, observable: Observable) -> Result<f64> {
    if !w.normalized {
        return Err(Error::Validation("weights must be normalized first".into()));
    }
    let d = w.z.len();
    if d == 0 {
        return Err(Error::Dimension("empty weight vector".into()));
    }
    // moments[d - 1 + j] = m_j for j in -(d-1)..=(d-1)
    let moments: Vec<C64> = (0..2 * d - 1)
        .map(|i| {
            let j = i as f64 - (d as f64 - 1.0);
            spec.energies
                .iter()
                .zip(&spec.probabilities)
                .map(|(&e, &p)| C64::from_polar(p * observable.eval(e), -e * j * w.dt))
                .sum()
        })
        .collect();
    let mut total = C64::new(0.0, 0.0);
    for (k, zk) in w.z.iter().enumerate() {
        let mut row = C64::new(0.0, 0.0);
        for (l, zl) in w.z.iter().enumerate() {
            row += zl * moments[d - 1 + l - k];
        }
        total += zk.conj() * row;
    }
    let scale = w.z.iter().map(|c| c.norm()).sum::<f64>().powi(2)
        * spec
            .energies
            .iter()
            .map(|&e| observable.eval(e).abs())
            .fold(1.0, f64::max);
    if total.im.abs() > 1e-8 * scale {
        return Err(Error::Consistency(format!(
            "expectation value has imaginary residue {:e}",
            total.im
        )));
    }
    Ok(total.re)
}

/// `‖H|ψ̃₀⟩ − e0|ψ̃₀⟩‖ / ‖H‖` with `‖H‖ = max_n |E_n|`.
pub fn residual_norm(w: &GroundWeights, spec: &SpectralModel, e0: f64) -> Result<f64> {
    if !e0.is_finite() {
        return Err(Error::Validation(format!("e0 must be finite, got {e0}")));
    }
    let h = expectation_from_weights(w, spec, Observable::Energy)?;
    let h2 = expectation_from_weights(w, spec, Observable::EnergySquared)?;
    let norm = spec.spectral_norm();
    let radicand = h2 - 2.0 * e0 * h + e0 * e0;
    if radicand < -1e-10 * norm.max(e0.abs()).max(1.0).powi(2) {
        return Err(Error::Consistency(format!("negative squared residual {radicand:e}")));
    }
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(radicand.max(0.0).sqrt() / norm)
}
