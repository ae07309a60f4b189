//! Reference estimators run on the same overlap data as ODMD: unitary and
//! Hamiltonian subspace diagonalisation, single-mode least-squares phase
//! fitting, the shift-invariance (ESPRIT) pencil, and full Prony.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::eigen::{eigenvalues, hermitian_eigen};
use crate::error::{Error, Result};
use crate::odmd::{select_ground, truncated_svd, OdmdConfig, PhaseWindow};
use crate::signal::{
    generate_weighted_overlap, hankel_matrix, largest_layout, perturb_series, NoiseStream, OverlapSignal, SignalParts,
};
use crate::spectral::{AffineMap, SpectralModel};
use crate::trace::EstimateTrace;

type C64 = Complex64;

/// θ grid points for the global QCELS stage.
pub const QCELS_GRID: usize = 512;

/// Stopping width of the golden-section refinement.
pub const QCELS_TOLERANCE: f64 = 1e-10;

/// Vandermonde condition number above which Prony amplitudes are flagged.
pub const PRONY_CONDITION_LIMIT: f64 = 1e12;

/// Smallest subspace dimension the baseline drivers start from.
pub const MIN_SUBSPACE: usize = 2;

/// Settings shared by the baseline estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub dt: f64,
    pub threshold_rel: f64,
    pub phase_window: PhaseWindow,
    pub affine: AffineMap,
    pub max_steps: usize,
}

impl From<&OdmdConfig> for BaselineConfig {
    fn from(cfg: &OdmdConfig) -> Self {
        Self {
            dt: cfg.dt,
            threshold_rel: cfg.threshold_rel,
            phase_window: cfg.phase_window,
            affine: cfg.affine,
            max_steps: cfg.max_steps,
        }
    }
}

impl BaselineConfig {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.threshold_rel > 0.0 && self.threshold_rel < 1.0) {
            return Err(Error::Validation(format!(
                "threshold_rel must lie in (0, 1), got {}",
                self.threshold_rel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    /// Original units.
    pub energy: f64,
    pub window_energy: f64,
    /// Unit-circle eigenvalues, or energies (window units) for VQPE.
    pub eigenvalues: Vec<C64>,
    pub rank_kept: usize,
    pub sigma_max: Option<f64>,
    pub sigma_min_kept: Option<f64>,
}

fn require_complex(sig: &OverlapSignal, method: &str) -> Result<()> {
    match sig.parts {
        SignalParts::Complex => Ok(()),
        SignalParts::RealOnly => Err(Error::Validation(format!("{method} needs a complex signal"))),
    }
}

/// `a_{j-i}` with `a_{-n} = conj(a_n)` and `a_0` read as `Re a_0`.
fn toeplitz_hermitian(a: &[C64], m: usize, shift: isize) -> DMatrix<C64> {
    DMatrix::from_fn(m, m, |i, j| {
        let n = j as isize - i as isize + shift;
        if n == 0 {
            C64::new(a[0].re, 0.0)
        } else if n > 0 {
            a[n as usize]
        } else {
            a[(-n) as usize].conj()
        }
    })
}

/// Overlap matrix `S_ij = s_{j-i}`, `m × m`.
pub fn overlap_matrix(s: &[C64], m: usize) -> Result<DMatrix<C64>> {
    if s.len() < m {
        return Err(Error::InsufficientSamples {
            required: m,
            available: s.len(),
        });
    }
    Ok(toeplitz_hermitian(s, m, 0))
}

/// Projection of `S` onto eigenvectors with eigenvalue `> δ̃ · λ_max`.
#[derive(Debug, Clone)]
pub struct SubspaceProjection {
    /// `m × r` basis.
    pub basis: DMatrix<C64>,
    /// Kept eigenvalues of `S`, descending.
    pub kept: Vec<f64>,
    pub lambda_max: f64,
}

impl SubspaceProjection {
    pub fn rank(&self) -> usize {
        self.kept.len()
    }
}

pub fn project_overlap(s_mat: &DMatrix<C64>, threshold_rel: f64) -> Result<SubspaceProjection> {
    let (values, vectors) = hermitian_eigen(s_mat)?;
    let lambda_max = values.iter().copied().fold(0.0, f64::max);
    let cutoff = threshold_rel * lambda_max;
    let keep: Vec<usize> = (0..values.len())
        .rev()
        .filter(|&i| values[i] > cutoff && values[i] > 0.0)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyRank {
            threshold_rel,
            sigma_max: lambda_max,
        });
    }
    Ok(SubspaceProjection {
        basis: DMatrix::from_fn(s_mat.nrows(), keep.len(), |i, j| vectors[(i, keep[j])]),
        kept: keep.iter().map(|&i| values[i]).collect(),
        lambda_max,
    })
}

/// Unitary subspace estimate from the pencil `T v = λ S v` with
/// `T_ij = s_{j-i+1}`, using samples `s_0 … s_m`.
pub fn uvqpe(sig: &OverlapSignal, m: usize, cfg: &BaselineConfig) -> Result<BaselineEstimate> {
    require_complex(sig, "UVQPE")?;
    cfg.validate()?;
    if m == 0 || sig.len() < m + 1 {
        return Err(Error::InsufficientSamples {
            required: m + 1,
            available: sig.len(),
        });
    }
    let s_mat = overlap_matrix(&sig.values, m)?;
    let t_mat = toeplitz_hermitian(&sig.values, m, 1);
    let proj = project_overlap(&s_mat, cfg.threshold_rel)?;
    let q = &proj.basis;
    let t_p = q.adjoint() * t_mat * q;
    // S projected is diag(kept); S_p⁻¹ T_p has the pencil's eigenvalues
    let pencil = DMatrix::from_fn(proj.rank(), proj.rank(), |i, j| t_p[(i, j)] / proj.kept[i]);
    let eigs = eigenvalues(&pencil)?;
    let (_, phase) = select_ground(&eigs, cfg.phase_window).expect("projection keeps at least one vector");
    let window_energy = -phase / cfg.dt;
    Ok(BaselineEstimate {
        energy: cfg.affine.invert(window_energy),
        window_energy,
        eigenvalues: eigs,
        rank_kept: proj.rank(),
        sigma_max: Some(proj.lambda_max),
        sigma_min_kept: proj.kept.last().copied(),
    })
}

/// Samples `h_k = Σ_n p_n E_n e^{-iE_n kΔt}` carrying the same noise level
/// and seed as `sig`, drawn from independent streams.
pub fn weighted_signal_for(spec: &SpectralModel, sig: &OverlapSignal) -> Result<Vec<C64>> {
    let clean = generate_weighted_overlap(spec, sig.dt, sig.len().max(2) - 1)?;
    if sig.noise_level == 0.0 {
        return Ok(clean);
    }
    Ok(perturb_series(
        &clean,
        sig.noise_level,
        sig.seed,
        (NoiseStream::WeightedRe, Some(NoiseStream::WeightedIm)),
    ))
}

/// Hamiltonian subspace estimate from `H v = E S v` with `H_ij = h_{j-i}`,
/// using `h_0 … h_{m-1}` and `s_0 … s_{m-1}`. Returns the lowest
/// retained eigenvalue.
pub fn vqpe(sig: &OverlapSignal, weighted: &[C64], m: usize, cfg: &BaselineConfig) -> Result<BaselineEstimate> {
    require_complex(sig, "VQPE")?;
    cfg.validate()?;
    if m == 0 || sig.len() < m || weighted.len() < m {
        return Err(Error::InsufficientSamples {
            required: m,
            available: sig.len().min(weighted.len()),
        });
    }
    let s_mat = overlap_matrix(&sig.values, m)?;
    let h_mat = toeplitz_hermitian(weighted, m, 0);
    let proj = project_overlap(&s_mat, cfg.threshold_rel)?;
    let q = &proj.basis;
    let h_p = q.adjoint() * h_mat * q;
    let inv_root: Vec<f64> = proj.kept.iter().map(|l| l.sqrt().recip()).collect();
    let r = proj.rank();
    let sym = DMatrix::from_fn(r, r, |i, j| h_p[(i, j)] * (inv_root[i] * inv_root[j]));
    let herm = (&sym + sym.adjoint()) * C64::new(0.5, 0.0);
    let (values, _) = hermitian_eigen(&herm)?;
    let window_energy = values[0];
    Ok(BaselineEstimate {
        energy: cfg.affine.invert(window_energy),
        window_energy,
        eigenvalues: values.iter().map(|&e| C64::new(e, 0.0)).collect(),
        rank_kept: r,
        sigma_max: Some(proj.lambda_max),
        sigma_min_kept: proj.kept.last().copied(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcelsFit {
    pub r: C64,
    /// Window units.
    pub theta: f64,
    pub objective: f64,
}

/// `min_r Σ_i |s_i − r e^{-iθ t_i}|² = Σ|s_i|² − n|r̂|²` with
/// `r̂ = mean(s_i e^{iθ t_i})`, `t_i = iΔt`.
pub fn qcels_objective(values: &[C64], dt: f64, theta: f64) -> (f64, C64) {
    let n = values.len() as f64;
    let mut acc = C64::new(0.0, 0.0);
    let mut power = 0.0;
    for (i, s) in values.iter().enumerate() {
        acc += s * C64::from_polar(1.0, theta * i as f64 * dt);
        power += s.norm_sqr();
    }
    let r = acc / n;
    ((power - n * r.norm_sqr()).max(0.0), r)
}

/// Grid positions `lo + (j+1)·w/N`, covering the window's energy range.
pub fn qcels_grid(dt: f64, window: PhaseWindow) -> Vec<f64> {
    let (lo, hi) = window.energy_range(dt);
    let width = hi - lo;
    match window {
        // (−π/Δt, π/Δt]
        PhaseWindow::Symmetric => (0..QCELS_GRID)
            .map(|j| lo + (j + 1) as f64 * width / QCELS_GRID as f64)
            .collect(),
        // [0, 2π/Δt)
        PhaseWindow::Positive => (0..QCELS_GRID)
            .map(|j| lo + j as f64 * width / QCELS_GRID as f64)
            .collect(),
    }
}

pub fn qcels(sig: &OverlapSignal, dt: f64, window: PhaseWindow) -> Result<QcelsFit> {
    require_complex(sig, "QCELS")?;
    if sig.is_empty() {
        return Err(Error::InsufficientSamples {
            required: 1,
            available: 0,
        });
    }
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    let f = |theta: f64| qcels_objective(&sig.values, dt, theta);
    let grid = qcels_grid(dt, window);
    let (best_theta, best_val) = grid
        .iter()
        .map(|&t| (t, f(t).0))
        .fold((f64::NAN, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let spacing = grid[1] - grid[0];
    let refined = golden_section(|t| f(t).0, best_theta - spacing, best_theta + spacing, QCELS_TOLERANCE);
    let theta = if f(refined).0 <= best_val { refined } else { best_theta };
    let (objective, r) = f(theta);
    Ok(QcelsFit { r, theta, objective })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Shift-invariance pencil from the base Hankel matrix
/// `X_b = [X_0 X_{1:K} X_{K+1}]` (`d × (K+2)`).
///
/// With `X_b ≈ U Σ W` truncated to rank `r`, `W_X` and `W_X'` are the
/// first and last `K+1` columns of `W`; the eigenvalues of
/// `W_X' W_X⁺` (`r × r`) are those of `X' X⁺`.
pub fn esprit(sig: &OverlapSignal, d: usize, k: usize, cfg: &BaselineConfig) -> Result<BaselineEstimate> {
    cfg.validate()?;
    let required = k + d + 1;
    if d == 0 || sig.len() < required {
        return Err(Error::InsufficientSamples {
            required,
            available: sig.len(),
        });
    }
    let base = hankel_matrix(&sig.values, d, k + 2, 0);
    let svd = truncated_svd(&base, cfg.threshold_rel)?;
    let r = svd.rank;
    let w = svd.v.adjoint();
    let w_x = w.columns(0, k + 1).into_owned();
    let w_xp = w.columns(1, k + 1).into_owned();
    let inner = truncated_svd(&w_x, 1e-14)?;
    let inv = DMatrix::from_fn(inner.rank, inner.rank, |i, j| {
        if i == j {
            C64::new(inner.singular_values[i].recip(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let pinv = &inner.v * inv * inner.u.adjoint();
    let psi = w_xp * pinv;
    let eigs = eigenvalues(&psi)?;
    let (_, phase) = select_ground(&eigs, cfg.phase_window).expect("rank is at least one");
    let window_energy = -phase / cfg.dt;
    Ok(BaselineEstimate {
        energy: cfg.affine.invert(window_energy),
        window_energy,
        eigenvalues: eigs,
        rank_kept: r,
        sigma_max: Some(svd.sigma_max()),
        sigma_min_kept: Some(svd.kept()[r - 1]),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PronyFit {
    /// `λ_n = e^{-iE_nΔt}`, sorted by ascending energy.
    pub eigenvalues: Vec<C64>,
    pub amplitudes: Vec<C64>,
    /// Principal-branch energies `−arg(λ_n)/Δt`, window units.
    pub energies: Vec<f64>,
    pub vandermonde_condition: f64,
    pub warning: Option<String>,
}

/// Exact `n`-mode fit from `s_0 … s_{2n-1}`: recurrence coefficients from
/// a square linear system, modes from the companion roots, amplitudes
/// from the Vandermonde system.
pub fn prony_full(sig: &OverlapSignal, n_modes: usize, dt: f64) -> Result<PronyFit> {
    let n = n_modes;
    if n == 0 {
        return Err(Error::Validation("prony needs at least one mode".into()));
    }
    if sig.len() < 2 * n {
        return Err(Error::InsufficientSamples {
            required: 2 * n,
            available: sig.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    let s = &sig.values;
    // s_{k+n} + Σ_j c_j s_{k+j} = 0, k = 0…n-1
    let system = DMatrix::from_fn(n, n, |k, j| s[k + j]);
    let rhs = nalgebra::DVector::from_fn(n, |k, _| -s[k + n]);
    let coeffs = system.lu().solve(&rhs).ok_or_else(|| {
        Error::DegenerateSpectrum(format!(
            "recurrence system is singular; the signal has fewer than {n} modes"
        ))
    })?;
    let companion = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j {
            C64::new(1.0, 0.0)
        } else if i == n - 1 {
            -coeffs[j]
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let mut roots = eigenvalues(&companion)?;
    let energy = |l: &C64| -PhaseWindow::Symmetric.phase(*l) / dt;
    roots.sort_by(|a, b| energy(a).total_cmp(&energy(b)));
    let vander = DMatrix::from_fn(n, n, |k, j| roots[j].powi(k as i32));
    let singular = faer::Mat::<C64>::from_fn(n, n, |i, j| vander[(i, j)])
        .singular_values()
        .map_err(|e| Error::NoConvergence {
            iterations: 0,
            dim: n,
            dump: format!("{e:?}"),
        })?;
    let smax = singular.iter().copied().fold(0.0, f64::max);
    let smin = singular.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let amps = vander
        .lu()
        .solve(&nalgebra::DVector::from_fn(n, |k, _| s[k]))
        .ok_or_else(|| Error::DegenerateSpectrum("repeated Prony roots".into()))?;
    let warning = (condition > PRONY_CONDITION_LIMIT)
        .then(|| format!("Vandermonde condition number {condition:e} exceeds {PRONY_CONDITION_LIMIT:e}"));
    Ok(PronyFit {
        energies: roots.iter().map(energy).collect(),
        eigenvalues: roots,
        amplitudes: amps.iter().copied().collect(),
        vandermonde_condition: condition,
        warning,
    })
}

/// Prony ground estimate: the maximal-phase root of an `n`-mode fit.
pub fn prony_estimate(sig: &OverlapSignal, n_modes: usize, cfg: &BaselineConfig) -> Result<BaselineEstimate> {
    let fit = prony_full(sig, n_modes, cfg.dt)?;
    let (_, phase) = select_ground(&fit.eigenvalues, cfg.phase_window).expect("at least one root");
    let window_energy = -phase / cfg.dt;
    Ok(BaselineEstimate {
        energy: cfg.affine.invert(window_energy),
        window_energy,
        eigenvalues: fit.eigenvalues,
        rank_kept: n_modes,
        sigma_max: None,
        sigma_min_kept: None,
    })
}

fn drive(
    method: &str,
    per_step: usize,
    sig: &OverlapSignal,
    cfg: &BaselineConfig,
    reference: Option<f64>,
    first_k: usize,
    mut step: impl FnMut(usize) -> Result<Option<BaselineEstimate>>,
) -> Result<EstimateTrace> {
    cfg.validate()?;
    if (sig.dt - cfg.dt).abs() > 1e-14 * cfg.dt.max(1.0) {
        return Err(Error::Validation(format!(
            "signal timestep {} differs from configured {}",
            sig.dt, cfg.dt
        )));
    }
    let mut trace = EstimateTrace::new(method, per_step, cfg.affine, reference);
    for k in first_k..cfg.max_steps.min(sig.len()) {
        match step(k) {
            Ok(Some(est)) => trace.push_estimate(k, est.energy, est.rank_kept, est.sigma_max, est.sigma_min_kept),
            Ok(None) => {}
            Err(Error::EmptyRank { sigma_max, .. }) => trace.push_skipped(k, Some(sigma_max)),
            Err(Error::NoConvergence { .. }) | Err(Error::DegenerateSpectrum(_)) => trace.push_skipped(k, None),
            Err(e) => return Err(e),
        }
    }
    if trace.records.is_empty() {
        return Err(Error::InsufficientSamples {
            required: first_k + 1,
            available: cfg.max_steps.min(sig.len()),
        });
    }
    Ok(trace)
}

/// UVQPE at every step `k`, with `m = k` (samples `s_0 … s_k`).
pub fn uvqpe_trace(sig: &OverlapSignal, cfg: &BaselineConfig, reference: Option<f64>) -> Result<EstimateTrace> {
    require_complex(sig, "UVQPE")?;
    drive("uvqpe", 2, sig, cfg, reference, MIN_SUBSPACE, |k| {
        uvqpe(&sig.prefix(k + 1), k, cfg).map(Some)
    })
}

/// VQPE at every step `k`, with `m = k+1` (`s_0 … s_k`, `h_0 … h_k`).
pub fn vqpe_trace(
    sig: &OverlapSignal,
    spec: &SpectralModel,
    cfg: &BaselineConfig,
    reference: Option<f64>,
) -> Result<EstimateTrace> {
    require_complex(sig, "VQPE")?;
    let weighted = weighted_signal_for(spec, sig)?;
    drive("vqpe", 4, sig, cfg, reference, MIN_SUBSPACE - 1, |k| {
        vqpe(&sig.prefix(k + 1), &weighted[..=k], k + 1, cfg).map(Some)
    })
}

/// QCELS fit to `s_0 … s_k` at every step.
pub fn qcels_trace(sig: &OverlapSignal, cfg: &BaselineConfig, reference: Option<f64>) -> Result<EstimateTrace> {
    require_complex(sig, "QCELS")?;
    drive("qcels", 2, sig, cfg, reference, MIN_SUBSPACE, |k| {
        let fit = qcels(&sig.prefix(k + 1), cfg.dt, cfg.phase_window)?;
        Ok(Some(BaselineEstimate {
            energy: cfg.affine.invert(fit.theta),
            window_energy: fit.theta,
            eigenvalues: vec![C64::from_polar(1.0, -fit.theta * cfg.dt)],
            rank_kept: 1,
            sigma_max: None,
            sigma_min_kept: None,
        }))
    })
}

/// ESPRIT with the same embedding schedule as the ODMD driver.
pub fn esprit_trace(
    sig: &OverlapSignal,
    cfg: &BaselineConfig,
    alpha: f64,
    min_rows: usize,
    reference: Option<f64>,
) -> Result<EstimateTrace> {
    let (method, per_step) = match sig.parts {
        SignalParts::Complex => ("esprit", 2),
        SignalParts::RealOnly => ("esprit_real", 1),
    };
    drive(method, per_step, sig, cfg, reference, 0, |k| {
        match largest_layout(k + 1, alpha) {
            Some((big_k, d)) if d >= min_rows => esprit(sig, d, big_k, cfg).map(Some),
            _ => Ok(None),
        }
    })
}

/// Prony with `min((k+1)/2, max_modes)` modes at step `k`.
pub fn prony_trace(
    sig: &OverlapSignal,
    cfg: &BaselineConfig,
    max_modes: usize,
    reference: Option<f64>,
) -> Result<EstimateTrace> {
    require_complex(sig, "Prony")?;
    if max_modes == 0 {
        return Err(Error::Validation("prony needs at least one mode".into()));
    }
    drive("prony", 2, sig, cfg, reference, 1, |k| {
        let n = (k + 1).div_ceil(2).min(max_modes);
        prony_estimate(sig, n, cfg).map(Some)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odmd::{estimate, system_matrix};
    use crate::signal::{add_gaussian_noise, generate_overlap, hankelize_rows};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn model(energies: &[f64], probs: &[f64]) -> SpectralModel {
        SpectralModel::new(energies.to_vec(), probs.to_vec(), "test").unwrap()
    }

    fn cfg(dt: f64) -> BaselineConfig {
        BaselineConfig {
            dt,
            threshold_rel: 1e-8,
            phase_window: PhaseWindow::Symmetric,
            affine: AffineMap::IDENTITY,
            max_steps: 60,
        }
    }

    fn phasor(e: f64, dt: f64) -> C64 {
        C64::from_polar(1.0, -e * dt)
    }

    fn contains(set: &[C64], x: C64, tol: f64) -> bool {
        set.iter().any(|y| (y - x).norm() < tol)
    }

    #[test]
    fn overlap_matrix_is_hermitian_toeplitz() {
        let spec = model(&[-1.0, 0.3, 1.2], &[0.5, 0.3, 0.2]);
        let sig = add_gaussian_noise(&generate_overlap(&spec, 0.7, 10).unwrap(), 1e-3, 4).unwrap();
        let s = overlap_matrix(&sig.values, 6).unwrap();
        assert!((&s - s.adjoint()).norm() < 1e-12);
        for i in 0..6 {
            assert_eq!(s[(i, i)], C64::new(sig.values[0].re, 0.0));
        }
        assert_eq!(s[(0, 3)], sig.values[3]);
        assert_eq!(s[(3, 0)], sig.values[3].conj());
    }

    #[test]
    fn uvqpe_single_and_two_modes() {
        let c = cfg(1.0);
        let sig = generate_overlap(&model(&[0.4], &[1.0]), 1.0, 5).unwrap();
        let est = uvqpe(&sig, 2, &c).unwrap();
        assert!((est.energy - 0.4).abs() < 1e-10);
        assert_eq!(est.rank_kept, 1);

        let sig = generate_overlap(&model(&[-0.9, 1.1], &[0.6, 0.4]), 1.0, 5).unwrap();
        let est = uvqpe(&sig, 3, &c).unwrap();
        assert_eq!(est.eigenvalues.len(), 2);
        assert!(contains(&est.eigenvalues, phasor(-0.9, 1.0), 1e-8));
        assert!(contains(&est.eigenvalues, phasor(1.1, 1.0), 1e-8));
        assert!((est.energy + 0.9).abs() < 1e-8);
    }

    #[test]
    fn vqpe_single_and_two_modes() {
        let c = cfg(1.0);
        let spec = model(&[0.4], &[1.0]);
        let sig = generate_overlap(&spec, 1.0, 5).unwrap();
        let h = weighted_signal_for(&spec, &sig).unwrap();
        assert!((vqpe(&sig, &h, 1, &c).unwrap().energy - 0.4).abs() < 1e-14);

        let spec = model(&[-0.9, 1.1], &[0.6, 0.4]);
        let sig = generate_overlap(&spec, 1.0, 5).unwrap();
        let h = weighted_signal_for(&spec, &sig).unwrap();
        let est = vqpe(&sig, &h, 2, &c).unwrap();
        assert!((est.energy + 0.9).abs() < 1e-10);
        assert!((est.eigenvalues[1].re - 1.1).abs() < 1e-10);
    }

    #[test]
    fn vqpe_noise_uses_separate_streams() {
        let spec = model(&[-0.9, 1.1], &[0.6, 0.4]);
        let sig = add_gaussian_noise(&generate_overlap(&spec, 1.0, 30).unwrap(), 1e-2, 11).unwrap();
        let h = weighted_signal_for(&spec, &sig).unwrap();
        let clean = generate_weighted_overlap(&spec, 1.0, 30).unwrap();
        let noise_h: Vec<f64> = h.iter().zip(&clean).map(|(a, b)| (a - b).re).collect();
        let noise_s: Vec<f64> = sig
            .values
            .iter()
            .zip(&generate_overlap(&spec, 1.0, 30).unwrap().values)
            .map(|(a, b)| (a - b).re)
            .collect();
        assert!(noise_h.iter().all(|x| x.abs() > 0.0));
        assert!(noise_h.iter().zip(&noise_s).all(|(a, b)| a != b));
        assert_eq!(h, weighted_signal_for(&spec, &sig).unwrap());
    }

    #[test]
    fn qcels_single_mode_fits_exactly() {
        let sig = generate_overlap(&model(&[0.37], &[1.0]), 1.0, 20).unwrap();
        let fit = qcels(&sig, 1.0, PhaseWindow::Symmetric).unwrap();
        assert!((fit.theta - 0.37).abs() < 1e-8, "{fit:?}");
        assert!((fit.r.norm() - 1.0).abs() < 1e-8);
        assert!(fit.objective < 1e-12);
    }

    #[test]
    fn qcels_two_modes_land_near_the_dominant_level() {
        let dt = 1.0;
        let spec = model(&[-1.0, 0.5], &[0.9, 0.1]);
        let sig = generate_overlap(&spec, dt, 40).unwrap();
        let fit = qcels(&sig, dt, PhaseWindow::Symmetric).unwrap();
        // fine-grid oracle of the same objective
        let (oracle, oracle_val) = (0..200_000)
            .map(|j| -PI + (j + 1) as f64 * 2.0 * PI / 200_000.0)
            .map(|t| (t, qcels_objective(&sig.values, dt, t).0))
            .fold((0.0, f64::INFINITY), |a, x| if x.1 < a.1 { x } else { a });
        assert!((fit.theta - oracle).abs() < 1e-4);
        assert!(fit.objective <= oracle_val + 1e-12);
        assert!((fit.theta + 1.0).abs() < 0.15, "{fit:?}");
        assert!(fit.objective > 0.0);
        assert!(fit.r.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn golden_section_finds_a_parabola_minimum() {
        let x = golden_section(|x| (x - 0.123).powi(2), -1.0, 1.0, 1e-10);
        assert!((x - 0.123).abs() < 1e-9);
    }

    #[test]
    fn esprit_recovers_two_modes() {
        let dt = 0.8;
        let sig = generate_overlap(&model(&[-1.2, 0.7], &[0.3, 0.7]), dt, 20).unwrap();
        let est = esprit(&sig, 2, 3, &cfg(dt)).unwrap();
        assert_eq!(est.rank_kept, 2);
        assert!(contains(&est.eigenvalues, phasor(-1.2, dt), 1e-10));
        assert!(contains(&est.eigenvalues, phasor(0.7, dt), 1e-10));
        assert!((est.energy + 1.2).abs() < 1e-10);
        assert!(matches!(
            esprit(&sig, 5, 20, &cfg(dt)),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn prony_recovers_modes_and_amplitudes() {
        let dt = 1.0;
        let sig = generate_overlap(&model(&[0.6], &[1.0]), dt, 3).unwrap();
        let fit = prony_full(&sig, 1, dt).unwrap();
        assert!((fit.eigenvalues[0] - phasor(0.6, dt)).norm() < 1e-14);
        assert!((fit.amplitudes[0] - C64::new(1.0, 0.0)).norm() < 1e-14);

        let spec = model(&[-1.3, 0.2, 1.4], &[0.5, 0.3, 0.2]);
        let sig = generate_overlap(&spec, dt, 6).unwrap();
        let fit = prony_full(&sig, 3, dt).unwrap();
        for n in 0..3 {
            assert!((fit.energies[n] - spec.energies[n]).abs() < 1e-8);
            assert!((fit.amplitudes[n] - C64::new(spec.probabilities[n], 0.0)).norm() < 1e-8);
        }
        let total: C64 = fit.amplitudes.iter().sum();
        assert!((total - sig.values[0]).norm() < 1e-12);
        assert!(fit.warning.is_none());
        assert!(matches!(
            prony_full(&sig, 4, dt),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn prony_flags_ill_conditioned_vandermonde() {
        // one rapidly growing mode makes the Vandermonde rows span 500^5
        let roots = [
            C64::from_polar(1.0, -0.3),
            C64::from_polar(1.0, 0.4),
            C64::from_polar(1.0, 1.1),
            C64::from_polar(1.0, -1.7),
            C64::from_polar(1.0, 2.5),
            C64::from_polar(500.0, 0.9),
        ];
        let values = (0..12).map(|k| roots.iter().map(|l| l.powi(k) / 6.0).sum()).collect();
        let sig = OverlapSignal {
            dt: 1.0,
            values,
            parts: SignalParts::Complex,
            noise_level: 0.0,
            seed: 0,
            source_label: String::new(),
        };
        let fit = prony_full(&sig, 6, 1.0).unwrap();
        assert!(
            fit.vandermonde_condition > PRONY_CONDITION_LIMIT,
            "{}",
            fit.vandermonde_condition
        );
        assert!(fit.warning.is_some());
        let well = prony_full(
            &generate_overlap(&model(&[-1.0, 1.0], &[0.5, 0.5]), 1.0, 4).unwrap(),
            2,
            1.0,
        )
        .unwrap();
        assert!(well.warning.is_none());
    }

    #[test]
    fn complex_only_methods_reject_real_signals() {
        let spec = model(&[0.4], &[1.0]);
        let sig = crate::signal::take_real_part(&generate_overlap(&spec, 1.0, 10).unwrap());
        assert!(uvqpe(&sig, 3, &cfg(1.0)).is_err());
        assert!(qcels(&sig, 1.0, PhaseWindow::Symmetric).is_err());
    }

    #[test]
    fn traces_count_observables_per_method() {
        let spec = model(&[-1.0, 0.4, 1.3], &[0.5, 0.3, 0.2]);
        let dt = 1.0;
        let sig = generate_overlap(&spec, dt, 30).unwrap();
        let c = BaselineConfig {
            max_steps: 20,
            ..cfg(dt)
        };
        let u = uvqpe_trace(&sig, &c, Some(-1.0)).unwrap();
        let v = vqpe_trace(&sig, &spec, &c, Some(-1.0)).unwrap();
        let q = qcels_trace(&sig, &c, Some(-1.0)).unwrap();
        let p = prony_trace(&sig, &c, 3, Some(-1.0)).unwrap();
        let e = esprit_trace(&sig, &c, 0.5, 2, Some(-1.0)).unwrap();
        for (t, per) in [(&u, 2), (&v, 4), (&q, 2), (&p, 2), (&e, 2)] {
            for r in &t.records {
                assert_eq!(r.n_observables, per * (r.k + 1), "{}", t.method);
            }
            assert_eq!(t.records.last().unwrap().k, 19);
        }
        for t in [&u, &v, &p, &e] {
            assert!(t.final_error().unwrap() < 1e-8, "{}: {:?}", t.method, t.final_error());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn noiseless_methods_agree(
            energies in proptest::collection::vec(-2.5f64..2.5, 1..5),
            weights in proptest::collection::vec(0.1f64..1.0, 5),
        ) {
            let mut e = energies.clone();
            e.sort_by(f64::total_cmp);
            prop_assume!(e.windows(2).all(|w| w[1] - w[0] > 0.3));
            let n = e.len();
            let total: f64 = weights[..n].iter().sum();
            let spec = model(&e, &weights[..n].iter().map(|w| w / total).collect::<Vec<_>>());
            let dt = 1.0;
            let d = n + 1;
            let k = 2 * d;
            let sig = generate_overlap(&spec, dt, k + d + 2).unwrap();
            let c = BaselineConfig { threshold_rel: 1e-10, ..cfg(dt) };
            let mut ocfg = OdmdConfig::new(dt, SignalParts::Complex);
            ocfg.threshold_rel = 1e-10;
            let (_, odmd_est) = estimate(&hankelize_rows(&sig, k, d).unwrap(), &ocfg).unwrap();
            let esp = esprit(&sig, d, k, &c).unwrap();
            let uv = uvqpe(&sig, d, &c).unwrap();
            let pr = prony_estimate(&sig, n, &c).unwrap();
            let e0 = spec.ground_energy();
            for (name, val) in [("odmd", odmd_est.energy), ("esprit", esp.energy), ("uvqpe", uv.energy), ("prony", pr.energy)] {
                prop_assert!((val - e0).abs() < 1e-7, "{} gave {} vs {}", name, val, e0);
            }
            let m = system_matrix(&hankelize_rows(&sig, k, d).unwrap(), 1e-10).unwrap();
            let odmd_eigs = eigenvalues(&m.reduced).unwrap();
            prop_assert_eq!(odmd_eigs.len(), esp.eigenvalues.len());
            for l in &odmd_eigs {
                prop_assert!(contains(&esp.eigenvalues, *l, 1e-6));
            }
        }

        #[test]
        fn projection_rank_is_monotone(
            energies in proptest::collection::vec(-2.5f64..2.5, 1..8),
            seed in 0u64..1000,
            t1 in 1e-6f64..0.5,
            t2 in 1e-6f64..0.5,
        ) {
            let n = energies.len();
            let mut e = energies.clone();
            e.sort_by(f64::total_cmp);
            let spec = model(&e, &vec![1.0 / n as f64; n]);
            let sig = add_gaussian_noise(&generate_overlap(&spec, 0.9, 20).unwrap(), 1e-3, seed).unwrap();
            let s = overlap_matrix(&sig.values, 15).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(project_overlap(&s, hi).unwrap().rank() <= project_overlap(&s, lo).unwrap().rank());
        }

        #[test]
        fn qcels_beats_every_grid_point(
            energies in proptest::collection::vec(-3.0f64..3.0, 1..5),
            seed in 0u64..1000,
            len in 3usize..40,
        ) {
            let n = energies.len();
            let mut e = energies.clone();
            e.sort_by(f64::total_cmp);
            let spec = model(&e, &vec![1.0 / n as f64; n]);
            let sig = add_gaussian_noise(&generate_overlap(&spec, 1.0, len).unwrap(), 1e-2, seed).unwrap();
            let fit = qcels(&sig, 1.0, PhaseWindow::Symmetric).unwrap();
            prop_assert!(fit.objective >= 0.0);
            for t in qcels_grid(1.0, PhaseWindow::Symmetric) {
                prop_assert!(fit.objective <= qcels_objective(&sig.values, 1.0, t).0 + 1e-12);
            }
        }
    }
}
