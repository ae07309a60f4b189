//! Spin-chain Hamiltonians, reference states and the spectral decomposition
//! `{E_n, p_n}` that every overlap signal is generated from.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen;
use crate::error::{Error, Result};

pub const MIN_SITES: usize = 2;
pub const MAX_SITES: usize = 14;

/// Tolerance on `Σ p_n = 1` accepted when reading spectrum files.
pub const FILE_PROBABILITY_TOLERANCE: f64 = 1e-6;

/// Dense real-symmetric Hamiltonian in the computational basis.
#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    pub entries: DMatrix<f64>,
    pub label: String,
}

impl HamiltonianMatrix {
    pub fn new(entries: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "hamiltonian must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let n = entries.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::Validation(format!("hamiltonian is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            entries,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }
}

/// Normalised state in the computational basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm2: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if amplitudes.is_empty() || (norm2 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidReference(format!(
                "state must have unit norm, |ψ|² = {norm2}"
            )));
        }
        Ok(Self { amplitudes })
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Dimension(format!("basis index {index} outside dimension {dim}")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }
}

/// `E ↦ scale · E + shift`, mapping original energies to rescaled ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub shift: f64,
}

impl Default for AffineMap {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineMap {
    pub const IDENTITY: Self = Self { scale: 1.0, shift: 0.0 };

    pub fn new(scale: f64, shift: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !shift.is_finite() {
            return Err(Error::Validation(format!(
                "affine map needs finite scale > 0 and finite shift, got ({scale}, {shift})"
            )));
        }
        Ok(Self { scale, shift })
    }

    pub fn apply(&self, energy: f64) -> f64 {
        self.scale * energy + self.shift
    }

    pub fn invert(&self, energy: f64) -> f64 {
        (energy - self.shift) / self.scale
    }

    /// Map rescaled energy differences back to original units.
    pub fn invert_difference(&self, delta: f64) -> f64 {
        delta / self.scale
    }

    /// `outer ∘ self`.
    pub fn then(&self, outer: &AffineMap) -> AffineMap {
        AffineMap {
            scale: outer.scale * self.scale,
            shift: outer.scale * self.shift + outer.shift,
        }
    }
}

/// Energies and reference-state probabilities of the levels that
/// contribute to the overlap signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    pub energies: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Map from the original spectrum to these energies, if rescaled.
    pub affine: Option<AffineMap>,
    pub label: String,
}

impl SpectralModel {
    /// Build a model, checking sortedness, nonnegativity and `Σ p = 1`
    /// within `FILE_PROBABILITY_TOLERANCE`.
    pub fn new(energies: Vec<f64>, probabilities: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let model = Self {
            energies,
            probabilities,
            affine: None,
            label: label.into(),
        };
        model.validate(FILE_PROBABILITY_TOLERANCE)?;
        Ok(model)
    }

    pub fn validate(&self, sum_tolerance: f64) -> Result<()> {
        let mut problems = Vec::new();
        if self.energies.is_empty() {
            problems.push("spectrum has no levels".to_string());
        }
        if self.energies.len() != self.probabilities.len() {
            problems.push(format!(
                "{} energies but {} probabilities",
                self.energies.len(),
                self.probabilities.len()
            ));
        }
        if self.energies.iter().any(|e| !e.is_finite()) {
            problems.push("energies must be finite".into());
        }
        if let Some(i) = self.energies.windows(2).position(|w| w[1] < w[0]) {
            problems.push(format!("energies not ascending at index {}", i + 1));
        }
        if let Some(i) = self.probabilities.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
            problems.push(format!("probability {i} is negative or non-finite"));
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > sum_tolerance {
            problems.push(format!("probabilities sum to {total}, expected 1"));
        }
        if let Some(a) = &self.affine {
            if !(a.scale > 0.0) {
                problems.push("affine scale must be positive".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn max_energy(&self) -> f64 {
        *self.energies.last().expect("nonempty spectrum")
    }

    pub fn ground_probability(&self) -> f64 {
        self.probabilities[0]
    }

    /// `max_n |E_n|`, the spectral norm restricted to contributing levels.
    pub fn spectral_norm(&self) -> f64 {
        self.energies.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn affine_map(&self) -> AffineMap {
        self.affine.unwrap_or(AffineMap::IDENTITY)
    }

    /// Ground energy in the original (pre-rescaling) units.
    pub fn original_ground_energy(&self) -> f64 {
        self.affine_map().invert(self.ground_energy())
    }

    pub fn mean_energy(&self) -> f64 {
        self.energies.iter().zip(&self.probabilities).map(|(e, p)| e * p).sum()
    }

    pub fn energy_std(&self) -> f64 {
        let mean = self.mean_energy();
        let var: f64 = self
            .energies
            .iter()
            .zip(&self.probabilities)
            .map(|(e, p)| p * (e - mean).powi(2))
            .sum();
        var.max(0.0).sqrt()
    }

    /// Set `p_0` and rescale the excited probabilities proportionally so the
    /// total stays one.
    pub fn with_ground_probability(&self, p0: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0 <= 1.0) {
            return Err(Error::Validation(format!(
                "ground probability must lie in (0, 1], got {p0}"
            )));
        }
        let excited: f64 = self.probabilities[1..].iter().sum();
        let mut probabilities = Vec::with_capacity(self.len());
        probabilities.push(p0);
        if excited > 0.0 {
            let factor = (1.0 - p0) / excited;
            probabilities.extend(self.probabilities[1..].iter().map(|p| p * factor));
        } else if self.len() > 1 && p0 < 1.0 {
            let share = (1.0 - p0) / (self.len() - 1) as f64;
            probabilities.extend(std::iter::repeat_n(share, self.len() - 1));
        } else {
            probabilities.extend(std::iter::repeat_n(0.0, self.len() - 1));
        }
        Ok(Self {
            probabilities,
            label: format!("{} [p0={p0}]", self.label),
            ..self.clone()
        })
    }

    /// Add a constant to every energy, composing the recorded affine map.
    pub fn shifted(&self, shift: f64) -> Self {
        let step = AffineMap { scale: 1.0, shift };
        Self {
            energies: self.energies.iter().map(|e| e + shift).collect(),
            affine: Some(self.affine_map().then(&step)),
            ..self.clone()
        }
    }
}

/// `H = coupling/4 · Σ_i σ_i · σ_{i+1}` on an `L`-site chain.
///
/// Site `i` is bit `L-1-i` of the basis index, so basis strings read
/// left to right from site 0. With `coupling = 4` each bond is `σ·σ`,
/// whose eigenvalues are `-3` (singlet) and `+1` (triplet).
pub fn build_heisenberg(sites: usize, coupling: f64, periodic: bool) -> Result<HamiltonianMatrix> {
    if !(MIN_SITES..=MAX_SITES).contains(&sites) {
        return Err(Error::Dimension(format!(
            "site count {sites} outside supported range {MIN_SITES}..={MAX_SITES}"
        )));
    }
    if !coupling.is_finite() {
        return Err(Error::Validation(format!("coupling must be finite, got {coupling}")));
    }
    let dim = 1usize << sites;
    let mut bonds: Vec<(usize, usize)> = (0..sites - 1).map(|i| (i, i + 1)).collect();
    if periodic {
        bonds.push((sites - 1, 0));
    }
    let j = coupling / 4.0;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for state in 0..dim {
        for &(a, b) in &bonds {
            let ma = 1usize << (sites - 1 - a);
            let mb = 1usize << (sites - 1 - b);
            let aligned = ((state & ma) != 0) == ((state & mb) != 0);
            if aligned {
                h[(state, state)] += j;
            } else {
                h[(state, state)] -= j;
                // σxσx + σyσy = 2(σ+σ- + σ-σ+) swaps an antiparallel pair
                h[(state ^ ma ^ mb, state)] += 2.0 * j;
            }
        }
    }
    HamiltonianMatrix::new(
        h,
        format!(
            "heisenberg L={sites} J={coupling} {}",
            if periodic { "periodic" } else { "open" }
        ),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeelKind {
    Product,
    Superposition,
}

/// Antiferromagnetic reference states.
///
/// `Product` is `|01⟩^{⊗L/2}`. `Superposition` is
/// `(|01…⟩ + (-1)^{L/2} |10…⟩)/√2`; the relative sign follows the Marshall
/// rule so both Néel components enter the singlet ground state with the same
/// phase, which makes its ground probability exactly twice the product one.
/// For `L = 2` this is the singlet itself.
pub fn neel_reference(sites: usize, kind: NeelKind) -> Result<StateVector> {
    if !sites.is_multiple_of(2) {
        return Err(Error::InvalidReference(format!(
            "Néel state needs an even site count, got {sites}"
        )));
    }
    if !(MIN_SITES..=MAX_SITES).contains(&sites) {
        return Err(Error::Dimension(format!(
            "site count {sites} outside supported range {MIN_SITES}..={MAX_SITES}"
        )));
    }
    let dim = 1usize << sites;
    // |0101…⟩: odd sites up
    let up_odd: usize = (0..sites)
        .filter(|i| i % 2 == 1)
        .map(|i| 1usize << (sites - 1 - i))
        .sum();
    let up_even = (dim - 1) ^ up_odd;
    match kind {
        NeelKind::Product => StateVector::basis(dim, up_odd),
        NeelKind::Superposition => {
            let amp = std::f64::consts::FRAC_1_SQRT_2;
            let sign = if (sites / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
            let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
            amplitudes[up_odd] = Complex64::new(amp, 0.0);
            amplitudes[up_even] = Complex64::new(sign * amp, 0.0);
            StateVector::new(amplitudes)
        }
    }
}

/// Knobs for `spectral_decompose_with`.
#[derive(Debug, Clone, Copy)]
pub struct DecomposeOptions {
    /// Levels closer than this (relative to `max |E|`) are merged.
    pub merge_rel_tol: f64,
    /// Levels with smaller reference probability are dropped.
    pub prune_below: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            merge_rel_tol: 1e-9,
            prune_below: 1e-14,
        }
    }
}

/// Full eigenpairs of the block of `H` that the reference state can reach.
///
/// Returns `(basis indices of the block, ascending energies, eigenvectors)`.
/// The block is the smallest coordinate subspace containing the support
/// of `reference` that `H` leaves invariant; outside it every projection
/// `⟨ψ_n|φ₀⟩` vanishes identically.
pub fn reachable_eigenpairs(
    h: &HamiltonianMatrix,
    reference: &StateVector,
) -> Result<(Vec<usize>, Vec<f64>, DMatrix<f64>)> {
    if h.dim() != reference.dim() {
        return Err(Error::Dimension(format!(
            "hamiltonian dimension {} does not match reference dimension {}",
            h.dim(),
            reference.dim()
        )));
    }
    let n = h.dim();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, a) in reference.amplitudes.iter().enumerate() {
        if a.norm_sqr() > 0.0 {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(col) = queue.pop_front() {
        for row in 0..n {
            if !seen[row] && h.entries[(row, col)] != 0.0 {
                seen[row] = true;
                queue.push_back(row);
            }
        }
    }
    let block: Vec<usize> = (0..n).filter(|&i| seen[i]).collect();
    let sub = DMatrix::from_fn(block.len(), block.len(), |i, j| h.entries[(block[i], block[j])]);
    let (energies, vectors) = eigen::symmetric_eigen(&sub)?;
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::NoConvergence {
            iterations: 0,
            dim: block.len(),
            dump: format!("symmetric eigensolver returned non-finite values for {}", h.label),
        });
    }
    Ok((block, energies, vectors))
}

pub fn spectral_decompose(h: &HamiltonianMatrix, reference: &StateVector) -> Result<SpectralModel> {
    spectral_decompose_with(h, reference, &DecomposeOptions::default())
}

/// Exact diagonalisation followed by `p_n = |⟨ψ_n|φ₀⟩|²`, degenerate-level
/// merging and pruning of negligible levels.
pub fn spectral_decompose_with(
    h: &HamiltonianMatrix,
    reference: &StateVector,
    options: &DecomposeOptions,
) -> Result<SpectralModel> {
    let (block, energies, vectors) = reachable_eigenpairs(h, reference)?;
    let probabilities: Vec<f64> = (0..energies.len())
        .map(|n| {
            let overlap: Complex64 = block
                .iter()
                .enumerate()
                .map(|(i, &b)| reference.amplitudes[b] * vectors[(i, n)])
                .sum();
            overlap.norm_sqr()
        })
        .collect();

    let scale = energies.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let tol = options.merge_rel_tol * if scale > 0.0 { scale } else { 1.0 };
    let mut merged_e = Vec::new();
    let mut merged_p = Vec::new();
    let mut start = 0;
    while start < energies.len() {
        let mut end = start + 1;
        while end < energies.len() && energies[end] - energies[start] <= tol {
            end += 1;
        }
        let count = (end - start) as f64;
        merged_e.push(energies[start..end].iter().sum::<f64>() / count);
        merged_p.push(probabilities[start..end].iter().sum::<f64>());
        start = end;
    }

    let (energies, probabilities): (Vec<f64>, Vec<f64>) = merged_e
        .into_iter()
        .zip(merged_p)
        .filter(|&(_, p)| p >= options.prune_below)
        .unzip();
    let model = SpectralModel {
        energies,
        probabilities,
        affine: None,
        label: h.label.clone(),
    };
    model
        .validate(1e-10)
        .map_err(|e| Error::Consistency(format!("decomposition of {}: {e}", h.label)))?;
    Ok(model)
}

/// Affinely map `[E_0, E_max]` onto `[lo, hi]`.
///
/// A single-level spectrum can only be shifted, which requires `lo == hi`.
pub fn affine_rescale(spec: &SpectralModel, lo: f64, hi: f64) -> Result<SpectralModel> {
    if !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::Validation(format!("invalid window ({lo}, {hi})")));
    }
    if spec.is_empty() {
        return Err(Error::Validation("cannot rescale an empty spectrum".into()));
    }
    let e0 = spec.ground_energy();
    let range = spec.max_energy() - e0;
    let step = if range > 0.0 {
        if hi == lo {
            return Err(Error::Validation(format!(
                "window ({lo}, {hi}) has zero width but the spectrum spans {range}"
            )));
        }
        let scale = (hi - lo) / range;
        AffineMap::new(scale, lo - scale * e0)?
    } else {
        if hi != lo {
            return Err(Error::DegenerateSpectrum(format!(
                "spectrum has zero range; cannot stretch it onto ({lo}, {hi})"
            )));
        }
        AffineMap::new(1.0, lo - e0)?
    };
    Ok(SpectralModel {
        energies: spec.energies.iter().map(|&e| step.apply(e)).collect(),
        probabilities: spec.probabilities.clone(),
        affine: Some(spec.affine_map().then(&step)),
        label: spec.label.clone(),
    })
}

#[derive(Serialize, Deserialize)]
struct SpectrumFile {
    energies: Vec<f64>,
    probabilities: Vec<f64>,
    affine: Option<AffineMap>,
    label: String,
}

pub fn save_spectrum(spec: &SpectralModel, path: impl AsRef<Path>) -> Result<()> {
    let file = SpectrumFile {
        energies: spec.energies.clone(),
        probabilities: spec.probabilities.clone(),
        affine: spec.affine,
        label: spec.label.clone(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_spectrum(path: impl AsRef<Path>) -> Result<SpectralModel> {
    let text = std::fs::read_to_string(path)?;
    let file: SpectrumFile = serde_json::from_str(&text)?;
    let model = SpectralModel {
        energies: file.energies,
        probabilities: file.probabilities,
        affine: file.affine,
        label: file.label,
    };
    model.validate(FILE_PROBABILITY_TOLERANCE)?;
    Ok(model)
}
