//! Overlap time series `s_k = Σ_n p_n e^{-i E_n k Δt}`, measurement noise,
//! timestep selection and the time-shifted Hankel pair.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralModel;

/// Aspect ratio `d / (K+1)` used for complex signals.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Default fraction of the aliasing limit used by `choose_timestep`.
pub const DEFAULT_TIMESTEP_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalParts {
    Complex,
    RealOnly,
}

impl SignalParts {
    /// Hadamard-test circuits needed per time step.
    pub fn observables_per_step(self) -> usize {
        match self {
            SignalParts::Complex => 2,
            SignalParts::RealOnly => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignalParts::Complex => "complex",
            SignalParts::RealOnly => "real_only",
        }
    }
}

/// Embedding aspect ratio for a signal type: real-only data carries each
/// eigenphase as a conjugate pair and needs twice the rows.
pub fn default_alpha(parts: SignalParts) -> f64 {
    match parts {
        SignalParts::Complex => DEFAULT_ALPHA,
        SignalParts::RealOnly => 2.0 * DEFAULT_ALPHA,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapSignal {
    pub dt: f64,
    pub values: Vec<Complex64>,
    pub parts: SignalParts,
    pub noise_level: f64,
    pub seed: u64,
    pub source_label: String,
}

impl OverlapSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The first `n` samples as a new signal.
    pub fn prefix(&self, n: usize) -> OverlapSignal {
        OverlapSignal {
            values: self.values[..n.min(self.len())].to_vec(),
            ..self.clone()
        }
    }
}

fn phase_sum(spec: &SpectralModel, weights: impl Fn(usize) -> f64, dt: f64, k: usize) -> Complex64 {
    spec.energies
        .iter()
        .enumerate()
        .map(|(n, &e)| {
            let angle = -e * (k as f64) * dt;
            Complex64::new(angle.cos(), angle.sin()) * weights(n)
        })
        .sum()
}

fn check_generation_args(spec: &SpectralModel, dt: f64, k_max: usize) -> Result<()> {
    if spec.is_empty() {
        return Err(Error::Validation(
            "cannot generate a signal from an empty spectrum".into(),
        ));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Validation(format!("timestep must be positive, got {dt}")));
    }
    if k_max < 1 {
        return Err(Error::Validation("k_max must be at least 1".into()));
    }
    Ok(())
}

/// Exact samples `s_0 … s_{k_max}`.
pub fn generate_overlap(spec: &SpectralModel, dt: f64, k_max: usize) -> Result<OverlapSignal> {
    check_generation_args(spec, dt, k_max)?;
    let values = (0..=k_max)
        .map(|k| phase_sum(spec, |n| spec.probabilities[n], dt, k))
        .collect();
    Ok(OverlapSignal {
        dt,
        values,
        parts: SignalParts::Complex,
        noise_level: 0.0,
        seed: 0,
        source_label: spec.label.clone(),
    })
}

/// Energy-weighted samples `h_k = Σ_n p_n E_n e^{-i E_n k Δt}`, i.e.
/// `⟨φ₀| e^{-iHkΔt} H |φ₀⟩`, for subspace methods that need the
/// Hamiltonian matrix elements.
pub fn generate_weighted_overlap(spec: &SpectralModel, dt: f64, k_max: usize) -> Result<Vec<Complex64>> {
    check_generation_args(spec, dt, k_max)?;
    Ok((0..=k_max)
        .map(|k| phase_sum(spec, |n| spec.probabilities[n] * spec.energies[n], dt, k))
        .collect())
}

/// Independent noise streams. A draw is keyed by `(seed, sample index,
/// stream)`, so samples can be generated in any order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseStream {
    OverlapRe = 0,
    OverlapIm = 1,
    WeightedRe = 2,
    WeightedIm = 3,
}

/// One `N(0, 1)` draw. The generator is ChaCha8 seeded from `seed` and
/// positioned on stream `4 * index + stream`; normals come from the
/// `rand_distr` ziggurat sampler.
pub fn standard_normal(seed: u64, index: usize, stream: NoiseStream) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index as u64).wrapping_mul(4).wrapping_add(stream as u64));
    StandardNormal.sample(&mut rng)
}

/// Add `N(0, ε²)` to every stored part of a complex series.
pub fn perturb_series(
    values: &[Complex64],
    eps: f64,
    seed: u64,
    streams: (NoiseStream, Option<NoiseStream>),
) -> Vec<Complex64> {
    values
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let re = v.re + eps * standard_normal(seed, k, streams.0);
            let im = match streams.1 {
                Some(s) => v.im + eps * standard_normal(seed, k, s),
                None => v.im,
            };
            Complex64::new(re, im)
        })
        .collect()
}

pub fn add_gaussian_noise(sig: &OverlapSignal, eps: f64, seed: u64) -> Result<OverlapSignal> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Validation(format!("noise level must be >= 0, got {eps}")));
    }
    if eps == 0.0 {
        return Ok(OverlapSignal {
            noise_level: 0.0,
            seed,
            ..sig.clone()
        });
    }
    let im_stream = match sig.parts {
        SignalParts::Complex => Some(NoiseStream::OverlapIm),
        SignalParts::RealOnly => None,
    };
    Ok(OverlapSignal {
        values: perturb_series(&sig.values, eps, seed, (NoiseStream::OverlapRe, im_stream)),
        noise_level: eps,
        seed,
        ..sig.clone()
    })
}

/// Keep `Re s_k` only. Idempotent.
pub fn take_real_part(sig: &OverlapSignal) -> OverlapSignal {
    OverlapSignal {
        values: sig.values.iter().map(|v| Complex64::new(v.re, 0.0)).collect(),
        parts: SignalParts::RealOnly,
        ..sig.clone()
    }
}

/// `Δt = c · 2π / ((e_max − e_min) + gap)`.
///
/// Without `gap` this keeps every eigenangle inside one turn of the
/// circle. Passing the known gap `E_1 − E_0` tightens the step to the
/// stricter convergence condition.
pub fn choose_timestep(e_min: f64, e_max: f64, c: f64, gap: Option<f64>) -> Result<f64> {
    if !(e_max > e_min) || !e_min.is_finite() || !e_max.is_finite() {
        return Err(Error::Validation(format!(
            "need e_max > e_min, got e_min = {e_min}, e_max = {e_max}"
        )));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Validation(format!("fraction c must lie in (0, 1), got {c}")));
    }
    let gap = gap.unwrap_or(0.0);
    if !(gap >= 0.0) {
        return Err(Error::Validation(format!("gap must be >= 0, got {gap}")));
    }
    Ok(c * 2.0 * PI / ((e_max - e_min) + gap))
}

/// `Δt < 2π / ((e_max − e_min) + gap)`.
pub fn timestep_is_admissible(dt: f64, e_min: f64, e_max: f64, gap: Option<f64>) -> bool {
    dt > 0.0 && dt * ((e_max - e_min) + gap.unwrap_or(0.0)) < 2.0 * PI
}

/// Rows of the embedding for `K+1` columns: `max(1, ⌊α(K+1)⌋)`, never more
/// than the column count.
pub fn embedding_rows(k: usize, alpha: f64) -> usize {
    let cols = k + 1;
    (((alpha * cols as f64) + 1e-12).floor() as usize).clamp(1, cols)
}

/// Largest `K` whose Hankel pair fits in `available` samples, with its `d`.
pub fn largest_layout(available: usize, alpha: f64) -> Option<(usize, usize)> {
    let mut best = None;
    for k in 0..available {
        let d = embedding_rows(k, alpha);
        if k + d < available {
            best = Some((k, d));
        } else if best.is_some() {
            break;
        }
    }
    best
}

/// `X = X_{0:K}`, `X' = X_{1:K+1}`, both `d × (K+1)` with
/// `X[i][j] = s_{i+j}` and `X'[i][j] = s_{i+j+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    pub d: usize,
    pub k: usize,
    pub x: DMatrix<Complex64>,
    pub x_prime: DMatrix<Complex64>,
}

impl HankelPair {
    pub fn cols(&self) -> usize {
        self.k + 1
    }

    pub fn samples_used(&self) -> usize {
        self.k + self.d + 1
    }
}

/// `rows × cols` Hankel matrix with entry `(i, j) = values[offset + i + j]`.
pub fn hankel_matrix(values: &[Complex64], rows: usize, cols: usize, offset: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |i, j| values[offset + i + j])
}

pub fn hankelize(sig: &OverlapSignal, k: usize, alpha: f64) -> Result<HankelPair> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Validation(format!(
            "aspect ratio must lie in (0, 1], got {alpha}"
        )));
    }
    let d = embedding_rows(k, alpha);
    hankelize_rows(sig, k, d)
}

/// Hankel pair with an explicit row count `d`.
pub fn hankelize_rows(sig: &OverlapSignal, k: usize, d: usize) -> Result<HankelPair> {
    if d == 0 {
        return Err(Error::Validation("embedding needs at least one row".into()));
    }
    let required = k + d + 1;
    if sig.len() < required {
        return Err(Error::InsufficientSamples {
            required,
            available: sig.len(),
        });
    }
    Ok(HankelPair {
        d,
        k,
        x: hankel_matrix(&sig.values, d, k + 1, 0),
        x_prime: hankel_matrix(&sig.values, d, k + 1, 1),
    })
}

/// Write the signal as CSV with `#`-prefixed metadata lines.
pub fn write_signal_csv<W: Write>(sig: &OverlapSignal, mut out: W) -> Result<()> {
    writeln!(out, "# dt = {}", sig.dt)?;
    writeln!(out, "# eps = {}", sig.noise_level)?;
    writeln!(out, "# seed = {}", sig.seed)?;
    writeln!(out, "# source_label = {}", sig.source_label)?;
    writeln!(out, "# parts = {}", sig.parts.as_str())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t", "re", "im"])?;
    for (k, v) in sig.values.iter().enumerate() {
        let t = k as f64 * sig.dt;
        let im = match sig.parts {
            SignalParts::Complex => v.im.to_string(),
            SignalParts::RealOnly => String::new(),
        };
        w.write_record([k.to_string(), t.to_string(), v.re.to_string(), im])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_signal(sig: &OverlapSignal, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_signal_csv(sig, std::io::BufWriter::new(file))
}

pub fn load_signal(path: impl AsRef<Path>) -> Result<OverlapSignal> {
    let text = std::fs::read(path)?;
    let mut sig = OverlapSignal {
        dt: f64::NAN,
        values: Vec::new(),
        parts: SignalParts::Complex,
        noise_level: 0.0,
        seed: 0,
        source_label: String::new(),
    };
    for line in BufReader::new(text.as_slice()).lines() {
        let line = line?;
        let Some(meta) = line.strip_prefix('#') else { break };
        let Some((key, value)) = meta.split_once('=') else {
            continue;
        };
        let value = value.trim();
        let bad = |what: &str| Error::Validation(format!("signal header: bad {what} '{value}'"));
        match key.trim() {
            "dt" => sig.dt = value.parse().map_err(|_| bad("dt"))?,
            "eps" => sig.noise_level = value.parse().map_err(|_| bad("eps"))?,
            "seed" => sig.seed = value.parse().map_err(|_| bad("seed"))?,
            "source_label" => sig.source_label = value.to_string(),
            "parts" => {
                sig.parts = match value {
                    "complex" => SignalParts::Complex,
                    "real_only" => SignalParts::RealOnly,
                    _ => return Err(bad("parts")),
                }
            }
            _ => {}
        }
    }
    if !(sig.dt > 0.0) {
        return Err(Error::Validation("signal header is missing a positive dt".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_slice());
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let k: usize = field(0)
            .parse()
            .map_err(|_| Error::Validation(format!("signal row {row}: bad k")))?;
        if k != row {
            return Err(Error::Validation(format!(
                "signal row {row}: expected k = {row}, found {k}"
            )));
        }
        let re: f64 = field(2)
            .parse()
            .map_err(|_| Error::Validation(format!("signal row {row}: bad re")))?;
        let im: f64 = match (sig.parts, field(3)) {
            (SignalParts::RealOnly, _) | (_, "") => 0.0,
            (_, s) => s
                .parse()
                .map_err(|_| Error::Validation(format!("signal row {row}: bad im")))?,
        };
        sig.values.push(Complex64::new(re, im));
    }
    Ok(sig)
}
