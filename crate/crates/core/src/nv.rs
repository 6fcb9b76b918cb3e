//! NV-center resonance model: Zeeman-shifted hyperfine triplets for the four
//! crystallographic orientations, ¹³C echo revivals, Rabi transfer, the echo
//! envelope and a linear fluorescence readout.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spin::PulseParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NvError {
    #[error("no ¹³C revivals exist at zero field")]
    ZeroField,
    #[error("invalid NV parameters: {0}")]
    Invalid(String),
}

/// Zero-field splitting used by the experiment this toolkit models (Hz).
pub const DEFAULT_ZFS: f64 = 2.7e9;
/// Electron gyromagnetic ratio (Hz/G).
pub const DEFAULT_GAMMA_E: f64 = 2.8e6;
/// ¹³C gyromagnetic ratio (Hz/G). Standard constant.
pub const DEFAULT_GAMMA_C13: f64 = 1.0705e3;
/// ¹⁴N hyperfine splitting of the NV ground state (Hz). Standard constant.
pub const DEFAULT_HYPERFINE: f64 = 2.16e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvParams {
    pub zfs: f64,
    pub gamma_e: f64,
    pub gamma_c13: f64,
    pub hyperfine_splitting: f64,
    pub orientations: [Vector3<f64>; 4],
}

impl Default for NvParams {
    fn default() -> Self {
        NvParams {
            zfs: DEFAULT_ZFS,
            gamma_e: DEFAULT_GAMMA_E,
            gamma_c13: DEFAULT_GAMMA_C13,
            hyperfine_splitting: DEFAULT_HYPERFINE,
            orientations: cubic_axes(),
        }
    }
}

impl NvParams {
    pub fn validate(&self) -> Result<(), NvError> {
        if !(self.zfs > 0.0) {
            return Err(NvError::Invalid(format!("zfs must be > 0, got {}", self.zfs)));
        }
        if !(self.gamma_e > 0.0) {
            return Err(NvError::Invalid(format!(
                "gamma_e must be > 0, got {}",
                self.gamma_e
            )));
        }
        for (i, a) in self.orientations.iter().enumerate() {
            if (a.norm() - 1.0).abs() > 1e-9 {
                return Err(NvError::Invalid(format!("orientation {i} is not a unit vector")));
            }
            for b in &self.orientations[i + 1..] {
                if (a.dot(b).abs() - 1.0 / 3.0).abs() > 1e-9 {
                    return Err(NvError::Invalid(
                        "orientations must be the four ⟨111⟩ axes".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The four ⟨111⟩ body diagonals, normalized.
pub fn cubic_axes() -> [Vector3<f64>; 4] {
    let s = 1.0 / 3f64.sqrt();
    [
        Vector3::new(s, s, s),
        Vector3::new(s, -s, -s),
        Vector3::new(-s, s, -s),
        Vector3::new(-s, -s, s),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasField {
    pub direction: Vector3<f64>,
    /// Field magnitude (G).
    pub magnitude: f64,
}

impl BiasField {
    pub fn new(direction: Vector3<f64>, magnitude: f64) -> Result<Self, NvError> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(NvError::Invalid("field direction must be non-zero".into()));
        }
        if !(magnitude >= 0.0) {
            return Err(NvError::Invalid(format!(
                "field magnitude must be >= 0, got {magnitude}"
            )));
        }
        Ok(BiasField {
            direction: direction / n,
            magnitude,
        })
    }

    pub fn along_111(magnitude: f64) -> Self {
        BiasField {
            direction: cubic_axes()[0],
            magnitude,
        }
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.direction * self.magnitude
    }
}

/// Hyperfine triplet of one orientation group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationLines {
    pub axis: Vector3<f64>,
    /// Line centre without hyperfine splitting (Hz).
    pub center: f64,
    /// `[center - A, center, center + A]` (Hz).
    pub lines: [f64; 3],
}

fn triplet(center: f64, a: f64) -> [f64; 3] {
    [center - a, center, center + a]
}

/// |0⟩ → |−1⟩ transition triplets for each orientation, secular Zeeman
/// shift `γ_e |B·û|`.
pub fn resonance_frequencies(field: &BiasField, nv: &NvParams) -> Vec<OrientationLines> {
    transition_lines(field, nv, -1.0)
}

/// |0⟩ → |+1⟩ transition triplets for each orientation.
pub fn upper_resonance_frequencies(field: &BiasField, nv: &NvParams) -> Vec<OrientationLines> {
    transition_lines(field, nv, 1.0)
}

fn transition_lines(field: &BiasField, nv: &NvParams, sign: f64) -> Vec<OrientationLines> {
    let b = field.vector();
    nv.orientations
        .iter()
        .map(|axis| {
            let center = nv.zfs + sign * nv.gamma_e * b.dot(axis).abs();
            OrientationLines {
                axis: *axis,
                center,
                lines: triplet(center, nv.hyperfine_splitting),
            }
        })
        .collect()
}

/// Echo half-times τ_n = n / (γ_C13 B), n = 1..=n_max, at which the full
/// echo `2τ_n` spans an even number of ¹³C Larmor half-periods.
pub fn larmor_revival_times(
    field_magnitude: f64,
    nv: &NvParams,
    n_max: usize,
) -> Result<Vec<f64>, NvError> {
    if field_magnitude == 0.0 {
        return Err(NvError::ZeroField);
    }
    if !(field_magnitude > 0.0) {
        return Err(NvError::Invalid(format!(
            "field magnitude must be positive, got {field_magnitude}"
        )));
    }
    let period = 1.0 / (nv.gamma_c13 * field_magnitude);
    Ok((1..=n_max).map(|n| n as f64 * period).collect())
}

/// Transferred population `(Ω²/Ω_A²) sin²(Ω_A t / 2)`.
pub fn rabi_population(p: &PulseParams) -> f64 {
    let w = p.generalized_rabi();
    if w == 0.0 {
        return 0.0;
    }
    let s = (0.5 * w * p.duration).sin();
    let r = p.rabi / w;
    (r * r * s * s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    /// Coherence time T₂ (s).
    pub t2: f64,
    /// Stretch exponent n in `exp(-(t/T₂)^n)`, within [1, 4].
    pub stretch_exponent: f64,
    /// Gaussian width of each revival (s).
    pub revival_width: f64,
}

impl EnvelopeParams {
    pub fn validate(&self) -> Result<(), NvError> {
        let mut bad = Vec::new();
        if !(self.t2 > 0.0) {
            bad.push(format!("t2 must be > 0, got {}", self.t2));
        }
        if !(1.0..=4.0).contains(&self.stretch_exponent) {
            bad.push(format!(
                "stretch_exponent must lie in [1, 4], got {}",
                self.stretch_exponent
            ));
        }
        if !(self.revival_width > 0.0) {
            bad.push(format!("revival_width must be > 0, got {}", self.revival_width));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(NvError::Invalid(bad.join("; ")))
        }
    }
}

/// Echo amplitude after a total free evolution `total_time`.
///
/// Stretched exponential times a Gaussian comb centred on `0` and on every
/// `2τ_n` in `revivals`. An empty revival list disables the comb.
pub fn echo_envelope(total_time: f64, env: &EnvelopeParams, revivals: &[f64]) -> f64 {
    let decay = (-(total_time / env.t2).powf(env.stretch_exponent)).exp();
    if revivals.is_empty() {
        return decay;
    }
    let w2 = 2.0 * env.revival_width * env.revival_width;
    let comb = std::iter::once(0.0)
        .chain(revivals.iter().map(|tau| 2.0 * tau))
        .map(|c| (-(total_time - c).powi(2) / w2).exp())
        .fold(0.0, f64::max);
    (decay * comb).clamp(0.0, 1.0)
}

/// Fluorescence for a bright-state population `pop0`:
/// `baseline · (1 - contrast · (1 - pop0))`.
pub fn readout_signal(pop0: f64, contrast: f64, baseline: f64) -> f64 {
    baseline * (1.0 - contrast * (1.0 - pop0))
}
