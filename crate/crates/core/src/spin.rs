//! Two-level propagator algebra for the effective NV spin subspace.
//!
//! States are normalized spinors `(up, down)`, pulses are 2×2 unitaries. The
//! drive Hamiltonian in the frame of the driving field is
//! `H = (Ω (cos ϕ σx + sin ϕ σy) + δ σz) / 2`, so a resonant pulse of area π
//! about x is `[[0, -i], [-i, 0]]`.
//!
//! Angles are radians everywhere; angular frequencies are rad/s.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Tolerance on the unitarity residual accepted by [`apply`].
pub const UNITARITY_TOLERANCE: f64 = 1e-9;

/// Largest |Ω/δ| for which the diagonal far-detuned form is accepted.
pub const FAR_DETUNED_LIMIT: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("far-detuned approximation requires |rabi/detuning| < {limit}, got {ratio}")]
    ApproximationDomain { ratio: f64, limit: f64 },
    #[error("operator is not unitary (residual {residual:e})")]
    NonUnitary { residual: f64 },
    #[error("invalid pulse parameters: {0}")]
    InvalidParams(String),
}

/// Spinor of the two NV sublevels used by the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinState {
    pub up: Complex64,
    pub down: Complex64,
}

impl SpinState {
    pub fn new(up: Complex64, down: Complex64) -> Self {
        SpinState { up, down }.normalized()
    }

    /// |0⟩ in the two-level picture (north pole).
    pub fn ground() -> Self {
        SpinState { up: ONE, down: ZERO }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.up.norm_sqr() + self.down.norm_sqr()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm_sqr().sqrt();
        SpinState {
            up: self.up / n,
            down: self.down / n,
        }
    }

    /// Azimuth of the state on the Bloch sphere, `arg(down) - arg(up)`,
    /// wrapped to (-π, π].
    pub fn azimuth(&self) -> f64 {
        wrap_angle((self.down * self.up.conj()).arg())
    }

    /// Bloch vector `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)`.
    pub fn bloch(&self) -> [f64; 3] {
        let c = self.up.conj() * self.down;
        [
            2.0 * c.re,
            2.0 * c.im,
            self.up.norm_sqr() - self.down.norm_sqr(),
        ]
    }

    /// Population of the upper (|0⟩) level.
    pub fn population_up(&self) -> f64 {
        self.up.norm_sqr() / self.norm_sqr()
    }
}

/// State on the Bloch-sphere equator with azimuth `phase`: `(1, e^{iφ})/√2`.
pub fn equator_state(phase: f64) -> SpinState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    SpinState {
        up: Complex64::new(s, 0.0),
        down: Complex64::from_polar(s, phase),
    }
}

/// 2×2 complex matrix acting on [`SpinState`]. Row-major `m[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseOperator {
    pub m: [[Complex64; 2]; 2],
}

impl PulseOperator {
    pub fn new(m00: Complex64, m01: Complex64, m10: Complex64, m11: Complex64) -> Self {
        PulseOperator {
            m: [[m00, m01], [m10, m11]],
        }
    }

    pub fn identity() -> Self {
        Self::new(ONE, ZERO, ZERO, ONE)
    }

    pub fn diagonal(a: Complex64, b: Complex64) -> Self {
        Self::new(a, ZERO, ZERO, b)
    }

    pub fn dagger(&self) -> Self {
        let m = &self.m;
        Self::new(m[0][0].conj(), m[1][0].conj(), m[0][1].conj(), m[1][1].conj())
    }

    /// Largest entrywise deviation of `U†U` from the identity.
    pub fn unitarity_residual(&self) -> f64 {
        let p = self.dagger() * *self;
        let id = Self::identity();
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((p.m[r][c] - id.m[r][c]).norm());
            }
        }
        worst
    }

    /// Entrywise distance after removing the global phase. The phase is
    /// aligned on the first entry of `self` that is not negligibly small.
    pub fn distance_up_to_phase(&self, other: &PulseOperator) -> f64 {
        let mut phase = ONE;
        'outer: for r in 0..2 {
            for c in 0..2 {
                if self.m[r][c].norm() > 1e-12 && other.m[r][c].norm() > 1e-12 {
                    let ratio = self.m[r][c] / other.m[r][c];
                    phase = ratio / ratio.norm();
                    break 'outer;
                }
            }
        }
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((self.m[r][c] - phase * other.m[r][c]).norm());
            }
        }
        worst
    }

    pub fn max_distance(&self, other: &PulseOperator) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((self.m[r][c] - other.m[r][c]).norm());
            }
        }
        worst
    }

    fn act(&self, s: &SpinState) -> SpinState {
        SpinState {
            up: self.m[0][0] * s.up + self.m[0][1] * s.down,
            down: self.m[1][0] * s.up + self.m[1][1] * s.down,
        }
    }
}

impl Mul for PulseOperator {
    type Output = PulseOperator;

    fn mul(self, rhs: PulseOperator) -> PulseOperator {
        let a = &self.m;
        let b = &rhs.m;
        PulseOperator::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl fmt::Display for PulseOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{}, {}], [{}, {}]]",
            self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]
        )
    }
}

/// Drive strength, detuning and length of one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    /// Rabi angular frequency Ω (rad/s), ≥ 0.
    pub rabi: f64,
    /// Detuning δ (rad/s).
    pub detuning: f64,
    /// Duration (s), ≥ 0.
    pub duration: f64,
}

impl PulseParams {
    pub fn new(rabi: f64, detuning: f64, duration: f64) -> Result<Self, SpinError> {
        let p = PulseParams {
            rabi,
            detuning,
            duration,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if !(self.rabi.is_finite() && self.detuning.is_finite() && self.duration.is_finite()) {
            return Err(SpinError::InvalidParams("non-finite value".into()));
        }
        if self.rabi < 0.0 {
            return Err(SpinError::InvalidParams(format!("rabi {} < 0", self.rabi)));
        }
        if self.duration < 0.0 {
            return Err(SpinError::InvalidParams(format!(
                "duration {} < 0",
                self.duration
            )));
        }
        Ok(())
    }

    /// Generalized Rabi frequency Ω_A = √(Ω² + δ²).
    pub fn generalized_rabi(&self) -> f64 {
        self.rabi.hypot(self.detuning)
    }
}

/// Resonant π rotation about x.
pub fn pi_pulse() -> PulseOperator {
    let mi = Complex64::new(0.0, -1.0);
    PulseOperator::new(ZERO, mi, mi, ZERO)
}

/// Propagator `exp(-iHt)` for `H = (Ω (cos ϕ σx + sin ϕ σy) + δ σz)/2`,
/// in the frame of the driving field.
pub fn rotation(p: &PulseParams, axis_phase: f64) -> PulseOperator {
    let w = p.generalized_rabi();
    if w == 0.0 || p.duration == 0.0 {
        return PulseOperator::identity();
    }
    let half = 0.5 * w * p.duration;
    let (s, c) = half.sin_cos();
    let nz = p.detuning / w;
    let nt = p.rabi / w;
    // -i sin(·)(n·σ); the transverse part carries the axis phase.
    let off = Complex64::new(0.0, -s * nt);
    PulseOperator::new(
        Complex64::new(c, -s * nz),
        off * Complex64::from_polar(1.0, -axis_phase),
        off * Complex64::from_polar(1.0, axis_phase),
        Complex64::new(c, s * nz),
    )
}

/// Free precession at detuning δ for time `t`: `exp(-i δ σz t / 2)`.
pub fn free_evolution(detuning: f64, t: f64) -> PulseOperator {
    z_rotation(detuning * t)
}

/// Rotation about z by `angle`: `diag(e^{-iθ/2}, e^{iθ/2})`. Shifts the
/// azimuth of an equator state by `+angle`.
pub fn z_rotation(angle: f64) -> PulseOperator {
    PulseOperator::diagonal(
        Complex64::from_polar(1.0, -0.5 * angle),
        Complex64::from_polar(1.0, 0.5 * angle),
    )
}

/// Generalized-Rabi pulse seen from the frame of the spin that is detuned by
/// δ from the drive, i.e. with the bare detuned precession removed:
/// `diag(e^{iδt/2}, e^{-iδt/2}) · exp(-iHt)`.
///
/// With Ω = 0 this is exactly the identity; with δ = 0 it is a resonant
/// x-rotation by Ωt.
pub fn detuned_pulse(p: &PulseParams) -> PulseOperator {
    let frame = free_evolution(-p.detuning, p.duration);
    frame * rotation(p, 0.0)
}

/// Diagonal limit of [`detuned_pulse`] for |Ω/δ| ≪ 1: the pulse only shifts
/// the phase by `(δ - Ω_A) t`.
pub fn far_detuned_approx(p: &PulseParams) -> Result<PulseOperator, SpinError> {
    let ratio = if p.detuning == 0.0 {
        if p.rabi == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (p.rabi / p.detuning).abs()
    };
    if ratio >= FAR_DETUNED_LIMIT {
        return Err(SpinError::ApproximationDomain {
            ratio,
            limit: FAR_DETUNED_LIMIT,
        });
    }
    let theta = (p.detuning - p.detuning.signum() * p.generalized_rabi()) * p.duration;
    Ok(PulseOperator::diagonal(
        Complex64::from_polar(1.0, 0.5 * theta),
        Complex64::from_polar(1.0, -0.5 * theta),
    ))
}

/// Applies `op` to `s`, renormalizing the result.
pub fn apply(op: &PulseOperator, s: &SpinState) -> Result<SpinState, SpinError> {
    let residual = op.unitarity_residual();
    if residual > UNITARITY_TOLERANCE {
        return Err(SpinError::NonUnitary { residual });
    }
    Ok(op.act(s).normalized())
}

/// Phase difference between the two orderings of a resonant π pulse and a
/// far-detuned pulse: `2t(Ω_A - |δ|)`.
pub fn phase_jump_exact(p: &PulseParams) -> f64 {
    2.0 * p.duration * (p.generalized_rabi() - p.detuning.abs())
}

/// Leading-order form of [`phase_jump_exact`]: `Ω² t / |δ|`.
pub fn phase_jump_approx(p: &PulseParams) -> f64 {
    if p.rabi == 0.0 {
        return 0.0;
    }
    p.rabi * p.rabi * p.duration / p.detuning.abs()
}

/// Rotation of the echo state about z accumulated over a total free
/// evolution of `2τ` at detuning `delta_nu` (Hz): `4π τ δν`.
pub fn detuning_phase(tau: f64, delta_nu: f64) -> f64 {
    4.0 * PI * tau * delta_nu
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn degrees(rad: f64) -> f64 {
    rad.to_degrees()
}
