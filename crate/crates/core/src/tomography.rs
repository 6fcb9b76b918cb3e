//! Four-phase state tomography of the echo / DEER readout.
//!
//! The final π/2 pulse is applied with phases x, −x, y, −y. Differences of
//! opposite-phase signals give the two transverse projections of the state
//! vector, and any fluorescence common to all four channels cancels.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sequence::SequenceKind;
use crate::spin::wrap_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomographyError {
    #[error("array `{name}` has {got} entries, expected {expected}")]
    LengthMismatch {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("a trace needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("scan values are not strictly monotone at index {0}")]
    NotMonotone(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub kind: Option<SequenceKind>,
    pub summary: String,
}

/// Signals of the four readout phases against the scanned variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub scan_values: Vec<f64>,
    pub i_x: Vec<f64>,
    pub i_minus_x: Vec<f64>,
    pub i_y: Vec<f64>,
    pub i_minus_y: Vec<f64>,
    pub meta: TraceMeta,
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.scan_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scan_values.is_empty()
    }

    pub fn validate(&self) -> Result<(), TomographyError> {
        let n = self.scan_values.len();
        for (name, v) in [
            ("i_x", &self.i_x),
            ("i_minus_x", &self.i_minus_x),
            ("i_y", &self.i_y),
            ("i_minus_y", &self.i_minus_y),
        ] {
            if v.len() != n {
                return Err(TomographyError::LengthMismatch {
                    name,
                    expected: n,
                    got: v.len(),
                });
            }
        }
        if n < 2 {
            return Err(TomographyError::TooShort(n));
        }
        check_monotone(&self.scan_values)
    }
}

pub(crate) fn check_monotone(values: &[f64]) -> Result<(), TomographyError> {
    if values.len() < 2 {
        return Ok(());
    }
    let increasing = values[1] > values[0];
    for (i, w) in values.windows(2).enumerate() {
        let ok = if increasing { w[1] > w[0] } else { w[1] < w[0] };
        if !ok {
            return Err(TomographyError::NotMonotone(i + 1));
        }
    }
    Ok(())
}

/// Transverse projections, vector length and angle per scan point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyResult {
    /// Out-of-phase projection `I_y − I_{−y}`.
    pub d_x: Vec<f64>,
    /// In-phase projection `I_x − I_{−x}`.
    pub d_y: Vec<f64>,
    pub d: Vec<f64>,
    /// `atan2(d_y, d_x)` in (−π, π].
    pub phi: Vec<f64>,
    /// False where `d` is below the noise floor and `phi` is meaningless.
    pub angle_defined: Vec<bool>,
    /// Optional one-sigma error of `d`.
    pub d_err: Option<Vec<f64>>,
}

impl TomographyResult {
    pub fn from_projections(d_x: Vec<f64>, d_y: Vec<f64>, noise_floor: f64) -> Self {
        let d: Vec<f64> = d_x.iter().zip(&d_y).map(|(x, y)| x.hypot(*y)).collect();
        let phi = d_x
            .iter()
            .zip(&d_y)
            .map(|(x, y)| wrap_angle(y.atan2(*x)))
            .collect();
        let angle_defined = d.iter().map(|&v| v > noise_floor).collect();
        TomographyResult {
            d_x,
            d_y,
            d,
            phi,
            angle_defined,
            d_err: None,
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// State as a complex number: in-phase real part, out-of-phase
    /// imaginary part.
    pub fn complex(&self) -> Vec<Complex64> {
        self.d_y
            .iter()
            .zip(&self.d_x)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect()
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Echo projections `E_x = I_y − I_{−y}`, `E_y = I_x − I_{−x}` and length.
pub fn echo_tomography(t: &TraceSet) -> Result<TomographyResult, TomographyError> {
    deer_tomography(t, 0.0)
}

/// DEER projections `D_x = I_y − I_{−y}`, `D_y = I_x − I_{−x}`, length and
/// four-quadrant angle. Points with `D ≤ noise_floor` are flagged.
pub fn deer_tomography(t: &TraceSet, noise_floor: f64) -> Result<TomographyResult, TomographyError> {
    t.validate()?;
    Ok(TomographyResult::from_projections(
        diff(&t.i_y, &t.i_minus_y),
        diff(&t.i_x, &t.i_minus_x),
        noise_floor,
    ))
}

/// Removes 2π jumps so adjacent samples differ by at most π.
pub fn unwrap_phase(phi: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phi.len());
    let mut offset = 0.0;
    for (i, &p) in phi.iter().enumerate() {
        if i > 0 {
            let prev = phi[i - 1];
            let d = p - prev;
            offset -= (d / (2.0 * std::f64::consts::PI)).round() * 2.0 * std::f64::consts::PI;
        }
        out.push(p + offset);
    }
    out
}

/// Index of the first adjacent step of the unwrapped phase larger than
/// `limit`, if any.
pub fn largest_step_index(unwrapped: &[f64], limit: f64) -> Option<usize> {
    unwrapped
        .windows(2)
        .position(|w| (w[1] - w[0]).abs() > limit)
        .map(|i| i + 1)
}
