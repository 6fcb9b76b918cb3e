//! Least-squares fits on a shared damped Gauss-Newton solver.

mod decay;
mod linear;
mod lm;
mod lorentzian;

pub use decay::{decay_trace, fit_complex_decay, fit_exp_decay};
pub use linear::fit_linear;
pub use lm::{least_squares_solve, Model, SolverOptions};
pub use lorentzian::{
    fit_lorentzian_triplet, holeburn_efficiency, initial_triplet_guess, lorentzian_triplet,
    TripletInit,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no convergence after {} iterations", report.iterations)]
    NoConvergence { report: Box<FitReport> },
    #[error("normal equations stay singular at maximum damping")]
    SingularNormalEquations,
    #[error("bad initial guess: {0}")]
    BadInit(String),
    #[error("need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("x has {x} entries but y has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("all x values are equal")]
    DegenerateX,
    #[error("degenerate division: {0}")]
    DivisionDegenerate(String),
    #[error("phase step at index {index} exceeds π/2; unwrapping is ambiguous")]
    PhaseUnwrapAmbiguous { index: usize },
    #[error("input fit `{0}` did not converge")]
    NotConverged(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("fit report has no parameter `{0}`")]
    MissingParam(String),
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    ZeroResidual,
    MaxIterations,
    DampingExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub unit: String,
    pub value: f64,
    /// One sigma; `null` in JSON when undetermined.
    #[serde(with = "nonfinite")]
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub params: Vec<FitParam>,
    #[serde(with = "nonfinite_matrix")]
    pub covariance: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    /// Scaled gradient at the returned point.
    pub gradient_norm: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    /// Largest damping used; zero if every step was plain Gauss-Newton.
    pub peak_damping: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

impl FitReport {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Result<&FitParam, FitError> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| FitError::MissingParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<f64, FitError> {
        self.param(name).map(|p| p.value)
    }

    pub fn uncertainty(&self, name: &str) -> Result<f64, FitError> {
        self.param(name).map(|p| p.uncertainty)
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    /// Converts a non-converged report into [`FitError::NoConvergence`].
    pub fn require_converged(self) -> Result<FitReport, FitError> {
        if self.converged {
            Ok(self)
        } else {
            Err(FitError::NoConvergence {
                report: Box::new(self),
            })
        }
    }
}

/// Value with a one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    #[serde(with = "nonfinite")]
    pub uncertainty: f64,
}

pub(crate) fn check_lengths(x: &[f64], y: &[f64], needed: usize) -> Result<(), FitError> {
    if x.len() != y.len() {
        return Err(FitError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < needed {
        return Err(FitError::InsufficientData {
            needed,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::InvalidData("non-finite value".into()));
    }
    Ok(())
}

/// Non-finite floats are written as `null` and read back as +∞.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod nonfinite_matrix {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Option<f64>>> = m
            .iter()
            .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let rows = Vec::<Vec<Option<f64>>>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
            .collect())
    }
}
