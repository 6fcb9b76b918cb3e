//! Weighted straight-line fits.

use nalgebra::DMatrix;

use super::lm::{least_squares_solve, Model, SolverOptions};
use super::{check_lengths, FitError, FitReport};

struct Line<'a> {
    x: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
    intercept: bool,
}

impl Model for Line<'_> {
    fn residual_count(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let b = if self.intercept { p[1] } else { 0.0 };
        for i in 0..self.x.len() {
            out[i] = self.w[i] * (p[0] * self.x[i] + b - self.y[i]);
        }
    }

    fn jacobian(&self, _p: &[f64], jac: &mut DMatrix<f64>) {
        for i in 0..self.x.len() {
            jac[(i, 0)] = self.w[i] * self.x[i];
            if self.intercept {
                jac[(i, 1)] = self.w[i];
            }
        }
    }
}

/// Fits `y = slope·x (+ intercept)`. With `y_err` the points are weighted
/// by `1/σ²` and the uncertainties are absolute.
pub fn fit_linear(
    x: &[f64],
    y: &[f64],
    y_err: Option<&[f64]>,
    intercept: bool,
) -> Result<FitReport, FitError> {
    check_lengths(x, y, 2)?;
    let degenerate = if intercept {
        x.iter().all(|&v| v == x[0])
    } else {
        x.iter().all(|&v| v == 0.0)
    };
    if degenerate {
        return Err(FitError::DegenerateX);
    }
    let w = match y_err {
        None => vec![1.0; x.len()],
        Some(e) if e.len() != x.len() => {
            return Err(FitError::LengthMismatch {
                x: x.len(),
                y: e.len(),
            })
        }
        Some(e) => e
            .iter()
            .map(|&s| {
                if s > 0.0 && s.is_finite() {
                    Ok(1.0 / s)
                } else {
                    Err(FitError::InvalidData(format!("y_err {s} must be > 0")))
                }
            })
            .collect::<Result<_, _>>()?,
    };
    let model = Line {
        x,
        y,
        w,
        intercept,
    };
    let opts = SolverOptions {
        absolute_sigma: y_err.is_some(),
        ..Default::default()
    };
    let (init, names): (Vec<f64>, Vec<(&str, &str)>) = if intercept {
        (vec![0.0, 0.0], vec![("slope", "y/x"), ("intercept", "y")])
    } else {
        (vec![0.0], vec![("slope", "y/x")])
    };
    least_squares_solve(&model, &init, &names, "linear", &opts)?.require_converged()
}
