//! Exponential and complex (decay plus rotation) fits of DEER traces.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::lm::{least_squares_solve, Model, SolverOptions};
use super::{check_lengths, FitError, FitParam, FitReport};
use crate::sequence::SequenceKind;
use crate::simulate::effective_dipolar_time;
use crate::tomography::{largest_step_index, unwrap_phase};

struct Exp<'a> {
    t: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
}

impl Model for Exp<'_> {
    fn residual_count(&self) -> usize {
        self.t.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..self.t.len() {
            out[i] = self.w[i] * (p[0] * (-p[1] * self.t[i]).exp() - self.y[i]);
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for i in 0..self.t.len() {
            let e = (-p[1] * self.t[i]).exp();
            jac[(i, 0)] = self.w[i] * e;
            jac[(i, 1)] = -self.w[i] * p[0] * self.t[i] * e;
        }
    }
}

fn weights(sigma: Option<&[f64]>, n: usize) -> Result<Vec<f64>, FitError> {
    match sigma {
        None => Ok(vec![1.0; n]),
        Some(s) if s.len() != n => Err(FitError::LengthMismatch { x: n, y: s.len() }),
        Some(s) => s
            .iter()
            .map(|&v| {
                if v > 0.0 && v.is_finite() {
                    Ok(1.0 / v)
                } else {
                    Err(FitError::InvalidData(format!("sigma {v} must be > 0")))
                }
            })
            .collect(),
    }
}

/// Weighted straight line `y = a + b·x`; returns `(a, b)`.
fn line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let w2 = w[i] * w[i];
        s += w2;
        sx += w2 * x[i];
        sy += w2 * y[i];
        sxx += w2 * x[i] * x[i];
        sxy += w2 * x[i] * y[i];
    }
    let det = s * sxx - sx * sx;
    if det == 0.0 {
        return (sy / s, 0.0);
    }
    ((sxx * sy - sx * sxy) / det, (s * sxy - sx * sy) / det)
}

/// Fits `A·exp(−rT)` to a positive magnitude trace. With `sigma` the
/// uncertainties are absolute; otherwise they are scaled by the residual.
pub fn fit_exp_decay(t: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<FitReport, FitError> {
    check_lengths(t, y, 5)?;
    if let Some(v) = y.iter().find(|&&v| !(v > 0.0)) {
        return Err(FitError::InvalidData(format!("magnitude {v} is not positive")));
    }
    let w = weights(sigma, t.len())?;
    let ln: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let lw: Vec<f64> = w.iter().zip(y).map(|(w, y)| w * y).collect();
    let (a, b) = line(t, &ln, &lw);
    let model = Exp { t, y, w };
    let opts = SolverOptions {
        absolute_sigma: sigma.is_some(),
        ..Default::default()
    };
    least_squares_solve(
        &model,
        &[a.exp(), -b],
        &[("amplitude", "a.u."), ("rate", "1/s")],
        "exp_decay",
        &opts,
    )?
    .require_converged()
}

/// Effective dipolar times and magnitudes normalized at the point of zero
/// dipolar evolution: `T = 0` for 3-pulse, `T = τ` for 4-pulse DEER.
pub fn decay_trace(
    kind: SequenceKind,
    tau: f64,
    scan_values: &[f64],
    d: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), FitError> {
    check_lengths(scan_values, d, 1)?;
    if !kind.is_deer() {
        return Err(FitError::InvalidData(format!(
            "`{}` is not a DEER sequence",
            kind.name()
        )));
    }
    let t: Vec<f64> = scan_values
        .iter()
        .map(|&s| effective_dipolar_time(kind, tau, s))
        .collect();
    let i0 = (0..t.len())
        .min_by(|&a, &b| t[a].total_cmp(&t[b]))
        .unwrap_or(0);
    let norm = d[i0];
    if !(norm > 0.0) {
        return Err(FitError::DivisionDegenerate(format!(
            "magnitude {norm} at the normalization point"
        )));
    }
    Ok((t, d.iter().map(|v| v / norm).collect()))
}

struct Complex<'a> {
    t: &'a [f64],
    ln_mag: Vec<f64>,
    phase: Vec<f64>,
    w: Vec<f64>,
}

impl Model for Complex<'_> {
    fn residual_count(&self) -> usize {
        2 * self.t.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let n = self.t.len();
        for i in 0..n {
            out[i] = self.w[i] * (p[0] - p[1] * self.t[i] - self.ln_mag[i]);
            out[n + i] = self.w[i] * (p[2] + p[3] * self.t[i] - self.phase[i]);
        }
    }

    fn jacobian(&self, _p: &[f64], jac: &mut DMatrix<f64>) {
        let n = self.t.len();
        jac.fill(0.0);
        for i in 0..n {
            jac[(i, 0)] = self.w[i];
            jac[(i, 1)] = -self.w[i] * self.t[i];
            jac[(n + i, 2)] = self.w[i];
            jac[(n + i, 3)] = self.w[i] * self.t[i];
        }
    }
}

/// Joint fit of `ln|z| = ln A − rT` and `arg z = φ₀ + ωT`, reporting the
/// ratio `ω/r` as the last parameter.
///
/// `sigma` is the one-sigma error of each component of `z`; without it the
/// points are weighted by `|z|` and the covariance is scaled.
pub fn fit_complex_decay(
    t: &[f64],
    z: &[Complex64],
    sigma: Option<&[f64]>,
) -> Result<FitReport, FitError> {
    let mags: Vec<f64> = z.iter().map(|v| v.norm()).collect();
    check_lengths(t, &mags, 5)?;
    if let Some(v) = mags.iter().find(|&&v| !(v > 0.0)) {
        return Err(FitError::InvalidData(format!("magnitude {v} is not positive")));
    }
    let phase = unwrap_phase(&z.iter().map(|v| v.arg()).collect::<Vec<_>>());
    if let Some(index) = largest_step_index(&phase, std::f64::consts::FRAC_PI_2) {
        return Err(FitError::PhaseUnwrapAmbiguous { index });
    }
    let w: Vec<f64> = match sigma {
        None => mags.clone(),
        Some(_) => weights(sigma, t.len())?
            .iter()
            .zip(&mags)
            .map(|(w, m)| w * m)
            .collect(),
    };
    let ln_mag: Vec<f64> = mags.iter().map(|v| v.ln()).collect();
    let (a, b) = line(t, &ln_mag, &w);
    let (c, d) = line(t, &phase, &w);
    let model = Complex {
        t,
        ln_mag,
        phase,
        w,
    };
    let opts = SolverOptions {
        absolute_sigma: sigma.is_some(),
        ..Default::default()
    };
    let mut rep = least_squares_solve(
        &model,
        &[a, -b, c, d],
        &[
            ("log_amplitude", ""),
            ("rate", "1/s"),
            ("phase0", "rad"),
            ("angular_velocity", "rad/s"),
        ],
        "complex_decay",
        &opts,
    )?
    .require_converged()?;

    let r = rep.params[1].value;
    let om = rep.params[3].value;
    let cov = &rep.covariance;
    let ratio = om / r;
    let var = cov[3][3] / (r * r) + (om * om / r.powi(4)) * cov[1][1]
        - 2.0 * om / r.powi(3) * cov[1][3];
    rep.params.push(FitParam {
        name: "ratio".into(),
        unit: "".into(),
        value: ratio,
        uncertainty: if var >= 0.0 { var.sqrt() } else { f64::INFINITY },
    });
    Ok(rep)
}
