//! Damped Gauss-Newton (Levenberg-Marquardt) with adaptive damping.
//!
//! Damping starts at zero so well-posed problems take plain Gauss-Newton
//! steps; it is switched on only when a step fails to reduce the cost or the
//! normal equations cannot be factorized.

use nalgebra::{DMatrix, DVector};

use super::{FitError, FitParam, FitReport, Termination};

/// Residual function `r(p) = model(p) − data` (optionally weighted).
pub trait Model {
    fn residual_count(&self) -> usize;

    fn residuals(&self, p: &[f64], out: &mut [f64]);

    /// Jacobian `∂r_i/∂p_j`. The default uses central differences.
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let m = self.residual_count();
        let mut hi = vec![0.0; m];
        let mut lo = vec![0.0; m];
        let mut q = p.to_vec();
        for j in 0..p.len() {
            let h = f64::EPSILON.cbrt() * p[j].abs().max(1e-8);
            q[j] = p[j] + h;
            self.residuals(&q, &mut hi);
            q[j] = p[j] - h;
            self.residuals(&q, &mut lo);
            q[j] = p[j];
            for i in 0..m {
                jac[(i, j)] = (hi[i] - lo[i]) / (2.0 * h);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Bound on `max_j |g_j| / (‖r‖ ‖J_j‖)`.
    pub gradient_tolerance: f64,
    /// Bound on `‖h‖ / (‖p‖ + tol)`.
    pub step_tolerance: f64,
    /// First nonzero damping relative to the largest diagonal of `JᵀJ`.
    pub initial_damping: f64,
    pub max_damping: f64,
    /// Treat residuals as already divided by known sigmas; otherwise the
    /// covariance is scaled by the reduced chi-square.
    pub absolute_sigma: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            max_damping: 1e32,
            absolute_sigma: false,
        }
    }
}

fn eval<M: Model + ?Sized>(model: &M, p: &DVector<f64>, r: &mut DVector<f64>) -> f64 {
    model.residuals(p.as_slice(), r.as_mut_slice());
    r.norm_squared()
}

fn scaled_gradient(jac: &DMatrix<f64>, g: &DVector<f64>, rnorm: f64) -> f64 {
    (0..jac.ncols())
        .map(|j| {
            let c = jac.column(j).norm();
            if c == 0.0 {
                0.0
            } else {
                g[j].abs() / (c * rnorm)
            }
        })
        .fold(0.0, f64::max)
}

/// Minimizes `‖r(p)‖²` from `init`. `params` gives `(name, unit)` per
/// parameter. A run that hits the iteration cap returns `Ok` with
/// `converged == false`.
pub fn least_squares_solve<M: Model + ?Sized>(
    model: &M,
    init: &[f64],
    params: &[(&str, &str)],
    model_name: &str,
    opts: &SolverOptions,
) -> Result<FitReport, FitError> {
    let n = init.len();
    let m = model.residual_count();
    if params.len() != n {
        return Err(FitError::InvalidData(format!(
            "{} parameter names for {n} parameters",
            params.len()
        )));
    }
    if m < n {
        return Err(FitError::InsufficientData { needed: n, got: m });
    }
    let mut x = DVector::from_column_slice(init);
    let mut r = DVector::zeros(m);
    let mut cost = eval(model, &x, &mut r);
    if !cost.is_finite() {
        return Err(FitError::BadInit("residuals are not finite at the initial point".into()));
    }
    let initial_norm = cost.sqrt();
    let mut jac = DMatrix::zeros(m, n);
    let mut r_new = DVector::zeros(m);
    let mut diag_scale: DVector<f64> = DVector::from_element(n, 0.0);
    let mut mu = 0.0_f64;
    let mut nu = 2.0;
    let mut peak = 0.0_f64;
    let mut iterations = 0;

    let (termination, grad) = 'outer: loop {
        model.jacobian(x.as_slice(), &mut jac);
        let g = jac.tr_mul(&r);
        let a = jac.tr_mul(&jac);
        let rnorm = cost.sqrt();
        if rnorm == 0.0 {
            break (Termination::ZeroResidual, 0.0);
        }
        let grad = scaled_gradient(&jac, &g, rnorm);
        if grad < opts.gradient_tolerance {
            break (Termination::Gradient, grad);
        }
        if iterations >= opts.max_iterations {
            break (Termination::MaxIterations, grad);
        }
        iterations += 1;
        let amax = a.diagonal().amax();
        for j in 0..n {
            diag_scale[j] = diag_scale[j].max(a[(j, j)]).max(1e-12 * amax.max(f64::MIN_POSITIVE));
        }
        loop {
            let mut lhs = a.clone();
            for j in 0..n {
                lhs[(j, j)] += mu * diag_scale[j];
            }
            let bump = |mu: &mut f64, nu: &mut f64| {
                *mu = if *mu == 0.0 {
                    opts.initial_damping
                } else {
                    *mu * *nu
                };
                *nu *= 2.0;
            };
            let Some(chol) = lhs.cholesky() else {
                bump(&mut mu, &mut nu);
                peak = peak.max(mu);
                if mu > opts.max_damping {
                    return Err(FitError::SingularNormalEquations);
                }
                continue;
            };
            let h = chol.solve(&(-&g));
            if h.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance) {
                break 'outer (Termination::Step, grad);
            }
            let x_new = &x + &h;
            let cost_new = eval(model, &x_new, &mut r_new);
            let predicted = -(2.0 * h.dot(&g) + h.dot(&(&a * &h)));
            let rho = (cost - cost_new) / predicted;
            if cost_new.is_finite() && cost_new < cost && rho > 0.0 {
                x = x_new;
                std::mem::swap(&mut r, &mut r_new);
                cost = cost_new;
                if mu > 0.0 {
                    mu *= (1.0 / 3.0_f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
                }
                nu = 2.0;
                break;
            }
            bump(&mut mu, &mut nu);
            peak = peak.max(mu);
            if mu > opts.max_damping {
                break 'outer (Termination::DampingExhausted, grad);
            }
        }
    };

    model.jacobian(x.as_slice(), &mut jac);
    let a = jac.tr_mul(&jac);
    let dof = m - n;
    let s2 = if opts.absolute_sigma {
        1.0
    } else if dof > 0 {
        cost / dof as f64
    } else {
        f64::INFINITY
    };
    let cov = match a.clone().cholesky() {
        Some(ch) => ch.inverse() * s2,
        None => DMatrix::from_element(n, n, f64::INFINITY),
    };
    let covariance: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let v = cov[(i, j)];
                    if v.is_nan() {
                        f64::INFINITY
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let converged = matches!(
        termination,
        Termination::Gradient | Termination::Step | Termination::ZeroResidual
    );
    Ok(FitReport {
        model: model_name.to_string(),
        params: params
            .iter()
            .enumerate()
            .map(|(j, (name, unit))| FitParam {
                name: name.to_string(),
                unit: unit.to_string(),
                value: x[j],
                uncertainty: {
                    let v = covariance[j][j];
                    if v >= 0.0 {
                        v.sqrt()
                    } else {
                        f64::INFINITY
                    }
                },
            })
            .collect(),
        covariance,
        residual_norm: cost.sqrt(),
        initial_residual_norm: initial_norm,
        gradient_norm: grad,
        converged,
        termination,
        iterations,
        peak_damping: peak,
        manifest_hash: None,
    })
}
