//! Dipolar bath of pumped B spins around a probe A spin.
//!
//! CGS units throughout: concentrations in spins/cm³, lengths in cm, the
//! DEER rate constant `k` in cm³/s. For B spins placed at random with
//! density `C` and flipped with probability `p_B`, the echo of the A spin
//! decays as `exp(-C p_B k T)` with `k = 8π² μ_B² g² / (9√3 ħ)`; a polarized
//! bath adds the rotation `exp(i ε q α C p_B k T)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_for;

/// Out-of-phase coefficient for a spherical sample.
pub const ALPHA_SPHERE: f64 = 0.13213;

/// Default exclusion radius around the probe spin (cm), 2 nm.
pub const DEFAULT_EXCLUSION_RADIUS: f64 = 2e-7;

/// Fewest realizations accepted by [`mc_deer_trace`].
pub const MIN_REALIZATIONS: usize = 100;

const CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BathError {
    #[error("sphere radius {radius:e} cm must exceed the exclusion radius {exclusion:e} cm")]
    DegenerateGeometry { radius: f64, exclusion: f64 },
    #[error("at least {min} realizations are required, got {got}")]
    TooFewRealizations { min: usize, got: usize },
    #[error("invalid bath parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Bohr magneton (erg/G).
    pub mu_b: f64,
    pub g: f64,
    /// Reduced Planck constant (erg·s).
    pub hbar: f64,
    /// Carbon atom density of diamond (atoms/cm³).
    pub carbon_density: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            mu_b: 9.274_010_078_3e-21,
            g: 2.0028,
            hbar: 1.054_571_817e-27,
            carbon_density: 1.76e23,
        }
    }
}

impl PhysicalConstants {
    /// Builds the CGS set from SI inputs: μ_B in J/T, ħ in J·s, density in m⁻³.
    pub fn from_si(mu_b: f64, g: f64, hbar: f64, carbon_density: f64) -> Result<Self, BathError> {
        let c = PhysicalConstants {
            mu_b: mu_b * 1e3,
            g,
            hbar: hbar * 1e7,
            carbon_density: carbon_density * 1e-6,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), BathError> {
        for (name, v) in [
            ("mu_b", self.mu_b),
            ("g", self.g),
            ("hbar", self.hbar),
            ("carbon_density", self.carbon_density),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BathError::Invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Pair coupling constant `g² μ_B² / ħ` (rad·cm³/s).
    pub fn dipolar_constant(&self) -> f64 {
        self.g * self.g * self.mu_b * self.mu_b / self.hbar
    }
}

/// `k = 8π² μ_B² g² / (9√3 ħ)` in cm³/s.
pub fn compute_k(c: &PhysicalConstants) -> f64 {
    8.0 * PI * PI * c.dipolar_constant() / (9.0 * 3f64.sqrt())
}

/// Impurity fraction in ppb → spins/cm³.
pub fn ppb_to_density(ppb: f64, c: &PhysicalConstants) -> f64 {
    ppb * c.carbon_density * 1e-9
}

pub fn density_to_ppb(density: f64, c: &PhysicalConstants) -> f64 {
    density / (c.carbon_density * 1e-9)
}

/// Decay-rate slope per ppb (s⁻¹ ppb⁻¹) → `k` in cm³/s.
pub fn rate_per_ppb_to_k(rate_per_ppb: f64, c: &PhysicalConstants) -> f64 {
    rate_per_ppb / (c.carbon_density * 1e-9)
}

pub fn k_to_rate_per_ppb(k: f64, c: &PhysicalConstants) -> f64 {
    k * c.carbon_density * 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticsParams {
    /// Concentration of B spins (cm⁻³).
    pub concentration: f64,
    pub flip_probability: f64,
    /// Rate constant (cm³/s).
    pub k: f64,
    /// Bath polarization ε.
    pub polarization: f64,
    pub shape_factor: f64,
    pub alpha: f64,
}

impl KineticsParams {
    /// Parameters with the theoretical `k`, unpolarized bath, spherical shape.
    pub fn new(concentration: f64, flip_probability: f64, c: &PhysicalConstants) -> Self {
        KineticsParams {
            concentration,
            flip_probability,
            k: compute_k(c),
            polarization: 0.0,
            shape_factor: 1.0,
            alpha: ALPHA_SPHERE,
        }
    }

    /// Parameters that reproduce a given decay rate `C p_B k` (s⁻¹).
    pub fn from_rate(rate: f64, flip_probability: f64, k: f64) -> Self {
        KineticsParams {
            concentration: rate / (flip_probability * k),
            flip_probability,
            k,
            polarization: 0.0,
            shape_factor: 1.0,
            alpha: ALPHA_SPHERE,
        }
    }

    pub fn validate(&self) -> Result<(), BathError> {
        let mut bad = Vec::new();
        if !(self.concentration >= 0.0) {
            bad.push(format!("concentration must be >= 0, got {}", self.concentration));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            bad.push(format!(
                "flip_probability must lie in [0, 1], got {}",
                self.flip_probability
            ));
        }
        if !(self.k > 0.0) {
            bad.push(format!("k must be > 0, got {}", self.k));
        }
        if !(-1.0..=1.0).contains(&self.polarization) {
            bad.push(format!(
                "polarization must lie in [-1, 1], got {}",
                self.polarization
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(BathError::Invalid(bad.join("; ")))
        }
    }

    /// Decay rate `C p_B k` (s⁻¹).
    pub fn rate(&self) -> f64 {
        self.concentration * self.flip_probability * self.k
    }

    /// Angular velocity of the out-of-phase rotation `ε q α C p_B k` (rad/s).
    pub fn angular_velocity(&self) -> f64 {
        self.polarization * self.shape_factor * self.alpha * self.rate()
    }
}

/// Complex DEER factor after an effective dipolar evolution time `t`. The
/// real part is the in-phase signal, the imaginary part the out-of-phase.
pub fn analytic_deer(kp: &KineticsParams, t: f64) -> Complex64 {
    let r = kp.rate();
    Complex64::from_polar((-r * t).exp(), kp.angular_velocity() * t)
}

/// Sampling description of a spherical bath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSampling {
    /// B-spin concentration (cm⁻³).
    pub concentration: f64,
    /// Sphere radius (cm).
    pub radius: f64,
    /// No B spin is placed closer than this to the probe (cm).
    pub exclusion_radius: f64,
    /// Tilt of the common quantization axis from the sample z axis (rad).
    pub axis_angle: f64,
    pub polarization: f64,
    pub flip_probability: f64,
    /// Multiplies every pair coupling; accounts for A/B axis misalignment.
    pub kernel_scale: f64,
}

impl BathSampling {
    /// Sphere large enough that truncating the bath changes the decay
    /// exponent at `t_max` by less than `tolerance` (relative).
    pub fn for_times(
        concentration: f64,
        flip_probability: f64,
        polarization: f64,
        t_max: f64,
        tolerance: f64,
        c: &PhysicalConstants,
    ) -> Self {
        BathSampling {
            concentration,
            radius: recommended_radius(t_max, tolerance, 1.0, c),
            exclusion_radius: DEFAULT_EXCLUSION_RADIUS,
            axis_angle: 0.0,
            polarization,
            flip_probability,
            kernel_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), BathError> {
        if !(self.radius > self.exclusion_radius) {
            return Err(BathError::DegenerateGeometry {
                radius: self.radius,
                exclusion: self.exclusion_radius,
            });
        }
        let mut bad = Vec::new();
        if !(self.concentration >= 0.0 && self.concentration.is_finite()) {
            bad.push(format!("concentration must be >= 0, got {}", self.concentration));
        }
        if !(self.exclusion_radius >= 0.0) {
            bad.push(format!(
                "exclusion_radius must be >= 0, got {}",
                self.exclusion_radius
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            bad.push(format!(
                "flip_probability must lie in [0, 1], got {}",
                self.flip_probability
            ));
        }
        if !(-1.0..=1.0).contains(&self.polarization) {
            bad.push(format!(
                "polarization must lie in [-1, 1], got {}",
                self.polarization
            ));
        }
        if !self.kernel_scale.is_finite() {
            bad.push("kernel_scale must be finite".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(BathError::Invalid(bad.join("; ")))
        }
    }

    /// Mean number of spins in the shell between the exclusion radius and
    /// the sphere radius.
    pub fn expected_count(&self) -> f64 {
        self.concentration * 4.0 / 3.0 * PI * (self.radius.powi(3) - self.exclusion_radius.powi(3))
    }
}

/// Radius beyond which the neglected far spins change the decay exponent at
/// `t_max` by a relative amount below `tolerance`.
///
/// The tail beyond `R` contributes `(8π/15) C p a² t² / R³` against the bulk
/// `C p (8π²/(9√3)) a t`, giving a relative error `(9√3/(15π)) a t / R³`.
pub fn recommended_radius(t_max: f64, tolerance: f64, kernel_scale: f64, c: &PhysicalConstants) -> f64 {
    let a = kernel_scale.abs() * c.dipolar_constant();
    let coeff = 9.0 * 3f64.sqrt() / (15.0 * PI);
    (coeff * a * t_max / tolerance)
        .cbrt()
        .max(10.0 * DEFAULT_EXCLUSION_RADIUS)
}

/// One sampled placement of B spins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathRealization {
    /// Shift of the A-spin transition caused by flipping each B spin (rad/s).
    pub couplings: Vec<f64>,
    pub flip_mask: Vec<bool>,
    /// Initial B-spin states, ±1.
    pub initial_state: Vec<i8>,
    pub seed: u64,
    /// Flip probability the realization was drawn with.
    pub flip_probability: f64,
}

impl BathRealization {
    pub fn len(&self) -> usize {
        self.couplings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.couplings.is_empty()
    }

    /// Net shift from the flipped spins, `Σ_flipped s_j Δω_j` (rad/s).
    pub fn flipped_field(&self) -> f64 {
        self.couplings
            .iter()
            .zip(&self.flip_mask)
            .zip(&self.initial_state)
            .filter(|((_, &f), _)| f)
            .map(|((&w, _), &s)| s as f64 * w)
            .sum()
    }

    /// DEER factor of this realization with the flips weighted by the flip
    /// probability rather than the sampled mask.
    fn weighted_factor(&self, t: f64) -> Complex64 {
        let p = self.flip_probability;
        let mut acc = Complex64::new(1.0, 0.0);
        for (&w, &s) in self.couplings.iter().zip(&self.initial_state) {
            let (sin, cos) = (w * t).sin_cos();
            acc *= Complex64::new(1.0 - p + p * cos, p * s as f64 * sin);
        }
        acc
    }
}

/// Places a Poisson number of B spins uniformly in a spherical shell around
/// the probe and evaluates their secular couplings
/// `Δω_j = s·(g² μ_B²/ħ)(1 - 3cos²θ_j)/r_j³`.
pub fn sample_bath(
    params: &BathSampling,
    c: &PhysicalConstants,
    seed: u64,
) -> Result<BathRealization, BathError> {
    params.validate()?;
    let mut rng = rng_for(seed, &[]);
    let mean = params.expected_count();
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| BathError::Invalid(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let a = params.kernel_scale * c.dipolar_constant();
    let (r3_min, r3_max) = (params.exclusion_radius.powi(3), params.radius.powi(3));
    let axis = [params.axis_angle.sin(), 0.0, params.axis_angle.cos()];
    let p_up = 0.5 * (1.0 + params.polarization);

    let mut couplings = Vec::with_capacity(count);
    let mut flip_mask = Vec::with_capacity(count);
    let mut initial_state = Vec::with_capacity(count);
    for _ in 0..count {
        let r3 = r3_min + rng.random::<f64>() * (r3_max - r3_min);
        let z: f64 = rng.random_range(-1.0..1.0);
        let az: f64 = rng.random_range(0.0..2.0 * PI);
        let rho = (1.0 - z * z).max(0.0).sqrt();
        let cos_theta = rho * az.cos() * axis[0] + z * axis[2];
        couplings.push(a * (1.0 - 3.0 * cos_theta * cos_theta) / r3);
        flip_mask.push(rng.random::<f64>() < params.flip_probability);
        initial_state.push(if rng.random::<f64>() < p_up { 1 } else { -1 });
    }
    Ok(BathRealization {
        couplings,
        flip_mask,
        initial_state,
        seed,
        flip_probability: params.flip_probability,
    })
}

/// Ensemble of realizations with seeds derived from `(seed, index)`.
pub fn sample_ensemble(
    params: &BathSampling,
    c: &PhysicalConstants,
    n: usize,
    seed: u64,
) -> Result<Vec<BathRealization>, BathError> {
    params.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| sample_bath(params, c, crate::rng::derive_seed(seed, &[i as u64])))
        .collect()
}

/// Monte-Carlo DEER trace: mean over realizations and its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTrace {
    pub times: Vec<f64>,
    pub mean: Vec<Complex64>,
    pub std_err_re: Vec<f64>,
    pub std_err_im: Vec<f64>,
    pub realizations: usize,
}

impl McTrace {
    pub fn magnitude(&self) -> Vec<f64> {
        self.mean.iter().map(|z| z.norm()).collect()
    }

    /// One-sigma error of |mean| from the component errors.
    pub fn magnitude_err(&self) -> Vec<f64> {
        self.mean
            .iter()
            .zip(self.std_err_re.iter().zip(&self.std_err_im))
            .map(|(z, (&er, &ei))| {
                let n = z.norm();
                if n == 0.0 {
                    er.hypot(ei)
                } else {
                    ((z.re * er).powi(2) + (z.im * ei).powi(2)).sqrt() / n
                }
            })
            .collect()
    }
}

#[derive(Clone)]
struct Moments {
    sum: Vec<Complex64>,
    sq_re: Vec<f64>,
    sq_im: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            sum: vec![Complex64::new(0.0, 0.0); n],
            sq_re: vec![0.0; n],
            sq_im: vec![0.0; n],
        }
    }

    fn add(&mut self, values: &[Complex64]) {
        for (i, v) in values.iter().enumerate() {
            self.sum[i] += v;
            self.sq_re[i] += v.re * v.re;
            self.sq_im[i] += v.im * v.im;
        }
    }

    fn merge(&mut self, other: &Moments) {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sq_re[i] += other.sq_re[i];
            self.sq_im[i] += other.sq_im[i];
        }
    }
}

/// Averages `Π_j [(1 - p_B) + p_B (cos Δω_j T + i s_j sin Δω_j T)]` over
/// `n_realizations` sampled baths.
///
/// Realization `i` uses the seed derived from `(seed, i)`; partial sums are
/// formed over fixed blocks and merged in block order, so the result does
/// not depend on the rayon thread count.
pub fn mc_deer_trace(
    params: &BathSampling,
    times: &[f64],
    n_realizations: usize,
    seed: u64,
    c: &PhysicalConstants,
) -> Result<McTrace, BathError> {
    if n_realizations < MIN_REALIZATIONS {
        return Err(BathError::TooFewRealizations {
            min: MIN_REALIZATIONS,
            got: n_realizations,
        });
    }
    params.validate()?;
    let nt = times.len();
    let blocks = n_realizations.div_ceil(CHUNK);
    let partial: Vec<Result<Moments, BathError>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut m = Moments::zeros(nt);
            let mut values = vec![Complex64::new(0.0, 0.0); nt];
            for i in b * CHUNK..((b + 1) * CHUNK).min(n_realizations) {
                let bath = sample_bath(params, c, crate::rng::derive_seed(seed, &[i as u64]))?;
                for (v, &t) in values.iter_mut().zip(times) {
                    *v = bath.weighted_factor(t);
                }
                m.add(&values);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::zeros(nt);
    for m in partial {
        total.merge(&m?);
    }
    let n = n_realizations as f64;
    let mut mean = Vec::with_capacity(nt);
    let mut std_err_re = Vec::with_capacity(nt);
    let mut std_err_im = Vec::with_capacity(nt);
    for i in 0..nt {
        let mu = total.sum[i] / n;
        let var_re = ((total.sq_re[i] / n - mu.re * mu.re) * n / (n - 1.0)).max(0.0);
        let var_im = ((total.sq_im[i] / n - mu.im * mu.im) * n / (n - 1.0)).max(0.0);
        mean.push(mu);
        std_err_re.push((var_re / n).sqrt());
        std_err_im.push((var_im / n).sqrt());
    }
    Ok(McTrace {
        times: times.to_vec(),
        mean,
        std_err_re,
        std_err_im,
        realizations: n_realizations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn k_constant_value() {
        let c = PhysicalConstants {
            mu_b: 9.274e-21,
            g: 2.0028,
            hbar: 1.0546e-27,
            carbon_density: 1.76e23,
        };
        let k = compute_k(&c);
        assert_relative_eq!(k, 1.66e-12, max_relative = 0.01);
        let ratio = k / 1.94e-13;
        assert!((8.0..9.0).contains(&ratio), "ratio {ratio}");
        let doubled = PhysicalConstants { g: 2.0 * c.g, ..c };
        assert_relative_eq!(compute_k(&doubled), 4.0 * k, max_relative = 1e-12);
    }

    #[test]
    fn si_constants_convert() {
        let c = PhysicalConstants::from_si(9.274_010_078_3e-24, 2.0028, 1.054_571_817e-34, 1.76e29)
            .unwrap();
        let d = PhysicalConstants::default();
        assert_relative_eq!(c.mu_b, d.mu_b, max_relative = 1e-12);
        assert_relative_eq!(c.hbar, d.hbar, max_relative = 1e-12);
        assert_relative_eq!(c.carbon_density, d.carbon_density, max_relative = 1e-12);
    }

    #[test]
    fn ppb_conversions() {
        let c = PhysicalConstants::default();
        assert_eq!(ppb_to_density(0.0, &c), 0.0);
        assert_relative_eq!(ppb_to_density(1.0, &c), 1.76e14, max_relative = 1e-12);
        assert_relative_eq!(density_to_ppb(1.76e14, &c), 1.0, max_relative = 1e-12);
        let k = rate_per_ppb_to_k(34.0, &c);
        assert_relative_eq!(k, 1.93e-13, max_relative = 0.01);
        assert_relative_eq!(k, 1.94e-13, max_relative = 0.01);
        assert_relative_eq!(k_to_rate_per_ppb(k, &c), 34.0, max_relative = 1e-12);
    }

    #[test]
    fn analytic_values() {
        let c = PhysicalConstants::default();
        let kp = KineticsParams::from_rate(6.3e3, 1.0, compute_k(&c));
        assert_eq!(analytic_deer(&kp, 0.0), Complex64::new(1.0, 0.0));
        let d = analytic_deer(&kp, 100e-6);
        assert_abs_diff_eq!(d.re, 0.5326, epsilon = 1e-4);
        assert_eq!(d.im, 0.0);

        let kp = KineticsParams {
            polarization: 1.0,
            shape_factor: 1.0,
            ..kp
        };
        let t = 80e-6;
        let d = analytic_deer(&kp, t);
        assert_relative_eq!(d.arg() / (kp.rate() * t), 0.13213, max_relative = 1e-12);
    }

    #[test]
    fn empty_and_degenerate_baths() {
        let c = PhysicalConstants::default();
        let mut s = BathSampling::for_times(0.0, 1.0, 0.0, 1e-4, 0.01, &c);
        let bath = sample_bath(&s, &c, 3).unwrap();
        assert!(bath.is_empty());
        s.radius = s.exclusion_radius;
        assert!(matches!(
            sample_bath(&s, &c, 3),
            Err(BathError::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn magic_angle_coupling_vanishes() {
        let c = PhysicalConstants::default();
        let cos2 = 1.0f64 / 3.0;
        let w = c.dipolar_constant() * (1.0 - 3.0 * cos2) / (1e-6f64).powi(3);
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = PhysicalConstants::default();
        let s = BathSampling::for_times(1e16, 0.5, 0.3, 2e-4, 0.01, &c);
        let a = sample_bath(&s, &c, 11).unwrap();
        let b = sample_bath(&s, &c, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_bath(&s, &c, 12).unwrap());
        assert_eq!(a.couplings.len(), a.flip_mask.len());
        assert_eq!(a.couplings.len(), a.initial_state.len());
        assert!(a.couplings.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn unflipped_bath_gives_unit_trace() {
        let c = PhysicalConstants::default();
        let s = BathSampling::for_times(3e15, 0.0, 0.5, 3e-4, 0.01, &c);
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 3e-5).collect();
        let tr = mc_deer_trace(&s, &times, 200, 5, &c).unwrap();
        for (z, (er, ei)) in tr.mean.iter().zip(tr.std_err_re.iter().zip(&tr.std_err_im)) {
            assert_eq!(*z, Complex64::new(1.0, 0.0));
            assert_eq!((*er, *ei), (0.0, 0.0));
        }
    }

    #[test]
    fn too_few_realizations() {
        let c = PhysicalConstants::default();
        let s = BathSampling::for_times(3e15, 1.0, 0.0, 3e-4, 0.01, &c);
        assert!(matches!(
            mc_deer_trace(&s, &[0.0], 99, 1, &c),
            Err(BathError::TooFewRealizations { .. })
        ));
    }

    #[test]
    fn rate_product_only() {
        let c = PhysicalConstants::default();
        let k = compute_k(&c);
        let a = KineticsParams::new(2e15, 0.5, &c);
        let b = KineticsParams::new(1e15, 1.0, &c);
        assert_relative_eq!(a.rate(), b.rate(), max_relative = 1e-12);
        assert_relative_eq!(a.rate(), 1e15 * k, max_relative = 1e-12);
    }
}
