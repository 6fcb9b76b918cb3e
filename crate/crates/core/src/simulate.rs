//! Propagation of the probe-spin ensemble through a pulse sequence.
//!
//! The state is a density matrix split into branches labelled by the
//! accumulated dipolar "time" `m`: the coherence of a branch has picked up
//! `e^{iΔm}` from the (static) bath field Δ. Averaging over Δ then only
//! needs the characteristic function of the field distribution, so an
//! analytic decay law and a sampled bath share the same propagator.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::{BathRealization, KineticsParams};
use crate::nv::{echo_envelope, rabi_population, readout_signal, EnvelopeParams};
use crate::rng::{derive_seed, rng_for};
use crate::sequence::{Channel, PulsePhase, PulseSequence, SequenceError, SequenceKind};
use crate::spin::{detuned_pulse, free_evolution, rotation, PulseOperator, PulseParams};
use crate::tomography::{check_monotone, TraceMeta, TraceSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("a DEER sequence needs a bath or an analytic kernel")]
    EnvMismatch,
    #[error("sequence kind `{0}` is not an echo-type sequence; use simulate_spectrum")]
    UnsupportedKind(&'static str),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error("scan values: {0}")]
    BadScan(String),
    #[error("at scan value {value:e}: {source}")]
    AtScanValue {
        value: f64,
        #[source]
        source: Box<SimError>,
    },
}

/// Sampled bath with the net flipped field of each realization cached.
#[derive(Debug, Clone, PartialEq)]
pub struct BathEnsemble {
    realizations: Arc<Vec<BathRealization>>,
    fields: Vec<f64>,
    flip_probability: f64,
}

impl BathEnsemble {
    pub fn new(realizations: Vec<BathRealization>) -> Result<Self, SimError> {
        if realizations.is_empty() {
            return Err(SimError::InvalidEnv("empty bath ensemble".into()));
        }
        let p = realizations[0].flip_probability;
        let fields = realizations.iter().map(BathRealization::flipped_field).collect();
        Ok(BathEnsemble {
            realizations: Arc::new(realizations),
            fields,
            flip_probability: p,
        })
    }

    pub fn realizations(&self) -> &[BathRealization] {
        &self.realizations
    }

    fn characteristic(&self, m: f64) -> Complex64 {
        let sum: Complex64 = self
            .fields
            .iter()
            .map(|&f| {
                let (s, c) = (f * m).sin_cos();
                Complex64::new(c, s)
            })
            .sum();
        sum / self.fields.len() as f64
    }
}

/// Source of the dipolar phase seen by the probe spins.
#[derive(Debug, Clone, PartialEq)]
pub enum DipolarKernel {
    None,
    Analytic(KineticsParams),
    Bath(BathEnsemble),
}

impl DipolarKernel {
    fn flip_probability(&self) -> Option<f64> {
        match self {
            DipolarKernel::None => None,
            DipolarKernel::Analytic(k) => Some(k.flip_probability),
            DipolarKernel::Bath(b) => Some(b.flip_probability),
        }
    }

    /// `⟨e^{iΔm}⟩` over the field distribution.
    fn characteristic(&self, m: f64) -> Complex64 {
        if m == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        match self {
            DipolarKernel::None => Complex64::new(1.0, 0.0),
            DipolarKernel::Analytic(k) => {
                Complex64::from_polar((-k.rate() * m.abs()).exp(), k.angular_velocity() * m)
            }
            DipolarKernel::Bath(b) => b.characteristic(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    /// Fractional fluorescence drop of the dark state.
    pub contrast: f64,
    pub baseline: f64,
    /// Standard deviation of additive Gaussian noise per channel.
    pub noise: f64,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        ReadoutParams {
            contrast: 0.3,
            baseline: 1.0,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEnv {
    pub kernel: DipolarKernel,
    /// Effect of a channel-B pulse on the probe spins.
    pub crosstalk: PulseParams,
    /// Residual detuning of the probe spins (Hz).
    pub detuning_a: f64,
    pub envelope: Option<EnvelopeParams>,
    /// Revival times τ_n for the envelope comb.
    pub revivals: Vec<f64>,
    /// Probe-spin polarization after initialization.
    pub initial_polarization: f64,
    pub readout: ReadoutParams,
}

impl SimEnv {
    /// Ideal environment: no bath, no crosstalk, fully polarized.
    pub fn ideal() -> Self {
        SimEnv {
            kernel: DipolarKernel::None,
            crosstalk: PulseParams {
                rabi: 0.0,
                detuning: 0.0,
                duration: 0.0,
            },
            detuning_a: 0.0,
            envelope: None,
            revivals: Vec::new(),
            initial_polarization: 1.0,
            readout: ReadoutParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.initial_polarization) {
            bad.push(format!(
                "initial_polarization must lie in [0, 1], got {}",
                self.initial_polarization
            ));
        }
        if let Err(e) = self.crosstalk.validate() {
            bad.push(format!("crosstalk: {e}"));
        }
        if let Some(env) = &self.envelope {
            if let Err(e) = env.validate() {
                bad.push(format!("envelope: {e}"));
            }
        }
        if !self.detuning_a.is_finite() {
            bad.push("detuning_a must be finite".into());
        }
        if !(self.readout.noise >= 0.0) {
            bad.push(format!("readout noise must be >= 0, got {}", self.readout.noise));
        }
        if let DipolarKernel::Analytic(k) = &self.kernel {
            if let Err(e) = k.validate() {
                bad.push(format!("kernel: {e}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidEnv(bad.join("; ")))
        }
    }

    pub fn summary(&self) -> String {
        let kernel = match &self.kernel {
            DipolarKernel::None => "none".to_string(),
            DipolarKernel::Analytic(k) => format!("analytic rate={:e}", k.rate()),
            DipolarKernel::Bath(b) => format!("bath n={}", b.realizations.len()),
        };
        format!(
            "kernel={kernel} crosstalk_rabi={:e} crosstalk_detuning={:e} detuning_a={:e} polarization={}",
            self.crosstalk.rabi, self.crosstalk.detuning, self.detuning_a, self.initial_polarization
        )
    }
}

type Mat = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy)]
struct Branch {
    m: f64,
    rho: Mat,
}

fn conjugate(u: &PulseOperator, rho: &Mat) -> Mat {
    let a = &u.m;
    let mut t = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            t[i][j] = a[i][0] * rho[0][j] + a[i][1] * rho[1][j];
        }
    }
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = t[i][0] * a[j][0].conj() + t[i][1] * a[j][1].conj();
        }
    }
    out
}

struct Propagator {
    branches: Vec<Branch>,
    dipolar: bool,
}

impl Propagator {
    fn new(polarization: f64, dipolar: bool) -> Self {
        let mut rho = [[ZERO; 2]; 2];
        rho[0][0] = Complex64::new(0.5 * (1.0 + polarization), 0.0);
        rho[1][1] = Complex64::new(0.5 * (1.0 - polarization), 0.0);
        Propagator {
            branches: vec![Branch { m: 0.0, rho }],
            dipolar,
        }
    }

    fn unitary(&mut self, u: &PulseOperator) {
        for b in &mut self.branches {
            b.rho = conjugate(u, &b.rho);
        }
    }

    /// Precession at the probe detuning (rad/s) for `dt`.
    fn precess(&mut self, detuning: f64, dt: f64) {
        if dt > 0.0 && detuning != 0.0 {
            self.unitary(&free_evolution(detuning, dt));
        }
    }

    /// Dipolar evolution for `dt`. Each bath spin shifts the probe by half
    /// its flip shift, with sign `sign`.
    fn dipolar(&mut self, dt: f64, sign: f64) {
        if dt <= 0.0 || !self.dipolar {
            return;
        }
        // ρ01 picks up e^{iΔ·sign·dt/2}, ρ10 its conjugate
        let shift = 0.5 * sign * dt;
        let mut next = Vec::with_capacity(3 * self.branches.len());
        for b in &self.branches {
            let mut diag = [[ZERO; 2]; 2];
            diag[0][0] = b.rho[0][0];
            diag[1][1] = b.rho[1][1];
            let mut up = [[ZERO; 2]; 2];
            up[0][1] = b.rho[0][1];
            let mut down = [[ZERO; 2]; 2];
            down[1][0] = b.rho[1][0];
            next.push(Branch { m: b.m, rho: diag });
            next.push(Branch { m: b.m + shift, rho: up });
            next.push(Branch { m: b.m - shift, rho: down });
        }
        self.branches = merge(next);
    }

    fn damp_coherence(&mut self, factor: f64) {
        for b in &mut self.branches {
            b.rho[0][1] *= factor;
            b.rho[1][0] *= factor;
        }
    }

    fn population0(&self, kernel: &DipolarKernel) -> f64 {
        self.branches
            .iter()
            .map(|b| (b.rho[0][0] * kernel.characteristic(b.m)).re)
            .sum()
    }
}

/// Combines branches whose labels agree up to rounding.
fn merge(mut v: Vec<Branch>) -> Vec<Branch> {
    const TOL: f64 = 1e-15;
    v.retain(|b| b.rho.iter().flatten().any(|z| *z != ZERO));
    v.sort_by(|a, b| a.m.total_cmp(&b.m));
    let mut out: Vec<Branch> = Vec::with_capacity(v.len());
    for b in v {
        match out.last_mut() {
            Some(last) if (b.m - last.m).abs() <= TOL => {
                for i in 0..2 {
                    for j in 0..2 {
                        last.rho[i][j] += b.rho[i][j];
                    }
                }
            }
            _ => out.push(b),
        }
    }
    out
}

/// One phase-readout channel `I_α` of an echo or DEER sequence.
///
/// Channel-A pulses are propagated over their full length with the probe
/// detuning; for the dipolar field they act at their centres. A channel-B
/// pulse is applied at its centre as the crosstalk propagator and reverses
/// the sign of the dipolar field from then on.
/// When the flip probability is zero the pump is treated as switched off.
pub fn simulate_channel(seq: &PulseSequence, env: &SimEnv, seed: u64) -> Result<f64, SimError> {
    seq.validate()?;
    if !matches!(seq.kind, SequenceKind::Echo | SequenceKind::Deer3 | SequenceKind::Deer4) {
        return Err(SimError::UnsupportedKind(seq.kind.name()));
    }
    if seq.kind.is_deer() && env.kernel == DipolarKernel::None {
        return Err(SimError::EnvMismatch);
    }
    let pump_on = env.kernel.flip_probability().is_some_and(|p| p > 0.0);
    let detuning = 2.0 * PI * env.detuning_a;

    // A pulses by start, B pulses by centre; a B centre falling in the first
    // half of an A pulse is handled before it.
    let mut events: Vec<(f64, u8, usize)> = seq
        .pulses
        .iter()
        .enumerate()
        .map(|(i, p)| match p.channel {
            Channel::A => (p.center(), 0, i),
            Channel::B => (p.center(), 1, i),
        })
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let last_a = events
        .iter()
        .rposition(|e| e.1 == 0)
        .ok_or_else(|| SimError::Sequence(SequenceError::BadTiming("no channel-A pulse".into())))?;

    let mut prop = Propagator::new(env.initial_polarization, env.kernel != DipolarKernel::None);
    // `now`: end of the last A pulse (probe precession clock)
    // `t_dip`: last event centre (dipolar clock)
    let mut now = 0.0;
    let mut t_dip = 0.0;
    let mut sign = 1.0;
    for (k, &(c, ch, i)) in events.iter().enumerate() {
        let p = &seq.pulses[i];
        if ch == 1 && !pump_on {
            continue;
        }
        prop.dipolar(c - t_dip, sign);
        t_dip = t_dip.max(c);
        if ch == 0 {
            prop.precess(detuning, p.start - now);
            if k == last_a {
                if let Some(envp) = &env.envelope {
                    prop.damp_coherence(echo_envelope(seq.echo_time(), envp, &env.revivals));
                }
            }
            let params = PulseParams {
                rabi: p.rabi,
                detuning: detuning - 2.0 * PI * p.frequency_offset,
                duration: p.duration,
            };
            prop.unitary(&rotation(&params, p.phase.angle()));
            now = p.end();
        } else {
            // never precess into an A pulse that is still pending
            let stop = events[k + 1..]
                .iter()
                .find(|e| e.1 == 0)
                .map_or(c, |e| seq.pulses[e.2].start.min(c));
            if stop > now {
                prop.precess(detuning, stop - now);
                now = stop;
            }
            prop.unitary(&detuned_pulse(&env.crosstalk));
            sign = -sign;
        }
    }

    let pop0 = prop.population0(&env.kernel).clamp(0.0, 1.0);
    let mut signal = readout_signal(pop0, env.readout.contrast, env.readout.baseline);
    if env.readout.noise > 0.0 {
        let z: f64 = rng_for(seed, &[]).sample(StandardNormal);
        signal += env.readout.noise * z;
    }
    Ok(signal)
}

/// Runs all four readout phases at every scan value. Per-point seeds come
/// from `(seed, point index, phase index)`, so the result does not depend on
/// the thread schedule.
pub fn scan<F>(builder: F, scan_values: &[f64], env: &SimEnv, seed: u64) -> Result<TraceSet, SimError>
where
    F: Fn(f64, PulsePhase) -> Result<PulseSequence, SequenceError> + Sync,
{
    if scan_values.is_empty() {
        return Err(SimError::BadScan("no scan values".into()));
    }
    check_monotone(scan_values).map_err(|e| SimError::BadScan(e.to_string()))?;
    env.validate()?;

    let jobs: Vec<(usize, usize)> = (0..scan_values.len())
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .collect();
    let out: Vec<(f64, Option<SequenceKind>)> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let value = scan_values[i];
            let at = |e: SimError| SimError::AtScanValue {
                value,
                source: Box::new(e),
            };
            let seq = builder(value, PulsePhase::ALL[j]).map_err(|e| at(e.into()))?;
            let s = simulate_channel(&seq, env, derive_seed(seed, &[i as u64, j as u64]))
                .map_err(at)?;
            Ok((s, Some(seq.kind)))
        })
        .collect::<Result<_, SimError>>()?;

    let column = |j: usize| -> Vec<f64> { out.iter().skip(j).step_by(4).map(|o| o.0).collect() };
    Ok(TraceSet {
        scan_values: scan_values.to_vec(),
        i_x: column(0),
        i_minus_x: column(1),
        i_y: column(2),
        i_minus_y: column(3),
        meta: TraceMeta {
            kind: out.first().and_then(|o| o.1),
            summary: env.summary(),
        },
    })
}

/// Dipolar evolution time of a DEER sequence at pump offset `t`.
///
/// 3-pulse (offset from the first π/2): `T` before the π pulse and `2τ − T`
/// after it. 4-pulse (offset from the first refocusing π): `|τ − T|`.
pub fn effective_dipolar_time(kind: SequenceKind, tau: f64, t: f64) -> f64 {
    match kind {
        SequenceKind::Deer3 => {
            if t <= tau {
                t
            } else {
                2.0 * tau - t
            }
        }
        SequenceKind::Deer4 => (tau - t).abs(),
        _ => 0.0,
    }
}

/// Transition frequencies (Hz) of the sub-ensembles seen by the probe
/// and, for hole burning, by the pump. Entry `i` of both lists belongs to
/// the same sub-ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralLines {
    pub probe_lines: Vec<f64>,
    pub pump_lines: Vec<f64>,
}

/// Fluorescence of single-pulse sequences (ODMR, Rabi, hole burning) with
/// equal weight on every line. Each pulse moves population out of |0⟩
/// according to its Rabi formula; pumped population stays dark.
pub fn simulate_spectrum(
    seqs: &[PulseSequence],
    lines: &SpectralLines,
    readout: &ReadoutParams,
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    if lines.probe_lines.is_empty() {
        return Err(SimError::InvalidEnv("no spectral lines".into()));
    }
    seqs.iter()
        .enumerate()
        .map(|(n, seq)| {
            seq.validate()?;
            let burn = seq.kind == SequenceKind::HoleBurn;
            match seq.kind {
                SequenceKind::Odmr | SequenceKind::Rabi => {}
                SequenceKind::HoleBurn if lines.pump_lines.len() == lines.probe_lines.len() => {}
                SequenceKind::HoleBurn => {
                    return Err(SimError::InvalidEnv(
                        "hole burning needs one pump line per probe line".into(),
                    ))
                }
                k => return Err(SimError::UnsupportedKind(k.name())),
            }
            let mut total = 0.0;
            for i in 0..lines.probe_lines.len() {
                let mut pop0 = 1.0;
                for p in &seq.pulses {
                    let line = match p.channel {
                        Channel::A => lines.probe_lines[i],
                        Channel::B if burn => lines.pump_lines[i],
                        Channel::B => continue,
                    };
                    let params = PulseParams {
                        rabi: p.rabi,
                        detuning: 2.0 * PI * (p.frequency_offset - line),
                        duration: p.duration,
                    };
                    pop0 *= 1.0 - rabi_population(&params);
                }
                total += pop0;
            }
            let pop0 = total / lines.probe_lines.len() as f64;
            let mut s = readout_signal(pop0, readout.contrast, readout.baseline);
            if readout.noise > 0.0 {
                let z: f64 = rng_for(seed, &[n as u64]).sample(StandardNormal);
                s += readout.noise * z;
            }
            Ok(s)
        })
        .collect()
}
