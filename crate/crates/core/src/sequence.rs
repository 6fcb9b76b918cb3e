//! Pulse-sequence data model, builders for the experiments and timing
//! validation.
//!
//! Times are seconds. Pulses on channel A address the probe spins, channel B
//! the pumped bath spins. Echo-type builders place the centre of the first
//! π/2 pulse at [`PulseSequence::origin`]; `τ` and the pump offset are
//! measured between pulse centres.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spin::PulseParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("bad timing: {0}")]
    BadTiming(String),
    #[error("channel A pulses #{first} and #{second} overlap")]
    Overlap { first: usize, second: usize },
    #[error("pulse #{index} starts before pulse #{previous}")]
    Unsorted { previous: usize, index: usize },
    #[error("readout at {readout:e} s precedes the end of the last pulse ({last_end:e} s)")]
    ReadoutBeforeEnd { readout: f64, last_end: f64 },
    #[error("pulse #{index}: {reason}")]
    InvalidPulse { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
}

/// Phase of the MW pulse: x, y, −x, −y are 0°, 90°, 180°, 270°.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulsePhase {
    X,
    Y,
    MinusX,
    MinusY,
}

impl PulsePhase {
    pub const ALL: [PulsePhase; 4] = [
        PulsePhase::X,
        PulsePhase::MinusX,
        PulsePhase::Y,
        PulsePhase::MinusY,
    ];

    pub fn angle(self) -> f64 {
        match self {
            PulsePhase::X => 0.0,
            PulsePhase::Y => 0.5 * PI,
            PulsePhase::MinusX => PI,
            PulsePhase::MinusY => 1.5 * PI,
        }
    }
}

impl fmt::Display for PulsePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PulsePhase::X => "x",
            PulsePhase::Y => "y",
            PulsePhase::MinusX => "-x",
            PulsePhase::MinusY => "-y",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub channel: Channel,
    pub start: f64,
    pub duration: f64,
    pub phase: PulsePhase,
    /// Carrier offset from the A-spin resonance (Hz). For ODMR, Rabi and
    /// hole-burning sequences this holds the absolute MW frequency instead.
    pub frequency_offset: f64,
    /// Rabi angular frequency (rad/s).
    pub rabi: f64,
}

impl Pulse {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn center(&self) -> f64 {
        self.start + 0.5 * self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SequenceKind {
    Odmr,
    Rabi,
    HoleBurn,
    Echo,
    Deer3,
    Deer4,
}

impl SequenceKind {
    pub fn is_deer(self) -> bool {
        matches!(self, SequenceKind::Deer3 | SequenceKind::Deer4)
    }

    pub fn name(self) -> &'static str {
        match self {
            SequenceKind::Odmr => "odmr",
            SequenceKind::Rabi => "rabi",
            SequenceKind::HoleBurn => "holeburn",
            SequenceKind::Echo => "echo",
            SequenceKind::Deer3 => "deer3",
            SequenceKind::Deer4 => "deer4",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "odmr" => SequenceKind::Odmr,
            "rabi" => SequenceKind::Rabi,
            "holeburn" => SequenceKind::HoleBurn,
            "echo" => SequenceKind::Echo,
            "deer3" => SequenceKind::Deer3,
            "deer4" => SequenceKind::Deer4,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub pulses: Vec<Pulse>,
    pub readout_time: f64,
    pub kind: SequenceKind,
}

impl PulseSequence {
    pub fn a_pulses(&self) -> impl Iterator<Item = &Pulse> {
        self.pulses.iter().filter(|p| p.channel == Channel::A)
    }

    pub fn b_pulses(&self) -> impl Iterator<Item = &Pulse> {
        self.pulses.iter().filter(|p| p.channel == Channel::B)
    }

    /// Centre of the first channel-A pulse.
    pub fn origin(&self) -> Option<f64> {
        self.a_pulses().next().map(Pulse::center)
    }

    /// Span between the first and last channel-A pulse centres.
    pub fn echo_time(&self) -> f64 {
        let mut a = self.a_pulses();
        match (a.next(), self.a_pulses().last()) {
            (Some(first), Some(last)) => last.center() - first.center(),
            _ => 0.0,
        }
    }

    /// Copy without any channel-B pulse.
    pub fn without_pump(&self) -> PulseSequence {
        PulseSequence {
            pulses: self.a_pulses().copied().collect(),
            readout_time: self.readout_time,
            kind: self.kind,
        }
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        validate(self)
    }
}

/// Pulse lengths and drive strengths shared by the echo-type builders.
///
/// The electronics stretch every nominal pulse by `delay`, which is why the
/// nominal π pulse (0.88 μs) is not twice the π/2 pulse (0.4 μs). The
/// effective lengths are `nominal + delay`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t_pi: f64,
    pub t_pi_half: f64,
    pub delay: f64,
    /// Length of the channel-B pump π pulse.
    pub pump_duration: f64,
    /// Carrier offset of the pump from the A resonance (Hz).
    pub pump_offset_hz: f64,
}

impl Default for Timing {
    fn default() -> Self {
        let t_pi = 0.88e-6;
        let t_pi_half = 0.4e-6;
        Timing {
            t_pi,
            t_pi_half,
            delay: t_pi - 2.0 * t_pi_half,
            pump_duration: 0.4e-6,
            pump_offset_hz: -49e6,
        }
    }
}

impl Timing {
    pub fn pi_length(&self) -> f64 {
        self.t_pi + self.delay
    }

    pub fn pi_half_length(&self) -> f64 {
        self.t_pi_half + self.delay
    }

    /// Channel-A Rabi frequency calibrated on the π pulse (rad/s).
    pub fn rabi_a(&self) -> f64 {
        PI / self.pi_length()
    }

    pub fn rabi_b(&self) -> f64 {
        PI / self.pump_duration
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        for (name, v) in [
            ("t_pi", self.pi_length()),
            ("t_pi_half", self.pi_half_length()),
            ("pump_duration", self.pump_duration),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SequenceError::BadTiming(format!(
                    "{name} (including delay) must be > 0, got {v:e}"
                )));
            }
        }
        Ok(())
    }

    fn a_pulse(&self, center: f64, length: f64, phase: PulsePhase) -> Pulse {
        Pulse {
            channel: Channel::A,
            start: center - 0.5 * length,
            duration: length,
            phase,
            frequency_offset: 0.0,
            rabi: self.rabi_a(),
        }
    }

    fn pump_pulse(&self, center: f64) -> Pulse {
        Pulse {
            channel: Channel::B,
            start: center - 0.5 * self.pump_duration,
            duration: self.pump_duration,
            phase: PulsePhase::X,
            frequency_offset: self.pump_offset_hz,
            rabi: self.rabi_b(),
        }
    }

    /// Centre of the first pulse, leaving room for a pump pulse that may be
    /// concentric with it.
    fn lead_in(&self) -> f64 {
        0.5 * self.pi_half_length().max(self.pump_duration)
    }
}

fn check_gap(prev: &Pulse, next: &Pulse) -> Result<(), SequenceError> {
    if next.start < prev.end() {
        return Err(SequenceError::BadTiming(format!(
            "pulses at {:e} s and {:e} s do not fit in the interpulse delay",
            prev.center(),
            next.center()
        )));
    }
    Ok(())
}

fn echo_pulses(
    tau: f64,
    refocusing: usize,
    final_phase: PulsePhase,
    timing: &Timing,
) -> Result<Vec<Pulse>, SequenceError> {
    timing.validate()?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(SequenceError::BadTiming(format!("tau must be > 0, got {tau:e}")));
    }
    let c0 = timing.lead_in();
    let mut pulses = vec![timing.a_pulse(c0, timing.pi_half_length(), PulsePhase::X)];
    // refocusing pulses at τ, 3τ, 5τ, ...; readout pulse at 2nτ
    for k in 0..refocusing {
        let c = c0 + (2 * k + 1) as f64 * tau;
        pulses.push(timing.a_pulse(c, timing.pi_length(), PulsePhase::X));
    }
    let last = c0 + 2.0 * refocusing as f64 * tau;
    pulses.push(timing.a_pulse(last, timing.pi_half_length(), final_phase));
    for w in pulses.windows(2) {
        check_gap(&w[0], &w[1])?;
    }
    Ok(pulses)
}

fn finish(mut pulses: Vec<Pulse>, kind: SequenceKind) -> PulseSequence {
    pulses.sort_by(|a, b| a.start.total_cmp(&b.start));
    let readout_time = pulses.iter().map(Pulse::end).fold(0.0, f64::max);
    PulseSequence {
        pulses,
        readout_time,
        kind,
    }
}

/// Hahn echo π/2(x) — τ — π(x) — τ — π/2(final_phase) on channel A.
pub fn build_echo(
    tau: f64,
    final_phase: PulsePhase,
    timing: &Timing,
) -> Result<PulseSequence, SequenceError> {
    let pulses = echo_pulses(tau, 1, final_phase, timing)?;
    Ok(finish(pulses, SequenceKind::Echo))
}

/// Echo with a second refocusing pulse: π/2 — τ — π — 2τ — π — τ — π/2.
/// This is the 4-pulse DEER sequence with the pump removed.
pub fn build_refocused_echo(
    tau: f64,
    final_phase: PulsePhase,
    timing: &Timing,
) -> Result<PulseSequence, SequenceError> {
    let pulses = echo_pulses(tau, 2, final_phase, timing)?;
    Ok(finish(pulses, SequenceKind::Echo))
}

/// 3-pulse DEER: echo on channel A plus a pump π pulse on channel B whose
/// centre sits `pump_offset` after the first π/2 centre, `0 ≤ T ≤ 2τ`.
pub fn build_deer3(
    tau: f64,
    pump_offset: f64,
    final_phase: PulsePhase,
    timing: &Timing,
) -> Result<PulseSequence, SequenceError> {
    let mut pulses = echo_pulses(tau, 1, final_phase, timing)?;
    // absorb rounding of scan end points computed in other units
    let slack = 1e-12 * tau;
    if !(-slack..=2.0 * tau + slack).contains(&pump_offset) {
        return Err(SequenceError::BadTiming(format!(
            "pump offset {pump_offset:e} s outside [0, 2τ]"
        )));
    }
    let pump_offset = pump_offset.clamp(0.0, 2.0 * tau);
    let c0 = pulses[0].center();
    pulses.push(timing.pump_pulse(c0 + pump_offset));
    Ok(finish(pulses, SequenceKind::Deer3))
}

/// 4-pulse DEER: π/2 — τ — π — 2τ — π — τ — π/2 on channel A with the pump
/// centred `pump_offset` after the first refocusing π centre, strictly
/// between the two refocusing pulses (`0 < T < 2τ`).
pub fn build_deer4(
    tau: f64,
    pump_offset: f64,
    final_phase: PulsePhase,
    timing: &Timing,
) -> Result<PulseSequence, SequenceError> {
    let mut pulses = echo_pulses(tau, 2, final_phase, timing)?;
    if !(pump_offset > 0.0 && pump_offset < 2.0 * tau) {
        return Err(SequenceError::BadTiming(format!(
            "pump offset {pump_offset:e} s must lie strictly inside (0, 2τ)"
        )));
    }
    let c1 = pulses[1].center();
    pulses.push(timing.pump_pulse(c1 + pump_offset));
    Ok(finish(pulses, SequenceKind::Deer4))
}

fn single_pulse(
    channel: Channel,
    frequency: f64,
    rabi: f64,
    duration: f64,
) -> Result<Pulse, SequenceError> {
    if !(duration > 0.0) {
        return Err(SequenceError::BadTiming(format!(
            "pulse duration must be > 0, got {duration:e}"
        )));
    }
    Ok(Pulse {
        channel,
        start: 0.0,
        duration,
        phase: PulsePhase::X,
        frequency_offset: frequency,
        rabi,
    })
}

/// One init—pulse—readout sequence per MW frequency (Hz).
pub fn build_odmr(
    freq_list: &[f64],
    pulse: &PulseParams,
) -> Result<Vec<PulseSequence>, SequenceError> {
    freq_list
        .iter()
        .map(|&f| {
            let p = single_pulse(Channel::A, f, pulse.rabi, pulse.duration)?;
            Ok(finish(vec![p], SequenceKind::Odmr))
        })
        .collect()
}

/// One sequence per pulse length at the fixed carrier `frequency` (Hz).
pub fn build_rabi(
    duration_list: &[f64],
    frequency: f64,
    rabi: f64,
) -> Result<Vec<PulseSequence>, SequenceError> {
    duration_list
        .iter()
        .map(|&t| {
            let p = single_pulse(Channel::A, frequency, rabi, t)?;
            Ok(finish(vec![p], SequenceKind::Rabi))
        })
        .collect()
}

/// Pump π pulse at `pump_freq` on channel B followed by a weak probe pulse
/// on channel A at each probe frequency.
pub fn build_holeburn(
    pump: &PulseParams,
    pump_freq: f64,
    probe: &PulseParams,
    probe_freqs: &[f64],
) -> Result<Vec<PulseSequence>, SequenceError> {
    probe_freqs
        .iter()
        .map(|&f| {
            let pump_pulse = single_pulse(Channel::B, pump_freq, pump.rabi, pump.duration)?;
            let mut probe_pulse = single_pulse(Channel::A, f, probe.rabi, probe.duration)?;
            probe_pulse.start = pump_pulse.end();
            Ok(finish(vec![pump_pulse, probe_pulse], SequenceKind::HoleBurn))
        })
        .collect()
}

/// Checks ordering, channel-A overlap and readout placement, reporting the
/// first violation.
pub fn validate(seq: &PulseSequence) -> Result<(), SequenceError> {
    for (i, p) in seq.pulses.iter().enumerate() {
        if !(p.duration > 0.0) {
            return Err(SequenceError::InvalidPulse {
                index: i,
                reason: format!("duration {:e} must be > 0", p.duration),
            });
        }
        if !(p.start >= 0.0) {
            return Err(SequenceError::InvalidPulse {
                index: i,
                reason: format!("start {:e} must be >= 0", p.start),
            });
        }
        if i > 0 && p.start < seq.pulses[i - 1].start {
            return Err(SequenceError::Unsorted {
                previous: i - 1,
                index: i,
            });
        }
    }
    let a: Vec<usize> = seq
        .pulses
        .iter()
        .enumerate()
        .filter(|(_, p)| p.channel == Channel::A)
        .map(|(i, _)| i)
        .collect();
    for w in a.windows(2) {
        if seq.pulses[w[1]].start < seq.pulses[w[0]].end() {
            return Err(SequenceError::Overlap {
                first: w[0],
                second: w[1],
            });
        }
    }
    let last_end = seq.pulses.iter().map(Pulse::end).fold(0.0, f64::max);
    if seq.readout_time < last_end {
        return Err(SequenceError::ReadoutBeforeEnd {
            readout: seq.readout_time,
            last_end,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const US: f64 = 1e-6;

    #[test]
    fn default_timing_matches_calibration() {
        let t = Timing::default();
        assert_abs_diff_eq!(t.delay, 0.08 * US, epsilon = 1e-15);
        assert_abs_diff_eq!(t.pi_length(), 2.0 * t.pi_half_length(), epsilon = 1e-15);
        assert_abs_diff_eq!(t.rabi_a() * t.pi_half_length(), PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn echo_at_first_revival() {
        let t = Timing::default();
        let seq = build_echo(41.0 * US, PulsePhase::Y, &t).unwrap();
        assert_eq!(seq.pulses.len(), 3);
        assert!(seq.pulses.iter().all(|p| p.channel == Channel::A));
        assert_abs_diff_eq!(seq.echo_time(), 82.0 * US, epsilon = 1e-12);
        assert_eq!(seq.pulses[2].phase, PulsePhase::Y);
        validate(&seq).unwrap();
    }

    #[test]
    fn echo_too_short() {
        let err = build_echo(0.1 * US, PulsePhase::X, &Timing::default()).unwrap_err();
        assert!(matches!(err, SequenceError::BadTiming(_)));
    }

    #[test]
    fn deer3_pump_positions() {
        let t = Timing::default();
        let tau = 41.0 * US;
        let seq = build_deer3(tau, tau, PulsePhase::X, &t).unwrap();
        let pi = seq.a_pulses().nth(1).unwrap();
        let pump = seq.b_pulses().next().unwrap();
        assert_abs_diff_eq!(pump.center(), pi.center(), epsilon = 1e-15);
        validate(&seq).unwrap();

        let seq = build_deer3(tau, 0.0, PulsePhase::X, &t).unwrap();
        let first = seq.a_pulses().next().unwrap();
        assert_abs_diff_eq!(seq.b_pulses().next().unwrap().center(), first.center(), epsilon = 1e-15);
        validate(&seq).unwrap();

        assert!(build_deer3(tau, -1e-9, PulsePhase::X, &t).is_err());
        assert!(build_deer3(tau, 2.0 * tau + 1e-9, PulsePhase::X, &t).is_err());
        validate(&build_deer3(tau, 2.0 * tau, PulsePhase::X, &t).unwrap()).unwrap();
    }

    #[test]
    fn deer4_range_is_open() {
        let t = Timing::default();
        let tau = 41.0 * US;
        assert!(build_deer4(tau, 0.0, PulsePhase::X, &t).is_err());
        assert!(build_deer4(tau, 2.0 * tau, PulsePhase::X, &t).is_err());
        for k in 1..40 {
            let seq = build_deer4(tau, 2.0 * tau * k as f64 / 40.0, PulsePhase::Y, &t).unwrap();
            validate(&seq).unwrap();
            assert_eq!(seq.a_pulses().count(), 4);
        }
    }

    #[test]
    fn spectral_builders() {
        let p = PulseParams::new(1e6, 0.0, 1e-6).unwrap();
        let seqs = build_odmr(&[2.6e9, 2.7e9], &p).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[1].pulses[0].frequency_offset, 2.7e9);
        for s in &seqs {
            validate(s).unwrap();
        }
        let seqs = build_rabi(&[0.1e-6, 0.2e-6], 2.6e9, 1e6).unwrap();
        assert_eq!(seqs[1].pulses[0].duration, 0.2e-6);
        assert!(build_rabi(&[0.0], 2.6e9, 1e6).is_err());
        let hb = build_holeburn(&p, 2.65e9, &p, &[2.8e9]).unwrap();
        assert_eq!(hb[0].pulses[0].channel, Channel::B);
        validate(&hb[0]).unwrap();
    }

    #[test]
    fn validate_reports_overlap() {
        let t = Timing::default();
        let mut seq = build_echo(10.0 * US, PulsePhase::X, &t).unwrap();
        seq.pulses[1].start = seq.pulses[0].start + 0.1 * US;
        assert_eq!(
            validate(&seq),
            Err(SequenceError::Overlap { first: 0, second: 1 })
        );
    }

    #[test]
    fn validate_reports_early_readout() {
        let t = Timing::default();
        let mut seq = build_echo(10.0 * US, PulsePhase::X, &t).unwrap();
        seq.readout_time = seq.pulses[2].start;
        assert!(matches!(
            validate(&seq),
            Err(SequenceError::ReadoutBeforeEnd { .. })
        ));
    }

    #[test]
    fn b_pulse_may_overlap_a() {
        let t = Timing::default();
        let seq = build_deer3(10.0 * US, 10.0 * US, PulsePhase::X, &t).unwrap();
        validate(&seq).unwrap();
    }
}
