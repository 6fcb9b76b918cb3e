//! Experiment configuration: JSON with explicit unit suffixes in the keys.
//! Everything is converted to SI-like internal units (Hz, s, G) and CGS
//! constants on load.

use std::f64::consts::PI;
use std::path::Path;

use nvdeer::bath::{
    compute_k, ppb_to_density, BathSampling, KineticsParams, PhysicalConstants, ALPHA_SPHERE,
    DEFAULT_EXCLUSION_RADIUS,
};
use nvdeer::nv::{larmor_revival_times, BiasField, EnvelopeParams, NvParams};
use nvdeer::sequence::Timing;
use nvdeer::simulate::ReadoutParams;
use nvdeer::spin::PulseParams;
use nvdeer::Error as CoreError;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const US: f64 = 1e-6;
const MHZ: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub nv: NvSection,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub timing: TimingSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub constants: ConstantsSection,
    pub kinetics: Option<KineticsSection>,
    pub bath: Option<BathSection>,
    pub scan: Option<ScanSection>,
    pub spectrum: Option<SpectrumSection>,
    pub rabi: Option<RabiSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct NvSection {
    pub zfs_GHz: f64,
    pub gamma_e_MHz_per_G: f64,
    pub gamma_c13_kHz_per_G: f64,
    pub hyperfine_MHz: f64,
}

impl Default for NvSection {
    fn default() -> Self {
        NvSection {
            zfs_GHz: 2.7,
            gamma_e_MHz_per_G: 2.8,
            gamma_c13_kHz_per_G: 1.0705,
            hyperfine_MHz: 2.16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct FieldSection {
    pub magnitude_G: f64,
    pub direction: [f64; 3],
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            magnitude_G: 23.0,
            direction: [1.0, 1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct TimingSection {
    pub t_pi_us: f64,
    pub t_pi_half_us: f64,
    /// Defaults to `t_pi − 2 t_pi_half`.
    pub delay_us: Option<f64>,
    pub pump_duration_us: f64,
    pub pump_offset_MHz: f64,
}

impl Default for TimingSection {
    fn default() -> Self {
        TimingSection {
            t_pi_us: 0.88,
            t_pi_half_us: 0.4,
            delay_us: None,
            pump_duration_us: 0.4,
            pump_offset_MHz: -49.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct EnvSection {
    /// Rabi frequency the pump produces on the probe spins (Ω/2π).
    pub crosstalk_rabi_MHz: f64,
    /// Probe-minus-pump frequency; defaults to minus the pump offset.
    pub crosstalk_detuning_MHz: Option<f64>,
    /// Defaults to the pump duration.
    pub crosstalk_duration_us: Option<f64>,
    pub detuning_a_kHz: f64,
    pub initial_polarization: f64,
    pub envelope: Option<EnvelopeSection>,
    pub readout: ReadoutSection,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            crosstalk_rabi_MHz: 1.5,
            crosstalk_detuning_MHz: None,
            crosstalk_duration_us: None,
            detuning_a_kHz: 0.0,
            initial_polarization: 1.0,
            envelope: None,
            readout: ReadoutSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSection {
    pub t2_us: f64,
    #[serde(default = "one")]
    pub stretch_exponent: f64,
    #[serde(default = "default_revival_width")]
    pub revival_width_us: f64,
    /// Multiply by the ¹³C revival comb.
    #[serde(default)]
    pub revivals: bool,
}

fn one() -> f64 {
    1.0
}

fn default_revival_width() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutSection {
    pub contrast: f64,
    pub baseline: f64,
    pub noise: f64,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        let r = ReadoutParams::default();
        ReadoutSection {
            contrast: r.contrast,
            baseline: r.baseline,
            noise: r.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsSection {
    pub mu_b_erg_per_g: f64,
    pub g_factor: f64,
    pub hbar_erg_s: f64,
    pub carbon_density_per_cm3: f64,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        let c = PhysicalConstants::default();
        ConstantsSection {
            mu_b_erg_per_g: c.mu_b,
            g_factor: c.g,
            hbar_erg_s: c.hbar,
            carbon_density_per_cm3: c.carbon_density,
        }
    }
}

/// Analytic decay law. Give either `rate_per_s` or `concentration_ppb`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticsSection {
    pub rate_per_s: Option<f64>,
    pub concentration_ppb: Option<f64>,
    pub flip_probability: f64,
    /// Defaults to the theoretical value.
    pub k_cm3_per_s: Option<f64>,
    #[serde(default)]
    pub polarization: f64,
    #[serde(default = "one")]
    pub shape_factor: f64,
    #[serde(default = "alpha")]
    pub alpha: f64,
}

fn alpha() -> f64 {
    ALPHA_SPHERE
}

/// Monte-Carlo bath. Give either `concentration_ppb` or `rate_per_s`
/// (converted with the theoretical k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSection {
    pub concentration_ppb: Option<f64>,
    pub rate_per_s: Option<f64>,
    pub flip_probability: f64,
    #[serde(default)]
    pub polarization: f64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_tolerance")]
    pub truncation_tolerance: f64,
    pub radius_nm: Option<f64>,
    #[serde(default = "default_exclusion")]
    pub exclusion_radius_nm: f64,
    #[serde(default)]
    pub axis_angle_deg: f64,
    #[serde(default = "one")]
    pub kernel_scale: f64,
}

fn default_realizations() -> usize {
    10_000
}

fn default_tolerance() -> f64 {
    0.01
}

fn default_exclusion() -> f64 {
    DEFAULT_EXCLUSION_RADIUS * 1e7
}

/// Scanned time axis: pump offset for DEER, τ for echo, T for `mc-bath`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub tau_us: Option<f64>,
    pub start_us: f64,
    pub stop_us: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct SpectrumSection {
    pub start_MHz: f64,
    pub stop_MHz: f64,
    pub points: usize,
    pub rabi_MHz: f64,
    /// Defaults to a π pulse at `rabi_MHz`.
    pub duration_us: Option<f64>,
    #[serde(default = "lower")]
    pub transition: Transition,
    /// Orientation groups (0..4) seen by the probe; default all.
    pub orientations: Option<Vec<usize>>,
    /// Burns a hole on the lower transition before probing the upper one.
    pub pump: Option<PumpSection>,
}

fn lower() -> Transition {
    Transition::Lower
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct PumpSection {
    pub rabi_MHz: f64,
    pub duration_us: f64,
    /// Carrier offset from the centre line of the first probed orientation.
    #[serde(default)]
    pub detuning_MHz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct RabiSection {
    /// Defaults to the centre line of the first orientation.
    pub frequency_MHz: Option<f64>,
    pub rabi_MHz: f64,
    pub start_us: f64,
    pub stop_us: f64,
    pub points: usize,
    #[serde(default = "lower")]
    pub transition: Transition,
    pub orientations: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Points with `D` below this are flagged as having no defined angle.
    pub noise_floor: f64,
    /// Empirical slope of rate against excited concentration.
    pub empirical_rate_per_ppb: f64,
    /// Pump efficiency used by `analyze-concentration`; falls back to the
    /// kinetics or bath section.
    pub flip_probability: Option<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            noise_floor: 0.0,
            empirical_rate_per_ppb: 34.0,
            flip_probability: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<String>,
    /// Also write a gnuplot script next to the data.
    pub plot_script: bool,
}

/// Which sections a command needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Nothing,
    Scan,
    ScanTau,
    ScanTauKernel,
    Spectrum,
    Rabi,
    Bath,
    FlipProbability,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Config(format!("line {} column {}: {e}", e.line(), e.column()))
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn positive(bad: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        bad.push(format!("{name} must be > 0, got {v}"));
    }
}

fn non_negative(bad: &mut Vec<String>, name: &str, v: f64) {
    if !(v >= 0.0 && v.is_finite()) {
        bad.push(format!("{name} must be >= 0, got {v}"));
    }
}

fn unit_interval(bad: &mut Vec<String>, name: &str, v: f64) {
    if !(0.0..=1.0).contains(&v) {
        bad.push(format!("{name} must lie in [0, 1], got {v}"));
    }
}

fn one_of(bad: &mut Vec<String>, section: &str, a: (&str, Option<f64>), b: (&str, Option<f64>)) {
    match (a.1, b.1) {
        (Some(_), Some(_)) => bad.push(format!("{section}: give only one of {} and {}", a.0, b.0)),
        (None, None) => bad.push(format!("{section}: one of {} or {} is required", a.0, b.0)),
        (Some(v), None) => non_negative(bad, &format!("{section}.{}", a.0), v),
        (None, Some(v)) => non_negative(bad, &format!("{section}.{}", b.0), v),
    }
}

fn check_orientations(bad: &mut Vec<String>, name: &str, o: &Option<Vec<usize>>) {
    if let Some(list) = o {
        if list.is_empty() {
            bad.push(format!("{name} must not be empty"));
        }
        if let Some(i) = list.iter().find(|&&i| i >= 4) {
            bad.push(format!("{name}: orientation index {i} out of range 0..4"));
        }
    }
}

impl ExperimentConfig {
    /// Checks every invariant for the given command and reports all
    /// violations at once.
    pub fn validate(&self, needs: Needs) -> Result<(), CliError> {
        let mut bad = Vec::new();
        if self.seed.is_none() {
            bad.push("seed is required".to_string());
        }
        positive(&mut bad, "nv.zfs_GHz", self.nv.zfs_GHz);
        positive(&mut bad, "nv.gamma_e_MHz_per_G", self.nv.gamma_e_MHz_per_G);
        positive(&mut bad, "nv.gamma_c13_kHz_per_G", self.nv.gamma_c13_kHz_per_G);
        non_negative(&mut bad, "nv.hyperfine_MHz", self.nv.hyperfine_MHz);
        non_negative(&mut bad, "field.magnitude_G", self.field.magnitude_G);
        if self.field.direction.iter().all(|&v| v == 0.0) {
            bad.push("field.direction must be non-zero".into());
        }
        positive(&mut bad, "timing.t_pi_us", self.timing.t_pi_us);
        positive(&mut bad, "timing.t_pi_half_us", self.timing.t_pi_half_us);
        positive(&mut bad, "timing.pump_duration_us", self.timing.pump_duration_us);
        if let Some(d) = self.timing.delay_us {
            if !(d.is_finite() && self.timing.t_pi_half_us + d > 0.0) {
                bad.push(format!("timing.delay_us {d} makes the π/2 pulse non-positive"));
            }
        }
        non_negative(&mut bad, "env.crosstalk_rabi_MHz", self.env.crosstalk_rabi_MHz);
        if let Some(d) = self.env.crosstalk_duration_us {
            non_negative(&mut bad, "env.crosstalk_duration_us", d);
        }
        unit_interval(&mut bad, "env.initial_polarization", self.env.initial_polarization);
        unit_interval(&mut bad, "env.readout.contrast", self.env.readout.contrast);
        non_negative(&mut bad, "env.readout.noise", self.env.readout.noise);
        if let Some(e) = &self.env.envelope {
            positive(&mut bad, "env.envelope.t2_us", e.t2_us);
            if !(1.0..=4.0).contains(&e.stretch_exponent) {
                bad.push(format!(
                    "env.envelope.stretch_exponent must lie in [1, 4], got {}",
                    e.stretch_exponent
                ));
            }
            positive(&mut bad, "env.envelope.revival_width_us", e.revival_width_us);
        }
        positive(&mut bad, "constants.mu_b_erg_per_g", self.constants.mu_b_erg_per_g);
        positive(&mut bad, "constants.g_factor", self.constants.g_factor);
        positive(&mut bad, "constants.hbar_erg_s", self.constants.hbar_erg_s);
        positive(&mut bad, "constants.carbon_density_per_cm3", self.constants.carbon_density_per_cm3);
        non_negative(&mut bad, "analysis.noise_floor", self.analysis.noise_floor);
        positive(&mut bad, "analysis.empirical_rate_per_ppb", self.analysis.empirical_rate_per_ppb);

        if self.kinetics.is_some() && self.bath.is_some() {
            bad.push("give only one of kinetics and bath".into());
        }
        if let Some(k) = &self.kinetics {
            one_of(&mut bad, "kinetics", ("rate_per_s", k.rate_per_s), ("concentration_ppb", k.concentration_ppb));
            unit_interval(&mut bad, "kinetics.flip_probability", k.flip_probability);
            if k.rate_per_s.is_some() && k.flip_probability == 0.0 {
                bad.push("kinetics: a rate needs flip_probability > 0".into());
            }
            if let Some(v) = k.k_cm3_per_s {
                positive(&mut bad, "kinetics.k_cm3_per_s", v);
            }
            unit_interval(&mut bad, "kinetics.polarization", k.polarization);
        }
        if let Some(b) = &self.bath {
            one_of(&mut bad, "bath", ("concentration_ppb", b.concentration_ppb), ("rate_per_s", b.rate_per_s));
            unit_interval(&mut bad, "bath.flip_probability", b.flip_probability);
            if b.rate_per_s.is_some() && b.flip_probability == 0.0 {
                bad.push("bath: a rate needs flip_probability > 0".into());
            }
            unit_interval(&mut bad, "bath.polarization", b.polarization);
            if b.realizations < 100 {
                bad.push(format!("bath.realizations must be >= 100, got {}", b.realizations));
            }
            positive(&mut bad, "bath.truncation_tolerance", b.truncation_tolerance);
            non_negative(&mut bad, "bath.exclusion_radius_nm", b.exclusion_radius_nm);
            if let Some(r) = b.radius_nm {
                if !(r > b.exclusion_radius_nm) {
                    bad.push(format!("bath.radius_nm {r} must exceed exclusion_radius_nm"));
                }
            }
        }

        let scan = |bad: &mut Vec<String>| match &self.scan {
            None => bad.push("scan section is required".into()),
            Some(s) => {
                if s.points < 2 {
                    bad.push(format!("scan.points must be >= 2, got {}", s.points));
                }
                non_negative(bad, "scan.start_us", s.start_us);
                if !(s.stop_us > s.start_us) {
                    bad.push(format!(
                        "scan.stop_us ({}) must exceed scan.start_us ({})",
                        s.stop_us, s.start_us
                    ));
                }
            }
        };
        match needs {
            Needs::Nothing => {}
            Needs::Scan => scan(&mut bad),
            Needs::ScanTau | Needs::ScanTauKernel => {
                scan(&mut bad);
                match self.scan.as_ref().and_then(|s| s.tau_us) {
                    None => bad.push("scan.tau_us is required".into()),
                    Some(t) => positive(&mut bad, "scan.tau_us", t),
                }
                if needs == Needs::ScanTauKernel && self.kinetics.is_none() && self.bath.is_none() {
                    bad.push("a DEER simulation needs a kinetics or bath section".into());
                }
            }
            Needs::Spectrum => match &self.spectrum {
                None => bad.push("spectrum section is required".into()),
                Some(s) => {
                    if s.points < 2 {
                        bad.push(format!("spectrum.points must be >= 2, got {}", s.points));
                    }
                    if !(s.stop_MHz > s.start_MHz) {
                        bad.push("spectrum.stop_MHz must exceed spectrum.start_MHz".into());
                    }
                    positive(&mut bad, "spectrum.rabi_MHz", s.rabi_MHz);
                    if let Some(d) = s.duration_us {
                        positive(&mut bad, "spectrum.duration_us", d);
                    }
                    check_orientations(&mut bad, "spectrum.orientations", &s.orientations);
                    if let Some(p) = &s.pump {
                        non_negative(&mut bad, "spectrum.pump.rabi_MHz", p.rabi_MHz);
                        positive(&mut bad, "spectrum.pump.duration_us", p.duration_us);
                    }
                }
            },
            Needs::Rabi => match &self.rabi {
                None => bad.push("rabi section is required".into()),
                Some(r) => {
                    if r.points < 2 {
                        bad.push(format!("rabi.points must be >= 2, got {}", r.points));
                    }
                    positive(&mut bad, "rabi.start_us", r.start_us);
                    if !(r.stop_us > r.start_us) {
                        bad.push("rabi.stop_us must exceed rabi.start_us".into());
                    }
                    positive(&mut bad, "rabi.rabi_MHz", r.rabi_MHz);
                    check_orientations(&mut bad, "rabi.orientations", &r.orientations);
                }
            },
            Needs::Bath => {
                scan(&mut bad);
                if self.bath.is_none() {
                    bad.push("bath section is required".into());
                }
            }
            Needs::FlipProbability => {
                if let Some(p) = self.analysis.flip_probability {
                    if !(p > 0.0 && p <= 1.0) {
                        bad.push(format!("analysis.flip_probability must lie in (0, 1], got {p}"));
                    }
                } else if self.kinetics.is_none() && self.bath.is_none() {
                    bad.push("a kinetics or bath section is required for the flip probability".into());
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(bad))
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    pub fn nv_params(&self) -> NvParams {
        NvParams {
            zfs: self.nv.zfs_GHz * 1e9,
            gamma_e: self.nv.gamma_e_MHz_per_G * MHZ,
            gamma_c13: self.nv.gamma_c13_kHz_per_G * 1e3,
            hyperfine_splitting: self.nv.hyperfine_MHz * MHZ,
            ..NvParams::default()
        }
    }

    pub fn bias_field(&self) -> Result<BiasField, CliError> {
        let d = self.field.direction;
        BiasField::new(Vector3::new(d[0], d[1], d[2]), self.field.magnitude_G)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn timing(&self) -> Timing {
        let t = &self.timing;
        Timing {
            t_pi: t.t_pi_us * US,
            t_pi_half: t.t_pi_half_us * US,
            delay: t.delay_us.unwrap_or(t.t_pi_us - 2.0 * t.t_pi_half_us) * US,
            pump_duration: t.pump_duration_us * US,
            pump_offset_hz: t.pump_offset_MHz * MHZ,
        }
    }

    pub fn constants(&self) -> Result<PhysicalConstants, CliError> {
        let c = PhysicalConstants {
            mu_b: self.constants.mu_b_erg_per_g,
            g: self.constants.g_factor,
            hbar: self.constants.hbar_erg_s,
            carbon_density: self.constants.carbon_density_per_cm3,
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn crosstalk(&self) -> Result<PulseParams, CliError> {
        let detuning = self
            .env
            .crosstalk_detuning_MHz
            .unwrap_or(-self.timing.pump_offset_MHz);
        let duration = self
            .env
            .crosstalk_duration_us
            .unwrap_or(self.timing.pump_duration_us);
        PulseParams::new(
            2.0 * PI * self.env.crosstalk_rabi_MHz * MHZ,
            2.0 * PI * detuning * MHZ,
            duration * US,
        )
        .map_err(|e| CliError::Config(format!("env crosstalk: {e}")))
    }

    pub fn readout(&self) -> ReadoutParams {
        ReadoutParams {
            contrast: self.env.readout.contrast,
            baseline: self.env.readout.baseline,
            noise: self.env.readout.noise,
        }
    }

    /// Envelope and the revival list up to `max_tau`.
    pub fn envelope(&self, max_tau: f64) -> Result<(Option<EnvelopeParams>, Vec<f64>), CliError> {
        let Some(e) = &self.env.envelope else {
            return Ok((None, Vec::new()));
        };
        let params = EnvelopeParams {
            t2: e.t2_us * US,
            stretch_exponent: e.stretch_exponent,
            revival_width: e.revival_width_us * US,
        };
        let revivals = if e.revivals {
            let nv = self.nv_params();
            let period = 1.0 / (nv.gamma_c13 * self.field.magnitude_G);
            let n = (max_tau / period).ceil() as usize + 1;
            larmor_revival_times(self.field.magnitude_G, &nv, n)
                .map_err(|e| CliError::Config(format!("revivals: {e}")))?
        } else {
            Vec::new()
        };
        Ok((Some(params), revivals))
    }

    pub fn kinetics(&self) -> Result<Option<KineticsParams>, CliError> {
        let Some(k) = &self.kinetics else {
            return Ok(None);
        };
        let c = self.constants()?;
        let kval = k.k_cm3_per_s.unwrap_or_else(|| compute_k(&c));
        let concentration = match (k.rate_per_s, k.concentration_ppb) {
            (Some(rate), _) => rate / (k.flip_probability * kval),
            (None, Some(ppb)) => ppb_to_density(ppb, &c),
            (None, None) => 0.0,
        };
        let kp = KineticsParams {
            concentration,
            flip_probability: k.flip_probability,
            k: kval,
            polarization: k.polarization,
            shape_factor: k.shape_factor,
            alpha: k.alpha,
        };
        kp.validate().map_err(|e| CliError::Config(format!("kinetics: {e}")))?;
        Ok(Some(kp))
    }

    /// Bath sampling sized for evolution times up to `t_max`.
    pub fn bath_sampling(&self, t_max: f64) -> Result<Option<(BathSampling, usize)>, CliError> {
        let Some(b) = &self.bath else {
            return Ok(None);
        };
        let c = self.constants()?;
        let concentration = match (b.concentration_ppb, b.rate_per_s) {
            (Some(ppb), _) => ppb_to_density(ppb, &c),
            (None, Some(rate)) => rate / (b.flip_probability * compute_k(&c) * b.kernel_scale.abs()),
            (None, None) => 0.0,
        };
        let mut s = BathSampling::for_times(
            concentration,
            b.flip_probability,
            b.polarization,
            t_max,
            b.truncation_tolerance,
            &c,
        );
        s.kernel_scale = b.kernel_scale;
        s.exclusion_radius = b.exclusion_radius_nm * 1e-7;
        s.axis_angle = b.axis_angle_deg.to_radians();
        s.radius = match b.radius_nm {
            Some(r) => r * 1e-7,
            None => nvdeer::bath::recommended_radius(t_max, b.truncation_tolerance, b.kernel_scale, &c)
                .max(10.0 * s.exclusion_radius),
        };
        s.validate().map_err(|e| CliError::Config(format!("bath: {}", CoreError::from(e))))?;
        Ok(Some((s, b.realizations)))
    }

    pub fn flip_probability(&self) -> Option<f64> {
        self.analysis
            .flip_probability
            .or_else(|| self.kinetics.as_ref().map(|k| k.flip_probability))
            .or_else(|| self.bath.as_ref().map(|b| b.flip_probability))
    }

    /// Evenly spaced scan values in seconds.
    pub fn scan_values(&self) -> Vec<f64> {
        let s = self.scan.as_ref().expect("validated");
        linspace(s.start_us * US, s.stop_us * US, s.points)
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}
