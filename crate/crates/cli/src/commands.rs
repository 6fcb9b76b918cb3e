//! Subcommand implementations. Each returns the complete set of output
//! files; nothing touches the disk until all of them are ready.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nvdeer::bath::{
    compute_k, density_to_ppb, mc_deer_trace, rate_per_ppb_to_k, sample_ensemble,
};
use nvdeer::fit::{
    decay_trace, fit_complex_decay, fit_exp_decay, fit_lorentzian_triplet, holeburn_efficiency,
    Estimate, FitReport,
};
use nvdeer::nv::{resonance_frequencies, upper_resonance_frequencies, OrientationLines};
use nvdeer::rng::derive_seed;
use nvdeer::sequence::{
    build_deer3, build_deer4, build_echo, build_holeburn, build_odmr, build_rabi, SequenceKind,
};
use nvdeer::simulate::{scan, simulate_spectrum, BathEnsemble, DipolarKernel, SimEnv, SpectralLines};
use nvdeer::spin::PulseParams;
use nvdeer::tomography::{deer_tomography, TomographyResult, TraceSet};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::{linspace, ExperimentConfig, Needs, Transition};
use crate::error::CliError;
use crate::io::{
    parse_spectrum_csv, parse_trace_csv, read_file, sha256_hex, trace_csv, write_table, OutputFile,
    RunManifest,
};

const US: f64 = 1e-6;
const MHZ: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SimulateOdmr,
    SimulateRabi,
    SimulateEcho,
    SimulateDeer3,
    SimulateDeer4,
    FitOdmr,
    HoleburnEfficiency,
    FitDecay,
    AnalyzeConcentration,
    McBath,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateOdmr => "simulate-odmr",
            Command::SimulateRabi => "simulate-rabi",
            Command::SimulateEcho => "simulate-echo",
            Command::SimulateDeer3 => "simulate-deer3",
            Command::SimulateDeer4 => "simulate-deer4",
            Command::FitOdmr => "fit-odmr",
            Command::HoleburnEfficiency => "holeburn-efficiency",
            Command::FitDecay => "fit-decay",
            Command::AnalyzeConcentration => "analyze-concentration",
            Command::McBath => "mc-bath",
        }
    }

    fn needs(self) -> Needs {
        match self {
            Command::SimulateOdmr => Needs::Spectrum,
            Command::SimulateRabi => Needs::Rabi,
            Command::SimulateEcho => Needs::Scan,
            Command::SimulateDeer3 | Command::SimulateDeer4 => Needs::ScanTauKernel,
            Command::FitOdmr | Command::HoleburnEfficiency | Command::FitDecay => Needs::Nothing,
            Command::AnalyzeConcentration => Needs::FlipProbability,
            Command::McBath => Needs::Bath,
        }
    }
}

/// Data-file arguments of the fit and analysis commands.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inputs {
    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub rate: Option<f64>,
    pub rate_err: Option<f64>,
}

/// SHA-256 of the canonical JSON form of the (seed-resolved) config.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    sha256_hex(canonical.as_bytes())
}

/// Validates the config, runs the command and returns its outputs with the
/// manifest last.
pub fn run(cmd: Command, config: &ExperimentConfig, inputs: &Inputs) -> Result<Vec<OutputFile>, CliError> {
    config.validate(cmd.needs())?;
    let hash = config_hash(config);
    let mut files = match cmd {
        Command::SimulateOdmr => simulate_odmr(config)?,
        Command::SimulateRabi => simulate_rabi(config)?,
        Command::SimulateEcho | Command::SimulateDeer3 | Command::SimulateDeer4 => {
            simulate_trace(cmd, config)?
        }
        Command::FitOdmr => fit_odmr(config, inputs, &hash)?,
        Command::HoleburnEfficiency => holeburn(config, inputs, &hash)?,
        Command::FitDecay => fit_decay_cmd(config, inputs, &hash)?,
        Command::AnalyzeConcentration => analyze(config, inputs, &hash)?,
        Command::McBath => mc_bath(config, &hash)?,
    };
    let manifest = RunManifest::new(cmd.name(), &hash, config.seed(), &files);
    files.push(OutputFile::json("manifest.json", &manifest)?);
    Ok(files)
}

fn plot_script(data: &str, x: &str, columns: &[(usize, &str)]) -> OutputFile {
    let series: Vec<String> = columns
        .iter()
        .map(|(c, title)| format!("'{data}' using 1:{c} with linespoints title '{title}'"))
        .collect();
    let text = format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel '{x}'\nplot {}\n",
        series.join(", \\\n     ")
    );
    OutputFile::new("plot.gp", text)
}

fn selected_lines(
    config: &ExperimentConfig,
    transition: Transition,
    orientations: &Option<Vec<usize>>,
) -> Result<(Vec<OrientationLines>, Vec<OrientationLines>, Vec<usize>), CliError> {
    let nv = config.nv_params();
    let field = config.bias_field()?;
    let lower = resonance_frequencies(&field, &nv);
    let upper = upper_resonance_frequencies(&field, &nv);
    let (probe, other) = match transition {
        Transition::Lower => (lower, upper),
        Transition::Upper => (upper, lower),
    };
    let chosen = orientations.clone().unwrap_or_else(|| (0..4).collect());
    Ok((probe, other, chosen))
}

fn simulate_odmr(config: &ExperimentConfig) -> Result<Vec<OutputFile>, CliError> {
    let s = config.spectrum.as_ref().expect("validated");
    let (probe, other, chosen) = selected_lines(config, s.transition, &s.orientations)?;
    let mut lines = SpectralLines {
        probe_lines: Vec::new(),
        pump_lines: Vec::new(),
    };
    for &o in &chosen {
        lines.probe_lines.extend(probe[o].lines);
        lines.pump_lines.extend(other[o].lines);
    }
    let freqs = linspace(s.start_MHz * MHZ, s.stop_MHz * MHZ, s.points);
    let duration = s.duration_us.map_or(0.5 / (s.rabi_MHz * MHZ), |d| d * US);
    let probe_pulse = PulseParams::new(2.0 * PI * s.rabi_MHz * MHZ, 0.0, duration)
        .map_err(|e| CliError::Config(format!("spectrum: {e}")))?;
    let numeric = |e: nvdeer::sequence::SequenceError| CliError::numeric("building sequences", e);
    let (seqs, kind) = match &s.pump {
        None => (build_odmr(&freqs, &probe_pulse).map_err(numeric)?, "odmr"),
        Some(p) => {
            let pump = PulseParams::new(2.0 * PI * p.rabi_MHz * MHZ, 0.0, p.duration_us * US)
                .map_err(|e| CliError::Config(format!("spectrum.pump: {e}")))?;
            let pump_freq = other[chosen[0]].center + p.detuning_MHz * MHZ;
            (
                build_holeburn(&pump, pump_freq, &probe_pulse, &freqs).map_err(numeric)?,
                "holeburn",
            )
        }
    };
    let signal = simulate_spectrum(&seqs, &lines, &config.readout(), config.seed())
        .map_err(|e| CliError::numeric("simulating spectrum", e))?;
    let csv = write_table(
        &[("kind", kind.to_string())],
        &["frequency_hz", "signal"],
        &[&freqs, &signal],
    )?;
    let mut files = vec![OutputFile::new("spectrum.csv", csv)];
    if config.output.plot_script {
        files.push(plot_script("spectrum.csv", "frequency (Hz)", &[(2, "signal")]));
    }
    Ok(files)
}

fn simulate_rabi(config: &ExperimentConfig) -> Result<Vec<OutputFile>, CliError> {
    let r = config.rabi.as_ref().expect("validated");
    let (probe, _, chosen) = selected_lines(config, r.transition, &r.orientations)?;
    let lines = SpectralLines {
        probe_lines: chosen.iter().flat_map(|&o| probe[o].lines).collect(),
        pump_lines: Vec::new(),
    };
    let freq = r.frequency_MHz.map_or(probe[chosen[0]].center, |f| f * MHZ);
    let durations = linspace(r.start_us * US, r.stop_us * US, r.points);
    let seqs = build_rabi(&durations, freq, 2.0 * PI * r.rabi_MHz * MHZ)
        .map_err(|e| CliError::numeric("building sequences", e))?;
    let signal = simulate_spectrum(&seqs, &lines, &config.readout(), config.seed())
        .map_err(|e| CliError::numeric("simulating Rabi oscillation", e))?;
    let csv = write_table(
        &[("kind", "rabi".to_string())],
        &["duration_s", "signal"],
        &[&durations, &signal],
    )?;
    let mut files = vec![OutputFile::new("rabi.csv", csv)];
    if config.output.plot_script {
        files.push(plot_script("rabi.csv", "pulse length (s)", &[(2, "signal")]));
    }
    Ok(files)
}

/// Simulation environment for echo-type sequences whose longest total
/// free evolution is `total`.
pub fn sim_env(config: &ExperimentConfig, kernel: DipolarKernel, total: f64) -> Result<SimEnv, CliError> {
    let (envelope, revivals) = config.envelope(total)?;
    let env = SimEnv {
        kernel,
        crosstalk: config.crosstalk()?,
        detuning_a: config.env.detuning_a_kHz * 1e3,
        envelope,
        revivals,
        initial_polarization: config.env.initial_polarization,
        readout: config.readout(),
    };
    env.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(env)
}

fn kernel(config: &ExperimentConfig, t_max: f64) -> Result<DipolarKernel, CliError> {
    if let Some(k) = config.kinetics()? {
        return Ok(DipolarKernel::Analytic(k));
    }
    match config.bath_sampling(t_max)? {
        Some((s, n)) => {
            let c = config.constants()?;
            let bath = sample_ensemble(&s, &c, n, derive_seed(config.seed(), &[1]))
                .map_err(|e| CliError::numeric("sampling bath", e))?;
            let ens = BathEnsemble::new(bath).map_err(|e| CliError::numeric("sampling bath", e))?;
            Ok(DipolarKernel::Bath(ens))
        }
        None => Ok(DipolarKernel::None),
    }
}

fn simulate_trace(cmd: Command, config: &ExperimentConfig) -> Result<Vec<OutputFile>, CliError> {
    let timing = config.timing();
    let values = config.scan_values();
    let seed = config.seed();
    let trace = match cmd {
        Command::SimulateEcho => {
            let tau_max = values[values.len() - 1];
            let env = sim_env(config, DipolarKernel::None, 2.0 * tau_max)?;
            scan(|tau, ph| build_echo(tau, ph, &timing), &values, &env, seed)
        }
        Command::SimulateDeer3 => {
            let tau = config.scan.as_ref().and_then(|s| s.tau_us).expect("validated") * US;
            let env = sim_env(config, kernel(config, 2.0 * tau)?, 2.0 * tau)?;
            scan(|t, ph| build_deer3(tau, t, ph, &timing), &values, &env, seed)
        }
        _ => {
            let tau = config.scan.as_ref().and_then(|s| s.tau_us).expect("validated") * US;
            let env = sim_env(config, kernel(config, 2.0 * tau)?, 4.0 * tau)?;
            scan(|t, ph| build_deer4(tau, t, ph, &timing), &values, &env, seed)
        }
    }
    .map_err(|e| CliError::numeric("simulating trace", e))?;
    let floor = config.analysis.noise_floor;
    let tomo = deer_tomography(&trace, floor).map_err(|e| CliError::numeric("tomography", e))?;
    let mut files = vec![OutputFile::new("trace.csv", trace_csv(&trace, &tomo, floor)?)];
    if config.output.plot_script {
        files.push(plot_script(
            "trace.csv",
            "scan value (s)",
            &[(6, "D_x"), (7, "D_y"), (8, "D")],
        ));
    }
    Ok(files)
}

fn require_input<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Input(format!("{flag} <path> is required")))
}

fn fit_spectrum(path: &Path) -> Result<FitReport, CliError> {
    let (f, s) = parse_spectrum_csv(&read_file(path)?, &path.display().to_string())?;
    fit_lorentzian_triplet(&f, &s, None)
        .map_err(|e| CliError::numeric(format!("fitting {}", path.display()), e))
}

fn with_hash(mut r: FitReport, hash: &str) -> FitReport {
    r.manifest_hash = Some(hash.to_string());
    r
}

fn fit_odmr(_config: &ExperimentConfig, inputs: &Inputs, hash: &str) -> Result<Vec<OutputFile>, CliError> {
    let report = fit_spectrum(require_input(&inputs.input, "--input")?)?;
    Ok(vec![OutputFile::json("fit.json", &with_hash(report, hash))?])
}

#[derive(Serialize)]
struct Efficiency<'a> {
    flip_probability: Estimate,
    manifest_hash: &'a str,
}

fn holeburn(_config: &ExperimentConfig, inputs: &Inputs, hash: &str) -> Result<Vec<OutputFile>, CliError> {
    let hole = fit_spectrum(require_input(&inputs.input, "--input")?)?;
    let reference = fit_spectrum(require_input(&inputs.reference, "--reference")?)?;
    let p = holeburn_efficiency(&hole, &reference)
        .map_err(|e| CliError::numeric("hole-burn efficiency", e))?;
    Ok(vec![
        OutputFile::json("hole_fit.json", &with_hash(hole, hash))?,
        OutputFile::json("reference_fit.json", &with_hash(reference, hash))?,
        OutputFile::json(
            "efficiency.json",
            &Efficiency {
                flip_probability: p,
                manifest_hash: hash,
            },
        )?,
    ])
}

#[derive(Debug, Serialize)]
pub struct DecayFits {
    pub kind: String,
    pub exponential: FitReport,
    pub complex: Option<FitReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub complex_error: Option<String>,
}

/// Exponential fit of the normalized magnitude and joint fit of magnitude
/// and phase, both against the dipolar evolution time.
pub fn fit_decay(config: &ExperimentConfig, trace: &TraceSet, tomo: &TomographyResult) -> Result<DecayFits, CliError> {
    let kind = trace
        .meta
        .kind
        .ok_or_else(|| CliError::Input("trace has no `# kind=` line".into()))?;
    let (t, y) = match kind {
        SequenceKind::Echo => {
            let norm = tomo.d[0];
            if !(norm > 0.0) {
                return Err(CliError::Input("echo magnitude at the first point is zero".into()));
            }
            (
                trace.scan_values.iter().map(|v| 2.0 * v).collect::<Vec<_>>(),
                tomo.d.iter().map(|v| v / norm).collect::<Vec<_>>(),
            )
        }
        k if k.is_deer() => {
            let tau = config
                .scan
                .as_ref()
                .and_then(|s| s.tau_us)
                .ok_or_else(|| CliError::Validation(vec!["scan.tau_us is required to fit a DEER trace".into()]))?
                * US;
            decay_trace(k, tau, &trace.scan_values, &tomo.d)
                .map_err(|e| CliError::numeric("decay trace", e))?
        }
        k => return Err(CliError::Input(format!("cannot fit a decay to a `{}` trace", k.name()))),
    };
    let sigma = tomo.d_err.as_ref().map(|e| {
        let i = tomo.d.iter().position(|&v| v != 0.0).unwrap_or(0);
        let scale = y[i] / tomo.d[i];
        e.iter().map(|v| v * scale).collect::<Vec<_>>()
    });
    let exponential = fit_exp_decay(&t, &y, sigma.as_deref())
        .map_err(|e| CliError::numeric("exponential decay fit", e))?;

    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
    let z = tomo.complex();
    let ts: Vec<f64> = order.iter().map(|&i| t[i]).collect();
    let zs: Vec<Complex64> = order.iter().map(|&i| z[i]).collect();
    let (complex, complex_error) = match fit_complex_decay(&ts, &zs, None) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(DecayFits {
        kind: kind.name().to_string(),
        exponential,
        complex,
        complex_error,
    })
}

fn load_trace(inputs: &Inputs) -> Result<(TraceSet, TomographyResult), CliError> {
    let path = require_input(&inputs.input, "--input")?;
    parse_trace_csv(&read_file(path)?, &path.display().to_string())
}

fn fit_decay_cmd(config: &ExperimentConfig, inputs: &Inputs, hash: &str) -> Result<Vec<OutputFile>, CliError> {
    let (trace, tomo) = load_trace(inputs)?;
    let mut fits = fit_decay(config, &trace, &tomo)?;
    fits.exponential.manifest_hash = Some(hash.to_string());
    if let Some(c) = &mut fits.complex {
        c.manifest_hash = Some(hash.to_string());
    }
    Ok(vec![OutputFile::json("decay_fit.json", &fits)?])
}

#[derive(Debug, Serialize)]
pub struct ConcentrationEstimate {
    pub k_cm3_per_s: f64,
    pub concentration_per_cm3: Estimate,
    pub concentration_ppb: Estimate,
}

#[derive(Debug, Serialize)]
pub struct ConcentrationReport {
    pub rate_per_s: Estimate,
    pub flip_probability: f64,
    pub theoretical: ConcentrationEstimate,
    pub empirical: ConcentrationEstimate,
    pub empirical_rate_per_ppb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_fit: Option<FitReport>,
    pub manifest_hash: String,
}

/// `C = rate / (p_B k)` for a given k, in cm⁻³ and ppb.
pub fn concentration(rate: Estimate, p: f64, k: f64, config: &ExperimentConfig) -> Result<ConcentrationEstimate, CliError> {
    let c = config.constants()?;
    let per_cm3 = Estimate {
        value: rate.value / (p * k),
        uncertainty: rate.uncertainty / (p * k),
    };
    Ok(ConcentrationEstimate {
        k_cm3_per_s: k,
        concentration_per_cm3: per_cm3,
        concentration_ppb: Estimate {
            value: density_to_ppb(per_cm3.value, &c),
            uncertainty: density_to_ppb(per_cm3.uncertainty, &c),
        },
    })
}

fn analyze(config: &ExperimentConfig, inputs: &Inputs, hash: &str) -> Result<Vec<OutputFile>, CliError> {
    let p = config.flip_probability().expect("validated");
    let (rate, decay_fit) = match (inputs.rate, &inputs.input) {
        (Some(_), Some(_)) => {
            return Err(CliError::Input("give either --rate or --input, not both".into()))
        }
        (Some(r), None) => {
            let err = inputs.rate_err.unwrap_or(0.0);
            if !(r >= 0.0 && r.is_finite()) || !(err >= 0.0) {
                return Err(CliError::Input(format!("bad rate {r} ± {err}")));
            }
            (Estimate { value: r, uncertainty: err }, None)
        }
        (None, Some(_)) => {
            let (trace, tomo) = load_trace(inputs)?;
            let fits = fit_decay(config, &trace, &tomo)?;
            let p = fits
                .exponential
                .param("rate")
                .map_err(|e| CliError::numeric("decay fit", e))?;
            let rate = Estimate {
                value: p.value,
                uncertainty: p.uncertainty,
            };
            let mut rep = fits.exponential;
            rep.manifest_hash = Some(hash.to_string());
            (rate, Some(rep))
        }
        (None, None) => return Err(CliError::Input("--rate or --input is required".into())),
    };
    let c = config.constants()?;
    let k_theory = config
        .kinetics
        .as_ref()
        .and_then(|k| k.k_cm3_per_s)
        .unwrap_or_else(|| compute_k(&c));
    let k_emp = rate_per_ppb_to_k(config.analysis.empirical_rate_per_ppb, &c);
    let report = ConcentrationReport {
        rate_per_s: rate,
        flip_probability: p,
        theoretical: concentration(rate, p, k_theory, config)?,
        empirical: concentration(rate, p, k_emp, config)?,
        empirical_rate_per_ppb: config.analysis.empirical_rate_per_ppb,
        decay_fit,
        manifest_hash: hash.to_string(),
    };
    Ok(vec![OutputFile::json("concentration.json", &report)?])
}

#[derive(Serialize)]
struct McFits {
    realizations: usize,
    expected_rate_per_s: f64,
    exponential: Option<FitReport>,
    complex: Option<FitReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    errors: Vec<String>,
}

fn mc_bath(config: &ExperimentConfig, hash: &str) -> Result<Vec<OutputFile>, CliError> {
    let times = config.scan_values();
    let t_max = times[times.len() - 1];
    let (s, n) = config.bath_sampling(t_max)?.expect("validated");
    let c = config.constants()?;
    let trace = mc_deer_trace(&s, &times, n, config.seed(), &c)
        .map_err(|e| CliError::numeric("Monte-Carlo bath", e))?;
    let re: Vec<f64> = trace.mean.iter().map(|z| z.re).collect();
    let im: Vec<f64> = trace.mean.iter().map(|z| z.im).collect();
    let mag = trace.magnitude();
    let mag_err = trace.magnitude_err();
    let csv = write_table(
        &[("kind", "mc-bath".to_string()), ("realizations", n.to_string())],
        &["t_s", "re", "im", "err_re", "err_im", "magnitude", "magnitude_err"],
        &[&times, &re, &im, &trace.std_err_re, &trace.std_err_im, &mag, &mag_err],
    )?;
    let mut errors = Vec::new();
    let mut keep = |r: Result<FitReport, nvdeer::fit::FitError>, what: &str| match r {
        Ok(mut r) => {
            r.manifest_hash = Some(hash.to_string());
            Some(r)
        }
        Err(e) => {
            errors.push(format!("{what}: {e}"));
            None
        }
    };
    let exponential = keep(fit_exp_decay(&times, &mag, None), "exponential");
    let complex = keep(fit_complex_decay(&times, &trace.mean, None), "complex");
    let fits = McFits {
        realizations: n,
        expected_rate_per_s: s.concentration * s.flip_probability * compute_k(&c) * s.kernel_scale.abs(),
        exponential,
        complex,
        errors,
    };
    let mut files = vec![
        OutputFile::new("mc.csv", csv),
        OutputFile::json("mc_fit.json", &fits)?,
    ];
    if config.output.plot_script {
        files.push(plot_script("mc.csv", "T (s)", &[(2, "Re"), (3, "Im"), (6, "|D|")]));
    }
    Ok(files)
}
