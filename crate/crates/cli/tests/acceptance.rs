//! Acceptance criteria 1 to 10. Each test prints one PASS/FAIL line to the
//! real stdout (bypassing the harness capture) and then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nvdeer::bath::{
    compute_k, mc_deer_trace, ppb_to_density, rate_per_ppb_to_k, BathSampling, KineticsParams,
    PhysicalConstants, ALPHA_SPHERE,
};
use nvdeer::fit::{
    fit_complex_decay, fit_exp_decay, fit_linear, fit_lorentzian_triplet, holeburn_efficiency,
};
use nvdeer::nv::{
    larmor_revival_times, rabi_population, resonance_frequencies, upper_resonance_frequencies,
    BiasField, NvParams,
};
use nvdeer::sequence::{
    build_deer3, build_deer4, build_echo, build_holeburn, build_odmr, build_refocused_echo,
    PulsePhase, Timing,
};
use nvdeer::simulate::{scan, simulate_channel, simulate_spectrum, DipolarKernel, ReadoutParams, SimEnv, SpectralLines};
use nvdeer::spin::{degrees, phase_jump_exact, PulseParams};
use nvdeer::tomography::{deer_tomography, unwrap_phase, TraceMeta, TraceSet};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

fn report(n: u32, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance criterion {n}: {verdict} | {detail}");
    let _ = out.flush();
}

fn crosstalk() -> PulseParams {
    PulseParams::new(2.0 * PI * 1.5e6, 2.0 * PI * 49e6, 0.4e-6).unwrap()
}

fn reference_env() -> SimEnv {
    let mut env = SimEnv::ideal();
    env.kernel = DipolarKernel::Analytic(KineticsParams::from_rate(6.3e3, 0.68, 1.94e-13));
    env.crosstalk = crosstalk();
    env
}

#[test]
fn criterion_01_phase_jump() {
    let start = Instant::now();
    let want = phase_jump_exact(&crosstalk());
    let want_deg = degrees(want).abs();
    let tau = 40e-6;
    let eps = 1e-9;
    let timing = Timing::default();
    let mut offsets: Vec<f64> = (0..=80).map(|i| i as f64 * 1e-6).filter(|&t| (t - tau).abs() > 1e-7).collect();
    offsets.extend([tau - eps, tau + eps]);
    offsets.sort_by(f64::total_cmp);
    let tr = scan(|t, ph| build_deer3(tau, t, ph, &timing), &offsets, &reference_env(), 0).unwrap();
    let r = deer_tomography(&tr, 0.0).unwrap();
    let phi = unwrap_phase(&r.phi);
    let i = offsets.iter().position(|&t| t == tau + eps).unwrap();
    let step = (phi[i] - phi[i - 1]).abs();
    let elapsed = start.elapsed().as_secs_f64();
    let formula_ok = (want_deg - 6.6).abs() <= 0.05;
    let sim_ok = (step - want.abs()).abs() <= 0.05 * want.abs();
    let pass = formula_ok && sim_ok && elapsed < 1.0;
    report(
        1,
        pass,
        format!(
            "formula {want_deg:.4} deg, simulated step at T=tau {:.4} deg ({:+.2} %), {elapsed:.3} s",
            degrees(step),
            100.0 * (step / want.abs() - 1.0)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_four_pulse_immunity() {
    let start = Instant::now();
    let tau = 40e-6;
    let eps = 1e-9;
    let timing = Timing::default();
    let mut offsets: Vec<f64> = (1..160).map(|i| i as f64 * 0.5e-6).filter(|&t| (t - tau).abs() > 1e-7).collect();
    offsets.extend([tau - eps, tau + eps]);
    offsets.sort_by(f64::total_cmp);
    let tr = scan(|t, ph| build_deer4(tau, t, ph, &timing), &offsets, &reference_env(), 0).unwrap();
    let r = deer_tomography(&tr, 0.0).unwrap();
    let phi = unwrap_phase(&r.phi);
    let max_step = phi.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = degrees(max_step) < 0.2 && elapsed < 10.0;
    report(
        2,
        pass,
        format!(
            "largest adjacent phase change {:.2e} deg over {} points, {elapsed:.3} s",
            degrees(max_step),
            offsets.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_k_constant() {
    let k = compute_k(&PhysicalConstants::default());
    let ratio = k / 1.94e-13;
    let pass = (k / 1.66e-12 - 1.0).abs() <= 0.01 && (7.5..=9.5).contains(&ratio);
    report(3, pass, format!("k = {k:.4e} cm^3/s, ratio to 1.94e-13 = {ratio:.3}"));
    assert!(pass);
}

fn mc_rate(excited: f64, eps: f64, n: usize, seed: u64) -> (f64, f64, f64) {
    let c = PhysicalConstants::default();
    let p = 0.68;
    let times: Vec<f64> = (0..=20).map(|i| i as f64 * 10e-6).collect();
    let s = BathSampling::for_times(excited / p, p, eps, 200e-6, 0.01, &c);
    let tr = mc_deer_trace(&s, &times, n, seed, &c).unwrap();
    let mag = tr.magnitude();
    let exp = fit_exp_decay(&times, &mag, None).unwrap();
    let cx = fit_complex_decay(&times, &tr.mean, None).unwrap();
    (
        exp.value("rate").unwrap(),
        exp.uncertainty("rate").unwrap(),
        cx.value("ratio").unwrap(),
    )
}

#[test]
fn criterion_04_monte_carlo_closure() {
    let start = Instant::now();
    let k = compute_k(&PhysicalConstants::default());
    let (rate, err, _) = mc_rate(6.3e3 / k, 0.0, 10_000, 4);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (rate / 6.3e3 - 1.0).abs() < 0.05 && elapsed < 60.0;
    report(
        4,
        pass,
        format!(
            "fitted rate {rate:.1} +/- {err:.1} 1/s vs 6300 ({:+.2} %), 1e4 realizations, {elapsed:.2} s",
            100.0 * (rate / 6.3e3 - 1.0)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_out_of_phase_slope() {
    let start = Instant::now();
    let k = compute_k(&PhysicalConstants::default());
    let (_, _, ratio) = mc_rate(6.3e3 / k, 0.8, 100_000, 5);
    let want = 0.8 * ALPHA_SPHERE;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (ratio / want - 1.0).abs() <= 0.2 && elapsed < 300.0;
    report(
        5,
        pass,
        format!(
            "arg slope / decay rate = {ratio:.5} vs {want:.5} ({:+.1} %), 1e5 realizations, {elapsed:.2} s",
            100.0 * (ratio / want - 1.0)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_rate_linearity() {
    let c = PhysicalConstants::default();
    let ppb = [5.0, 10.0, 20.0, 30.0, 40.0];
    let rates: Vec<f64> = ppb
        .iter()
        .enumerate()
        .map(|(i, &x)| mc_rate(ppb_to_density(x, &c), 0.0, 10_000, 60 + i as u64).0)
        .collect();
    let fit = fit_linear(&ppb, &rates, None, false).unwrap();
    let slope = fit.value("slope").unwrap();
    let ymax = rates.iter().cloned().fold(0.0, f64::max);
    let worst = ppb
        .iter()
        .zip(&rates)
        .map(|(x, y)| (y - slope * x).abs())
        .fold(0.0, f64::max);
    let k34 = rate_per_ppb_to_k(34.0, &c);
    let linear_ok = worst < 0.05 * ymax;
    let unit_ok = (k34 / 1.93e-13 - 1.0).abs() < 0.01;
    let pass = linear_ok && unit_ok;
    report(
        6,
        pass,
        format!(
            "slope {slope:.2} 1/s per ppb, worst residual {:.2} % of max rate; 34 /s/ppb = {k34:.4e} cm^3/s",
            100.0 * worst / ymax
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_revival_timing() {
    let tau1 = larmor_revival_times(23.0, &NvParams::default(), 1).unwrap()[0] * 1e6;
    let pass = (tau1 - 40.6).abs() <= 0.1 && (tau1 - 41.0).abs() <= 1.0;
    report(7, pass, format!("first revival at tau = {tau1:.3} us"));
    assert!(pass);
}

#[test]
fn criterion_08_holeburn_pipeline() {
    let nv = NvParams::default();
    let field = BiasField::along_111(23.0);
    let lower = resonance_frequencies(&field, &nv);
    let upper = upper_resonance_frequencies(&field, &nv);
    // orientation 0 is the pumped B group; its upper triplet is isolated
    let b = 0;
    let pump_rabi = 2.0 * PI * 20e6;
    let mean_flip = |d: f64| {
        lower[b]
            .lines
            .iter()
            .map(|&l| {
                rabi_population(&PulseParams {
                    rabi: pump_rabi,
                    detuning: 2.0 * PI * (lower[b].center - l),
                    duration: d,
                })
            })
            .sum::<f64>()
            / 3.0
    };
    // bisect the pump length for a 68 % mean flip on the rising edge
    let (mut lo, mut hi) = (1e-9, 0.5 / 20e6);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_flip(mid) < 0.68 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let pump = PulseParams::new(pump_rabi, 0.0, 0.5 * (lo + hi)).unwrap();
    let flip = mean_flip(pump.duration);

    let lines = SpectralLines {
        probe_lines: upper.iter().flat_map(|o| o.lines).collect(),
        pump_lines: lower.iter().flat_map(|o| o.lines).collect(),
    };
    let probe = PulseParams::new(2.0 * PI * 0.3e6, 0.0, 0.5 / 0.3e6).unwrap();
    let f: Vec<f64> = (0..=440)
        .map(|i| upper[b].center - 5.5e6 + i as f64 * 0.025e6)
        .collect();
    let readout = ReadoutParams {
        noise: 2e-4,
        ..ReadoutParams::default()
    };
    let reference = simulate_spectrum(&build_odmr(&f, &probe).unwrap(), &lines, &readout, 1).unwrap();
    let hole = simulate_spectrum(
        &build_holeburn(&pump, lower[b].center, &probe, &f).unwrap(),
        &lines,
        &readout,
        2,
    )
    .unwrap();
    let ref_fit = fit_lorentzian_triplet(&f, &reference, None).unwrap();
    let hole_fit = fit_lorentzian_triplet(&f, &hole, None).unwrap();
    let p = holeburn_efficiency(&hole_fit, &ref_fit).unwrap();
    let pass = (p.value - 0.17).abs() <= 0.01;
    report(
        8,
        pass,
        format!(
            "mean B flip {:.3}, p_B = {:.4} +/- {:.4}",
            flip, p.value, p.uncertainty
        ),
    );
    assert!(pass);
}

fn verdict<E>(r: &Result<(), E>) -> &'static str {
    if r.is_ok() {
        "ok"
    } else {
        "failed"
    }
}

fn dyadic() -> impl Strategy<Value = f64> {
    (-(1i64 << 20)..(1i64 << 20)).prop_map(|k| k as f64 / 1024.0)
}

fn dyadic_trace(n: usize) -> impl Strategy<Value = TraceSet> {
    prop::collection::vec(prop::array::uniform4(dyadic()), n).prop_map(|rows| TraceSet {
        scan_values: (0..rows.len()).map(|i| i as f64).collect(),
        i_x: rows.iter().map(|r| r[0]).collect(),
        i_minus_x: rows.iter().map(|r| r[1]).collect(),
        i_y: rows.iter().map(|r| r[2]).collect(),
        i_minus_y: rows.iter().map(|r| r[3]).collect(),
        meta: TraceMeta::default(),
    })
}

fn real_trace(n: usize) -> impl Strategy<Value = TraceSet> {
    prop::collection::vec(prop::array::uniform4(-1e3..1e3f64), n).prop_map(|rows| TraceSet {
        scan_values: (0..rows.len()).map(|i| i as f64).collect(),
        i_x: rows.iter().map(|r| r[0]).collect(),
        i_minus_x: rows.iter().map(|r| r[1]).collect(),
        i_y: rows.iter().map(|r| r[2]).collect(),
        i_minus_y: rows.iter().map(|r| r[3]).collect(),
        meta: TraceMeta::default(),
    })
}

#[test]
fn criterion_09_tomography_identities() {
    let cases = 1000;
    let mut runner = TestRunner::new(Config::with_cases(cases));
    let common = runner.run(&(dyadic_trace(8), dyadic()), |(t, c)| {
        let shifted = TraceSet {
            i_x: t.i_x.iter().map(|v| v + c).collect(),
            i_minus_x: t.i_minus_x.iter().map(|v| v + c).collect(),
            i_y: t.i_y.iter().map(|v| v + c).collect(),
            i_minus_y: t.i_minus_y.iter().map(|v| v + c).collect(),
            ..t.clone()
        };
        prop_assert_eq!(deer_tomography(&t, 0.0).unwrap(), deer_tomography(&shifted, 0.0).unwrap());
        Ok(())
    });

    let mut runner = TestRunner::new(Config::with_cases(cases));
    let recon = runner.run(&real_trace(8), |t| {
        let r = deer_tomography(&t, 0.0).unwrap();
        for i in 0..r.len() {
            let scale = r.d[i].max(1.0);
            prop_assert!((r.d[i] - r.d_x[i].hypot(r.d_y[i])).abs() <= 1e-12 * scale);
            prop_assert!((r.d[i] * r.phi[i].cos() - r.d_x[i]).abs() <= 1e-12 * scale);
            prop_assert!((r.d[i] * r.phi[i].sin() - r.d_y[i]).abs() <= 1e-12 * scale);
            prop_assert!(r.phi[i] > -PI && r.phi[i] <= PI);
        }
        Ok(())
    });

    let mut runner = TestRunner::new(Config::with_cases(cases));
    let timing = Timing::default();
    let strategy = (
        5e-6..80e-6f64,
        0.01..0.99f64,
        -2e4..2e4f64,
        0.0..=1.0f64,
        prop::sample::select(PulsePhase::ALL.to_vec()),
    );
    let switched_off = runner.run(&strategy, |(tau, frac, det, eps, ph)| {
        let mut kp = KineticsParams::from_rate(6.3e3, 0.68, 1.94e-13);
        kp.flip_probability = 0.0;
        kp.polarization = eps;
        let mut env = reference_env();
        env.kernel = DipolarKernel::Analytic(kp);
        env.detuning_a = det;
        let bare = SimEnv {
            kernel: DipolarKernel::None,
            ..env.clone()
        };
        let echo = simulate_channel(&build_echo(tau, ph, &timing).unwrap(), &bare, 0).unwrap();
        let d3 = simulate_channel(&build_deer3(tau, frac * 2.0 * tau, ph, &timing).unwrap(), &env, 0).unwrap();
        prop_assert!((echo - d3).abs() <= 1e-9);
        let echo4 = simulate_channel(&build_refocused_echo(tau, ph, &timing).unwrap(), &bare, 0).unwrap();
        let d4 = simulate_channel(&build_deer4(tau, frac * 2.0 * tau, ph, &timing).unwrap(), &env, 0).unwrap();
        prop_assert!((echo4 - d4).abs() <= 1e-9);
        Ok(())
    });

    let pass = common.is_ok() && recon.is_ok() && switched_off.is_ok();
    report(
        9,
        pass,
        format!(
            "{cases} cases each: common-mode {}, D-phi reconstruction {}, p_B=0 equals echo {}",
            verdict(&common),
            verdict(&recon),
            verdict(&switched_off)
        ),
    );
    common.unwrap();
    recon.unwrap();
    switched_off.unwrap();
}

fn nvdeer(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nvdeer"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const CONFIGS: [(&str, &str); 8] = [
    (
        "deer3.json",
        r#"{"seed": 7, "env": {"readout": {"noise": 0.001}},
            "kinetics": {"rate_per_s": 6300, "flip_probability": 0.68, "k_cm3_per_s": 1.94e-13},
            "scan": {"tau_us": 100, "start_us": 0, "stop_us": 200, "points": 41}}"#,
    ),
    (
        "deer3_bath.json",
        r#"{"seed": 9, "bath": {"rate_per_s": 6300, "flip_probability": 0.68, "polarization": 0.5, "realizations": 400},
            "scan": {"tau_us": 60, "start_us": 0, "stop_us": 120, "points": 13}}"#,
    ),
    (
        "deer4.json",
        r#"{"seed": 7, "env": {"readout": {"noise": 0.001}},
            "kinetics": {"rate_per_s": 6300, "flip_probability": 0.68, "k_cm3_per_s": 1.94e-13},
            "scan": {"tau_us": 100, "start_us": 5, "stop_us": 195, "points": 39}}"#,
    ),
    (
        "echo.json",
        r#"{"seed": 3, "env": {"envelope": {"t2_us": 300, "stretch_exponent": 2, "revival_width_us": 3, "revivals": true},
            "readout": {"noise": 0.002}}, "scan": {"start_us": 2, "stop_us": 200, "points": 100}}"#,
    ),
    (
        "odmr.json",
        r#"{"seed": 1, "env": {"readout": {"noise": 0.0005}},
            "spectrum": {"start_MHz": 2759, "stop_MHz": 2770, "points": 221, "rabi_MHz": 0.3, "transition": "upper"}}"#,
    ),
    (
        "hole.json",
        r#"{"seed": 2, "env": {"readout": {"noise": 0.0005}},
            "spectrum": {"start_MHz": 2759, "stop_MHz": 2770, "points": 221, "rabi_MHz": 0.3,
                         "transition": "upper", "pump": {"rabi_MHz": 20, "duration_us": 0.02}}}"#,
    ),
    (
        "rabi.json",
        r#"{"seed": 1, "env": {"readout": {"noise": 0.001}},
            "rabi": {"rabi_MHz": 0.57, "start_us": 0.02, "stop_us": 4, "points": 100, "orientations": [0]}}"#,
    ),
    (
        "mc.json",
        r#"{"seed": 11, "bath": {"rate_per_s": 6300, "flip_probability": 0.68, "polarization": 0.8, "realizations": 3000},
            "scan": {"start_us": 0, "stop_us": 200, "points": 21},
            "analysis": {"flip_probability": 0.68}}"#,
    ),
];

#[test]
fn criterion_10_determinism() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    for (name, text) in CONFIGS {
        std::fs::write(w.join(name), text).unwrap();
    }
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("simulate-deer3", vec!["--config", "deer3.json"]),
        ("simulate-deer3", vec!["--config", "deer3_bath.json"]),
        ("simulate-deer4", vec!["--config", "deer4.json"]),
        ("simulate-echo", vec!["--config", "echo.json"]),
        ("simulate-odmr", vec!["--config", "odmr.json"]),
        ("simulate-odmr", vec!["--config", "hole.json"]),
        ("simulate-rabi", vec!["--config", "rabi.json"]),
        ("mc-bath", vec!["--config", "mc.json"]),
        ("fit-odmr", vec!["--seed", "0", "--input", "ref/spectrum.csv"]),
        (
            "holeburn-efficiency",
            vec!["--seed", "0", "--input", "hole/spectrum.csv", "--reference", "ref/spectrum.csv"],
        ),
        ("fit-decay", vec!["--config", "deer3.json", "--input", "d3/trace.csv"]),
        ("analyze-concentration", vec!["--config", "deer3.json", "--input", "d3/trace.csv", "--seed", "5"]),
    ];
    // inputs for the fit commands
    for (cfg, out) in [("odmr.json", "ref"), ("hole.json", "hole")] {
        assert!(nvdeer(&["simulate-odmr", "--config", cfg, "--out", out], w).status.success());
    }
    assert!(nvdeer(&["simulate-deer3", "--config", "deer3.json", "--out", "d3"], w).status.success());

    let mut failures = Vec::new();
    for (i, (cmd, args)) in runs.iter().enumerate() {
        let mut results = Vec::new();
        for (j, threads) in [None, Some("1"), Some("4"), Some("4")].into_iter().enumerate() {
            let out = format!("run_{i}_{j}");
            let mut a: Vec<&str> = vec![cmd];
            a.extend(args.iter().copied());
            a.extend(["--out", &out]);
            if let Some(t) = threads {
                a.extend(["--threads", t]);
            }
            let o = nvdeer(&a, w);
            if !o.status.success() {
                failures.push(format!("{cmd} failed: {}", String::from_utf8_lossy(&o.stderr)));
                break;
            }
            results.push(dir_bytes(&w.join(&out)));
        }
        if results.windows(2).any(|p| p[0] != p[1]) {
            failures.push(format!("{cmd} {args:?} differs between runs"));
        }
    }
    let pass = failures.is_empty();
    report(
        10,
        pass,
        if pass {
            format!("{} invocations over all 10 subcommands byte-identical across runs and --threads 1/4/default", runs.len())
        } else {
            failures.join("; ")
        },
    );
    assert!(pass, "{failures:?}");
}

/// Measured values that a simulation cannot reproduce. Printed for
/// reference only.
#[test]
fn documented_fixtures() {
    let mut out = std::io::stdout().lock();
    let jump = degrees(phase_jump_exact(&crosstalk())).abs();
    let _ = writeln!(
        out,
        "fixture (not gated): measured jump 4 deg vs formula {jump:.2} deg; measured angle-slope ratio 0.43 vs alpha {ALPHA_SPHERE}; echo amplitude 0.023 V"
    );
}
