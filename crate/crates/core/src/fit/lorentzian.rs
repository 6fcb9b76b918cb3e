//! Hyperfine triplet of Lorentzian dips with a shared width, and the
//! hole-burning efficiency built from two such fits.

use nalgebra::DMatrix;

use super::lm::{least_squares_solve, Model, SolverOptions};
use super::{check_lengths, Estimate, FitError, FitReport};

const NAMES: [(&str, &str); 8] = [
    ("baseline", "a.u."),
    ("amplitude_1", "a.u.*Hz"),
    ("amplitude_2", "a.u.*Hz"),
    ("amplitude_3", "a.u.*Hz"),
    ("center_1", "Hz"),
    ("center_2", "Hz"),
    ("center_3", "Hz"),
    ("gamma", "Hz"),
];

/// Starting point of a triplet fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletInit {
    pub baseline: f64,
    pub amplitudes: [f64; 3],
    pub centers: [f64; 3],
    pub gamma: f64,
}

impl TripletInit {
    fn to_vec(self) -> Vec<f64> {
        let mut v = vec![self.baseline];
        v.extend(self.amplitudes);
        v.extend(self.centers);
        v.push(self.gamma);
        v
    }

    /// Seeds a fit from an earlier triplet report.
    pub fn from_report(r: &FitReport) -> Result<Self, FitError> {
        let get = |n: &str| r.value(n);
        Ok(TripletInit {
            baseline: get("baseline")?,
            amplitudes: [get("amplitude_1")?, get("amplitude_2")?, get("amplitude_3")?],
            centers: [get("center_1")?, get("center_2")?, get("center_3")?],
            gamma: get("gamma")?,
        })
    }
}

/// `L(f) = L₀ − Σ γA_i / ((f − f_i)² + γ²)`.
pub fn lorentzian_triplet(f: f64, p: &TripletInit) -> f64 {
    p.baseline
        - (0..3)
            .map(|i| {
                let d = f - p.centers[i];
                p.gamma * p.amplitudes[i] / (d * d + p.gamma * p.gamma)
            })
            .sum::<f64>()
}

/// Data mapped to `x = (f − center)/scale`, which keeps the normal
/// equations well conditioned for GHz frequencies and MHz widths.
struct Triplet<'a> {
    x: Vec<f64>,
    y: &'a [f64],
}

impl Model for Triplet<'_> {
    fn residual_count(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let init = TripletInit {
            baseline: p[0],
            amplitudes: [p[1], p[2], p[3]],
            centers: [p[4], p[5], p[6]],
            gamma: p[7],
        };
        for (i, &x) in self.x.iter().enumerate() {
            out[i] = lorentzian_triplet(x, &init) - self.y[i];
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let g = p[7];
        for (row, &x) in self.x.iter().enumerate() {
            jac[(row, 0)] = 1.0;
            let mut dg = 0.0;
            for i in 0..3 {
                let a = p[1 + i];
                let d = x - p[4 + i];
                let den = d * d + g * g;
                jac[(row, 1 + i)] = -g / den;
                jac[(row, 4 + i)] = -2.0 * g * a * d / (den * den);
                dg -= a * (d * d - g * g) / (den * den);
            }
            jac[(row, 7)] = dg;
        }
    }
}

fn smooth(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            y[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((s.len() - 1) as f64 * q).round() as usize;
    s[idx]
}

/// Centres from the three deepest local minima of the smoothed spectrum,
/// width from the half-depth width of the deepest.
pub fn initial_triplet_guess(freqs: &[f64], signal: &[f64]) -> Result<TripletInit, FitError> {
    check_lengths(freqs, signal, 10)?;
    let s = smooth(signal);
    let n = s.len();
    let baseline = percentile(signal, 0.75);
    let mut minima: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || s[i] <= s[i - 1]) && (i == n - 1 || s[i] <= s[i + 1]))
        .collect();
    minima.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
    // two minima belong to the same dip unless the spectrum between them
    // rises by a tenth of the shallower depth
    let same_dip = |p: usize, q: usize| {
        let (a, b) = (p.min(q), p.max(q));
        let floor = s[a].max(s[b]);
        let ridge = s[a..=b].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ridge - floor < 0.1 * (baseline - floor)
    };
    let mut picked: Vec<usize> = Vec::new();
    for i in minima {
        if picked.iter().all(|&j| i.abs_diff(j) > 1 && !same_dip(j, i)) {
            picked.push(i);
        }
        if picked.len() == 3 {
            break;
        }
    }
    if picked.len() < 3 && n >= 5 {
        // a weak line on the tail of a strong one is a shoulder, not a
        // minimum; it still shows up as a local peak of the curvature
        let curv: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 || i == n - 1 {
                    0.0
                } else {
                    s[i - 1] - 2.0 * s[i] + s[i + 1]
                }
            })
            .collect();
        let mut peaks: Vec<usize> = (2..n - 2)
            .filter(|&i| curv[i] >= curv[i - 1] && curv[i] >= curv[i + 1])
            .filter(|&i| s[i] < baseline)
            .collect();
        peaks.sort_by(|&a, &b| curv[b].total_cmp(&curv[a]).then(a.cmp(&b)));
        for i in peaks {
            if picked.iter().all(|&j| i.abs_diff(j) > 2) {
                picked.push(i);
            }
            if picked.len() == 3 {
                break;
            }
        }
    }
    if picked.len() < 3 {
        return Err(FitError::BadInit(format!(
            "found {} local minima, need 3",
            picked.len()
        )));
    }
    let span = freqs[n - 1] - freqs[0];
    // widths in order of depth; overlap only ever widens a dip, so the
    // deepest one gives the best estimate
    let mut widths = Vec::new();
    for &i in &picked {
        let depth = baseline - s[i];
        if depth <= 0.0 {
            continue;
        }
        let half = baseline - 0.5 * depth;
        let cross = |step: isize| -> Option<f64> {
            let mut j = i as isize;
            while j + step >= 0 && ((j + step) as usize) < n {
                let k = (j + step) as usize;
                if s[k] >= half {
                    let (a, b) = (s[j as usize], s[k]);
                    let t = (half - a) / (b - a);
                    return Some(freqs[j as usize] + t * (freqs[k] - freqs[j as usize]));
                }
                j += step;
            }
            None
        };
        if let (Some(l), Some(r)) = (cross(-1), cross(1)) {
            widths.push(0.5 * (r - l).abs());
        }
    }
    let gamma = widths.first().copied().unwrap_or(span.abs() / 20.0);
    picked.sort_unstable();
    let mut amplitudes = [0.0; 3];
    let mut centers = [0.0; 3];
    for (k, &i) in picked.iter().enumerate() {
        amplitudes[k] = (baseline - s[i]).max(0.0) * gamma;
        centers[k] = freqs[i];
    }
    Ok(TripletInit {
        baseline,
        amplitudes,
        centers,
        gamma,
    })
}

/// Fits the triplet model to an ODMR spectrum. Without `init` the
/// deterministic local-minimum guess is used.
pub fn fit_lorentzian_triplet(
    freqs: &[f64],
    signal: &[f64],
    init: Option<&TripletInit>,
) -> Result<FitReport, FitError> {
    check_lengths(freqs, signal, 10)?;
    let init = match init {
        Some(i) => *i,
        None => initial_triplet_guess(freqs, signal)?,
    };
    let (fmin, fmax) = freqs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &f| (a.min(f), b.max(f)));
    if let Some(c) = init.centers.iter().find(|&&c| !(fmin..=fmax).contains(&c)) {
        return Err(FitError::BadInit(format!(
            "initial centre {c:e} Hz outside the data span [{fmin:e}, {fmax:e}]"
        )));
    }
    if !(fmax > fmin) {
        return Err(FitError::BadInit("zero frequency span".into()));
    }
    if !(init.gamma > 0.0) {
        return Err(FitError::BadInit("initial width must be > 0".into()));
    }
    let mid = 0.5 * (fmin + fmax);
    let scale = 0.5 * (fmax - fmin);
    let model = Triplet {
        x: freqs.iter().map(|f| (f - mid) / scale).collect(),
        y: signal,
    };
    let mut p0 = init.to_vec();
    for v in &mut p0[1..4] {
        *v /= scale;
    }
    for v in &mut p0[4..7] {
        *v = (*v - mid) / scale;
    }
    p0[7] /= scale;

    let mut rep = least_squares_solve(
        &model,
        &p0,
        &NAMES,
        "lorentzian_triplet",
        &SolverOptions::default(),
    )?;
    // back to Hz
    let factor = [1.0, scale, scale, scale, scale, scale, scale, scale];
    for (j, p) in rep.params.iter_mut().enumerate() {
        p.value *= factor[j];
        p.uncertainty *= factor[j];
        if (4..7).contains(&j) {
            p.value += mid;
        }
    }
    for (i, row) in rep.covariance.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= factor[i] * factor[j];
        }
    }
    rep.require_converged()
}

fn amplitude_sum(r: &FitReport) -> Result<(f64, f64), FitError> {
    let idx: Vec<usize> = (1..=3)
        .map(|i| {
            let n = format!("amplitude_{i}");
            r.index(&n).ok_or(FitError::MissingParam(n))
        })
        .collect::<Result<_, _>>()?;
    let sum = idx.iter().map(|&i| r.params[i].value).sum();
    let var = idx
        .iter()
        .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
        .map(|(i, j)| r.covariance[i][j])
        .sum::<f64>();
    Ok((sum, var))
}

/// Fraction of the whole NV population flipped by the pump,
/// `p_B = ¼(1 − ΣA_i/ΣB_i)`, from a hole-burnt (`A`) and a reference (`B`)
/// triplet fit. The two fits are treated as independent.
pub fn holeburn_efficiency(hole: &FitReport, reference: &FitReport) -> Result<Estimate, FitError> {
    if !hole.converged {
        return Err(FitError::NotConverged("hole".into()));
    }
    if !reference.converged {
        return Err(FitError::NotConverged("reference".into()));
    }
    let (sa, va) = amplitude_sum(hole)?;
    let (sb, vb) = amplitude_sum(reference)?;
    if !(sb > 0.0) {
        return Err(FitError::DivisionDegenerate(format!(
            "reference amplitude sum {sb:e} must be > 0"
        )));
    }
    let value = 0.25 * (1.0 - sa / sb);
    let da = -0.25 / sb;
    let db = 0.25 * sa / (sb * sb);
    let var = da * da * va.max(0.0) + db * db * vb.max(0.0);
    Ok(Estimate {
        value,
        uncertainty: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::Termination;
    use approx::assert_relative_eq;

    fn truth() -> TripletInit {
        TripletInit {
            baseline: 1.0,
            amplitudes: [3e3, 3.3e3, 2.8e3],
            centers: [2.8755e9, 2.8777e9, 2.8798e9],
            gamma: 0.5e6,
        }
    }

    fn grid() -> Vec<f64> {
        (0..200).map(|i| 2.870e9 + i as f64 * 0.06e6).collect()
    }

    #[test]
    fn noiseless_round_trip() {
        let t = truth();
        let f = grid();
        let y: Vec<f64> = f.iter().map(|&x| lorentzian_triplet(x, &t)).collect();
        let rep = fit_lorentzian_triplet(&f, &y, None).unwrap();
        let want = t.to_vec();
        for (p, w) in rep.params.iter().zip(&want) {
            assert_relative_eq!(p.value, *w, max_relative = 1e-6);
        }
    }

    #[test]
    fn shoulders_are_found_by_curvature() {
        let t = TripletInit {
            baseline: 1.0,
            amplitudes: [8e3, 100e3, 8e3],
            centers: [2.8755e9, 2.8777e9, 2.8799e9],
            gamma: 1.1e6,
        };
        let f = grid();
        let y: Vec<f64> = f.iter().map(|&x| lorentzian_triplet(x, &t)).collect();
        let local_minima = (1..y.len() - 1)
            .filter(|&i| y[i] <= y[i - 1] && y[i] <= y[i + 1])
            .count();
        assert_eq!(local_minima, 1);
        let init = initial_triplet_guess(&f, &y).unwrap();
        for (c, w) in init.centers.iter().zip(t.centers) {
            assert!((c - w).abs() < t.gamma, "{c} vs {w}");
        }
        let rep = fit_lorentzian_triplet(&f, &y, Some(&init)).unwrap();
        for (p, w) in rep.params.iter().zip(t.to_vec()) {
            assert_relative_eq!(p.value, w, max_relative = 1e-6);
        }
    }

    #[test]
    fn bad_init_outside_span() {
        let f = grid();
        let y: Vec<f64> = f.iter().map(|&x| lorentzian_triplet(x, &truth())).collect();
        let mut init = truth();
        init.centers[0] = 2.0e9;
        assert!(matches!(
            fit_lorentzian_triplet(&f, &y, Some(&init)),
            Err(FitError::BadInit(_))
        ));
    }

    #[test]
    fn too_few_points() {
        let f = grid()[..9].to_vec();
        let y = vec![1.0; 9];
        assert!(matches!(
            fit_lorentzian_triplet(&f, &y, None),
            Err(FitError::InsufficientData { .. })
        ));
    }

    #[test]
    fn flat_spectrum_is_flagged() {
        let f = grid();
        let y = vec![1.0; f.len()];
        match fit_lorentzian_triplet(&f, &y, None) {
            Err(FitError::NoConvergence { .. })
            | Err(FitError::SingularNormalEquations)
            | Err(FitError::BadInit(_)) => {}
            Ok(rep) => {
                for i in 1..=3 {
                    let a = rep.param(&format!("amplitude_{i}")).unwrap();
                    assert!(a.value.abs() < 1e-9 || a.uncertainty > a.value.abs());
                }
                assert!(rep.converged || rep.termination == Termination::MaxIterations);
            }
            Err(e) => panic!("unexpected {e}"),
        }
    }

    fn report_with_sum(sum: f64) -> FitReport {
        let f = grid();
        let mut t = truth();
        t.amplitudes = [sum / 3.0; 3];
        let y: Vec<f64> = f.iter().map(|&x| lorentzian_triplet(x, &t)).collect();
        fit_lorentzian_triplet(&f, &y, None).unwrap()
    }

    #[test]
    fn efficiency_examples() {
        let b = report_with_sum(9e3);
        let same = holeburn_efficiency(&b, &b).unwrap();
        assert!(same.value.abs() < 1e-12);
        let a = report_with_sum(0.32 * 9e3);
        assert_relative_eq!(holeburn_efficiency(&a, &b).unwrap().value, 0.17, max_relative = 1e-6);
        let mut empty = b.clone();
        for i in 1..=3 {
            let k = empty.index(&format!("amplitude_{i}")).unwrap();
            empty.params[k].value = 0.0;
        }
        assert_relative_eq!(holeburn_efficiency(&empty, &b).unwrap().value, 0.25);
        let mut neg = b.clone();
        for i in 1..=3 {
            let k = neg.index(&format!("amplitude_{i}")).unwrap();
            neg.params[k].value = 0.0;
        }
        assert!(matches!(
            holeburn_efficiency(&b, &neg),
            Err(FitError::DivisionDegenerate(_))
        ));
    }
}
