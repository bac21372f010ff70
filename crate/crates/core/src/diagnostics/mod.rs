//! Turning trajectories and spectra into quantitative verdicts.

mod suite;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, validation, Error, Result};
use crate::evolution::{evolve, monitor_h, EvolveControls, FlowMode, Trajectory};
use crate::geometry::{l2_norm, BoundaryField};
use crate::numerics::fit_line;
use crate::spectrum::{project_modes, LinearizedSpectrum};
use crate::stationary::{ProblemSpec, Regime};


pub use suite::{random_growth_datum, verify_suite, SuiteReport, Verdict, SUITE_SEED};

/// Per-step slack allowed for monotone functionals, relative to 1 + |value|.
pub const MONOTONE_SLACK: f64 = 1e-8;

/// Monotonicity verdict for a scalar series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
    pub passed: bool,
    /// Index (into `increments`) of the first step that rose above the slack.
    pub first_violation: Option<usize>,
    /// max over steps of increment/(1 + |value|).
    pub worst_relative_increase: f64,
}

/// Checks that every increment is at most `slack`·(1 + |value|).
pub fn check_nonincreasing(values: &[f64], slack: f64) -> MonotoneReport {
    let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let mut first_violation = None;
    let mut worst = f64::NEG_INFINITY;
    for (i, d) in increments.iter().enumerate() {
        let rel = d / (1.0 + values[i].abs());
        worst = worst.max(rel);
        if rel > slack && first_violation.is_none() {
            first_violation = Some(i);
        }
    }
    MonotoneReport {
        values: values.to_vec(),
        increments,
        passed: first_violation.is_none(),
        first_violation,
        worst_relative_increase: if worst.is_finite() { worst } else { 0.0 },
    }
}

/// G along a normalized trajectory.
pub fn lyapunov_series(traj: &Trajectory) -> Result<MonotoneReport> {
    if traj.mode != FlowMode::Normalized {
        return Err(validation("G is a Lyapunov functional only for normalized trajectories"));
    }
    Ok(check_nonincreasing(&traj.series(|d| d.g), MONOTONE_SLACK))
}

/// Dirichlet quotient I along any trajectory.
pub fn quotient_series(traj: &Trajectory) -> MonotoneReport {
    check_nonincreasing(&traj.series(|d| d.i), MONOTONE_SLACK)
}

/// Sign check on the nonuniform second differences of Z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    /// +1 when Z must be convex, −1 when concave.
    pub expected_sign: f64,
    /// Most adverse signed second difference (≥ 0 is good for convex).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Z'' ≥ 0 for p > 1 and Z'' ≤ 0 for p < 1, from physical samples.
pub fn z_convexity(traj: &Trajectory, tolerance: f64) -> Result<ConvexityReport> {
    if traj.mode != FlowMode::Physical {
        return Err(validation("Z convexity is a property of physical trajectories"));
    }
    let sign = if traj.p > 1.0 { 1.0 } else { -1.0 };
    let t = &traj.times;
    let z = traj.series(|d| d.z);
    let mut worst = f64::INFINITY;
    for i in 1..t.len().saturating_sub(1) {
        let h0 = t[i] - t[i - 1];
        let h1 = t[i + 1] - t[i];
        let d2 = ((z[i + 1] - z[i]) / h1 - (z[i] - z[i - 1]) / h0) * 0.5 * (h0 + h1);
        worst = worst.min(sign * d2);
    }
    if !worst.is_finite() {
        worst = 0.0;
    }
    Ok(ConvexityReport {
        expected_sign: sign,
        worst: sign * worst,
        tolerance,
        passed: worst >= -tolerance,
    })
}

/// One-sided comparison bound on H = u^{−p}(Bu + au).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HBoundReport {
    /// min(min H(0), 0) for p > 1, max(max H(0), 0) for p < 1.
    pub bound: f64,
    /// Most adverse extreme of H over stored samples.
    pub worst: f64,
    pub passed: bool,
}

pub fn h_bound_report(traj: &Trajectory, spec: &ProblemSpec, tolerance: f64) -> Result<HBoundReport> {
    let lower = spec.p() > 1.0;
    let mut bound = 0.0;
    let mut worst = 0.0;
    for (i, u) in traj.fields.iter().enumerate() {
        let h = monitor_h(u, spec)?;
        let extreme = if lower { h.min() } else { h.max() };
        if i == 0 {
            bound = if lower { extreme.min(0.0) } else { extreme.max(0.0) };
            worst = extreme;
        } else if lower {
            worst = f64::min(worst, extreme);
        } else {
            worst = f64::max(worst, extreme);
        }
    }
    let passed = if lower {
        worst >= bound - tolerance
    } else {
        worst <= bound + tolerance
    };
    Ok(HBoundReport { bound, worst, passed })
}

/// Harnack ratios of a physical run approaching T*.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub times: Vec<f64>,
    /// max u/(T* − t)^{1/(p−1)}.
    pub r_sup: Vec<f64>,
    /// min u/(T* − t)^{1/(p−1)}.
    pub r_inf: Vec<f64>,
    /// ‖u‖_{L^{p+1}}/(T* − t)^{1/(p−1)}.
    pub norm_ratio: Vec<f64>,
    /// sup u/‖u‖_{L¹} per slice.
    pub elliptic_sup: Vec<f64>,
    /// inf u/‖u‖_{L¹} per slice.
    pub elliptic_inf: Vec<f64>,
    /// Smallest C with all r_sup, r_inf in [1/C, C].
    pub c_emp: f64,
    /// Smallest C with all elliptic ratios in [1/C, C]·(their first value).
    pub elliptic_c: f64,
}

/// Ratios over samples with 0 < t ≤ 0.95·T*.
pub fn harnack_report(traj: &Trajectory, tstar: Option<f64>, spec: &ProblemSpec) -> Result<HarnackReport> {
    let tstar = tstar.ok_or_else(|| validation("Harnack ratios need an estimate of T*"))?;
    if traj.mode != FlowMode::Physical || spec.regime() != Regime::ExtinctionOrBlowup {
        return Err(validation("Harnack ratios need a physical extinction or blow-up run"));
    }
    let p = spec.p();
    let e = 1.0 / (p - 1.0);
    let curve = spec.curve();
    let mut rep = HarnackReport {
        times: Vec::new(),
        r_sup: Vec::new(),
        r_inf: Vec::new(),
        norm_ratio: Vec::new(),
        elliptic_sup: Vec::new(),
        elliptic_inf: Vec::new(),
        c_emp: 1.0,
        elliptic_c: 1.0,
    };
    for (t, u) in traj.times.iter().zip(&traj.fields) {
        if *t <= 0.0 || *t > 0.95 * tstar {
            continue;
        }
        let b = (tstar - t).powf(e);
        let lp: f64 = u
            .iter()
            .zip(curve.weights())
            .map(|(v, w)| v.powf(p + 1.0) * w)
            .sum::<f64>()
            .powf(1.0 / (p + 1.0));
        let l1: f64 = u.iter().zip(curve.weights()).map(|(v, w)| v.abs() * w).sum();
        rep.times.push(*t);
        rep.r_sup.push(u.max() / b);
        rep.r_inf.push(u.min() / b);
        rep.norm_ratio.push(lp / b);
        rep.elliptic_sup.push(u.max() / l1);
        rep.elliptic_inf.push(u.min() / l1);
    }
    let spread = |xs: &[f64]| xs.iter().map(|x| x.max(1.0 / x)).fold(1.0, f64::max);
    rep.c_emp = spread(&rep.r_sup).max(spread(&rep.r_inf));
    let rel = |xs: &[f64]| -> f64 {
        match xs.first() {
            Some(&x0) => spread(&xs.iter().map(|x| x / x0).collect::<Vec<_>>()),
            None => 1.0,
        }
    };
    rep.elliptic_c = rel(&rep.elliptic_sup).max(rel(&rep.elliptic_inf));
    Ok(rep)
}

/// Outcome of the exponential-versus-algebraic decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateModel {
    Exponential,
    Algebraic,
    Undetermined,
}

/// Samples with ‖h‖ below this are excluded from rate fits.
pub const NORM_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub model: RateModel,
    pub gamma_fit: Option<f64>,
    pub algebraic_exponent: Option<f64>,
    pub window: (f64, f64),
    pub samples: usize,
    /// rms residual of log‖h‖ against τ.
    pub rms_exponential: f64,
    /// rms residual of log‖h‖ against log τ.
    pub rms_algebraic: f64,
    /// rms of the selected model (the smaller of the two when undetermined).
    pub rms: f64,
    pub gamma_p_reference: f64,
    pub agreement: Option<f64>,
    pub note: Option<String>,
}

/// Classifies the decay of ‖h(τ)‖ over the trailing `window_fraction` of
/// the τ-range.
pub fn fit_rate_series(
    taus: &[f64],
    norms: &[f64],
    reference_norm: f64,
    gamma_p: f64,
    window_fraction: f64,
) -> Result<RateReport> {
    check_len(taus.len(), norms.len())?;
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(validation("window fraction must lie in (0, 1]"));
    }
    let usable: Vec<(f64, f64)> = taus
        .iter()
        .zip(norms)
        .filter(|(t, h)| **t > 0.0 && **h >= NORM_FLOOR)
        .map(|(t, h)| (*t, *h))
        .collect();
    let (first, last) = match (usable.first(), usable.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => {
            return Err(Error::InsufficientSamples {
                needed: 20,
                available: 0,
            })
        }
    };
    let start = last - window_fraction * (last - first);
    let window: Vec<(f64, f64)> = usable.into_iter().filter(|(t, _)| *t >= start).collect();
    if window.len() < 20 {
        return Err(Error::InsufficientSamples {
            needed: 20,
            available: window.len(),
        });
    }
    let ts: Vec<f64> = window.iter().map(|w| w.0).collect();
    let logs: Vec<f64> = window.iter().map(|w| w.1.ln()).collect();
    let log_ts: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let exp_fit = fit_line(&ts, &logs)?;
    let alg_fit = fit_line(&log_ts, &logs)?;
    let mut report = RateReport {
        model: RateModel::Undetermined,
        gamma_fit: None,
        algebraic_exponent: None,
        window: (ts[0], ts[ts.len() - 1]),
        samples: ts.len(),
        rms_exponential: exp_fit.rms,
        rms_algebraic: alg_fit.rms,
        rms: exp_fit.rms.min(alg_fit.rms),
        gamma_p_reference: gamma_p,
        agreement: None,
        note: None,
    };
    if window[0].1 >= 0.1 * reference_norm {
        report.note = Some(format!(
            "deviation {:e} at window start is not below 10% of the steady-state norm {:e}",
            window[0].1, reference_norm
        ));
        return Ok(report);
    }
    if exp_fit.rms <= 0.05 && exp_fit.slope < 0.0 && exp_fit.rms <= 0.8 * alg_fit.rms {
        let gamma = -exp_fit.slope;
        report.model = RateModel::Exponential;
        report.gamma_fit = Some(gamma);
        report.rms = exp_fit.rms;
        if gamma_p > 0.0 {
            report.agreement = Some((gamma - gamma_p).abs() / gamma_p);
        }
    } else if (-1.3..=-0.7).contains(&alg_fit.slope) && alg_fit.rms <= 0.8 * exp_fit.rms {
        report.model = RateModel::Algebraic;
        report.algebraic_exponent = Some(alg_fit.slope);
        report.rms = alg_fit.rms;
    }
    Ok(report)
}

/// ‖w(τ) − φ‖_{L²(dS)} along a normalized trajectory.
pub fn deviation_norms(traj: &Trajectory, phi: &[f64], spec: &ProblemSpec) -> Result<Vec<f64>> {
    let curve = spec.curve();
    traj.fields
        .iter()
        .map(|w| {
            check_len(phi.len(), w.len())?;
            let h: Vec<f64> = w.iter().zip(phi).map(|(a, b)| a - b).collect();
            Ok(l2_norm(curve, &h))
        })
        .collect()
}

/// Rate fit of ‖w − φ‖ along a normalized trajectory.
pub fn fit_rate(
    traj: &Trajectory,
    phi: &[f64],
    spec: &ProblemSpec,
    gamma_p: f64,
    window_fraction: f64,
) -> Result<RateReport> {
    if traj.mode != FlowMode::Normalized {
        return Err(validation("rates are fitted on normalized trajectories"));
    }
    let norms = deviation_norms(traj, phi, spec)?;
    fit_rate_series(&traj.times, &norms, l2_norm(spec.curve(), phi), gamma_p, window_fraction)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCoefficient {
    /// One-based mode index.
    pub index: usize,
    pub mu: f64,
    /// Limit of y_i(τ)e^{μ_i τ/p}, read at the end of the tail.
    pub c: f64,
    /// Total variation of y_i(τ)e^{μ_i τ/p} over the tail.
    pub total_variation: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub tail: (f64, f64),
    pub modes: Vec<ModeCoefficient>,
    pub remainder_times: Vec<f64>,
    /// ‖h − Σ C_i e^{−μ_i τ/p} e_i‖ in the weighted norm.
    pub remainder: Vec<f64>,
    /// ‖h‖ in the weighted norm at the same times.
    pub deviation: Vec<f64>,
    /// Fitted exponential decay rate of the remainder.
    pub remainder_rate: f64,
    /// 1.5·γ_p.
    pub required_rate: f64,
    pub cauchy_passed: bool,
    pub remainder_passed: bool,
}

/// Extracts the leading stable coefficients C_i for modes with
/// μ_i/p < 2γ_p from samples with τ in `tail`.
///
/// The Cauchy check applies to modes whose |C_i| is at least 1e-3 of the
/// largest coefficient; smaller ones are reported but not judged.
pub fn mode_expansion(
    traj: &Trajectory,
    spectrum: &LinearizedSpectrum,
    tail: (f64, f64),
) -> Result<ExpansionReport> {
    if traj.mode != FlowMode::Normalized {
        return Err(validation("mode expansion needs a normalized trajectory"));
    }
    let p = spectrum.p;
    let gamma = spectrum.gamma_p();
    let first = spectrum.counts.k - 1;
    let stable: Vec<usize> = (first..spectrum.mu.len())
        .take_while(|&i| spectrum.mu[i] / p < 2.0 * gamma)
        .collect();
    let idx: Vec<usize> = traj
        .times
        .iter()
        .enumerate()
        .filter(|(_, t)| **t >= tail.0 && **t <= tail.1)
        .map(|(i, _)| i)
        .collect();
    if idx.len() < 5 {
        return Err(Error::InsufficientSamples {
            needed: 5,
            available: idx.len(),
        });
    }
    let up_to = stable.last().map_or(first + 1, |i| i + 1);
    let hs: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            traj.fields[i]
                .iter()
                .zip(spectrum.phi.iter())
                .map(|(w, f)| w - f)
                .collect()
        })
        .collect();
    let ys: Vec<Vec<f64>> = hs
        .iter()
        .map(|h| project_modes(h, spectrum, up_to))
        .collect::<Result<_>>()?;

    let mut modes = Vec::new();
    for &m in &stable {
        let rate = spectrum.mu[m] / p;
        let scaled: Vec<f64> = idx
            .iter()
            .zip(&ys)
            .map(|(&i, y)| y[m] * (rate * traj.times[i]).exp())
            .collect();
        let c = *scaled.last().expect("tail is not empty");
        let tv: f64 = scaled.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        modes.push(ModeCoefficient {
            index: m + 1,
            mu: spectrum.mu[m],
            c,
            total_variation: tv,
            passed: tv <= 0.1 * c.abs(),
        });
    }
    let cmax = modes.iter().map(|m| m.c.abs()).fold(0.0, f64::max);
    let cauchy_passed = modes
        .iter()
        .filter(|m| m.c.abs() >= 1e-3 * cmax && cmax > 0.0)
        .all(|m| m.passed);

    let mut remainder_times = Vec::new();
    let mut remainder = Vec::new();
    let mut deviation = Vec::new();
    for (&i, h) in idx.iter().zip(&hs) {
        let tau = traj.times[i];
        let mut r = h.clone();
        for mc in &modes {
            let e = &spectrum.modes[mc.index - 1];
            let amp = mc.c * (-mc.mu / p * tau).exp();
            for (rv, ev) in r.iter_mut().zip(e.iter()) {
                *rv -= amp * ev;
            }
        }
        remainder_times.push(tau);
        remainder.push(spectrum.norm(&r));
        deviation.push(spectrum.norm(h));
    }
    let logs: Vec<(f64, f64)> = remainder_times
        .iter()
        .zip(&remainder)
        .filter(|(_, r)| **r > 0.0)
        .map(|(t, r)| (*t, r.ln()))
        .collect();
    let remainder_rate = if logs.len() >= 3 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = logs.into_iter().unzip();
        -fit_line(&xs, &ys)?.slope
    } else {
        f64::INFINITY
    };
    Ok(ExpansionReport {
        tail,
        modes,
        remainder_times,
        remainder,
        deviation,
        remainder_rate,
        required_rate: 1.5 * gamma,
        cauchy_passed,
        remainder_passed: remainder_rate >= 1.5 * gamma,
    })
}

/// Bookkeeping of the shooting used to stay on the stable manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootingReport {
    /// Coefficient added along e₁.
    pub alpha: f64,
    pub iterations: usize,
    /// y₁ at the final sample of the accepted run.
    pub final_projection: f64,
}

#[derive(Clone, Debug)]
pub struct NormalizedRun {
    pub trajectory: Trajectory,
    pub shooting: Option<ShootingReport>,
}

/// Runs the normalized flow from `w0`.
///
/// When φ has one unstable direction e₁ (the extinction and blow-up
/// regimes) the run would drift away from φ, so the coefficient of e₁ in
/// the initial datum is adjusted by secant iteration until y₁ vanishes at
/// the horizon. More than one unstable direction is not supported.
pub fn normalized_run(
    spec: &ProblemSpec,
    spectrum: &LinearizedSpectrum,
    w0: &BoundaryField,
    horizon: f64,
    controls: &EvolveControls,
) -> Result<NormalizedRun> {
    match spectrum.counts.unstable {
        0 => Ok(NormalizedRun {
            trajectory: evolve(spec, w0, FlowMode::Normalized, horizon, controls)?,
            shooting: None,
        }),
        1 => shoot(spec, spectrum, w0, horizon, controls),
        m => Err(Error::Unsupported(format!(
            "normalized runs with {m} unstable directions are not supported"
        ))),
    }
}

fn shoot(
    spec: &ProblemSpec,
    spectrum: &LinearizedSpectrum,
    w0: &BoundaryField,
    horizon: f64,
    controls: &EvolveControls,
) -> Result<NormalizedRun> {
    let e1 = &spectrum.modes[0];
    let growth = -spectrum.mu[0] / spectrum.p;
    let run = |alpha: f64, h: f64| -> Result<(Trajectory, f64)> {
        let start = w0.axpy(alpha, e1);
        if !start.is_positive() {
            return Err(Error::PositivityLost(format!(
                "shooting correction {alpha:e} makes the initial datum nonpositive"
            )));
        }
        let traj = evolve(spec, &start, FlowMode::Normalized, h, controls)?;
        let h_end: Vec<f64> = traj
            .final_field()
            .iter()
            .zip(spectrum.phi.iter())
            .map(|(w, f)| w - f)
            .collect();
        let y1 = spectrum.inner(&h_end, e1);
        Ok((traj, y1))
    };

    // Lengthen the horizon gradually so that early guesses cannot drift far.
    let mut stages = Vec::new();
    let mut h = horizon.min(2.0 / growth.max(1e-3));
    while h < horizon {
        stages.push(h);
        h *= 2.0;
    }
    stages.push(horizon);

    let mut alpha = 0.0;
    let mut iterations = 0;
    let mut last = None;
    for &h in &stages {
        let amp = (growth * h).exp();
        let (mut traj, mut g) = run(alpha, h)?;
        iterations += 1;
        let mut a_prev = alpha;
        let mut g_prev = g;
        alpha -= g / amp;
        for _ in 0..12 {
            let (t, gv) = run(alpha, h)?;
            iterations += 1;
            traj = t;
            g = gv;
            let tol = 1e-15 * amp * (1.0 + alpha.abs());
            if g.abs() <= tol || g == g_prev {
                break;
            }
            let slope = (g - g_prev) / (alpha - a_prev);
            a_prev = alpha;
            g_prev = g;
            if !(slope.is_finite() && slope != 0.0) {
                break;
            }
            let next = alpha - g / slope;
            if (next - alpha).abs() <= 1e-16 * (1.0 + alpha.abs()) {
                break;
            }
            alpha = next;
        }
        last = Some((traj, g));
    }
    let (trajectory, g) = last.expect("at least one shooting stage");
    Ok(NormalizedRun {
        trajectory,
        shooting: Some(ShootingReport {
            alpha,
            iterations,
            final_projection: g,
        }),
    })
}

/// Normalized run at fixed steps dt and dt/2 combined by Richardson
/// extrapolation at the shared sample times.
pub fn extrapolated_normalized_run(
    spec: &ProblemSpec,
    spectrum: &LinearizedSpectrum,
    w0: &BoundaryField,
    horizon: f64,
    dt: f64,
    sample_interval: f64,
) -> Result<NormalizedRun> {
    let coarse_controls = EvolveControls {
        fixed_dt: Some(dt),
        sample_interval: Some(sample_interval),
        ..EvolveControls::default()
    };
    let fine_controls = EvolveControls {
        fixed_dt: Some(0.5 * dt),
        ..coarse_controls.clone()
    };
    let coarse = normalized_run(spec, spectrum, w0, horizon, &coarse_controls)?;
    let fine = normalized_run(spec, spectrum, w0, horizon, &fine_controls)?;
    Ok(NormalizedRun {
        trajectory: crate::evolution::richardson(&coarse.trajectory, &fine.trajectory, spec)?,
        shooting: fine.shooting,
    })
}
