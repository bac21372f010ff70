//! The reference verification runs.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::*;
use crate::config::RunConfig;
use crate::dtn::{build_dtn_circle, build_dtn_general, default_charge_offset};
use crate::evolution::{bump_profile, estimate_tstar, infinite_speed_probe, ordering_violation, TSTAR_WINDOW};
use crate::geometry::{make_curve, CurveShape, FourierSeries};
use crate::spectrum::spectrum_at;
use crate::stationary::{solve_steady, SteadyState};

/// Seed of the random initial datum of the growth-rate run.
pub const SUITE_SEED: u64 = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
    pub detail: String,
    /// Wall-clock time of the criterion's own work; kept out of reports so
    /// that they stay reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl Verdict {
    fn new(id: u32, name: &str) -> Self {
        Verdict {
            id,
            name: name.into(),
            passed: true,
            measured: BTreeMap::new(),
            detail: String::new(),
            wall_seconds: 0.0,
        }
    }

    fn record(&mut self, key: impl Into<String>, value: f64) {
        self.measured.insert(key.into(), value);
    }

    /// Records `value` and fails the verdict unless `ok`.
    fn require(&mut self, key: &str, value: f64, ok: bool, what: &str) {
        self.record(key, value);
        if !ok {
            self.fail(format!("{what} ({key} = {value:e})"));
        }
    }

    fn fail(&mut self, why: impl Into<String>) {
        self.passed = false;
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(&why.into());
    }

    fn from_result(id: u32, name: &str, body: impl FnOnce(&mut Verdict) -> Result<()>) -> Self {
        let mut v = Verdict::new(id, name);
        if let Err(e) = body(&mut v) {
            v.fail(format!("error: {e}"));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config_hash: String,
    pub nodes: usize,
    pub passed: bool,
    pub verdicts: Vec<Verdict>,
}

/// Everything the criteria need from the circle of `n` nodes.
struct Setup {
    n: usize,
    rtol: f64,
    extinction: ProblemSpec,
    blowup: ProblemSpec,
    growth: ProblemSpec,
    neutral: ProblemSpec,
}

fn circle_spec(n: usize, a: f64, p: f64) -> Result<ProblemSpec> {
    let dtn = build_dtn_circle(n)?;
    let a = dtn.curve().constant(a);
    ProblemSpec::new(dtn, a, p)
}

/// A physical run with its label.
struct Run {
    label: &'static str,
    spec_is_blowup: bool,
    traj: Result<Trajectory>,
}

/// Runs the reference scenarios on the unit circle with `config.domain.n`
/// nodes and the integrator tolerance `config.time.rtol`. The operator
/// cross-validation uses 4N nodes.
///
/// Independent scenarios run in parallel; verdicts come back in criterion
/// order. Failures inside a scenario are reported as failed verdicts rather
/// than aborting the suite.
pub fn verify_suite(config: &RunConfig) -> Result<SuiteReport> {
    config.validate()?;
    let n = config.domain.n;
    let setup = Setup {
        n,
        rtol: config.time.rtol,
        extinction: circle_spec(n, 1.0, 2.0)?,
        blowup: circle_spec(n, -1.0, 0.5)?,
        growth: circle_spec(n, 1.0, 0.5)?,
        neutral: circle_spec(n, 0.0, 2.0)?,
    };
    let s = &setup;

    let jobs: Vec<Box<dyn Fn() -> Run + Send + Sync + '_>> = vec![
        Box::new(move || physical(s, "separable c=0.3", false, separable_datum(s, 0.3))),
        Box::new(move || physical(s, "separable c=1", false, separable_datum(s, 1.0))),
        Box::new(move || {
            physical(
                s,
                "generic extinction",
                false,
                Ok(s.extinction.curve().field(|t| 0.5 + 0.1 * t.cos())),
            )
        }),
        Box::new(move || physical_sampled(s, "ordered pair lower", Ok(s.extinction.curve().constant(0.4)))),
        Box::new(move || {
            physical_sampled(
                s,
                "ordered pair upper",
                Ok(s.extinction.curve().field(|t| 0.4 + 0.1 * (1.0 + t.sin()))),
            )
        }),
        Box::new(move || physical(s, "blow-up", true, Ok(s.blowup.curve().field(|t| 1.0 + 0.1 * t.cos())))),
    ];
    let runs: Vec<Run> = jobs.par_iter().map(|job| job()).collect();

    type Criterion<'a> = Box<dyn Fn() -> (Verdict, Vec<(String, Trajectory)>) + Send + Sync + 'a>;
    let runs_ref = &runs;
    let criteria: Vec<Criterion> = vec![
        Box::new(move || (crit_dtn(s), vec![])),
        Box::new(move || (crit_steady(s), vec![])),
        Box::new(move || (crit_spectrum(s), vec![])),
        Box::new(move || crit_growth_rate(s)),
        Box::new(move || crit_neutral_rate(s)),
        Box::new(move || (crit_extinction_time(s, runs_ref), vec![])),
        Box::new(|| (Verdict::new(7, "monotone functionals"), vec![])),
        Box::new(move || (crit_comparison(runs_ref), vec![])),
        Box::new(move || (crit_infinite_speed(s), vec![])),
        Box::new(move || (crit_h_bound(s, runs_ref), vec![])),
        Box::new(move || crit_expansion(s)),
        Box::new(move || (crit_temporal_order(s), vec![])),
    ];
    let mut results: Vec<(Verdict, Vec<(String, Trajectory)>)> = criteria
        .par_iter()
        .map(|c| {
            let start = Instant::now();
            let (mut v, t) = c();
            v.wall_seconds = start.elapsed().as_secs_f64();
            (v, t)
        })
        .collect();

    let mut normalized = Vec::new();
    for (_, trajs) in results.iter_mut() {
        normalized.append(trajs);
    }
    let mut verdicts: Vec<Verdict> = results.into_iter().map(|(v, _)| v).collect();
    verdicts[6] = crit_monotone(&runs, &normalized);

    Ok(SuiteReport {
        config_hash: config.hash(),
        nodes: n,
        passed: verdicts.iter().all(|v| v.passed),
        verdicts,
    })
}

fn separable_datum(s: &Setup, c: f64) -> Result<BoundaryField> {
    let steady = solve_steady(&s.extinction, None, None)?;
    Ok(steady.phi.scaled(c))
}

fn controls(s: &Setup) -> EvolveControls {
    EvolveControls {
        rtol: s.rtol,
        ..EvolveControls::default()
    }
}

fn physical(s: &Setup, label: &'static str, blowup: bool, u0: Result<BoundaryField>) -> Run {
    let spec = if blowup { &s.blowup } else { &s.extinction };
    Run {
        label,
        spec_is_blowup: blowup,
        traj: u0.and_then(|u0| evolve(spec, &u0, FlowMode::Physical, 10.0, &controls(s))),
    }
}

fn physical_sampled(s: &Setup, label: &'static str, u0: Result<BoundaryField>) -> Run {
    let c = EvolveControls {
        sample_interval: Some(1e-3),
        ..controls(s)
    };
    Run {
        label,
        spec_is_blowup: false,
        traj: u0.and_then(|u0| evolve(&s.extinction, &u0, FlowMode::Physical, 10.0, &c)),
    }
}

fn find<'a>(runs: &'a [Run], label: &str) -> Result<&'a Trajectory> {
    let run = runs.iter().find(|r| r.label == label).expect("scenario exists");
    run.traj
        .as_ref()
        .map_err(|e| Error::Validation(format!("{label} run failed: {e}")))
}

fn crit_dtn(s: &Setup) -> Verdict {
    Verdict::from_result(1, "DtN cross-validation", |v| {
        let m = 4 * s.n;
        let curve = make_curve(CurveShape::unit_circle(), m)?;
        let offset = default_charge_offset(&curve);
        let mfs = build_dtn_general(curve, offset, 1e-14)?;
        let curve = mfs.curve();
        let mut err: f64 = 0.0;
        for k in 1..=20u32 {
            for (c, sn) in [(1.0, 0.0), (0.0, 1.0)] {
                let f = FourierSeries::constant(0.0).with_mode(k, c, sn).synthesize(curve)?;
                let bf = mfs.apply(&f)?;
                for (b, x) in bf.iter().zip(f.iter()) {
                    err = err.max((b - k as f64 * x).abs());
                }
            }
        }
        v.record("nodes", m as f64);
        v.require("max_nodal_error", err, err <= 1e-6, "MFS operator differs from the multiplier");
        let r = mfs.report();
        let resolved = r.resolved_modes as f64;
        v.require("resolved_modes", resolved, r.resolved_modes > 20, "charges do not resolve every mode k ≤ 20");
        v.require("symmetry_defect", r.symmetry_defect, r.symmetry_defect <= 1e-7, "asymmetric operator");
        v.require("psd_defect", r.psd_defect, r.psd_defect <= 1e-7, "operator is not semidefinite");
        Ok(())
    })
}

fn crit_steady(s: &Setup) -> Verdict {
    Verdict::from_result(2, "steady closed forms", |v| {
        let dev = |phi: &BoundaryField, c: f64| phi.iter().map(|x| (x - c).abs()).fold(0.0, f64::max);
        let st = solve_steady(&s.extinction, None, None)?;
        v.require("p2_a1_phi_error", dev(&st.phi, 0.5), dev(&st.phi, 0.5) <= 1e-9, "φ ≠ 1/2");
        let l = (st.lambda1 - 1.0).abs();
        v.require("p2_a1_lambda1_error", l, l <= 1e-9, "λ₁ ≠ 1");
        let st = solve_steady(&s.blowup, None, None)?;
        v.require("p05_am1_phi_error", dev(&st.phi, 1.0), dev(&st.phi, 1.0) <= 1e-9, "φ ≠ 1");
        let two = s.neutral.curve().constant(2.0);
        let st = solve_steady(&s.neutral, None, Some(s.neutral.mass(&two)))?;
        v.require("neutral_phi_error", dev(&st.phi, 2.0), dev(&st.phi, 2.0) <= 1e-9, "φ ≠ 2");
        Ok(())
    })
}

fn crit_spectrum(s: &Setup) -> Verdict {
    Verdict::from_result(3, "spectrum closed forms", |v| {
        let band = s.n / 8;
        let multiset = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            let mut m: Vec<f64> = (-(band as i64)..=band as i64).map(|k| f(k.unsigned_abs() as f64)).collect();
            m.sort_by(f64::total_cmp);
            m
        };
        let check = |v: &mut Verdict, tag: &str, spec: &ProblemSpec, mass: Option<f64>, expected: Vec<f64>, counts: Option<(usize, usize, usize)>, gamma: f64| -> Result<()> {
            let st = solve_steady(spec, None, mass)?;
            let sp = spectrum_at(spec, &st)?;
            let err = expected
                .iter()
                .zip(&sp.mu)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v.require(&format!("{tag}_mu_error"), err, err <= 1e-6, "eigenvalues differ from the closed form");
            let g = (sp.gamma_p() - gamma).abs();
            v.require(&format!("{tag}_gamma_p_error"), g, g <= 1e-6, "γ_p differs");
            if let Some((i, k0, k)) = counts {
                let c = &sp.counts;
                v.record(format!("{tag}_I"), c.unstable as f64);
                v.record(format!("{tag}_K"), c.central as f64);
                v.record(format!("{tag}_k"), c.k as f64);
                if (c.unstable, c.central, c.k) != (i, k0, k) {
                    v.fail(format!("{tag}: mode counts {:?}", c));
                }
            }
            Ok(())
        };
        check(v, "p2_a1", &s.extinction, None, multiset(&|k| 2.0 * (k - 1.0)), Some((1, 2, 4)), 1.0)?;
        check(v, "p05_am1", &s.blowup, None, multiset(&|k| k - 0.5), Some((1, 0, 2)), 1.0)?;
        let one = s.neutral.curve().constant(1.0);
        check(v, "neutral", &s.neutral, Some(s.neutral.mass(&one)), multiset(&|k| k), Some((0, 1, 2)), 0.5)?;
        Ok(())
    })
}

/// Smooth random datum with values in [0.5, 2].
pub fn random_growth_datum(curve: &crate::geometry::BoundaryCurve, seed: u64) -> BoundaryField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series = FourierSeries::constant(0.0);
    for k in 1..=4u32 {
        let amp = 1.0 / k as f64;
        series = series.with_mode(k, amp * rng.gen_range(-1.0..1.0), amp * rng.gen_range(-1.0..1.0));
    }
    let f = curve.field(|t| series.eval(t));
    let (lo, hi) = (f.min(), f.max());
    let target_lo = rng.gen_range(0.5..0.8);
    let target_hi = rng.gen_range(1.5..2.0);
    f.map(|x| target_lo + (target_hi - target_lo) * (x - lo) / (hi - lo))
}

fn rate_check(
    v: &mut Verdict,
    spec: &ProblemSpec,
    steady: &SteadyState,
    w0: &BoundaryField,
    horizon: f64,
    dt: f64,
    interval: f64,
    accept: impl Fn(f64) -> bool,
) -> Result<Trajectory> {
    let sp = spectrum_at(spec, steady)?;
    let run = extrapolated_normalized_run(spec, &sp, w0, horizon, dt, interval)?;
    let rate = fit_rate(&run.trajectory, &steady.phi, spec, sp.gamma_p(), 0.5)?;
    v.record("gamma_p", sp.gamma_p());
    v.record("fit_rms", rate.rms);
    v.record("window_start", rate.window.0);
    v.record("window_end", rate.window.1);
    if rate.model != RateModel::Exponential {
        v.fail(format!("classified {:?}", rate.model));
    }
    match rate.gamma_fit {
        Some(g) => v.require("gamma_fit", g, accept(g), "fitted rate outside the accepted range"),
        None => v.fail("no exponential rate fitted"),
    }
    Ok(run.trajectory)
}

fn crit_growth_rate(s: &Setup) -> (Verdict, Vec<(String, Trajectory)>) {
    let mut out = Vec::new();
    let v = Verdict::from_result(4, "growth-regime sharp rate", |v| {
        let spec = &s.growth;
        let steady = solve_steady(spec, None, None)?;
        let w0 = random_growth_datum(spec.curve(), SUITE_SEED);
        v.record("w0_min", w0.min());
        v.record("w0_max", w0.max());
        let t = rate_check(v, spec, &steady, &w0, 15.0, 0.01, 0.1, |g| (0.95..=1.05).contains(&g))?;
        out.push(("growth normalized".to_string(), t));
        Ok(())
    });
    (v, out)
}

fn crit_neutral_rate(s: &Setup) -> (Verdict, Vec<(String, Trajectory)>) {
    let mut out = Vec::new();
    let v = Verdict::from_result(5, "neutral-regime rate", |v| {
        let spec = &s.neutral;
        let w0 = spec.curve().field(|t| (1.0 + 0.1 * t.cos()) / 1.005f64.sqrt());
        let steady = solve_steady(spec, None, Some(spec.mass(&w0)))?;
        let t = rate_check(v, spec, &steady, &w0, 40.0, 0.02, 0.2, |g| (g - 0.5).abs() <= 0.05)?;
        out.push(("neutral normalized".to_string(), t));
        Ok(())
    });
    (v, out)
}

fn crit_extinction_time(s: &Setup, runs: &[Run]) -> Verdict {
    Verdict::from_result(6, "extinction time", |v| {
        for (label, c, tag) in [("separable c=0.3", 0.3, "c03"), ("separable c=1", 1.0, "c1")] {
            let traj = find(runs, label)?;
            let est = estimate_tstar(traj, TSTAR_WINDOW)?;
            let rel = (est.value - c).abs() / c;
            v.require(&format!("{tag}_tstar_relative_error"), rel, rel <= 0.01, "T* estimate off");
            let z = traj.series(|d| d.z);
            let fit = fit_line(&traj.times, &z)?;
            let zmax = z.iter().cloned().fold(0.0, f64::max);
            let zr = fit.rms / zmax;
            v.require(&format!("{tag}_z_relative_rms"), zr, zr <= 1e-6, "Z is not linear");
            let h = harnack_report(traj, Some(est.value), &s.extinction)?;
            let lo = h.norm_ratio.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = h.norm_ratio.iter().cloned().fold(0.0, f64::max);
            let spread = hi / lo - 1.0;
            v.require(&format!("{tag}_norm_ratio_spread"), spread, spread <= 0.01, "norm ratio not constant");
            v.record(format!("{tag}_harnack_c"), h.c_emp);
        }
        let traj = find(runs, "generic extinction")?;
        let est = estimate_tstar(traj, TSTAR_WINDOW)?;
        let phi = solve_steady(&s.extinction, None, None)?.phi;
        let ratio = traj.fields[0].zip_map(&phi, |u, f| u / f);
        let e = s.extinction.p() - 1.0;
        let (s1, s2) = (ratio.min().powf(e), ratio.max().powf(e));
        v.record("generic_s1", s1);
        v.record("generic_s2", s2);
        v.require("generic_tstar", est.value, s1 <= est.value && est.value <= s2, "T* outside the separable bracket");
        let h = harnack_report(traj, Some(est.value), &s.extinction)?;
        v.record("generic_harnack_c", h.c_emp);
        v.record("generic_elliptic_c", h.elliptic_c);
        Ok(())
    })
}

fn crit_monotone(runs: &[Run], normalized: &[(String, Trajectory)]) -> Verdict {
    Verdict::from_result(7, "monotone functionals", |v| {
        let mut worst_g: f64 = f64::NEG_INFINITY;
        let mut worst_i: f64 = f64::NEG_INFINITY;
        let mut worst_z: f64 = f64::INFINITY;
        for (label, traj) in normalized {
            let g = lyapunov_series(traj)?;
            worst_g = worst_g.max(g.worst_relative_increase);
            if let Some(i) = g.first_violation {
                v.fail(format!("{label}: G increases at sample {}", i + 1));
            }
            let q = quotient_series(traj);
            worst_i = worst_i.max(q.worst_relative_increase);
            if let Some(i) = q.first_violation {
                v.fail(format!("{label}: I increases at sample {}", i + 1));
            }
        }
        for run in runs {
            let traj = match &run.traj {
                Ok(t) => t,
                Err(e) => {
                    v.fail(format!("{} run failed: {e}", run.label));
                    continue;
                }
            };
            let q = quotient_series(traj);
            worst_i = worst_i.max(q.worst_relative_increase);
            if let Some(i) = q.first_violation {
                v.fail(format!("{}: I increases at sample {}", run.label, i + 1));
            }
            let z = z_convexity(traj, 1e-7)?;
            worst_z = worst_z.min(z.worst * z.expected_sign);
            if !z.passed {
                v.fail(format!("{}: Z second difference {:e} has the wrong sign", run.label, z.worst));
            }
        }
        v.record("trajectories", (runs.len() + normalized.len()) as f64);
        v.record("worst_g_increase", worst_g);
        v.record("worst_i_increase", worst_i);
        v.record("worst_z_second_difference", worst_z);
        Ok(())
    })
}

fn crit_comparison(runs: &[Run]) -> Verdict {
    Verdict::from_result(8, "comparison principle", |v| {
        let lower = find(runs, "ordered pair lower")?;
        let upper = find(runs, "ordered pair upper")?;
        let (worst, shared) = ordering_violation(lower, upper);
        v.record("shared_samples", shared as f64);
        v.require("max_violation", worst, worst <= 1e-10, "ordering lost");
        if shared < 100 {
            v.fail(format!("only {shared} shared samples"));
        }
        Ok(())
    })
}

fn crit_infinite_speed(s: &Setup) -> Verdict {
    Verdict::from_result(9, "infinite speed of propagation", |v| {
        let t0 = 0.1;
        let c = EvolveControls {
            dt_max: t0 / 200.0,
            ..controls(s)
        };
        let curve = s.extinction.curve();
        let data = vec![bump_profile(curve, 1e-4, 1.0), bump_profile(curve, 1e-6, 1.0)];
        let eps = infinite_speed_probe(&s.extinction, &data, t0, &c)?;
        v.record("eps_min_1e-4", eps[0]);
        v.record("eps_min_1e-6", eps[1]);
        let ratio = eps[0].max(eps[1]) / eps[0].min(eps[1]);
        let ok = eps.iter().all(|e| *e > 0.0) && ratio <= 2.0;
        v.require("ratio", ratio, ok, "lower bounds differ by more than a factor 2");
        Ok(())
    })
}

fn crit_h_bound(s: &Setup, runs: &[Run]) -> Verdict {
    Verdict::from_result(10, "H bound", |v| {
        for run in runs {
            let traj = find(runs, run.label)?;
            let spec = if run.spec_is_blowup { &s.blowup } else { &s.extinction };
            let h = h_bound_report(traj, spec, 1e-7)?;
            let margin = if run.spec_is_blowup { h.bound - h.worst } else { h.worst - h.bound };
            v.record(format!("{}_margin", run.label), margin);
            if !h.passed {
                v.fail(format!("{}: extreme H {:e} beyond bound {:e}", run.label, h.worst, h.bound));
            }
        }
        Ok(())
    })
}

fn crit_expansion(s: &Setup) -> (Verdict, Vec<(String, Trajectory)>) {
    let mut out = Vec::new();
    let v = Verdict::from_result(11, "mode expansion", |v| {
        let spec = &s.blowup;
        let steady = solve_steady(spec, None, None)?;
        let sp = spectrum_at(spec, &steady)?;
        let w0 = steady.phi.axpy(0.01, &sp.modes[1]);
        let run = extrapolated_normalized_run(spec, &sp, &w0, 6.0, 2e-3, 0.05)?;
        if let Some(sh) = &run.shooting {
            v.record("shooting_alpha", sh.alpha);
        }
        let e = mode_expansion(&run.trajectory, &sp, (2.5, 5.5))?;
        let m2 = e
            .modes
            .iter()
            .find(|m| m.index == 2)
            .ok_or_else(|| validation("mode 2 is not in the expansion band"))?;
        v.record("c2", m2.c);
        let rel = m2.total_variation / m2.c.abs();
        v.require("c2_relative_variation", rel, rel <= 0.1, "y₂e^{μ₂τ/p} is not settling");
        v.record("required_rate", e.required_rate);
        v.require("remainder_rate", e.remainder_rate, e.remainder_passed, "remainder decays too slowly");
        out.push(("mode expansion normalized".to_string(), run.trajectory));
        Ok(())
    });
    (v, out)
}

fn crit_temporal_order(s: &Setup) -> Verdict {
    Verdict::from_result(12, "temporal order", |v| {
        let spec = &s.extinction;
        let u0 = separable_datum(s, 1.0)?;
        let exact = u0.scaled(0.5);
        let mut errors = Vec::new();
        for dt in [4e-3, 2e-3, 1e-3] {
            let traj = evolve(spec, &u0, FlowMode::Physical, 0.5, &EvolveControls::fixed(dt))?;
            let err = traj
                .final_field()
                .iter()
                .zip(exact.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v.record(format!("error_dt_{dt:e}"), err);
            errors.push(err);
        }
        for (i, w) in errors.windows(2).enumerate() {
            let r = w[0] / w[1];
            v.require(&format!("ratio_{}", i + 1), r, (1.7..=2.3).contains(&r), "error ratio outside [1.7, 2.3]");
        }
        Ok(())
    })
}
