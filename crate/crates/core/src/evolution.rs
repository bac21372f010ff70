//! Time stepping of the physical flow `∂_t u^p = −Bu − au` and of the
//! normalized flow `∂_τ w^p = −Bw − aw + s w^p`.
//!
//! The stepped unknown is `v = u^p`. Each step is a backward-Euler solve by
//! damped Newton; step sizes come from step doubling.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, validation, Error, Result};
use crate::geometry::{inner, integrate_boundary, BoundaryField};
use crate::numerics::{fit_line, LuFactors};
use crate::stationary::{energy_ep, energy_g, ProblemSpec, Regime};

/// Smallest admissible initial value.
pub const MIN_INITIAL_VALUE: f64 = 1e-12;

/// Smallest step before the integrator gives up.
pub const MIN_STEP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    Physical,
    Normalized,
}

/// A positive field together with its p-th power.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub time: f64,
    pub field: BoundaryField,
    pub v: BoundaryField,
    pub dt_last: f64,
}

impl FlowState {
    pub fn new(time: f64, field: BoundaryField, p: f64) -> Result<Self> {
        if let Some(i) = field.iter().position(|&u| !(u >= MIN_INITIAL_VALUE) || !u.is_finite()) {
            return Err(validation(format!(
                "state must be positive and at least {MIN_INITIAL_VALUE:e}; node {i} holds {}",
                field[i]
            )));
        }
        let v = field.map(|u| u.powf(p));
        Ok(FlowState {
            time,
            field,
            v,
            dt_last: 0.0,
        })
    }

    fn from_v(time: f64, v: BoundaryField, p: f64, dt: f64) -> Self {
        FlowState {
            time,
            field: v.map(|x| x.powf(1.0 / p)),
            v,
            dt_last: dt,
        }
    }
}

struct Solved {
    v: Vec<f64>,
    mass_defect: f64,
}

const NEWTON_MAX_ITERATIONS: usize = 30;

fn source_factor(spec: &ProblemSpec, mode: FlowMode) -> f64 {
    match mode {
        FlowMode::Physical => 0.0,
        FlowMode::Normalized => spec.source_coefficient(),
    }
}

/// Backward-Euler update v_new = v_old − dt[(B + a)v_new^{1/p} − σ v_new].
fn backward_euler(spec: &ProblemSpec, mode: FlowMode, v_old: &[f64], dt: f64) -> Result<Solved> {
    let n = v_old.len();
    let p = spec.p();
    let sigma = source_factor(spec, mode);
    let lin = spec.linear_matrix();
    let residual = |v: &[f64]| -> Vec<f64> {
        let u: Vec<f64> = v.iter().map(|x| x.powf(1.0 / p)).collect();
        let lu = lin.mul_vec(&u);
        (0..n)
            .map(|i| v[i] - v_old[i] + dt * (lu[i] - sigma * v[i]))
            .collect()
    };
    let norm = |r: &[f64]| r.iter().fold(0.0_f64, |m, x| m.max(x.abs()));

    let mut v = v_old.to_vec();
    let mut r = residual(&v);
    let mut rn = norm(&r);
    let mut iterations = 0;
    loop {
        let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if rn <= 1e-15 * scale {
            break;
        }
        if iterations == NEWTON_MAX_ITERATIONS {
            if rn <= 1e-11 * scale {
                break;
            }
            return Err(Error::NewtonStagnation {
                iterations,
                residual: rn,
            });
        }
        iterations += 1;
        let mut jac = lin.clone();
        for j in 0..n {
            let d = dt * v[j].powf(1.0 / p - 1.0) / p;
            for i in 0..n {
                jac[(i, j)] *= d;
            }
        }
        for i in 0..n {
            jac[(i, i)] += 1.0 - dt * sigma;
        }
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let delta = LuFactors::new(&jac)?.solve(&rhs)?;
        let mut alpha = 1.0;
        let mut next = None;
        while alpha >= 1.0 / 1024.0 {
            let trial: Vec<f64> = v.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
            if trial.iter().all(|&x| x > 0.0) {
                let rt = residual(&trial);
                let nt = norm(&rt);
                if nt < (1.0 - 1e-4 * alpha) * rn || (alpha == 1.0 && nt <= 4.0 * f64::EPSILON * scale) {
                    next = Some((trial, rt, nt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match next {
            Some((trial, rt, nt)) => {
                v = trial;
                r = rt;
                rn = nt;
            }
            None => {
                if rn <= 1e-11 * scale {
                    break;
                }
                let positive = v.iter().zip(&delta).all(|(a, d)| a + d / 1024.0 > 0.0);
                return Err(if positive {
                    Error::NewtonStagnation {
                        iterations,
                        residual: rn,
                    }
                } else {
                    Error::PositivityLost(format!("no positive Newton step at dt = {dt:e}"))
                });
            }
        }
    }

    let u: Vec<f64> = v.iter().map(|x| x.powf(1.0 / p)).collect();
    let curve = spec.curve();
    let phi1 = spec.phi1();
    let m_old = inner(curve, v_old, phi1);
    let m_new = inner(curve, &v, phi1);
    let flux = spec.lambda1() * inner(curve, &u, phi1);
    let mass_defect = ((m_new - m_old) / dt + flux - sigma * m_new).abs() / (1.0 + m_new.abs());
    Ok(Solved { v, mass_defect })
}

/// One backward-Euler step of size `dt`.
pub fn step(state: &FlowState, spec: &ProblemSpec, mode: FlowMode, dt: f64) -> Result<FlowState> {
    check_len(spec.n(), state.v.len())?;
    if !(dt > 0.0) {
        return Err(validation(format!("time step must be positive (got {dt})")));
    }
    let s = backward_euler(spec, mode, &state.v, dt)?;
    Ok(FlowState::from_v(
        state.time + dt,
        BoundaryField::new(s.v),
        spec.p(),
        dt,
    ))
}

/// Integrator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolveControls {
    /// Relative tolerance of the step-doubling error estimate.
    pub rtol: f64,
    pub dt_initial: f64,
    pub dt_max: f64,
    /// Constant step size; disables error control.
    pub fixed_dt: Option<f64>,
    /// Keep every `store_stride`-th accepted step.
    pub store_stride: usize,
    /// Store exactly at multiples of this interval instead of by stride.
    pub sample_interval: Option<f64>,
    /// Extinction halt: min u below `floor_factor`·(initial min).
    pub floor_factor: f64,
    /// Blow-up halt: max u above `ceiling_factor`·(initial max).
    pub ceiling_factor: f64,
}

impl Default for EvolveControls {
    fn default() -> Self {
        EvolveControls {
            rtol: 1e-8,
            dt_initial: 1e-4,
            dt_max: f64::INFINITY,
            fixed_dt: None,
            store_stride: 1,
            sample_interval: None,
            floor_factor: 1e-3,
            ceiling_factor: 1e3,
        }
    }
}

impl EvolveControls {
    pub fn fixed(dt: f64) -> Self {
        EvolveControls {
            fixed_dt: Some(dt),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) {
            return Err(validation("rtol must be positive"));
        }
        if !(self.dt_initial > 0.0) || !(self.dt_max > 0.0) {
            return Err(validation("time steps must be positive"));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0) {
                return Err(validation("fixed_dt must be positive"));
            }
        }
        if let Some(h) = self.sample_interval {
            if !(h > 0.0) {
                return Err(validation("sample_interval must be positive"));
            }
        }
        if self.store_stride == 0 {
            return Err(validation("store_stride must be at least 1"));
        }
        if !(self.floor_factor > 0.0 && self.floor_factor < 1.0) {
            return Err(validation("floor_factor must lie in (0, 1)"));
        }
        if !(self.ceiling_factor > 1.0) {
            return Err(validation("ceiling_factor must exceed 1"));
        }
        Ok(())
    }
}

/// Functionals recorded with every stored sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    /// Lyapunov energy G.
    pub g: f64,
    /// Dirichlet quotient I = E_p.
    pub i: f64,
    /// Z = (∫u^{p+1})^{(p−1)/(p+1)}.
    pub z: f64,
    pub min: f64,
    pub max: f64,
    /// M₁ = ∫u^p φ₁ dS.
    pub mass: f64,
}

pub fn sample_diagnostics(field: &[f64], spec: &ProblemSpec) -> Result<SampleDiagnostics> {
    let p = spec.p();
    let pw: Vec<f64> = field.iter().map(|u| u.powf(p + 1.0)).collect();
    let z = integrate_boundary(spec.curve(), &pw)?.powf((p - 1.0) / (p + 1.0));
    Ok(SampleDiagnostics {
        g: energy_g(field, spec)?,
        i: energy_ep(field, spec)?,
        z,
        min: field.iter().cloned().fold(f64::INFINITY, f64::min),
        max: field.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mass: spec.mass(field),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Horizon,
    /// Minimum fell below the extinction floor.
    Floor,
    /// Maximum rose above the blow-up ceiling.
    Ceiling,
}

/// Stored samples of one run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub mode: FlowMode,
    pub p: f64,
    pub regime: Regime,
    pub times: Vec<f64>,
    pub fields: Vec<BoundaryField>,
    pub diagnostics: Vec<SampleDiagnostics>,
    pub tstar_estimate: Option<f64>,
    pub halt: HaltReason,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Largest per-step defect of the discrete mass law, relative to 1 + |M₁|.
    pub max_mass_defect: f64,
}

impl Trajectory {
    fn start(spec: &ProblemSpec, mode: FlowMode) -> Self {
        Trajectory {
            mode,
            p: spec.p(),
            regime: spec.regime(),
            times: Vec::new(),
            fields: Vec::new(),
            diagnostics: Vec::new(),
            tstar_estimate: None,
            halt: HaltReason::Horizon,
            accepted_steps: 0,
            rejected_steps: 0,
            max_mass_defect: 0.0,
        }
    }

    fn push(&mut self, time: f64, field: BoundaryField, spec: &ProblemSpec) -> Result<()> {
        self.diagnostics.push(sample_diagnostics(&field, spec)?);
        self.times.push(time);
        self.fields.push(field);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has samples")
    }

    pub fn final_field(&self) -> &BoundaryField {
        self.fields.last().expect("trajectory has samples")
    }

    pub fn series(&self, f: impl Fn(&SampleDiagnostics) -> f64) -> Vec<f64> {
        self.diagnostics.iter().map(f).collect()
    }

    /// Index of the sample at time `t`, if stored.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * (1.0 + t.abs());
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// CSV with columns time, Z, G, I, min, max, M1 and the nodal values.
    pub fn write_csv<W: Write>(&self, mut out: W, preamble: Option<&str>) -> std::io::Result<()> {
        if let Some(text) = preamble {
            writeln!(out, "# {text}")?;
        }
        let n = self.fields.first().map_or(0, |f| f.len());
        write!(out, "time,Z,G,I,min,max,M1")?;
        for i in 0..n {
            write!(out, ",u{i}")?;
        }
        writeln!(out)?;
        for ((t, d), f) in self.times.iter().zip(&self.diagnostics).zip(&self.fields) {
            write!(out, "{t:?},{:?},{:?},{:?},{:?},{:?},{:?}", d.z, d.g, d.i, d.min, d.max, d.mass)?;
            for v in f.iter() {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Integrates from `u0` until `horizon` or a singularity halt.
pub fn evolve(
    spec: &ProblemSpec,
    u0: &BoundaryField,
    mode: FlowMode,
    horizon: f64,
    controls: &EvolveControls,
) -> Result<Trajectory> {
    controls.validate()?;
    check_len(spec.n(), u0.len())?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(validation(format!("horizon must be positive (got {horizon})")));
    }
    let p = spec.p();
    let mut state = FlowState::new(0.0, u0.clone(), p)?;
    let mut traj = Trajectory::start(spec, mode);
    traj.push(0.0, u0.clone(), spec)?;

    let watch = (mode == FlowMode::Physical && spec.regime() == Regime::ExtinctionOrBlowup)
        .then(|| if p > 1.0 { HaltReason::Floor } else { HaltReason::Ceiling });
    let floor = controls.floor_factor * u0.min();
    let ceiling = controls.ceiling_factor * u0.max();

    let mut dt = controls.fixed_dt.unwrap_or(controls.dt_initial).min(controls.dt_max);
    let mut since_store = 0usize;
    let mut next_output = controls.sample_interval;
    let end_tol = 1e-12 * horizon.max(1.0);

    while state.time < horizon - end_tol {
        let target = next_output.unwrap_or(horizon).min(horizon);
        let remaining = target - state.time;
        let clipped = dt >= remaining;
        let dt_try = if clipped { remaining } else { dt };

        let outcome = match controls.fixed_dt {
            Some(_) => fixed_substeps(spec, mode, &state.v, dt_try, 0).map(|(v, m)| (v, m, None)),
            None => doubled_step(spec, mode, &state.v, dt_try).map(|(v, m, e)| (v, m, Some(e))),
        };
        let (v, mass_defect, err) = match outcome {
            Ok(x) => x,
            Err(Error::NewtonStagnation { .. }) | Err(Error::PositivityLost(_)) | Err(Error::Singular { .. })
                if controls.fixed_dt.is_none() =>
            {
                traj.rejected_steps += 1;
                dt = dt_try * 0.5;
                if dt < MIN_STEP {
                    return Err(Error::StepUnderflow { time: state.time, dt });
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some(err) = err {
            let factor = if err > 0.0 { 0.9 * (controls.rtol / err).sqrt() } else { 1.5 };
            if err > controls.rtol {
                traj.rejected_steps += 1;
                dt = dt_try * factor.clamp(0.2, 0.9);
                if dt < MIN_STEP {
                    return Err(Error::StepUnderflow { time: state.time, dt });
                }
                continue;
            }
            let grown = (dt_try * factor.clamp(0.2, 1.5)).min(controls.dt_max);
            dt = if clipped { dt.max(grown).min(controls.dt_max) } else { grown };
        }

        let new_time = if clipped { target } else { state.time + dt_try };
        state = FlowState::from_v(new_time, BoundaryField::new(v), p, dt_try);
        traj.accepted_steps += 1;
        traj.max_mass_defect = traj.max_mass_defect.max(mass_defect);
        since_store += 1;

        let halted = match watch {
            Some(HaltReason::Floor) if state.field.min() < floor => Some(HaltReason::Floor),
            Some(HaltReason::Ceiling) if state.field.max() > ceiling => Some(HaltReason::Ceiling),
            _ => None,
        };
        let at_output = clipped && next_output.is_some() && (target - state.time).abs() <= end_tol;
        let at_end = state.time >= horizon - end_tol;
        let store = match controls.sample_interval {
            Some(_) => at_output,
            None => since_store >= controls.store_stride,
        };
        if store || at_end || halted.is_some() {
            traj.push(state.time, state.field.clone(), spec)?;
            since_store = 0;
        }
        if at_output {
            if let (Some(h), Some(t)) = (controls.sample_interval, next_output) {
                let k = (t / h).round() + 1.0;
                next_output = Some(k * h);
            }
        }
        if let Some(reason) = halted {
            traj.halt = reason;
            break;
        }
    }
    if watch.is_some() {
        traj.tstar_estimate = estimate_tstar(&traj, TSTAR_WINDOW).ok().map(|e| e.value);
    }
    Ok(traj)
}

fn doubled_step(spec: &ProblemSpec, mode: FlowMode, v: &[f64], dt: f64) -> Result<(Vec<f64>, f64, f64)> {
    let full = backward_euler(spec, mode, v, dt)?;
    let h1 = backward_euler(spec, mode, v, 0.5 * dt)?;
    let h2 = backward_euler(spec, mode, &h1.v, 0.5 * dt)?;
    let scale = h2.v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let err = full
        .v
        .iter()
        .zip(&h2.v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale;
    Ok((h2.v, h1.mass_defect.max(h2.mass_defect), err))
}

fn fixed_substeps(spec: &ProblemSpec, mode: FlowMode, v: &[f64], dt: f64, depth: u32) -> Result<(Vec<f64>, f64)> {
    match backward_euler(spec, mode, v, dt) {
        Ok(s) => Ok((s.v, s.mass_defect)),
        Err(e) => {
            if dt * 0.5 < MIN_STEP || depth > 30 {
                return Err(e);
            }
            let (a, m1) = fixed_substeps(spec, mode, v, 0.5 * dt, depth + 1)?;
            let (b, m2) = fixed_substeps(spec, mode, &a, 0.5 * dt, depth + 1)?;
            Ok((b, m1.max(m2)))
        }
    }
}

/// Extrapolated singular time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TstarEstimate {
    /// Zero crossing of the least-squares line through the final Z window.
    pub value: f64,
    /// Zero crossing of the secant through the last two samples.
    pub secant: f64,
    /// Relative rms residual of the Z fit.
    pub relative_rms: f64,
    pub window: usize,
}

/// Default number of trailing samples used for the Z extrapolation.
pub const TSTAR_WINDOW: usize = 20;

/// Extrapolates Z(t) linearly to zero over the last `window` samples.
pub fn estimate_tstar(traj: &Trajectory, window: usize) -> Result<TstarEstimate> {
    if traj.mode != FlowMode::Physical || traj.regime != Regime::ExtinctionOrBlowup {
        return Err(validation(
            "T* is only defined for physical runs in the extinction/blow-up regime",
        ));
    }
    let len = traj.len().min(window);
    if len < 5 {
        return Err(Error::InsufficientSamples {
            needed: 5,
            available: len,
        });
    }
    let start = traj.len() - len;
    let ts = &traj.times[start..];
    let zs: Vec<f64> = traj.diagnostics[start..].iter().map(|d| d.z).collect();
    let fit = fit_line(ts, &zs)?;
    if !(fit.slope < 0.0) {
        return Err(validation("Z is not decreasing over the final window"));
    }
    let (t1, t2) = (ts[len - 2], ts[len - 1]);
    let (z1, z2) = (zs[len - 2], zs[len - 1]);
    let secant = t2 - z2 * (t2 - t1) / (z2 - z1);
    let zmax = zs.iter().cloned().fold(0.0, f64::max);
    Ok(TstarEstimate {
        value: -fit.intercept / fit.slope,
        secant,
        relative_rms: fit.rms / zmax,
        window: len,
    })
}

/// Maps a physical trajectory to normalized variables w = u/b(t), τ(t).
pub fn rescale_trajectory(traj: &Trajectory, tstar: Option<f64>, spec: &ProblemSpec) -> Result<Trajectory> {
    if traj.mode != FlowMode::Physical {
        return Err(validation("only physical trajectories can be rescaled"));
    }
    let e = 1.0 / (spec.p() - 1.0);
    let map = |t: f64| -> Result<(f64, f64)> {
        match spec.regime() {
            Regime::Growth => Ok(((1.0 + t).ln(), (1.0 + t).powf(e))),
            Regime::Neutral => Ok((t, 1.0)),
            Regime::ExtinctionOrBlowup => {
                let ts = tstar.ok_or_else(|| validation("rescaling needs T*"))?;
                if t >= ts {
                    return Err(validation(format!("sample at t = {t} is not before T* = {ts}")));
                }
                Ok(((ts / (ts - t)).ln(), (ts - t).powf(e)))
            }
        }
    };
    let mut out = Trajectory::start(spec, FlowMode::Normalized);
    out.halt = traj.halt;
    out.accepted_steps = traj.accepted_steps;
    out.rejected_steps = traj.rejected_steps;
    out.tstar_estimate = tstar;
    for (t, u) in traj.times.iter().zip(&traj.fields) {
        let (tau, b) = map(*t)?;
        out.push(tau, u.scaled(1.0 / b), spec)?;
    }
    Ok(out)
}

/// H = u^{−p}(Bu + au).
pub fn monitor_h(field: &[f64], spec: &ProblemSpec) -> Result<BoundaryField> {
    check_len(spec.n(), field.len())?;
    if field.iter().any(|&u| !(u > 0.0)) {
        return Err(validation("H is only defined for positive states"));
    }
    let lin = spec.apply_linear(field);
    Ok(BoundaryField::new(
        lin.iter()
            .zip(field)
            .map(|(l, u)| l / u.powf(spec.p()))
            .collect(),
    ))
}

/// u₀ = m + (M − m)((1 + cos θ)/2)^4: a smooth bump with minimum `m` at θ = π.
pub fn bump_profile(curve: &crate::geometry::BoundaryCurve, minimum: f64, maximum: f64) -> BoundaryField {
    curve.field(|t| minimum + (maximum - minimum) * ((1.0 + t.cos()) / 2.0).powi(4))
}

/// For each initial datum, min over stored samples with 0 < t ≤ t0 of
/// min_x u(x, t)/t^{1/p}.
pub fn infinite_speed_probe(
    spec: &ProblemSpec,
    initial: &[BoundaryField],
    t0: f64,
    controls: &EvolveControls,
) -> Result<Vec<f64>> {
    let p = spec.p();
    initial
        .iter()
        .map(|u0| {
            let traj = evolve(spec, u0, FlowMode::Physical, t0, controls)?;
            Ok(traj
                .times
                .iter()
                .zip(&traj.diagnostics)
                .filter(|(t, _)| **t > 0.0)
                .map(|(t, d)| d.min / t.powf(1.0 / p))
                .fold(f64::INFINITY, f64::min))
        })
        .collect()
}

/// Richardson combination 2·fine − coarse of two first-order runs at their
/// shared sample times.
pub fn richardson(coarse: &Trajectory, fine: &Trajectory, spec: &ProblemSpec) -> Result<Trajectory> {
    if coarse.mode != fine.mode {
        return Err(validation("cannot combine trajectories of different modes"));
    }
    let mut out = Trajectory::start(spec, fine.mode);
    out.halt = fine.halt;
    out.accepted_steps = fine.accepted_steps;
    out.max_mass_defect = fine.max_mass_defect.max(coarse.max_mass_defect);
    for (i, t) in coarse.times.iter().enumerate() {
        if let Some(j) = fine.index_of(*t) {
            let f = fine.fields[j].zip_map(&coarse.fields[i], |a, b| 2.0 * a - b);
            if !f.is_positive() {
                return Err(Error::PositivityLost(format!("extrapolated field at t = {t}")));
            }
            out.push(*t, f, spec)?;
        }
    }
    if out.len() < 2 {
        return Err(validation("trajectories share fewer than two sample times"));
    }
    Ok(out)
}

/// Largest amount by which `lower` exceeds `upper` at shared sample times.
pub fn ordering_violation(lower: &Trajectory, upper: &Trajectory) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut shared = 0;
    for (i, t) in lower.times.iter().enumerate() {
        if let Some(j) = upper.index_of(*t) {
            shared += 1;
            let d = lower.fields[i]
                .iter()
                .zip(upper.fields[j].iter())
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(d);
        }
    }
    (worst, shared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtn::build_dtn_circle;
    use approx::assert_abs_diff_eq;

    fn circle_spec(n: usize, a: f64, p: f64) -> ProblemSpec {
        let dtn = build_dtn_circle(n).unwrap();
        let a = dtn.curve().constant(a);
        ProblemSpec::new(dtn, a, p).unwrap()
    }

    #[test]
    fn normalized_fixed_point_is_stationary() {
        let spec = circle_spec(32, 1.0, 2.0);
        let phi = spec.curve().constant(0.5);
        let s = FlowState::new(0.0, phi.clone(), 2.0).unwrap();
        let next = step(&s, &spec, FlowMode::Normalized, 0.1).unwrap();
        for (a, b) in next.field.iter().zip(phi.iter()) {
            assert!((a - b).abs() <= 1e-11);
        }
    }

    #[test]
    fn rejects_tiny_initial_data() {
        let spec = circle_spec(16, 1.0, 2.0);
        let mut u0 = spec.curve().constant(1.0);
        u0.values_mut()[2] = 1e-13;
        let err = evolve(&spec, &u0, FlowMode::Physical, 1.0, &EvolveControls::default()).unwrap_err();
        assert!(err.to_string().contains("node 2"));
    }

    #[test]
    fn separable_extinction_fixed_steps() {
        // u = 0.5(1 − t): backward Euler on the scalar ODE d(u²)/dt = −u.
        let spec = circle_spec(16, 1.0, 2.0);
        let u0 = spec.curve().constant(0.5);
        let traj = evolve(&spec, &u0, FlowMode::Physical, 0.5, &EvolveControls::fixed(1e-3)).unwrap();
        assert_abs_diff_eq!(traj.final_time(), 0.5, epsilon = 1e-12);
        let err = traj.final_field()[0] - 0.25;
        // Scalar backward-Euler oracle at dt = 1e-3.
        assert_abs_diff_eq!(err, 1.73114e-4, epsilon = 2e-8);
    }

    #[test]
    fn h_monitor_examples() {
        let spec = circle_spec(16, 1.0, 2.0);
        let h = monitor_h(&spec.curve().constant(0.5), &spec).unwrap();
        assert!(h.iter().all(|v| (v - 2.0).abs() < 1e-12));
        let growth = circle_spec(16, 1.0, 0.5);
        let h = monitor_h(&growth.curve().constant(1.0), &growth).unwrap();
        assert!(h.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let neutral = circle_spec(16, 0.0, 2.0);
        let h = monitor_h(&neutral.curve().constant(3.0), &neutral).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sample_interval_lands_on_grid() {
        let spec = circle_spec(16, 1.0, 0.5);
        let u0 = spec.curve().field(|t| 1.0 + 0.2 * t.cos());
        let controls = EvolveControls {
            sample_interval: Some(0.1),
            ..EvolveControls::default()
        };
        let traj = evolve(&spec, &u0, FlowMode::Physical, 0.5, &controls).unwrap();
        assert_eq!(traj.len(), 6);
        for (k, t) in traj.times.iter().enumerate() {
            assert_abs_diff_eq!(*t, 0.1 * k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let spec = circle_spec(16, 1.0, 2.0);
        let u0 = spec.curve().constant(0.5);
        let traj = evolve(&spec, &u0, FlowMode::Normalized, 0.01, &EvolveControls::fixed(0.005)).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, Some("hash")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# hash");
        assert!(lines[1].starts_with("time,Z,G,I,min,max,M1,u0,"));
        assert_eq!(lines[1].split(',').count(), 7 + 16);
        assert_eq!(lines.len(), 2 + traj.len());
        assert_eq!(lines[2].split(',').count(), 7 + 16);
    }
}
