//! Command implementations behind the `bdflow` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use bdflow_core::diagnostics::{fit_rate, lyapunov_series, mode_expansion, normalized_run, RateModel};
use bdflow_core::evolution::{estimate_tstar, ordering_violation, TSTAR_WINDOW};
use bdflow_core::geometry::l2_norm;
use bdflow_core::spectrum::{project_modes, spectrum_at};
use bdflow_core::stationary::estimate_yp;
use bdflow_core::{evolve, solve_steady, verify_suite, Error, FlowMode, ProblemSpec, Regime, RunConfig, SteadyState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Caps the worker threads used by `verify`.
pub const THREADS_ENV: &str = "BDFLOW_THREADS";

#[derive(Parser, Debug)]
#[command(name = "bdflow", version, about = "Boundary diffusion driven by the Dirichlet-to-Neumann map")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the stationary problem.
    Steady(Args),
    /// Integrate the flow from the configured initial datum.
    Evolve(Args),
    /// Linearize at the steady state and classify its modes.
    Spectrum(Args),
    /// Fit the convergence rate of the normalized flow.
    Rates(Args),
    /// Run the reference verification suite.
    Verify(VerifyArgs),
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct VerifyArgs {
    /// Defaults to the reference configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Validation(_) | Error::DimensionMismatch { .. } => EXIT_VALIDATION,
            _ => EXIT_SOLVER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_SOLVER,
            message: format!("i/o error: {e}"),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("bdflow: {}", f.message);
            f.code
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Verify(a) => {
            let cfg = match &a.config {
                Some(path) => load(path)?,
                None => RunConfig::reference(),
            };
            let out = Output::new(&cfg, a.out.as_deref())?;
            cmd_verify(&cfg, &out)
        }
        Command::Steady(a) | Command::Evolve(a) | Command::Spectrum(a) | Command::Rates(a)
            if !a.config.exists() =>
        {
            Err(Failure {
                code: EXIT_VALIDATION,
                message: format!("configuration file {} does not exist", a.config.display()),
            })
        }
        Command::Steady(a) => with_output(&a, cmd_steady),
        Command::Evolve(a) => with_output(&a, cmd_evolve),
        Command::Spectrum(a) => with_output(&a, cmd_spectrum),
        Command::Rates(a) => with_output(&a, cmd_rates),
    }
}

fn with_output(a: &Args, f: fn(&RunConfig, &Output) -> Result<(), Failure>) -> Result<i32, Failure> {
    let cfg = load(&a.config)?;
    let out = Output::new(&cfg, a.out.as_deref())?;
    match f(&cfg, &out) {
        Ok(()) => Ok(EXIT_OK),
        Err(fail) => {
            if fail.code == EXIT_SOLVER {
                let _ = out.json(
                    "error.json",
                    &json!({ "error": fail.message, "config_hash": out.hash }),
                );
            }
            Err(fail)
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_VALIDATION,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    Ok(RunConfig::from_json(&text)?)
}

/// Output directory plus the hash stamped into every file.
pub struct Output {
    pub dir: PathBuf,
    pub hash: String,
    json: bool,
    csv: bool,
}

impl Output {
    fn new(cfg: &RunConfig, over: Option<&Path>) -> Result<Self, Failure> {
        let dir = over.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
        fs::create_dir_all(&dir)?;
        Ok(Output {
            dir,
            hash: cfg.hash(),
            json: cfg.output.formats.iter().any(|f| f == "json"),
            csv: cfg.output.formats.iter().any(|f| f == "csv"),
        })
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        if !self.json {
            return Ok(());
        }
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        fs::write(self.dir.join(name), text + "\n")?;
        Ok(())
    }

    fn csv(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Failure> {
        if !self.csv {
            return Ok(());
        }
        let mut w = BufWriter::new(fs::File::create(self.dir.join(name))?);
        writeln!(w, "# config_hash={}", self.hash)?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn stamp(&self, mut v: Value) -> Value {
        v["config_hash"] = json!(self.hash);
        v["bdflow_version"] = json!(env!("CARGO_PKG_VERSION"));
        v
    }
}

fn steady_for(cfg: &RunConfig, spec: &ProblemSpec) -> Result<SteadyState, Failure> {
    let mass = match spec.regime() {
        Regime::Neutral => match cfg.problem.mass_target {
            Some(m) => Some(m),
            None => Some(spec.mass(&cfg.initial_field(spec)?)),
        },
        _ => None,
    };
    Ok(solve_steady(spec, None, mass)?)
}

pub fn cmd_steady(cfg: &RunConfig, out: &Output) -> Result<(), Failure> {
    let spec = cfg.build_spec()?;
    if spec.regime() == Regime::Neutral && cfg.problem.mass_target.is_none() {
        return Err(Error::Validation(
            "the Neutral regime needs problem.mass_target to select a steady state".into(),
        )
        .into());
    }
    let st = steady_for(cfg, &spec)?;
    let yp = estimate_yp(&spec)?;
    out.json(
        "steady.json",
        &out.stamp(json!({
            "p": spec.p(),
            "lambda1": st.lambda1,
            "yp_estimate": yp,
            "regime": st.regime,
            "residual": st.residual,
            "newton_iterations": st.newton_iterations,
            "phi_min": st.phi.min(),
            "phi_max": st.phi.max(),
        })),
    )?;
    let curve = spec.curve();
    out.csv("phi.csv", |w| {
        writeln!(w, "theta,x,y,phi,phi1")?;
        for i in 0..curve.n() {
            let [x, y] = curve.nodes()[i];
            writeln!(w, "{:?},{:?},{:?},{:?},{:?}", curve.theta()[i], x, y, st.phi[i], st.phi1[i])?;
        }
        Ok(())
    })
}

pub fn cmd_evolve(cfg: &RunConfig, out: &Output) -> Result<(), Failure> {
    let spec = cfg.build_spec()?;
    let u0 = cfg.initial_field(&spec)?;
    let second = cfg.compare_field(&spec)?;
    let mode: FlowMode = cfg.time.mode.into();
    if second.is_some() && cfg.time.sample_interval.is_none() && cfg.time.fixed_dt.is_none() {
        return Err(Error::Validation(
            "a comparison run needs time.sample_interval or time.fixed_dt so that samples align".into(),
        )
        .into());
    }
    let controls = cfg.time.controls();
    let traj = evolve(&spec, &u0, mode, cfg.time.horizon, &controls)?;

    let mut summary = json!({
        "mode": traj.mode,
        "regime": traj.regime,
        "p": traj.p,
        "final_time": traj.final_time(),
        "samples": traj.len(),
        "halt": traj.halt,
        "accepted_steps": traj.accepted_steps,
        "rejected_steps": traj.rejected_steps,
        "max_mass_defect": traj.max_mass_defect,
        "Tstar_estimate": traj.tstar_estimate,
    });
    if mode == FlowMode::Physical && spec.regime() == Regime::ExtinctionOrBlowup {
        if let Ok(est) = estimate_tstar(&traj, TSTAR_WINDOW) {
            summary["Tstar_fit"] = json!(est);
        }
    }
    if mode == FlowMode::Normalized {
        let g = lyapunov_series(&traj)?;
        summary["lyapunov"] = json!({
            "nonincreasing": g.passed,
            "first_violation": g.first_violation,
            "worst_relative_increase": g.worst_relative_increase,
        });
    }
    if let Some(u1) = second {
        let other = evolve(&spec, &u1, mode, cfg.time.horizon, &controls)?;
        // Decide which datum lies below from the initial values.
        let below = u0.iter().zip(u1.iter()).all(|(a, b)| a <= b);
        let above = u0.iter().zip(u1.iter()).all(|(a, b)| a >= b);
        let verdict = if below || above {
            let (lo, hi) = if below { (&traj, &other) } else { (&other, &traj) };
            let (worst, shared) = ordering_violation(lo, hi);
            json!({
                "initially_ordered": true,
                "shared_samples": shared,
                "max_violation": worst,
                "passed": worst <= 1e-10,
            })
        } else {
            json!({ "initially_ordered": false, "passed": Value::Null })
        };
        summary["comparison"] = verdict;
    }
    out.json("summary.json", &out.stamp(summary))?;
    out.csv("trajectory.csv", |w| traj.write_csv(w, None))
}

pub fn cmd_spectrum(cfg: &RunConfig, out: &Output) -> Result<(), Failure> {
    let spec = cfg.build_spec()?;
    let st = steady_for(cfg, &spec)?;
    let sp = spectrum_at(&spec, &st)?;
    let summary = sp.summary();
    let mut doc = serde_json::to_value(&summary).expect("summary serializes");
    doc["regime"] = json!(st.regime);
    doc["lambda1"] = json!(st.lambda1);
    doc["resolved_band"] = json!(spec.n() / 4);
    doc["integrability"] = json!("undetermined");
    out.json("spectrum.json", &out.stamp(doc))?;
    let m = sp.modes.len().min(16);
    let curve = spec.curve();
    out.csv("modes.csv", |w| {
        write!(w, "theta")?;
        for j in 1..=m {
            write!(w, ",e{j}")?;
        }
        writeln!(w)?;
        for i in 0..curve.n() {
            write!(w, "{:?}", curve.theta()[i])?;
            for e in &sp.modes[..m] {
                write!(w, ",{:?}", e[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

pub fn cmd_rates(cfg: &RunConfig, out: &Output) -> Result<(), Failure> {
    let spec = cfg.build_spec()?;
    let st = steady_for(cfg, &spec)?;
    let sp = spectrum_at(&spec, &st)?;
    let w0 = cfg.initial_field(&spec)?;
    let run = normalized_run(&spec, &sp, &w0, cfg.time.horizon, &cfg.time.controls())?;
    let traj = &run.trajectory;
    let rate = fit_rate(traj, &st.phi, &spec, sp.gamma_p(), cfg.time.window_fraction)?;
    let expansion = if rate.model == RateModel::Exponential {
        Some(mode_expansion(traj, &sp, rate.window)?)
    } else {
        None
    };
    out.json(
        "rates.json",
        &out.stamp(json!({
            "regime": st.regime,
            "spectrum": sp.summary(),
            "rate": rate,
            "expansion": expansion,
            "shooting": run.shooting,
        })),
    )?;
    let m = (sp.counts.k + 3).min(sp.modes.len());
    out.csv("modes_series.csv", |w| {
        write!(w, "tau,h_l2")?;
        for j in 1..=m {
            write!(w, ",y{j}")?;
        }
        writeln!(w, ",G,I,Z")?;
        for ((tau, field), d) in traj.times.iter().zip(&traj.fields).zip(&traj.diagnostics) {
            let h: Vec<f64> = field.iter().zip(st.phi.iter()).map(|(a, b)| a - b).collect();
            write!(w, "{tau:?},{:?}", l2_norm(spec.curve(), &h))?;
            let y = project_modes(&h, &sp, m).map_err(|e| std::io::Error::other(e.to_string()))?;
            for v in y {
                write!(w, ",{v:?}")?;
            }
            writeln!(w, ",{:?},{:?},{:?}", d.g, d.i, d.z)?;
        }
        Ok(())
    })
}

pub fn cmd_verify(cfg: &RunConfig, out: &Output) -> Result<i32, Failure> {
    let report = verify_suite(cfg)?;
    for v in &report.verdicts {
        println!(
            "criterion {:>2} {:<32} {}{}",
            v.id,
            v.name,
            if v.passed { "PASS" } else { "FAIL" },
            if v.detail.is_empty() { String::new() } else { format!("  {}", v.detail) }
        );
    }
    let mut doc = serde_json::to_value(&report).expect("report serializes");
    doc["bdflow_version"] = json!(env!("CARGO_PKG_VERSION"));
    out.json("verify.json", &doc)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY })
}
