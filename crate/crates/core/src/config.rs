//! JSON run configuration shared by the command line and the verification suite.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dtn::{build_dtn_general, build_dtn_spectral, default_charge_offset, DtnOperator};
use crate::error::{validation, Result};
use crate::evolution::{EvolveControls, FlowMode};
use crate::geometry::{make_curve, BoundaryField, CurveShape, FourierSeries};
use crate::stationary::{validate_exponent, ProblemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub dtn: DtnConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub shape: CurveShape,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub p: f64,
    pub a: FourierSeries,
    #[serde(default)]
    pub zero_tol: Option<f64>,
    /// Prescribed ∫ w^p φ₁ for the Neutral regime. When absent it is taken
    /// from the initial datum.
    #[serde(default)]
    pub mass_target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub series: FourierSeries,
    /// Added to the synthesized field.
    #[serde(default)]
    pub offset: f64,
    /// Second datum evolved alongside the first for a comparison check.
    #[serde(default)]
    pub compare: Option<FourierSeries>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            series: FourierSeries::constant(1.0),
            offset: 0.0,
            compare: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSetting {
    Physical,
    Normalized,
}

impl From<ModeSetting> for FlowMode {
    fn from(m: ModeSetting) -> Self {
        match m {
            ModeSetting::Physical => FlowMode::Physical,
            ModeSetting::Normalized => FlowMode::Normalized,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub mode: ModeSetting,
    pub horizon: f64,
    pub rtol: f64,
    pub dt_initial: f64,
    pub dt_max: Option<f64>,
    pub fixed_dt: Option<f64>,
    pub store_stride: usize,
    pub sample_interval: Option<f64>,
    pub floor_factor: f64,
    pub ceiling_factor: f64,
    /// Trailing fraction of the τ-range used by rate fits.
    pub window_fraction: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        let c = EvolveControls::default();
        TimeConfig {
            mode: ModeSetting::Physical,
            horizon: 10.0,
            rtol: c.rtol,
            dt_initial: c.dt_initial,
            dt_max: None,
            fixed_dt: None,
            store_stride: c.store_stride,
            sample_interval: None,
            floor_factor: c.floor_factor,
            ceiling_factor: c.ceiling_factor,
            window_fraction: 0.5,
        }
    }
}

impl TimeConfig {
    pub fn controls(&self) -> EvolveControls {
        EvolveControls {
            rtol: self.rtol,
            dt_initial: self.dt_initial,
            dt_max: self.dt_max.unwrap_or(f64::INFINITY),
            fixed_dt: self.fixed_dt,
            store_stride: self.store_stride,
            sample_interval: self.sample_interval,
            floor_factor: self.floor_factor,
            ceiling_factor: self.ceiling_factor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtnMethod {
    Spectral,
    Mfs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtnConfig {
    pub method: DtnMethod,
    /// Charge offset for the MFS construction; the default depends on N.
    pub offset: Option<f64>,
    pub reg: f64,
}

impl Default for DtnConfig {
    fn default() -> Self {
        DtnConfig {
            method: DtnMethod::Spectral,
            offset: None,
            reg: 1e-14,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "bdflow-out".into(),
            formats: vec!["json".into(), "csv".into()],
        }
    }
}

impl RunConfig {
    /// The unit circle with the given exponent and constant coefficient.
    pub fn circle(n: usize, p: f64, a: f64) -> Self {
        RunConfig {
            domain: DomainConfig {
                shape: CurveShape::unit_circle(),
                n,
            },
            problem: ProblemConfig {
                p,
                a: FourierSeries::constant(a),
                zero_tol: None,
                mass_target: None,
            },
            initial: InitialConfig::default(),
            time: TimeConfig::default(),
            dtn: DtnConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Configuration whose verification run reproduces the reference suite.
    pub fn reference() -> Self {
        Self::circle(64, 2.0, 1.0)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| validation(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// sha256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Cheap checks that do not build any operator.
    pub fn validate(&self) -> Result<()> {
        validate_exponent(self.problem.p)?;
        let n = self.domain.n;
        if n < 8 || n % 2 != 0 {
            return Err(validation(format!("node count must be even and at least 8 (got {n})")));
        }
        if let Some(z) = self.problem.zero_tol {
            if !(z > 0.0) {
                return Err(validation("zero_tol must be positive"));
            }
        }
        if let Some(m) = self.problem.mass_target {
            if !(m > 0.0) {
                return Err(validation("mass_target must be positive"));
            }
        }
        let t = &self.time;
        if !(t.horizon > 0.0 && t.horizon.is_finite()) {
            return Err(validation("time.horizon must be positive and finite"));
        }
        if !(t.window_fraction > 0.0 && t.window_fraction <= 1.0) {
            return Err(validation("time.window_fraction must lie in (0, 1]"));
        }
        t.controls().validate()?;
        if self.dtn.method == DtnMethod::Spectral && !matches!(self.domain.shape, CurveShape::Circle { .. }) {
            return Err(validation("the spectral DtN method is only available on circles; use \"mfs\""));
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                return Err(validation(format!("unknown output format {f:?}")));
            }
        }
        Ok(())
    }

    pub fn build_dtn(&self) -> Result<DtnOperator> {
        let curve = make_curve(self.domain.shape.clone(), self.domain.n)?;
        match self.dtn.method {
            DtnMethod::Spectral => build_dtn_spectral(curve),
            DtnMethod::Mfs => {
                let offset = self.dtn.offset.unwrap_or_else(|| default_charge_offset(&curve));
                build_dtn_general(curve, offset, self.dtn.reg)
            }
        }
    }

    pub fn build_spec(&self) -> Result<ProblemSpec> {
        self.validate()?;
        let dtn = self.build_dtn()?;
        let a = self.problem.a.synthesize(dtn.curve())?;
        match self.problem.zero_tol {
            Some(z) => ProblemSpec::with_zero_tol(dtn, a, self.problem.p, z),
            None => ProblemSpec::new(dtn, a, self.problem.p),
        }
    }

    /// The initial field, required to be strictly positive.
    pub fn initial_field(&self, spec: &ProblemSpec) -> Result<BoundaryField> {
        positive_datum(&self.initial.series, self.initial.offset, spec)
    }

    /// The comparison datum, if configured.
    pub fn compare_field(&self, spec: &ProblemSpec) -> Result<Option<BoundaryField>> {
        self.initial
            .compare
            .as_ref()
            .map(|s| positive_datum(s, self.initial.offset, spec))
            .transpose()
    }
}

fn positive_datum(series: &FourierSeries, offset: f64, spec: &ProblemSpec) -> Result<BoundaryField> {
    let u0 = series.synthesize(spec.curve())?.map(|v| v + offset);
    if let Some((i, v)) = u0.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(validation(format!(
            "initial datum must be strictly positive; node {i} has value {v}"
        )));
    }
    Ok(u0)
}
