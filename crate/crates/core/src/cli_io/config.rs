//! Experiment configuration: a TOML document with flat sections, parsed
//! strictly (unknown keys are errors) and validated before anything runs.
//!
//! ```toml
//! kind = "flow-sim"
//! seed = 42
//!
//! [drift]
//! kind = "holder"
//! dim = 1
//! alpha = 0.5
//!
//! [time]
//! end = 1.0
//! dt = 0.00390625
//!
//! [mc]
//! paths = 1000
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::moduli::{Modulus, ModulusFamily};
use crate::monte_carlo::ModulusModel;
use crate::sde_flow::{DriftKind, DriftSpec, FlowConfig};
use crate::transport::{InitialDatum, TestFunction, TransportMethod};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "NOISEREG_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "noisereg-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PdeSolve,
    LambdaSweep,
    FlowSim,
    FlowModulus,
    MollifyConvergence,
    Transport,
    WeakResidual,
    NonuniquenessDemo,
    ModulusVerify,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        Self::PdeSolve,
        Self::LambdaSweep,
        Self::FlowSim,
        Self::FlowModulus,
        Self::MollifyConvergence,
        Self::Transport,
        Self::WeakResidual,
        Self::NonuniquenessDemo,
        Self::ModulusVerify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::PdeSolve => "pde-solve",
            Self::LambdaSweep => "lambda-sweep",
            Self::FlowSim => "flow-sim",
            Self::FlowModulus => "flow-modulus",
            Self::MollifyConvergence => "mollify-convergence",
            Self::Transport => "transport",
            Self::WeakResidual => "weak-residual",
            Self::NonuniquenessDemo => "nonuniqueness-demo",
            Self::ModulusVerify => "modulus-verify",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::validation("kind", format!("unknown experiment kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub drift: DriftSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<ModulusSection>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub transport: TransportSection,
    #[serde(default)]
    pub demo: DemoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    /// zero, constant, linear, ou, tanh, sine, holder, abs, log-modulus, cellular
    pub kind: String,
    pub dim: usize,
    pub amp: f64,
    pub alpha: f64,
    pub rate: f64,
    pub value: Vec<f64>,
    /// Mollification level n, if the drift should be replaced by b * ϱ_n.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mollify: Option<f64>,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            kind: "zero".into(),
            dim: 1,
            amp: 1.0,
            alpha: 0.5,
            rate: -1.0,
            value: Vec::new(),
            mollify: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModulusSection {
    /// power-log, inverse-log, linear, zero, table
    pub family: String,
    pub c: f64,
    pub theta: f64,
    pub alpha: f64,
    pub r0: f64,
    /// (r, φ(r)) pairs for the table family.
    pub table: Vec<[f64; 2]>,
    /// Moment exponent and δ for the F_δ concavity check; δ is searched for
    /// when absent.
    pub p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl Default for ModulusSection {
    fn default() -> Self {
        Self {
            family: "power-log".into(),
            c: 1.0,
            theta: 0.5,
            alpha: 0.0,
            r0: 0.5,
            table: Vec::new(),
            p: 2.0,
            delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub half_width: f64,
    pub n: usize,
    pub periodic: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            half_width: 4.0,
            n: 129,
            periodic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub start: f64,
    pub end: f64,
    pub dt: f64,
    /// Number of steps; when given, dt must agree with it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            start: 0.0,
            end: 1.0,
            dt: 1.0 / 256.0,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub paths: usize,
    pub p: f64,
    /// Starting points; defaults to the origin.
    pub points: Vec<Vec<f64>>,
    /// Two-point separations r = 2^-k, given as the exponents k.
    pub separations: Vec<i32>,
    pub n_list: Vec<f64>,
    /// λ = 2^0, ..., 2^lambda_max_power.
    pub lambda_max_power: u32,
    pub model: ModulusModel,
    /// Use the derivative flow instead of the state in two-point moments.
    pub gradient: bool,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            paths: 1000,
            p: 2.0,
            points: Vec::new(),
            separations: (3..=9).collect(),
            n_list: vec![2.0, 4.0, 8.0, 16.0, 32.0],
            lambda_max_power: 10,
            model: ModulusModel::Power,
            gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSection {
    /// sine, constant or gaussian source f.
    pub source: String,
    pub amp: f64,
    pub lambda: f64,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self {
            source: "sine".into(),
            amp: 1.0,
            lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSection {
    pub initial: InitialDatum,
    pub method: TransportMethod,
    pub test_function: TestFunction,
    /// Paths whose u(t, x) snapshots are written.
    pub snapshot_paths: usize,
    /// Maximum number of time snapshots per path.
    pub snapshots: usize,
    /// Also evaluate the weak residual with midpoint Stratonovich sums.
    pub stratonovich_check: bool,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            initial: InitialDatum::Gaussian { width: 0.5 },
            method: TransportMethod::Composition,
            test_function: TestFunction::Bump {
                center: vec![0.0],
                radius: 1.5,
            },
            snapshot_paths: 1,
            snapshots: 17,
            stratonovich_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSection {
    pub alpha: f64,
    pub ode_steps: usize,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            ode_steps: 4096,
        }
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, None, &[])
}

/// Parses a config document after applying `section.key=value` overrides.
/// `kind`, when given, fills in or must match the document's `kind`.
pub fn parse_config_with(text: &str, kind: Option<ExperimentKind>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    if let Some(kind) = kind {
        match table.get("kind") {
            Some(toml::Value::String(s)) if s != kind.name() => {
                return Err(Error::validation(
                    "kind",
                    format!("config is for `{s}` but `{kind}` was requested"),
                ))
            }
            _ => {
                table.insert("kind".into(), toml::Value::String(kind.name().into()));
            }
        }
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        Error::validation(if path == "." { "config".into() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{spec}` is not of the form section.key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    // bare words that are not TOML literals are taken as strings
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Parse(format!("empty key in `{spec}`")))?;
    let mut node = table;
    for part in parts {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::validation(key, format!("`{part}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Checks every field; the first problem found is reported by field path.
    pub fn validate(&self) -> Result<()> {
        self.drift_spec()?;
        self.space_grid()?;
        self.time_grid()?;
        if let Some(m) = &self.modulus {
            m.build()?;
            if !(m.p > 0.0) {
                return Err(Error::validation("modulus.p", "must be positive"));
            }
            if let Some(d) = m.delta {
                if !(d > 0.0 && d <= m.r0) {
                    return Err(Error::validation("modulus.delta", "must lie in (0, r0]"));
                }
            }
        } else if self.kind == ExperimentKind::ModulusVerify {
            return Err(Error::validation("modulus.family", "modulus-verify needs a [modulus] section"));
        }
        let mc = &self.mc;
        if mc.paths == 0 {
            return Err(Error::validation("mc.paths", "need at least one path"));
        }
        if !(mc.p > 0.0) {
            return Err(Error::validation("mc.p", "must be positive"));
        }
        if mc.points.iter().any(|p| p.len() != self.drift.dim || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::validation("mc.points", "each point needs drift.dim finite coordinates"));
        }
        if mc.separations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("mc.separations", "exponents must be increasing"));
        }
        if mc.n_list.iter().any(|&n| !(n >= 1.0)) || mc.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("mc.n_list", "levels must be increasing and at least 1"));
        }
        if mc.lambda_max_power > 30 {
            return Err(Error::validation("mc.lambda_max_power", "at most 30"));
        }
        if !(self.pde.lambda >= 0.0) {
            return Err(Error::validation("pde.lambda", "must be nonnegative"));
        }
        if !["sine", "constant", "gaussian"].contains(&self.pde.source.as_str()) {
            return Err(Error::validation("pde.source", "expected sine, constant or gaussian"));
        }
        if self.transport.snapshots == 0 {
            return Err(Error::validation("transport.snapshots", "need at least one"));
        }
        match &self.transport.initial {
            InitialDatum::Gaussian { width } | InitialDatum::Front { width } if !(*width > 0.0) => {
                return Err(Error::validation("transport.initial.width", "must be positive"))
            }
            _ => {}
        }
        if !(self.demo.alpha > 0.0 && self.demo.alpha < 1.0) {
            return Err(Error::validation("demo.alpha", "must lie in (0, 1)"));
        }
        if self.demo.ode_steps == 0 {
            return Err(Error::validation("demo.ode_steps", "must be positive"));
        }
        Ok(())
    }

    /// The drift, mollified if requested, carrying the configured modulus.
    pub fn drift_spec(&self) -> Result<DriftSpec> {
        let d = &self.drift;
        let kind = match d.kind.as_str() {
            "zero" => DriftKind::Zero,
            "constant" => DriftKind::Constant(d.value.clone()),
            "linear" | "ou" => DriftKind::Linear {
                rate: if d.kind == "ou" { -1.0 } else { d.rate },
            },
            "tanh" => DriftKind::Tanh { amp: d.amp },
            "sine" => DriftKind::Sine { amp: d.amp },
            "holder" => DriftKind::Holder {
                alpha: d.alpha,
                amp: d.amp,
            },
            "abs" => DriftKind::Abs { amp: d.amp },
            "log-modulus" => DriftKind::LogModulus {
                alpha: d.alpha,
                amp: d.amp,
            },
            "cellular" => DriftKind::Cellular { amp: d.amp },
            other => return Err(Error::validation("drift.kind", format!("unknown drift `{other}`"))),
        };
        if !d.amp.is_finite() || !d.rate.is_finite() || d.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("drift.params", "parameters must be finite"));
        }
        let mut spec = DriftSpec::new(kind, d.dim)?;
        if let Some(m) = &self.modulus {
            spec = spec.with_modulus(m.build()?);
        }
        match d.mollify {
            Some(n) => spec.mollify(n),
            None => Ok(spec),
        }
    }

    pub fn space_grid(&self) -> Result<SpaceGrid> {
        let g = &self.grid;
        if !(g.half_width > 0.0 && g.half_width.is_finite()) {
            return Err(Error::validation("grid.half_width", "must be positive"));
        }
        if g.n < 3 {
            return Err(Error::validation("grid.n", "need at least 3 points per axis"));
        }
        SpaceGrid::new(self.drift.dim, g.n, g.half_width, g.periodic)
    }

    pub fn dt(&self) -> f64 {
        match self.time.steps {
            Some(n) if n > 0 => (self.time.end - self.time.start) / n as f64,
            _ => self.time.dt,
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let t = &self.time;
        if let Some(steps) = t.steps {
            if steps == 0 {
                return Err(Error::validation("time.steps", "must be positive"));
            }
            if t.dt != TimeSection::default().dt && (t.dt * steps as f64 - (t.end - t.start)).abs() > 1e-9 {
                return Err(Error::validation("time.dt", "disagrees with time.steps"));
            }
        }
        TimeGrid::with_step(t.start, t.end, self.dt())
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            start: self.time.start,
            end: self.time.end,
            dt: self.dt(),
            paths: self.mc.paths,
            seed: self.seed,
        }
    }

    /// Configured starting points, or the origin.
    pub fn points(&self) -> Vec<Vec<f64>> {
        if self.mc.points.is_empty() {
            vec![vec![0.0; self.drift.dim]]
        } else {
            self.mc.points.clone()
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Explicit output_dir, else the environment variable, else the default.
    pub fn resolve_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

impl ModulusSection {
    pub fn build(&self) -> Result<Modulus> {
        let family = match self.family.as_str() {
            "power-log" => ModulusFamily::PowerLog {
                c: self.c,
                theta: self.theta,
                alpha: self.alpha,
            },
            "inverse-log" => ModulusFamily::InverseLog {
                c: self.c,
                alpha: self.alpha,
            },
            "linear" => ModulusFamily::Linear { c: self.c },
            "zero" => ModulusFamily::Zero,
            "table" => ModulusFamily::Tabulated(self.table.iter().map(|p| (p[0], p[1])).collect()),
            other => {
                return Err(Error::validation(
                    "modulus.family",
                    format!("unknown family `{other}`; expected power-log, inverse-log, linear, zero or table"),
                ))
            }
        };
        let m = Modulus::new(family, self.r0)?;
        m.validate()?;
        Ok(m)
    }
}
