//! Run configuration: a strict TOML document that builds every input of
//! the simulator, the criteria checks and the experiment drivers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::criteria::Theorem;
use crate::damping::{DampingSpec, PiecewiseTable, WamParams};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::initial::InitialSpec;
use crate::solver::{ProblemSpec, Thresholds, DEFAULT_FRAMES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dim: usize,
    pub p: f64,
    #[serde(default = "focusing")]
    pub mu: f64,
}

fn focusing() -> f64 {
    -1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Half-width: the box is `[-L, L)` per axis.
    #[serde(rename = "L")]
    pub half_width: f64,
    pub n: usize,
}

/// Either an inline damping spec or a `t,a` CSV table read at build time.
#[derive(Clone, Debug, PartialEq)]
pub enum DampingSource {
    Inline(DampingSpec),
    Csv(PathBuf),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CsvDamping {
    kind: String,
    csv: PathBuf,
}

impl Serialize for DampingSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DampingSource::Inline(spec) => spec.serialize(s),
            DampingSource::Csv(path) => CsvDamping { kind: "piecewise-linear".into(), csv: path.clone() }.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for DampingSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let value = serde_json::Value::deserialize(d)?;
        if value.get("csv").is_some() {
            let table: CsvDamping = serde_json::from_value(value).map_err(D::Error::custom)?;
            if table.kind != "piecewise-linear" {
                return Err(D::Error::custom(format!("a csv damping table needs kind = \"piecewise-linear\", got {:?}", table.kind)));
            }
            Ok(DampingSource::Csv(table.csv))
        } else {
            DampingSpec::deserialize(value).map(DampingSource::Inline).map_err(D::Error::custom)
        }
    }
}

impl DampingSource {
    /// Relative CSV paths resolve against `base`.
    pub fn resolve(&self, base: &Path) -> Result<DampingSpec> {
        let spec = match self {
            DampingSource::Inline(spec) => spec.clone(),
            DampingSource::Csv(path) => DampingSpec::PiecewiseLinear { table: PiecewiseTable::from_csv_path(base.join(path))? },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    pub t_end: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_frames")]
    pub frames: usize,
    /// Fixed step with one frame every `frame_stride` steps; overrides the adaptive controls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_dt: Option<f64>,
    #[serde(default = "one_usize")]
    pub frame_stride: usize,
}

fn default_dt_max() -> f64 {
    1e-2
}
fn default_safety() -> f64 {
    0.1
}
fn default_frames() -> usize {
    DEFAULT_FRAMES
}
fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    /// Seed for the randomized Blow-R agreement check in `verify`.
    pub triples: u64,
    /// Number of random triples; 0 disables the check.
    pub triple_count: usize,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self { triples: 0x5eed, triple_count: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    /// Constant in the global-existence threshold `C ‖u₀‖^θ`.
    #[serde(rename = "C")]
    pub c: f64,
    /// Constant of the sub-critical Grönwall envelope.
    #[serde(rename = "C0")]
    pub c0: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { c: 1.0, c0: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriteriaSection {
    pub theorems: Vec<Theorem>,
    /// Horizon for sampled sup/inf damping averages.
    pub horizon: f64,
}

impl Default for CriteriaSection {
    fn default() -> Self {
        Self {
            theorems: vec![Theorem::Blow0, Theorem::Blow1, Theorem::Blow2, Theorem::GE, Theorem::AppendixB],
            horizon: 1e3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Coarse fixed step; the check reruns at half of it.
    pub dt: f64,
    pub tolerance: f64,
    pub second_virial_tolerance: f64,
    pub mass_tolerance: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { dt: 1e-3, tolerance: 1e-3, second_virial_tolerance: 5e-3, mass_tolerance: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    Bisect,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub mode: SweepMode,
    #[serde(default)]
    pub a_lo: f64,
    #[serde(default)]
    pub a_hi: f64,
    #[serde(default)]
    pub tol: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_probes")]
    pub max_probes: usize,
    /// Probe horizon; defaults to the integrator's `t_end`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_probe: Option<f64>,
    /// Damping values of a grid sweep.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

fn default_rel_tol() -> f64 {
    0.05
}
fn default_probes() -> usize {
    12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DampingInfoSection {
    pub horizon: f64,
    pub points: usize,
    /// Times at which `a` and `A` are tabulated.
    pub times: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wam: Option<WamParams>,
    /// Spike moment table: orders `q` and intervals `n = 1..=n_max`.
    pub moment_orders: Vec<f64>,
    pub moment_n_max: u64,
}

impl Default for DampingInfoSection {
    fn default() -> Self {
        Self {
            horizon: 1e3,
            points: 4000,
            times: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0],
            wam: None,
            moment_orders: vec![1.0, 2.0, 3.0],
            moment_n_max: 10,
        }
    }
}

/// The whole configuration document. Unknown keys are rejected everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub grid: GridSection,
    pub damping: DampingSource,
    pub initial: InitialSpec,
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub criteria: CriteriaSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub damping_info: DampingInfoSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// JSON copy embedded in summaries; [`RunConfig::from_echo`] inverts it.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes to JSON")
    }

    pub fn from_echo(value: serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(value)?)
    }

    /// Checks every physical parameter against the preconditions of the
    /// modules it feeds, without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        let pr = &self.problem;
        if !(pr.p > 1.0) || !pr.p.is_finite() {
            return Err(Error::Config(format!("problem.p must satisfy p > 1, got {}", pr.p)));
        }
        if pr.mu != 1.0 && pr.mu != -1.0 {
            return Err(Error::Config(format!("problem.mu must be +1 or -1, got {}", pr.mu)));
        }
        self.grid()?;
        if let DampingSource::Inline(spec) = &self.damping {
            spec.validate()?;
        }
        self.initial.validate(pr.dim)?;
        let it = &self.integrator;
        if !(it.t_end > 0.0 && it.t_end.is_finite()) {
            return Err(Error::Config(format!("integrator.t_end must be positive, got {}", it.t_end)));
        }
        if !(it.dt_max > 0.0) || !(it.safety > 0.0) || it.frames == 0 || it.frame_stride == 0 {
            return Err(Error::Config("integrator needs dt_max > 0, safety > 0, frames >= 1, frame_stride >= 1".into()));
        }
        if let Some(dt) = it.fixed_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("integrator.fixed_dt must be positive, got {dt}")));
            }
        }
        self.thresholds.validate()?;
        if !(self.criteria.horizon > 0.0) {
            return Err(Error::Config("criteria.horizon must be positive".into()));
        }
        if !(self.verify.dt > 0.0) {
            return Err(Error::Config("verify.dt must be positive".into()));
        }
        if let Some(sw) = &self.sweep {
            if sw.mode == SweepMode::Grid && sw.values.is_empty() {
                return Err(Error::Config("grid sweep needs a non-empty values list".into()));
            }
            if sw.mode == SweepMode::Bisect && sw.max_probes < 2 {
                return Err(Error::Config("bisection needs max_probes >= 2".into()));
            }
            if sw.values.iter().chain([&sw.a_lo, &sw.a_hi]).any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::Config("sweep damping values must be finite and >= 0".into()));
            }
        }
        if !(self.damping_info.horizon > 0.0) || self.damping_info.points < 2 {
            return Err(Error::Config("damping_info needs horizon > 0 and points >= 2".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.problem.dim, self.grid.n, self.grid.half_width)
    }

    pub fn initial_field(&self, base: &Path) -> Result<Field> {
        let mut init = self.initial.clone();
        if let Some(p) = &init.path {
            init.path = Some(base.join(p));
        }
        init.build(self.grid()?)
    }

    /// Builds the solver input; `base` anchors relative file paths.
    pub fn problem_spec(&self, base: &Path) -> Result<ProblemSpec> {
        let damping = self.damping.resolve(base)?;
        let mut spec = ProblemSpec::new(self.problem.p, self.problem.mu, damping, self.initial_field(base)?, self.integrator.t_end);
        spec.dt_max = self.integrator.dt_max;
        spec.safety = self.integrator.safety;
        spec.frames = self.integrator.frames;
        spec.thresholds = self.thresholds;
        if let Some(dt) = self.integrator.fixed_dt {
            spec = spec.with_fixed_step(dt, self.integrator.frame_stride);
        }
        spec.validate()?;
        Ok(spec)
    }
}
