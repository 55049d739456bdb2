//! Time stepping of the damped equation through the gauge variable
//! `v = e^{A(t)} u`, which solves the undamped equation
//! `i v_t + Δv = μ e^{(1-p)A(t)} |v|^{p-1} v`.
//!
//! The integrator is Strang splitting: exact Fourier half steps for the
//! linear part around an exact phase rotation for the nonlinear part.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::damping::{CumulativeDamping, DampingSpec};
use crate::error::{Error, Result};
use crate::grid::snapshot::write_snapshot;
use crate::grid::{apply_free_multiplier, spectral_gradient_norm_squared, Field, Grid};
use crate::quantities::{write_diagnostics_csv, DiagnosticsRecord, FieldMoments, DEFAULT_BOUNDARY_WARN};

pub const DEFAULT_FRAMES: usize = 200;
pub const DEFAULT_GRAD_FACTOR: f64 = 1e3;
pub const DEFAULT_TAIL_FRACTION: f64 = 1e-2;
/// Adaptive steps below this are treated as loss of resolution.
pub const DT_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Completed,
    BlowupDetected,
    ResolutionLost,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Completed => "completed",
            Classification::BlowupDetected => "blowup-detected",
            Classification::ResolutionLost => "resolution-lost",
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Blow-up when `‖∇u‖²` exceeds `grad_factor²` times its initial value.
    pub grad_factor: f64,
    /// Resolution is lost once this share of spectral mass sits in the top third of modes.
    pub tail_fraction: f64,
    /// Frames with more boundary mass than this are flagged.
    pub boundary_warn: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { grad_factor: DEFAULT_GRAD_FACTOR, tail_fraction: DEFAULT_TAIL_FRACTION, boundary_warn: DEFAULT_BOUNDARY_WARN }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_factor > 1.0) {
            return Err(Error::Config(format!("grad_factor must be > 1, got {}", self.grad_factor)));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return Err(Error::Config(format!("tail_fraction must lie in (0, 1), got {}", self.tail_fraction)));
        }
        if !(self.boundary_warn > 0.0) {
            return Err(Error::Config(format!("boundary_warn must be > 0, got {}", self.boundary_warn)));
        }
        Ok(())
    }

    /// Threshold arithmetic shared by the per-step check and [`detect_blowup`].
    pub fn classify(&self, initial_grad2: f64, grad2: f64, tail: f64) -> Classification {
        if !grad2.is_finite() || !tail.is_finite() || tail >= self.tail_fraction {
            Classification::ResolutionLost
        } else if grad2 > 0.0 && grad2 >= self.grad_factor * self.grad_factor * initial_grad2 {
            Classification::BlowupDetected
        } else {
            Classification::Completed
        }
    }
}

/// Everything needed to integrate one trajectory.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub p: f64,
    /// `-1` focusing, `+1` defocusing.
    pub mu: f64,
    pub damping: DampingSpec,
    /// `u₀`; its grid fixes the dimension.
    pub initial: Field,
    pub dt_max: f64,
    pub t_end: f64,
    /// Nonlinear phase per step is limited to `safety`; infinity fixes `dt = dt_max`.
    pub safety: f64,
    pub frames: usize,
    pub thresholds: Thresholds,
}

impl ProblemSpec {
    pub fn new(p: f64, mu: f64, damping: DampingSpec, initial: Field, t_end: f64) -> Self {
        Self {
            p,
            mu,
            damping,
            initial,
            dt_max: 1e-2,
            t_end,
            safety: 0.1,
            frames: DEFAULT_FRAMES,
            thresholds: Thresholds::default(),
        }
    }

    /// Fixed step `dt`: one frame per `frame_stride` steps.
    pub fn with_fixed_step(mut self, dt: f64, frame_stride: usize) -> Self {
        let steps = (self.t_end / dt).round().max(1.0) as usize;
        self.dt_max = self.t_end / steps as f64;
        self.safety = f64::INFINITY;
        self.frames = (steps / frame_stride.max(1)).max(1);
        self
    }

    pub fn dim(&self) -> usize {
        self.initial.grid().dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("nonlinearity exponent must satisfy p > 1, got {}", self.p)));
        }
        if self.mu != 1.0 && self.mu != -1.0 {
            return Err(Error::Config(format!("mu must be +1 or -1, got {}", self.mu)));
        }
        self.damping.validate()?;
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(Error::Config(format!("dt_max must be positive, got {}", self.dt_max)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.safety > 0.0) {
            return Err(Error::Config(format!("safety must be positive, got {}", self.safety)));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        if !self.initial.is_finite() {
            return Err(Error::Config("initial datum has non-finite samples".into()));
        }
        self.thresholds.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupEstimate {
    /// Time at which the detection criterion fired.
    pub t_detect: f64,
    /// Midpoint of `[lower, upper]`.
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: u64,
    pub min_dt: f64,
    pub max_dt: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub frames: Vec<DiagnosticsRecord>,
    pub classification: Classification,
    pub blowup: Option<BlowupEstimate>,
    pub stats: SolverStats,
    pub t_end: f64,
    pub thresholds: Thresholds,
    /// `u` at the last integrated time (post-blow-up flagged if non-finite).
    pub final_field: Field,
    pub final_t: f64,
}

impl TrajectoryRecord {
    pub fn t_final(&self) -> f64 {
        self.final_t
    }

    /// Detection time if blow-up was detected, else the final time.
    pub fn t_detect(&self) -> f64 {
        self.blowup.map(|b| b.t_detect).unwrap_or(self.final_t)
    }

    pub fn summary(&self, config_echo: serde_json::Value) -> TrajectorySummary {
        TrajectorySummary {
            classification: self.classification,
            t_final: self.final_t,
            t_end: self.t_end,
            blowup: self.blowup,
            thresholds: self.thresholds,
            stats: self.stats,
            frames: self.frames.len(),
            flagged_frames: self.frames.iter().filter(|f| f.flagged).count(),
            config: config_echo,
        }
    }

    /// Writes `diagnostics.csv`, `summary.json` and the final snapshot into `dir`.
    pub fn write_outputs(&self, dir: &Path, initial: &Field, config_echo: serde_json::Value) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join("diagnostics.csv");
        write_diagnostics_csv(BufWriter::new(File::create(&csv_path)?), &self.frames)?;
        let summary_path = dir.join("summary.json");
        serde_json::to_writer_pretty(BufWriter::new(File::create(&summary_path)?), &self.summary(config_echo))?;
        let initial_path = dir.join("snapshot_initial.bin");
        write_snapshot(BufWriter::new(File::create(&initial_path)?), initial, 0.0)?;
        let final_name = if self.classification == Classification::BlowupDetected { "snapshot_blowup.bin" } else { "snapshot_final.bin" };
        let final_path = dir.join(final_name);
        write_snapshot(BufWriter::new(File::create(&final_path)?), &self.final_field, self.final_t)?;
        Ok(vec![csv_path, summary_path, initial_path, final_path])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub classification: Classification,
    pub t_final: f64,
    pub t_end: f64,
    pub blowup: Option<BlowupEstimate>,
    pub thresholds: Thresholds,
    pub stats: SolverStats,
    pub frames: usize,
    pub flagged_frames: usize,
    pub config: serde_json::Value,
}

fn scaled_by_cumulative(field: &Field, t: f64, cd: &CumulativeDamping, sign: f64) -> Result<Field> {
    let a = cd.cumulative(t)?;
    Ok(field.scaled(Complex64::new((sign * a).exp(), 0.0)))
}

/// `v = e^{A(t)} u`.
pub fn gauge_forward(u: &Field, t: f64, cd: &CumulativeDamping) -> Result<Field> {
    scaled_by_cumulative(u, t, cd, 1.0)
}

/// `u = e^{-A(t)} v`.
pub fn gauge_backward(v: &Field, t: f64, cd: &CumulativeDamping) -> Result<Field> {
    scaled_by_cumulative(v, t, cd, -1.0)
}

/// Multiplies by `exp(-i μ |v|^{p-1} G)`; returns `max |v|²`.
fn nonlinear_phase(values: &mut [Complex64], mu: f64, p: f64, weight: f64) -> f64 {
    let e = 0.5 * (p - 1.0);
    let mut max2 = 0.0_f64;
    for z in values.iter_mut() {
        let m2 = z.norm_sqr();
        max2 = max2.max(m2);
        if m2 > 0.0 {
            *z *= Complex64::cis(-mu * m2.powf(e) * weight);
        }
    }
    max2
}

/// One Strang step of the gauge-transformed equation from `t` to `t + dt`.
///
/// Negative `dt` integrates backwards (`t + dt` must stay `>= 0`).
pub fn strang_step(v: &Field, t: f64, dt: f64, cd: &CumulativeDamping, p: f64, mu: f64) -> Result<Field> {
    if !dt.is_finite() || dt == 0.0 {
        return Err(Error::Precondition(format!("step size must be finite and nonzero, got {dt}")));
    }
    let g = *v.grid();
    let ksq = g.k_squared();
    let weight = cd.nonlinear_weight_integral(t, t + dt, p)?;
    let mut hat = v.spectrum();
    apply_free_multiplier(&ksq, &mut hat, 0.5 * dt);
    g.inverse(&mut hat);
    nonlinear_phase(&mut hat, mu, p, weight);
    if hat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Field::new_post_blowup(g, hat);
    }
    g.forward(&mut hat);
    apply_free_multiplier(&ksq, &mut hat, 0.5 * dt);
    Field::from_spectrum(g, hat)
}

/// Reusable buffers for repeated steps on one grid; the state is kept on
/// the wavenumber side between steps.
struct Stepper {
    grid: Grid,
    ksq: Vec<f64>,
    tail_mask: Vec<bool>,
    half: Vec<Complex64>,
    half_dt: f64,
    hat: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Stepper {
    fn new(v: &Field) -> Self {
        let grid = *v.grid();
        let third = grid.n() as f64 / 3.0;
        let tail_mask = (0..grid.len())
            .map(|i| {
                let idx = grid.multi_index(i);
                idx[..grid.dim()].iter().any(|&j| grid.mode(j).unsigned_abs() as f64 > third)
            })
            .collect();
        Self {
            grid,
            ksq: grid.k_squared(),
            tail_mask,
            half: Vec::new(),
            half_dt: f64::NAN,
            hat: v.spectrum(),
            scratch: vec![Complex64::default(); grid.len()],
        }
    }

    fn apply_half(&mut self, dt: f64) {
        if self.half_dt != dt {
            self.half = self.ksq.iter().map(|k2| Complex64::cis(-k2 * 0.5 * dt)).collect();
            self.half_dt = dt;
        }
        for (z, m) in self.hat.iter_mut().zip(&self.half) {
            *z *= m;
        }
    }

    /// Returns `max |v|²` seen in the nonlinear substep, or `None` on non-finite values.
    fn step(&mut self, dt: f64, weight: f64, mu: f64, p: f64) -> Option<f64> {
        self.apply_half(dt);
        self.scratch.copy_from_slice(&self.hat);
        self.grid.inverse(&mut self.scratch);
        let max2 = nonlinear_phase(&mut self.scratch, mu, p, weight);
        if !max2.is_finite() || self.scratch.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return None;
        }
        self.hat.copy_from_slice(&self.scratch);
        self.grid.forward(&mut self.hat);
        self.apply_half(dt);
        Some(max2)
    }

    fn grad2(&self) -> f64 {
        spectral_gradient_norm_squared(&self.grid, &self.ksq, &self.hat)
    }

    fn tail_fraction(&self) -> f64 {
        let mut tail = 0.0;
        let mut total = 0.0;
        for (z, &m) in self.hat.iter().zip(&self.tail_mask) {
            let w = z.norm_sqr();
            total += w;
            if m {
                tail += w;
            }
        }
        if total > 0.0 {
            tail / total
        } else {
            0.0
        }
    }

    fn field(&self) -> Result<Field> {
        Field::from_spectrum(self.grid, self.hat.clone())
    }

    fn nonfinite_field(&self) -> Result<Field> {
        Field::new_post_blowup(self.grid, self.scratch.clone())
    }
}

/// Decides from the first and last frame of a history.
pub fn detect_blowup(history: &[DiagnosticsRecord], thresholds: &Thresholds) -> Result<Classification> {
    if history.len() < 2 {
        return Err(Error::Precondition(format!("blow-up detection needs at least 2 frames, got {}", history.len())));
    }
    let last = history[history.len() - 1];
    Ok(thresholds.classify(history[0].grad_norm_sq, last.grad_norm_sq, last.tail_fraction))
}

/// Integrates `spec` and returns the u-diagnostics at evenly spaced frames.
pub fn simulate(spec: &ProblemSpec) -> Result<TrajectoryRecord> {
    simulate_observed(spec, |_, _| {})
}

/// As [`simulate`], also handing the gauge field `v` of every recorded frame to `observe`.
pub fn simulate_observed<F>(spec: &ProblemSpec, mut observe: F) -> Result<TrajectoryRecord>
where
    F: FnMut(&Field, &DiagnosticsRecord),
{
    spec.validate()?;
    let cd = CumulativeDamping::new(spec.damping.clone())?;
    let (p, mu, th) = (spec.p, spec.mu, spec.thresholds);
    let dim = spec.dim();
    let mut stepper = Stepper::new(&spec.initial);

    let record = |v: &Field, t: f64, a: f64| {
        let m = FieldMoments::of(v, p);
        DiagnosticsRecord::from_v_moments(&m, dim, t, a, p, th.boundary_warn)
    };
    let first = record(&spec.initial, 0.0, 0.0);
    observe(&spec.initial, &first);
    let grad0 = first.grad_norm_sq;
    let mut frames = vec![first];
    let mut classification = th.classify(grad0, grad0, first.tail_fraction);
    let mut stats = SolverStats { steps: 0, min_dt: f64::INFINITY, max_dt: 0.0 };
    let mut blowup = None;
    let mut t = 0.0;
    let mut a_t = 0.0;
    let mut max2 = spec.initial.max_modulus().powi(2);
    let mut next_frame = 1usize;
    let mut final_field = spec.initial.clone();
    let frame_time = |k: usize| spec.t_end * k as f64 / spec.frames as f64;

    while classification == Classification::Completed && next_frame <= spec.frames {
        // Nonlinear phase rate is max|u|^{p-1} = e^{(1-p)A} max|v|^{p-1}.
        let rate = ((1.0 - p) * a_t).exp() * max2.powf(0.5 * (p - 1.0));
        let dt_adapt = if rate > 0.0 { spec.dt_max.min(spec.safety / rate) } else { spec.dt_max };
        if dt_adapt < DT_FLOOR {
            log::debug!("step size {dt_adapt:e} below floor at t = {t}");
            classification = Classification::ResolutionLost;
            final_field = gauge_backward(&stepper.field()?, t, &cd)?;
            break;
        }
        let target = frame_time(next_frame);
        let lands = target - t <= dt_adapt * (1.0 + 1e-9);
        let t_new = if lands { target } else { t + dt_adapt };
        let dt = t_new - t;
        let weight = cd.nonlinear_weight_integral(t, t_new, p)?;
        let step = stepper.step(dt, weight, mu, p);
        stats.steps += 1;
        stats.min_dt = stats.min_dt.min(dt);
        stats.max_dt = stats.max_dt.max(dt);
        let Some(m2) = step else {
            log::debug!("non-finite field at t = {t_new}");
            classification = Classification::ResolutionLost;
            final_field = stepper.nonfinite_field()?;
            t = t_new;
            break;
        };
        max2 = m2;
        t = t_new;
        a_t = cd.cumulative(t)?;
        let grad2_u = (-2.0 * a_t).exp() * stepper.grad2();
        let verdict = th.classify(grad0, grad2_u, stepper.tail_fraction());
        if lands || verdict != Classification::Completed {
            let v = stepper.field()?;
            let rec = record(&v, t, a_t);
            observe(&v, &rec);
            frames.push(rec);
            final_field = gauge_backward(&v, t, &cd)?;
            if lands {
                next_frame += 1;
            }
        }
        if verdict != Classification::Completed {
            classification = verdict;
            if verdict == Classification::BlowupDetected {
                let lower = frames[frames.len() - 2].t;
                blowup = Some(BlowupEstimate { t_detect: t, estimate: 0.5 * (lower + t), lower, upper: t });
            }
        }
    }
    if stats.steps == 0 {
        stats.min_dt = 0.0;
    }
    if classification == Classification::Completed && t < spec.t_end {
        // Only reachable through a detection at t = 0.
        classification = Classification::ResolutionLost;
    }
    Ok(TrajectoryRecord {
        frames,
        classification,
        blowup,
        stats,
        t_end: spec.t_end,
        thresholds: th,
        final_field,
        final_t: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::free_evolve;
    use crate::quantities::{energy, mass};

    fn gaussian(grid: Grid, amp: f64, b: f64) -> Field {
        Field::from_fn(grid, |x| {
            let r2: f64 = x.iter().map(|c| c * c).sum();
            amp * (-0.5 * r2).exp() * Complex64::cis(-b * r2)
        })
        .unwrap()
    }

    fn constant(lambda: f64) -> CumulativeDamping {
        CumulativeDamping::new(DampingSpec::Constant { lambda }).unwrap()
    }

    #[test]
    fn gauge_examples() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let u = gaussian(g, 1.0, 0.3);
        let cd = constant(1.0);
        assert_eq!(gauge_forward(&u, 0.0, &cd).unwrap(), u);
        assert_eq!(gauge_backward(&u, 0.0, &cd).unwrap(), u);
        let t = 2f64.ln();
        let v = gauge_forward(&u, t, &cd).unwrap();
        assert!(v.max_abs_diff(&u.scaled(Complex64::new(2.0, 0.0))) < 1e-14);
        assert!((mass(&u) - (-2.0 * t).exp() * mass(&v)).abs() < 1e-14);
        assert!(gauge_backward(&v, t, &cd).unwrap().max_abs_diff(&u) < 1e-15);
    }

    #[test]
    fn step_reduces_to_free_flow_for_tiny_amplitude() {
        let g = Grid::new(1, 256, 16.0).unwrap();
        let v = gaussian(g, 1e-7, 0.2);
        let cd = constant(0.3);
        let stepped = strang_step(&v, 0.1, 0.05, &cd, 3.0, -1.0).unwrap();
        assert!(stepped.max_abs_diff(&free_evolve(&v, 0.05).unwrap()) <= 1e-12);
    }

    #[test]
    fn step_preserves_l2() {
        let g = Grid::new(2, 64, 8.0).unwrap();
        let v = gaussian(g, 2.0, 0.4);
        let s = strang_step(&v, 0.0, 1e-2, &constant(0.5), 4.0, -1.0).unwrap();
        assert!((mass(&s) - mass(&v)).abs() <= 1e-12 * mass(&v));
    }

    #[test]
    fn step_on_homogeneous_datum_matches_ode() {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let c = Complex64::new(0.8, 0.3);
        let v = Field::from_fn(g, |_| c).unwrap();
        let cd = constant(0.7);
        let (p, t, dt) = (3.0, 0.2, 0.1);
        let s = strang_step(&v, t, dt, &cd, p, -1.0).unwrap();
        let k = (1.0 - p) * 0.7;
        let weight = ((k * (t + dt)).exp() - (k * t).exp()) / k;
        let exact = c * Complex64::cis(c.norm_sqr() * weight);
        for z in s.values() {
            assert!((z - exact).norm() < 1e-13);
        }
    }

    #[test]
    fn detect_blowup_examples() {
        let th = Thresholds::default();
        let g = Grid::new(1, 64, 8.0).unwrap();
        let base = DiagnosticsRecord::from_v(&gaussian(g, 1.0, 0.0), 0.0, 0.0, 3.0, 1e-6);
        assert_eq!(detect_blowup(&[base, base], &th).unwrap(), Classification::Completed);
        let mut hot = base;
        hot.grad_norm_sq *= 1e7;
        hot.tail_fraction = 1e-6;
        assert_eq!(detect_blowup(&[base, hot], &th).unwrap(), Classification::BlowupDetected);
        let mut rough = base;
        rough.tail_fraction = 0.5;
        assert_eq!(detect_blowup(&[base, rough], &th).unwrap(), Classification::ResolutionLost);
        assert!(detect_blowup(&[base], &th).is_err());
    }

    #[test]
    fn linear_run_mass_decay() {
        let g = Grid::new(1, 256, 16.0).unwrap();
        let spec = ProblemSpec::new(3.0, -1.0, DampingSpec::Constant { lambda: 0.3 }, gaussian(g, 1e-6, 0.0), 1.0);
        let run = simulate(&spec).unwrap();
        assert_eq!(run.classification, Classification::Completed);
        let m0 = run.frames[0].mass;
        for f in &run.frames {
            assert!((f.mass - (-0.6 * f.t).exp() * m0).abs() <= 1e-10 * m0);
        }
        assert_eq!(run.frames.len(), DEFAULT_FRAMES + 1);
        assert!(run.frames.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(run.t_final(), 1.0);
    }

    #[test]
    fn defocusing_run_completes_with_bounded_energy() {
        let g = Grid::new(1, 256, 16.0).unwrap();
        let spec = ProblemSpec::new(3.0, 1.0, DampingSpec::Zero, gaussian(g, 1.5, 0.0), 2.0);
        let run = simulate(&spec).unwrap();
        assert_eq!(run.classification, Classification::Completed);
        // E of the defocusing flow is ‖∇u‖² + (2/(p+1))∫|u|^{p+1}.
        let e = |f: &DiagnosticsRecord| f.grad_norm_sq + 0.5 * f.lp1;
        let e0 = e(&run.frames[0]);
        assert!(run.frames.iter().all(|f| e(f) <= 1.01 * e0));
    }

    #[test]
    fn focusing_mass_critical_blowup() {
        let g = Grid::new(2, 128, 6.0).unwrap();
        let u0 = gaussian(g, 3.0, 0.0);
        assert!(energy(&u0, 3.0).unwrap() < 0.0);
        let mut spec = ProblemSpec::new(3.0, -1.0, DampingSpec::Zero, u0, 1.0);
        spec.thresholds.grad_factor = 4.0;
        let run = simulate(&spec).unwrap();
        assert_eq!(run.classification, Classification::BlowupDetected, "{:?}", run.blowup);
        let est = run.blowup.unwrap();
        assert!(est.lower <= est.estimate && est.estimate <= est.upper);
        let tail: Vec<f64> = run.frames.iter().rev().take(10).map(|f| f.grad_norm_sq).collect();
        assert!(tail.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn second_order_convergence() {
        let g = Grid::new(1, 256, 16.0).unwrap();
        let v0 = gaussian(g, 1.2, 0.3);
        let cd = constant(0.4);
        let run = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut v = v0.clone();
            for k in 0..steps {
                v = strang_step(&v, k as f64 * dt, dt, &cd, 3.0, -1.0).unwrap();
            }
            v
        };
        let reference = run(1.0 / 800.0);
        let errs: Vec<f64> = [0.01, 0.005].iter().map(|&dt| run(dt).max_abs_diff(&reference)).collect();
        let ratio = errs[0] / errs[1];
        assert!(ratio > 4.0 / 1.5 && ratio < 4.0 * 1.5, "ratio {ratio}");
    }

    #[test]
    fn time_reversal_defocusing() {
        let g = Grid::new(1, 256, 16.0).unwrap();
        let v0 = gaussian(g, 1.0, 0.5);
        let cd = CumulativeDamping::new(DampingSpec::Zero).unwrap();
        let dt = 1e-2;
        let mut v = v0.clone();
        for k in 0..50 {
            v = strang_step(&v, k as f64 * dt, dt, &cd, 3.0, 1.0).unwrap();
        }
        for k in (1..=50).rev() {
            v = strang_step(&v, k as f64 * dt, -dt, &cd, 3.0, 1.0).unwrap();
        }
        assert!(v.max_abs_diff(&v0) <= 1e-8);
    }

    #[test]
    fn spec_validation() {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let spec = ProblemSpec::new(0.5, -1.0, DampingSpec::Zero, gaussian(g, 1.0, 0.0), 1.0);
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("p > 1"), "{err}");
        let mut spec = ProblemSpec::new(3.0, 0.0, DampingSpec::Zero, gaussian(g, 1.0, 0.0), 1.0);
        assert!(spec.validate().is_err());
        spec.mu = 1.0;
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn fixed_step_has_one_step_per_frame() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let spec = ProblemSpec::new(3.0, -1.0, DampingSpec::Zero, gaussian(g, 1.0, 0.0), 0.5).with_fixed_step(1e-2, 1);
        let run = simulate(&spec).unwrap();
        assert_eq!(run.stats.steps, 50);
        assert_eq!(run.frames.len(), 51);
        assert!((run.stats.min_dt - 1e-2).abs() < 1e-15 && (run.stats.max_dt - 1e-2).abs() < 1e-15);
    }
}
