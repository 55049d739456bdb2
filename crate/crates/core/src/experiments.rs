//! Multi-run studies: identity residuals, theorem scenarios, damping
//! sweeps and threshold bisection, and the free-propagator norm.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{
    a_star_blow0, blow_r_check, gronwall_envelope, kappa, kt_inequality_terms, lifespan_bound, radial_asymmetry, regime,
    theta, DatumQuantities, KtTerms, QuadraticNegativity, Regime, RADIAL_TOL,
};
use crate::damping::{aunder, CumulativeDamping, DampingSpec};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::quadrature::{cumulative_trapezoid, trapezoid};
use crate::quantities::{
    grad_norm_sq, h1_norm, localized_virial, localized_virial_rate, CutoffProfile, DiagnosticsRecord, VirialWeight,
};
use crate::solver::{simulate, simulate_observed, Classification, ProblemSpec};

/// Environment variable capping the worker count of grid sweeps.
pub const THREADS_ENV: &str = "NLSLAB_THREADS";

/// Maximum relative residuals of the balance laws along one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    pub mass: f64,
    pub energy: f64,
    pub variance: f64,
    pub virial: f64,
    pub hamiltonian: f64,
    pub hamiltonian_integrated: f64,
    pub second_virial: f64,
    /// `max |E(t) - E(0)| / max(|E(0)|, ‖∇u₀‖²)`, the energy drift.
    pub energy_drift: f64,
    pub frames_used: usize,
    pub classification: Classification,
    /// Frames after detection were dropped.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub coarse: IdentityResiduals,
    pub fine: IdentityResiduals,
    /// Coarse over fine residual, per law.
    pub ratios: IdentityRatios,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityRatios {
    pub energy: f64,
    pub variance: f64,
    pub virial: f64,
    pub hamiltonian: f64,
    pub second_virial: f64,
}

/// `max |lhs - rhs| / max |rhs|` (falls back to absolute when `rhs ≡ 0`).
fn relative_residual(lhs: &[f64], rhs: &[f64]) -> f64 {
    let diff = lhs.iter().zip(rhs).map(|(l, r)| (l - r).abs()).fold(0.0, f64::max);
    let scale = rhs.iter().map(|r| r.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Residuals from uniformly spaced frames.
pub fn identity_residuals(frames: &[DiagnosticsRecord], cd: &CumulativeDamping, p: f64, dim: usize) -> IdentityResiduals {
    let n = frames.len();
    let mut res = IdentityResiduals {
        mass: 0.0,
        energy: 0.0,
        variance: 0.0,
        virial: 0.0,
        hamiltonian: 0.0,
        hamiltonian_integrated: 0.0,
        second_virial: 0.0,
        energy_drift: 0.0,
        frames_used: n,
        classification: Classification::Completed,
        truncated: false,
    };
    if n < 3 {
        return res;
    }
    let m0 = frames[0].mass;
    res.mass = frames.iter().map(|f| (f.mass * (2.0 * f.cumulative).exp() - m0).abs()).fold(0.0, f64::max) / m0.max(f64::MIN_POSITIVE);
    let e0 = frames[0].energy;
    res.energy_drift =
        frames.iter().map(|f| (f.energy - e0).abs()).fold(0.0, f64::max) / e0.abs().max(frames[0].grad_norm_sq);

    let coupling = |f: &DiagnosticsRecord| ((1.0 - p) * f.cumulative).exp();
    let nl = 2.0 * (p - 1.0) / (p + 1.0);
    let mut lhs = [vec![], vec![], vec![], vec![], vec![]];
    let mut rhs = [vec![], vec![], vec![], vec![], vec![]];
    for k in 1..n - 1 {
        let (a, b, c) = (&frames[k - 1], &frames[k], &frames[k + 1]);
        let h2 = c.t - a.t;
        let rate = cd.rate(b.t);
        let d = |g: fn(&DiagnosticsRecord) -> f64| (g(c) - g(a)) / h2;
        lhs[0].push(d(|f| f.energy));
        rhs[0].push(-2.0 * rate * b.i_func);
        lhs[1].push(d(|f| f.variance) + 2.0 * rate * b.variance);
        rhs[1].push(4.0 * b.virial);
        lhs[2].push(d(|f| f.virial) + 2.0 * rate * b.virial);
        rhs[2].push(2.0 * b.p_func);
        lhs[3].push(d(|f| f.hamiltonian_v));
        rhs[3].push(nl * rate * coupling(b) * b.v_lp1(p));
        let h = 0.5 * h2;
        lhs[4].push((c.v_variance() - 2.0 * b.v_variance() + a.v_variance()) / (h * h));
        rhs[4].push(8.0 * b.v_grad_norm_sq() - 4.0 * dim as f64 * (p - 1.0) / (p + 1.0) * coupling(b) * b.v_lp1(p));
    }
    res.energy = relative_residual(&lhs[0], &rhs[0]);
    res.variance = relative_residual(&lhs[1], &rhs[1]);
    res.virial = relative_residual(&lhs[2], &rhs[2]);
    res.hamiltonian = relative_residual(&lhs[3], &rhs[3]);
    res.second_virial = relative_residual(&lhs[4], &rhs[4]);

    let t: Vec<f64> = frames.iter().map(|f| f.t).collect();
    let g: Vec<f64> = frames.iter().map(|f| cd.rate(f.t) * coupling(f) * f.v_lp1(p)).collect();
    let acc = cumulative_trapezoid(&t, &g);
    let predicted: Vec<f64> = acc.iter().map(|q| e0 + nl * q).collect();
    let measured: Vec<f64> = frames.iter().map(|f| f.hamiltonian_v).collect();
    res.hamiltonian_integrated = relative_residual(&measured, &predicted);
    res
}

/// Frames on the uniform cadence, before any detection.
fn uniform_frames(run: &crate::solver::TrajectoryRecord) -> (Vec<DiagnosticsRecord>, bool) {
    let mut frames = run.frames.clone();
    let truncated = run.classification != Classification::Completed;
    if truncated && frames.len() > 1 {
        frames.pop();
    }
    (frames, truncated)
}

fn residuals_of(spec: &ProblemSpec) -> Result<IdentityResiduals> {
    let cd = CumulativeDamping::new(spec.damping.clone())?;
    let run = simulate(spec)?;
    let (frames, truncated) = uniform_frames(&run);
    let mut r = identity_residuals(&frames, &cd, spec.p, spec.dim());
    r.classification = run.classification;
    r.truncated = truncated;
    Ok(r)
}

/// Runs `spec` with one frame per fixed step `dt`, then again at `dt/2`.
pub fn verify_identities(spec: &ProblemSpec, dt: f64) -> Result<IdentityReport> {
    let coarse = residuals_of(&spec.clone().with_fixed_step(dt, 1))?;
    let fine = residuals_of(&spec.clone().with_fixed_step(0.5 * dt, 1))?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::INFINITY };
    let ratios = IdentityRatios {
        energy: ratio(coarse.energy, fine.energy),
        variance: ratio(coarse.variance, fine.variance),
        virial: ratio(coarse.virial, fine.virial),
        hamiltonian: ratio(coarse.hamiltonian, fine.hamiltonian),
        second_virial: ratio(coarse.second_virial, fine.second_virial),
    };
    Ok(IdentityReport { coarse, fine, ratios })
}

/// One constant-damping run of the explicit-threshold scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Blow0Run {
    pub damping: f64,
    pub below_threshold: bool,
    pub bound: Option<f64>,
    pub classification: Classification,
    pub t_detect: f64,
    /// `t_detect <= bound`, asserted only below the threshold.
    pub within_bound: Option<bool>,
    pub kt: KtCheck,
    pub localized: Vec<LocalizedCheck>,
    #[serde(skip)]
    pub frames: Vec<DiagnosticsRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Blow0Report {
    pub energy: f64,
    pub virial: f64,
    pub variance: f64,
    pub kappa: f64,
    pub a_star: f64,
    pub runs: Vec<Blow0Run>,
}

/// Frame-wise `0 <= K(t) <= P(t) + (16(p-1)/(p+1)) Q(t) + tol`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KtCheck {
    pub holds: bool,
    pub tolerance: f64,
    /// Largest `K - upper` over the frames (negative when the bound holds with room).
    pub max_excess: f64,
    pub min_variance: f64,
    /// `Q(t) <= (t³/6) sup‖v‖^{p+1}_{p+1} ā` at every frame.
    pub triple_bound_holds: bool,
    pub frames_checked: usize,
    #[serde(skip)]
    pub terms: Vec<KtTerms>,
}

pub fn kt_check(frames: &[DiagnosticsRecord], cd: &CumulativeDamping, p: f64, abar: f64) -> Result<KtCheck> {
    let terms = kt_inequality_terms(frames, cd, p, abar)?;
    let tolerance = 1e-6 * frames.first().map(|f| f.variance).unwrap_or(0.0);
    let max_excess = terms.iter().map(|k| k.variance - k.upper(p)).fold(f64::NEG_INFINITY, f64::max);
    let min_variance = terms.iter().map(|k| k.variance).fold(f64::INFINITY, f64::min);
    let triple_bound_holds = terms.iter().all(|k| k.triple <= k.triple_bound * (1.0 + 1e-9) + 1e-300);
    Ok(KtCheck {
        holds: max_excess <= tolerance && min_variance >= 0.0,
        tolerance,
        max_excess,
        min_variance,
        triple_bound_holds,
        frames_checked: terms.len(),
        terms,
    })
}

/// Frame-wise second difference of `V_φR` against the supercritical
/// localized estimate `2N(p-1)E₀ + (4N(p-1)²/(p+1))∫a e^{(1-p)A}‖v‖^{p+1}_{p+1} + 2(4-N(p-1))‖∇v‖²`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalizedCheck {
    pub radius: f64,
    pub slack: f64,
    pub holds: bool,
    /// Largest `(lhs - rhs) / max(|lhs|, |rhs|)`.
    pub max_relative_excess: f64,
    pub frames_checked: usize,
}

pub fn localized_check(
    frames: &[DiagnosticsRecord],
    weighted: &[f64],
    cd: &CumulativeDamping,
    p: f64,
    dim: usize,
    radius: f64,
    slack: f64,
) -> LocalizedCheck {
    let n = frames.len().min(weighted.len());
    let nd = dim as f64;
    let e0 = frames.first().map(|f| f.energy).unwrap_or(0.0);
    let t: Vec<f64> = frames[..n].iter().map(|f| f.t).collect();
    let g: Vec<f64> =
        frames[..n].iter().map(|f| cd.rate(f.t) * ((1.0 - p) * f.cumulative).exp() * f.v_lp1(p)).collect();
    let acc = cumulative_trapezoid(&t, &g);
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    for k in 1..n.saturating_sub(1) {
        let h = 0.5 * (t[k + 1] - t[k - 1]);
        let lhs = (weighted[k + 1] - 2.0 * weighted[k] + weighted[k - 1]) / (h * h);
        let rhs = 2.0 * nd * (p - 1.0) * e0
            + 4.0 * nd * (p - 1.0).powi(2) / (p + 1.0) * acc[k]
            + 2.0 * (4.0 - nd * (p - 1.0)) * frames[k].v_grad_norm_sq();
        let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((lhs - rhs) / scale);
        checked += 1;
    }
    LocalizedCheck { radius, slack, holds: worst <= slack, max_relative_excess: worst, frames_checked: checked }
}

fn constant_damping(lambda: f64) -> DampingSpec {
    if lambda == 0.0 {
        DampingSpec::Zero
    } else {
        DampingSpec::Constant { lambda }
    }
}

/// Runs the explicit-threshold scenario at each constant damping value.
///
/// Values below `a_*` get the lifespan bound as `t_end` (scaled by
/// `horizon_factor`) and a one-sided check; values above are recorded only.
/// `radii` adds the localized virial check on each run.
pub fn blow0_scenario(base: &ProblemSpec, damping_values: &[f64], horizon_factor: f64, radii: &[f64]) -> Result<Blow0Report> {
    let dim = base.dim();
    let q = DatumQuantities::of(&base.initial, base.p)?;
    if !(q.energy < 0.0 && q.virial < 0.0) {
        return Err(Error::Config(format!(
            "scenario needs E(u0) < 0 and V(u0) < 0, got E = {}, V = {}",
            q.energy, q.virial
        )));
    }
    let kap = kappa(dim, base.p)?;
    let a_star = a_star_blow0(q.virial, q.variance, kap)?;
    let mut runs = Vec::new();
    for &lambda in damping_values {
        let below = lambda < a_star;
        let bound = if below { Some(lifespan_bound(lambda, kap, q.variance, q.virial)?) } else { None };
        let mut spec = base.clone();
        spec.damping = constant_damping(lambda);
        if let Some(b) = bound {
            spec.t_end = b * horizon_factor;
        }
        let profiles: Vec<VirialWeight> =
            radii.iter().map(|&r| CutoffProfile::new(r, dim).map(VirialWeight::Cutoff)).collect::<Result<_>>()?;
        let mut weighted: Vec<Vec<f64>> = vec![Vec::new(); radii.len()];
        let run = simulate_observed(&spec, |v, _| {
            for (w, prof) in weighted.iter_mut().zip(&profiles) {
                w.push(localized_virial(v, prof));
            }
        })?;
        let cd = CumulativeDamping::new(spec.damping.clone())?;
        let (frames, _) = uniform_frames(&run);
        let kt = kt_check(&frames, &cd, spec.p, lambda)?;
        let localized = radii
            .iter()
            .zip(&weighted)
            .map(|(&r, w)| localized_check(&frames, w, &cd, spec.p, dim, r, LOCALIZED_SLACK))
            .collect();
        let detected = run.classification == Classification::BlowupDetected;
        let t_detect = run.t_detect();
        log::info!("blow0 run a = {lambda}: {} at t = {t_detect} (bound {bound:?})", run.classification);
        runs.push(Blow0Run {
            damping: lambda,
            below_threshold: below,
            bound,
            classification: run.classification,
            t_detect,
            within_bound: bound.map(|b| detected && t_detect <= b),
            kt,
            localized,
            frames: run.frames,
        });
    }
    Ok(Blow0Report { energy: q.energy, virial: q.virial, variance: q.variance, kappa: kap, a_star, runs })
}

/// Relative slack of the localized second-difference check.
pub const LOCALIZED_SLACK: f64 = 5e-2;

/// One probe of a damping sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub param: f64,
    pub classification: Classification,
    /// Detection time, or the final time when nothing was detected.
    pub t_detect: f64,
}

impl Probe {
    /// Blow-up and loss of resolution both count as collapse.
    pub fn collapsed(&self) -> bool {
        self.classification != Classification::Completed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Probes sorted by parameter.
    pub probes: Vec<Probe>,
    /// `[a_lo, a_hi]`: collapse at `a_lo`, completion at `a_hi`.
    pub bracket: Option<[f64; 2]>,
    pub width: f64,
    /// Every probe below the bracket collapsed and every probe above completed.
    pub consistent: bool,
    pub probe_count: usize,
}

impl SweepResult {
    fn from_probes(mut probes: Vec<Probe>, bracket: Option<[f64; 2]>) -> Self {
        probes.sort_by(|a, b| a.param.total_cmp(&b.param));
        let consistent = match bracket {
            Some([lo, hi]) => probes.iter().all(|p| if p.param <= lo { p.collapsed() } else if p.param >= hi { !p.collapsed() } else { true }),
            None => probes.windows(2).all(|w| w[0].collapsed() >= w[1].collapsed()),
        };
        let width = bracket.map(|[lo, hi]| hi - lo).unwrap_or(f64::NAN);
        let probe_count = probes.len();
        Self { probes, bracket, width, consistent, probe_count }
    }

    pub fn relative_width(&self) -> f64 {
        self.bracket.map(|[lo, hi]| (hi - lo) / hi.abs()).unwrap_or(f64::NAN)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["param", "classification", "t_detect"])?;
        for p in &self.probes {
            wtr.write_record([p.param.to_string(), p.classification.to_string(), p.t_detect.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn probe(base: &ProblemSpec, lambda: f64) -> Result<Probe> {
    let mut spec = base.clone();
    spec.damping = constant_damping(lambda);
    let run = simulate(&spec)?;
    let p = Probe { param: lambda, classification: run.classification, t_detect: run.t_detect() };
    log::info!("probe a = {lambda}: {} at t = {}", p.classification, p.t_detect);
    Ok(p)
}

/// Bisection on constant damping until the bracket is narrower than
/// `tol` (absolute) or `rel_tol · a_hi`; each probe runs to `t_probe`.
pub fn bisect_threshold(base: &ProblemSpec, a_lo: f64, a_hi: f64, tol: f64, rel_tol: f64, t_probe: f64, max_probes: usize) -> Result<SweepResult> {
    if !(a_lo < a_hi) || a_lo < 0.0 {
        return Err(Error::Bracket(format!("bracket needs 0 <= a_lo < a_hi, got [{a_lo}, {a_hi}]")));
    }
    let mut spec = base.clone();
    spec.t_end = t_probe;
    let mut probes = vec![probe(&spec, a_lo)?, probe(&spec, a_hi)?];
    if !probes[0].collapsed() || probes[1].collapsed() {
        let result = SweepResult::from_probes(probes.clone(), None);
        return Err(Error::Bracket(format!(
            "bracket endpoints must collapse at a_lo and complete at a_hi; got {} at {a_lo} and {} at {a_hi} ({} probes)",
            probes[0].classification, probes[1].classification, result.probe_count
        )));
    }
    let (mut lo, mut hi) = (a_lo, a_hi);
    while hi - lo > tol && hi - lo > rel_tol * hi && probes.len() < max_probes {
        let mid = 0.5 * (lo + hi);
        let p = probe(&spec, mid)?;
        if p.collapsed() {
            lo = mid;
        } else {
            hi = mid;
        }
        probes.push(p);
    }
    Ok(SweepResult::from_probes(probes, Some([lo, hi])))
}

/// Worker count: `NLSLAB_THREADS` if set, else rayon's default.
pub fn sweep_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Independent probes at every value, fanned out over a worker pool.
pub fn grid_sweep(base: &ProblemSpec, values: &[f64]) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let probes: Vec<Probe> = pool.install(|| values.par_iter().map(|&a| probe(base, a)).collect::<Result<_>>())?;
    let lo = probes.iter().filter(|p| p.collapsed()).map(|p| p.param).fold(f64::NEG_INFINITY, f64::max);
    let hi = probes.iter().filter(|p| !p.collapsed() && p.param > lo).map(|p| p.param).fold(f64::INFINITY, f64::min);
    let bracket = (lo.is_finite() && hi.is_finite()).then_some([lo, hi]);
    Ok(SweepResult::from_probes(probes, bracket))
}

/// `‖e^{itΔ}u₀‖_{p+1}^{p+1}` at `frames + 1` evenly spaced times on `[0, horizon]`.
pub fn free_lp1_profile(u0: &Field, p: f64, horizon: f64, frames: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(horizon > 0.0) || frames == 0 {
        return Err(Error::Precondition(format!("free profile needs T > 0 and frames >= 1, got {horizon}, {frames}")));
    }
    let g = *u0.grid();
    let ksq = g.k_squared();
    let hat = u0.spectrum();
    let e = 0.5 * (p + 1.0);
    let times: Vec<f64> = (0..=frames).map(|k| horizon * k as f64 / frames as f64).collect();
    let values = times
        .par_iter()
        .map(|&t| {
            let mut w: Vec<Complex64> = hat.iter().zip(&ksq).map(|(z, k2)| z * Complex64::cis(-k2 * t)).collect();
            g.inverse(&mut w);
            w.iter().map(|z| z.norm_sqr().powf(e)).sum::<f64>() * g.cell_volume()
        })
        .collect();
    Ok((times, values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeNormReport {
    pub theta: f64,
    /// `∫₀ᵀ e^{-θA(t)} ‖e^{itΔ}u₀‖_{p+1}^θ dt`.
    pub integral: f64,
    /// `sup_t ‖e^{itΔ}u₀‖_{p+1}^θ` over the frames.
    pub frame_sup: f64,
    /// `frame_sup (1 - e^{-θaT})/(θa)` for constant damping.
    pub constant_damping_bound: Option<f64>,
    pub aunder: f64,
    /// `C ‖u₀‖_{H¹}^θ / (θ a̲)`.
    pub comparison_bound: f64,
}

pub fn free_norm_from_profile(
    times: &[f64],
    lp1: &[f64],
    spec: &DampingSpec,
    dim: usize,
    p: f64,
    h1: f64,
    calibration: f64,
) -> Result<FreeNormReport> {
    let th = theta(dim, p)?;
    let cd = CumulativeDamping::new(spec.clone())?;
    let horizon = *times.last().unwrap_or(&0.0);
    let norms: Vec<f64> = lp1.iter().map(|l| l.powf(th / (p + 1.0))).collect();
    let integrand: Vec<f64> =
        times.iter().zip(&norms).map(|(&t, n)| cd.cumulative(t).map(|a| (-th * a).exp() * n)).collect::<Result<_>>()?;
    let frame_sup = norms.iter().copied().fold(0.0, f64::max);
    let constant_damping_bound = match spec {
        DampingSpec::Constant { lambda } if *lambda > 0.0 => Some(frame_sup * -(-th * lambda * horizon).exp_m1() / (th * lambda)),
        DampingSpec::Zero => Some(frame_sup * horizon),
        _ => None,
    };
    let low = aunder(&cd, horizon.max(1.0) * 1e3, 2000)?.value;
    Ok(FreeNormReport {
        theta: th,
        integral: trapezoid(times, &integrand),
        frame_sup,
        constant_damping_bound,
        aunder: low,
        comparison_bound: calibration * h1.powf(th) / (th * low),
    })
}

pub fn free_norm_ge(u0: &Field, spec: &DampingSpec, p: f64, horizon: f64, frames: usize, calibration: f64) -> Result<FreeNormReport> {
    let dim = u0.grid().dim();
    theta(dim, p)?;
    let (times, lp1) = free_lp1_profile(u0, p, horizon, frames)?;
    free_norm_from_profile(&times, &lp1, spec, dim, p, h1_norm(u0), calibration)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AppendixBReport {
    pub classification: Classification,
    pub c0: f64,
    pub max_grad_norm_sq: f64,
    pub all_finite: bool,
    /// Frames where `‖∇u‖²` exceeds the envelope (informational).
    pub envelope_exceeded: usize,
    pub frames: Vec<(f64, f64, f64)>,
}

/// Long sub-critical focusing run with the Grönwall envelope alongside.
pub fn appendix_b_monitor(spec: &ProblemSpec, c0: f64) -> Result<AppendixBReport> {
    let dim = spec.dim();
    if regime(dim, spec.p) != Regime::Subcritical {
        return Err(Error::Precondition(format!("sub-critical monitor needs 1 < p < 1+4/N; N = {dim}, p = {}", spec.p)));
    }
    if spec.mu != -1.0 {
        return Err(Error::Precondition("sub-critical monitor is for the focusing sign mu = -1".into()));
    }
    let cd = CumulativeDamping::new(spec.damping.clone())?;
    let run = simulate(spec)?;
    let g0 = grad_norm_sq(&spec.initial);
    let mut frames = Vec::with_capacity(run.frames.len());
    let mut exceeded = 0;
    for f in &run.frames {
        let env = gronwall_envelope(f.t, g0, c0, &cd)?;
        if f.grad_norm_sq > env {
            exceeded += 1;
        }
        frames.push((f.t, f.grad_norm_sq, env));
    }
    Ok(AppendixBReport {
        classification: run.classification,
        c0,
        max_grad_norm_sq: run.frames.iter().map(|f| f.grad_norm_sq).fold(0.0, f64::max),
        all_finite: run.frames.iter().all(|f| f.grad_norm_sq.is_finite()),
        envelope_exceeded: exceeded,
        frames,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialCoefficients {
    pub radius: f64,
    /// Leading term `N(p-1)E(u₀)`.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub negativity: QuadraticNegativity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialBlow2Report {
    pub energy: f64,
    pub asymmetry: f64,
    pub coefficients: Vec<RadialCoefficients>,
    pub runs: Vec<RadialRun>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialRun {
    pub damping: f64,
    pub classification: Classification,
    pub t_detect: f64,
    pub localized: Vec<LocalizedCheck>,
}

/// Cut-off quadratic coefficients per radius, plus runs at small damping.
pub fn radial_blow2_scenario(base: &ProblemSpec, radii: &[f64], damping_values: &[f64]) -> Result<RadialBlow2Report> {
    let dim = base.dim();
    let u0 = &base.initial;
    let asymmetry = radial_asymmetry(u0);
    if asymmetry > RADIAL_TOL {
        return Err(Error::Precondition(format!("datum is not radial: relative asymmetry {asymmetry:e} > {RADIAL_TOL:e}")));
    }
    let q = DatumQuantities::of(u0, base.p)?;
    let weights: Vec<VirialWeight> =
        radii.iter().map(|&r| CutoffProfile::new(r, dim).map(VirialWeight::Cutoff)).collect::<Result<_>>()?;
    let a = dim as f64 * (base.p - 1.0) * q.energy;
    let coefficients = radii
        .iter()
        .zip(&weights)
        .map(|(&radius, w)| {
            let (b, c) = (localized_virial_rate(u0, w), localized_virial(u0, w));
            Ok(RadialCoefficients { radius, a, b, c, negativity: blow_r_check(a, b, c)? })
        })
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for &lambda in damping_values {
        let mut spec = base.clone();
        spec.damping = constant_damping(lambda);
        let mut weighted: Vec<Vec<f64>> = vec![Vec::new(); radii.len()];
        let run = simulate_observed(&spec, |v, _| {
            for (acc, w) in weighted.iter_mut().zip(&weights) {
                acc.push(localized_virial(v, w));
            }
        })?;
        let cd = CumulativeDamping::new(spec.damping.clone())?;
        let (frames, _) = uniform_frames(&run);
        let localized = radii
            .iter()
            .zip(&weighted)
            .map(|(&r, w)| localized_check(&frames, w, &cd, spec.p, dim, r, LOCALIZED_SLACK))
            .collect();
        runs.push(RadialRun { damping: lambda, classification: run.classification, t_detect: run.t_detect(), localized });
    }
    Ok(RadialBlow2Report { energy: q.energy, asymmetry, coefficients, runs })
}

/// Seeded random triples for the quadratic-negativity decision: `a` is 0 with
/// probability 0.2, else `±U[1e-2, 1]`; `b ∈ [-1, 1]` (kept away from 0 when
/// `a = 0`); `c ∈ [1e-2, 1]`.
pub fn random_triples(seed: u64, count: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    (0..count)
        .map(|_| {
            let a = if rng.gen_bool(0.2) { 0.0 } else { sign(&mut rng) * rng.gen_range(1e-2..=1.0) };
            let b = if a == 0.0 { sign(&mut rng) * rng.gen_range(1e-2..=1.0) } else { rng.gen_range(-1.0..=1.0) };
            [a, b, rng.gen_range(1e-2..=1.0)]
        })
        .collect()
}

/// Dense sampling of `a t² + b t + c` on `(0, span]`, plus the vertex.
pub fn sampled_negativity(a: f64, b: f64, c: f64, span: f64, samples: usize) -> bool {
    let f = |t: f64| (a * t + b) * t + c;
    if a > 0.0 && -b / (2.0 * a) > 0.0 && f(-b / (2.0 * a)) < 0.0 {
        return true;
    }
    (1..=samples).any(|k| f(span * k as f64 / samples as f64) < 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub seed: u64,
    pub triples: usize,
    pub disagreements: Vec<[f64; 3]>,
}

/// Compares [`blow_r_check`] with [`sampled_negativity`] on seeded triples.
pub fn blow_r_agreement(seed: u64, count: usize, span: f64, samples: usize) -> Result<Agreement> {
    let triples = random_triples(seed, count);
    let verdicts: Vec<bool> = triples.iter().map(|&[a, b, c]| blow_r_check(a, b, c).map(|q| q.negative)).collect::<Result<_>>()?;
    let disagreements = triples
        .par_iter()
        .zip(verdicts)
        .filter(|(&[a, b, c], analytic)| *analytic != sampled_negativity(a, b, c, span, samples))
        .map(|(t, _)| *t)
        .collect();
    Ok(Agreement { seed, triples: count, disagreements })
}
