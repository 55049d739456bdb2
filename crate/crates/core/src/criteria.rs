//! Hypothesis checks, exponents, thresholds and bounds of the blow-up and
//! global-existence theorems, evaluated for a concrete datum and damping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize, Serializer};

use crate::damping::{abar, aunder, classify_monotonicity, CumulativeDamping, DampingSpec, Monotonicity};
use crate::error::{Error, Result};
use crate::grid::{boundary_mass_fraction, Field};
use crate::quadrature::cumulative_trapezoid;
use crate::quantities::{energy, grad_norm_sq, h1_norm, variance, virial_v, DiagnosticsRecord};

/// Relative slack used when comparing `p` with the critical exponents.
const EXPONENT_TOL: f64 = 1e-12;
/// Boundary-mass level above which a datum is not treated as having finite variance.
pub const FINITE_VARIANCE_TOL: f64 = 1e-6;
/// Sample count for the running-average estimates inside verdicts.
pub const RATIO_POINTS: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Subcritical,
    MassCritical,
    InterCritical,
    EnergyCritical,
    Supercritical,
}

pub fn mass_critical_exponent(dim: usize) -> f64 {
    1.0 + 4.0 / dim as f64
}

/// `1 + 4/(N-2)`, infinite for `N <= 2`.
pub fn energy_critical_exponent(dim: usize) -> f64 {
    if dim <= 2 {
        f64::INFINITY
    } else {
        1.0 + 4.0 / (dim as f64 - 2.0)
    }
}

fn near(p: f64, q: f64) -> bool {
    q.is_finite() && (p - q).abs() <= EXPONENT_TOL * q.abs()
}

pub fn regime(dim: usize, p: f64) -> Regime {
    let (lo, hi) = (mass_critical_exponent(dim), energy_critical_exponent(dim));
    if near(p, lo) {
        Regime::MassCritical
    } else if near(p, hi) {
        Regime::EnergyCritical
    } else if p < lo {
        Regime::Subcritical
    } else if p < hi {
        Regime::InterCritical
    } else {
        Regime::Supercritical
    }
}

/// `κ = (N+2-(N-2)p)/(N(p-1)-4)`.
///
/// Returns `+∞` exactly at the mass-critical exponent, where the
/// denominator vanishes.
pub fn kappa(dim: usize, p: f64) -> Result<f64> {
    let n = dim as f64;
    match regime(dim, p) {
        Regime::InterCritical => Ok((n + 2.0 - (n - 2.0) * p) / (n * (p - 1.0) - 4.0)),
        Regime::MassCritical => Ok(f64::INFINITY),
        r => Err(Error::Regime(format!("kappa needs 1+4/N <= p < 1+4/(N-2); N = {dim}, p = {p} is {r:?}"))),
    }
}

/// `θ = 2(p-1)(p+1)/(4-(N-2)(p-1))` for `N >= 3`; `+∞` at the energy-critical exponent.
pub fn theta(dim: usize, p: f64) -> Result<f64> {
    if dim < 3 {
        return Err(Error::Regime(format!("theta needs N >= 3, got N = {dim}")));
    }
    let n = dim as f64;
    match regime(dim, p) {
        Regime::MassCritical | Regime::InterCritical => Ok(2.0 * (p - 1.0) * (p + 1.0) / (4.0 - (n - 2.0) * (p - 1.0))),
        Regime::EnergyCritical => Ok(f64::INFINITY),
        r => Err(Error::Regime(format!("theta needs 1+4/N <= p < 1+4/(N-2); N = {dim}, p = {p} is {r:?}"))),
    }
}

/// Damping threshold `-2V₀/((κ+1)K₀)`.
pub fn a_star_blow0(v0: f64, k0: f64, kappa: f64) -> Result<f64> {
    if !(v0 < 0.0) {
        return Err(Error::Hypothesis(format!("threshold needs V(u0) < 0, got {v0}")));
    }
    if !(k0 > 0.0) {
        return Err(Error::Hypothesis(format!("threshold needs K(u0) > 0, got {k0}")));
    }
    if !(kappa > 0.0) {
        return Err(Error::Hypothesis(format!("threshold needs kappa > 0, got {kappa}")));
    }
    Ok(-2.0 * v0 / ((kappa + 1.0) * k0))
}

/// Upper bound on the maximal time, `-ln(1 + (κ+1) ā K₀/(2V₀)) / (2(κ+1) ā)`.
pub fn lifespan_bound(abar: f64, kappa: f64, k0: f64, v0: f64) -> Result<f64> {
    if !(v0 < 0.0) || !(k0 > 0.0) {
        return Err(Error::Hypothesis(format!("lifespan bound needs V0 < 0 < K0, got V0 = {v0}, K0 = {k0}")));
    }
    if !(abar >= 0.0) {
        return Err(Error::Hypothesis(format!("lifespan bound needs abar >= 0, got {abar}")));
    }
    if abar == 0.0 {
        return Ok(-k0 / (4.0 * v0));
    }
    let x = (kappa + 1.0) * abar * k0 / (2.0 * v0);
    if !(x > -1.0) {
        let a_star = a_star_blow0(v0, k0, kappa)?;
        return Err(Error::Hypothesis(format!("lifespan bound undefined for abar = {abar} >= a_* = {a_star}")));
    }
    Ok(-x.ln_1p() / (2.0 * (kappa + 1.0) * abar))
}

/// Serializes non-finite values as strings so that JSON stays lossless.
fn num<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn num_map<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    #[derive(Serialize)]
    struct N<'a>(#[serde(serialize_with = "num")] &'a f64);
    let mut map = s.serialize_map(Some(m.len()))?;
    for (k, v) in m {
        map.serialize_entry(k, &N(v))?;
    }
    map.end()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    Blow0,
    Blow1,
    Blow2,
    GE,
    AppendixB,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hypothesis {
    pub name: String,
    pub holds: bool,
    #[serde(serialize_with = "num")]
    pub value: f64,
    #[serde(serialize_with = "num")]
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriterionVerdict {
    pub theorem: Theorem,
    pub regime: Regime,
    pub hypotheses: Vec<Hypothesis>,
    #[serde(serialize_with = "num_map")]
    pub thresholds: BTreeMap<String, f64>,
    #[serde(serialize_with = "num_map")]
    pub bounds: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CriterionVerdict {
    fn new(theorem: Theorem, regime: Regime) -> Self {
        Self { theorem, regime, hypotheses: Vec::new(), thresholds: BTreeMap::new(), bounds: BTreeMap::new(), notes: Vec::new() }
    }

    fn hyp(&mut self, name: &str, holds: bool, value: f64, tolerance: f64) {
        self.hypotheses.push(Hypothesis { name: name.into(), holds, value, tolerance });
    }

    pub fn hypothesis(&self, name: &str) -> Option<&Hypothesis> {
        self.hypotheses.iter().find(|h| h.name == name)
    }

    pub fn holds(&self, name: &str) -> bool {
        self.hypothesis(name).is_some_and(|h| h.holds)
    }

    pub fn all_hold(&self) -> bool {
        self.hypotheses.iter().all(|h| h.holds)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("verdict serializes")
    }
}

/// `E`, `V`, `K` and `‖∇u‖²` of a datum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatumQuantities {
    pub energy: f64,
    pub virial: f64,
    pub variance: f64,
    pub grad_norm_sq: f64,
    pub boundary_fraction: f64,
}

impl DatumQuantities {
    pub fn of(u0: &Field, p: f64) -> Result<Self> {
        Ok(Self {
            energy: energy(u0, p)?,
            virial: virial_v(u0),
            variance: variance(u0),
            grad_norm_sq: grad_norm_sq(u0),
            boundary_fraction: boundary_mass_fraction(u0),
        })
    }

    /// Half-width of the band inside which `E` counts as zero.
    pub fn energy_band(&self) -> f64 {
        1e-12 * self.grad_norm_sq.max(1.0)
    }
}

fn dimension_hypothesis(v: &mut CriterionVerdict, dim: usize, min: usize) {
    v.hyp(&format!("dimension N >= {min}"), dim >= min, dim as f64, 0.0);
}

/// Conditions (I)-(III) on the sign of `E` and `V + √(EK)`.
pub fn check_blow1(u0: &Field, p: f64) -> Result<CriterionVerdict> {
    let dim = u0.grid().dim();
    let q = DatumQuantities::of(u0, p)?;
    let reg = regime(dim, p);
    let mut v = CriterionVerdict::new(Theorem::Blow1, reg);
    dimension_hypothesis(&mut v, dim, 2);
    let admissible = matches!(reg, Regime::MassCritical | Regime::InterCritical | Regime::EnergyCritical);
    v.hyp("p in [1+4/N, 1+4/(N-2)]", admissible, p, EXPONENT_TOL);
    v.hyp("finite variance", q.boundary_fraction <= FINITE_VARIANCE_TOL, q.boundary_fraction, FINITE_VARIANCE_TOL);
    let band = q.energy_band();
    let c1 = q.energy < -band;
    let c2 = q.energy.abs() <= band && q.virial < 0.0;
    let c3_value = if q.energy > band { q.virial + (q.energy * q.variance).sqrt() } else { f64::NAN };
    let c3 = q.energy > band && c3_value < 0.0;
    v.notes.push(format!(
        "E = {:e}, V = {:e}, K = {:e}; conditions (I) {c1}, (II) {c2}, (III) {c3}",
        q.energy, q.virial, q.variance
    ));
    v.hyp("one of (I)-(III)", c1 || c2 || c3, q.energy, band);
    v.thresholds.insert("E".into(), q.energy);
    v.thresholds.insert("V".into(), q.virial);
    v.thresholds.insert("K".into(), q.variance);
    v.thresholds.insert("E band".into(), band);
    v.thresholds.insert("condition (I)".into(), c1 as u8 as f64);
    v.thresholds.insert("condition (II)".into(), c2 as u8 as f64);
    v.thresholds.insert("condition (III)".into(), c3 as u8 as f64);
    v.thresholds.insert("V + sqrt(EK)".into(), c3_value);
    // The variance bound 4Et² + 4Vt + K turns negative at some t > 0.
    let w = blow_r_check(4.0 * q.energy, 4.0 * q.virial, q.variance)?;
    if let Some(t0) = w.witness {
        v.bounds.insert("t0 (variance bound negative)".into(), t0);
    }
    if reg == Regime::EnergyCritical {
        v.notes.push("energy-critical exponent: runs are resolution-limited".into());
    }
    Ok(v)
}

/// The explicit threshold and lifespan theorem for non-decreasing damping.
pub fn check_blow0(u0: &Field, spec: &DampingSpec, p: f64, horizon: f64) -> Result<CriterionVerdict> {
    let dim = u0.grid().dim();
    let q = DatumQuantities::of(u0, p)?;
    let reg = regime(dim, p);
    let mut v = CriterionVerdict::new(Theorem::Blow0, reg);
    dimension_hypothesis(&mut v, dim, 2);
    v.hyp("p in (1+4/N, 1+4/(N-2))", reg == Regime::InterCritical, p, EXPONENT_TOL);
    v.hyp("finite variance", q.boundary_fraction <= FINITE_VARIANCE_TOL, q.boundary_fraction, FINITE_VARIANCE_TOL);
    v.hyp("E(u0) < 0", q.energy < 0.0, q.energy, 0.0);
    v.hyp("V(u0) < 0", q.virial < 0.0, q.virial, 0.0);
    let mono = classify_monotonicity(spec, horizon, RATIO_POINTS)?;
    v.hyp("a non-decreasing", mono == Monotonicity::NonDecreasing, (mono == Monotonicity::NonDecreasing) as u8 as f64, 1e-12);
    let cd = CumulativeDamping::new(spec.clone())?;
    let est = abar(&cd, horizon, RATIO_POINTS)?;
    v.thresholds.insert("abar".into(), est.value);
    v.thresholds.insert("E".into(), q.energy);
    v.thresholds.insert("V".into(), q.virial);
    v.thresholds.insert("K".into(), q.variance);
    let kap = kappa(dim, p).ok().filter(|k| k.is_finite());
    let a_star = kap.and_then(|k| a_star_blow0(q.virial, q.variance, k).ok());
    if let Some(k) = kap {
        v.thresholds.insert("kappa".into(), k);
    }
    match a_star {
        Some(a) => {
            v.thresholds.insert("a_star".into(), a);
            v.hyp("abar < a_star", est.value < a, est.value, a);
        }
        None => v.hyp("abar < a_star", false, est.value, f64::NAN),
    }
    if est.upper_boundary {
        v.notes.push(format!("abar attained at the sampling horizon {horizon}; may be underestimated"));
    }
    if v.all_hold() {
        let k = kap.expect("kappa checked");
        let bound = lifespan_bound(est.value, k, q.variance, q.virial)?;
        v.bounds.insert("lifespan".into(), bound);
    }
    Ok(v)
}

/// Radial data with negative energy.
pub fn check_blow2(u0: &Field, p: f64) -> Result<CriterionVerdict> {
    let dim = u0.grid().dim();
    let q = DatumQuantities::of(u0, p)?;
    let reg = regime(dim, p);
    let mut v = CriterionVerdict::new(Theorem::Blow2, reg);
    dimension_hypothesis(&mut v, dim, 2);
    let upper = if dim == 2 { 5.0 } else { energy_critical_exponent(dim) };
    let in_range = matches!(reg, Regime::MassCritical | Regime::InterCritical | Regime::EnergyCritical)
        && (p <= upper || near(p, upper));
    v.hyp("p in [1+4/N, min(5, 1+4/(N-2))]", in_range, p, EXPONENT_TOL);
    let asym = radial_asymmetry(u0);
    v.hyp("radial", asym <= RADIAL_TOL, asym, RADIAL_TOL);
    v.hyp("E(u0) < 0", q.energy < 0.0, q.energy, 0.0);
    v.thresholds.insert("E".into(), q.energy);
    v.thresholds.insert("a_R leading term N(p-1)E".into(), dim as f64 * (p - 1.0) * q.energy);
    Ok(v)
}

/// Sufficient damping for global existence, with calibration constant `C`.
pub fn check_ge(u0: &Field, spec: &DampingSpec, p: f64, calibration: f64, horizon: f64) -> Result<CriterionVerdict> {
    let dim = u0.grid().dim();
    let reg = regime(dim, p);
    let mut v = CriterionVerdict::new(Theorem::GE, reg);
    dimension_hypothesis(&mut v, dim, 3);
    v.hyp("p in [1+4/N, 1+4/(N-2))", matches!(reg, Regime::MassCritical | Regime::InterCritical), p, EXPONENT_TOL);
    let cd = CumulativeDamping::new(spec.clone())?;
    let est = aunder(&cd, horizon, RATIO_POINTS)?;
    v.thresholds.insert("aunder".into(), est.value);
    v.thresholds.insert("C".into(), calibration);
    let norm = h1_norm(u0);
    v.thresholds.insert("H1 norm".into(), norm);
    match ge_required_aunder(norm, dim, p, calibration) {
        Ok(req) => {
            v.thresholds.insert("theta".into(), theta(dim, p)?);
            v.thresholds.insert("required aunder".into(), req);
            v.hyp("aunder >= C |u0|^theta", est.value >= req, est.value, req);
        }
        Err(_) => v.hyp("aunder >= C |u0|^theta", false, est.value, f64::NAN),
    }
    v.notes.push(format!("C = {calibration} is a configuration input, not a constant from the theorem"));
    Ok(v)
}

/// Sub-critical global existence and its Grönwall envelope at `horizon`.
pub fn check_appendix_b(u0: &Field, spec: &DampingSpec, p: f64, mu: f64, c0: f64, horizon: f64) -> Result<CriterionVerdict> {
    let dim = u0.grid().dim();
    let reg = regime(dim, p);
    let mut v = CriterionVerdict::new(Theorem::AppendixB, reg);
    dimension_hypothesis(&mut v, dim, 2);
    v.hyp("1 < p < 1+4/N", p > 1.0 && reg == Regime::Subcritical, p, EXPONENT_TOL);
    v.hyp("focusing", mu == -1.0, mu, 0.0);
    v.hyp("a >= 0 locally integrable", spec.validate().is_ok(), 1.0, 0.0);
    let cd = CumulativeDamping::new(spec.clone())?;
    let g0 = grad_norm_sq(u0);
    v.thresholds.insert("C0".into(), c0);
    v.bounds.insert("gronwall envelope at horizon".into(), gronwall_envelope(horizon, g0, c0, &cd)?);
    v.notes.push(format!("C0 = {c0} is a configuration input; the envelope comparison is informational"));
    Ok(v)
}

pub const RADIAL_TOL: f64 = 1e-10;

/// Largest relative deviation under axis permutations and reflections.
pub fn radial_asymmetry(u: &Field) -> f64 {
    let g = *u.grid();
    let (n, dim) = (g.n(), g.dim());
    let scale = u.max_modulus();
    if scale == 0.0 {
        return 0.0;
    }
    let flat = |idx: &[usize]| idx.iter().fold(0usize, |acc, &j| acc * n + j);
    let mut worst = 0.0_f64;
    for i in 0..g.len() {
        let m = g.multi_index(i);
        let idx = &m[..dim];
        // Reflection x_j -> -x_j maps index j to (n - j) mod n.
        for a in 0..dim {
            let mut r = [0usize; 3];
            r[..dim].copy_from_slice(idx);
            r[a] = (n - r[a]) % n;
            worst = worst.max((u.values()[i] - u.values()[flat(&r[..dim])]).norm());
        }
        for a in 1..dim {
            let mut r = [0usize; 3];
            r[..dim].copy_from_slice(idx);
            r.swap(0, a);
            worst = worst.max((u.values()[i] - u.values()[flat(&r[..dim])]).norm());
        }
    }
    worst / scale
}

/// Outcome of deciding whether `a t² + b t + c < 0` for some `t > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticNegativity {
    pub negative: bool,
    /// A time where the quadratic is negative.
    pub witness: Option<f64>,
}

/// Case analysis on the sign of the leading coefficient.
pub fn blow_r_check(a: f64, b: f64, c: f64) -> Result<QuadraticNegativity> {
    if !(c > 0.0) || !a.is_finite() || !b.is_finite() || !c.is_finite() {
        return Err(Error::Precondition(format!("quadratic check needs finite coefficients and c > 0, got ({a}, {b}, {c})")));
    }
    let witness = if a < 0.0 {
        // Past twice the positive root.
        let root = (-b - (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
        Some(2.0 * root)
    } else if a == 0.0 {
        (b < 0.0).then(|| 2.0 * c / -b)
    } else if b + 2.0 * (a * c).sqrt() < 0.0 {
        Some(-b / (2.0 * a))
    } else {
        None
    };
    Ok(QuadraticNegativity { negative: witness.is_some(), witness })
}

/// `C ‖u₀‖_{H¹}^θ`.
pub fn ge_required_aunder(h1_norm: f64, dim: usize, p: f64, calibration: f64) -> Result<f64> {
    if !(h1_norm > 0.0) || !(calibration > 0.0) {
        return Err(Error::Precondition(format!(
            "required damping needs positive norm and calibration, got {h1_norm} and {calibration}"
        )));
    }
    let th = theta(dim, p)?;
    Ok(calibration * h1_norm.powf(th))
}

/// `(2‖∇u₀‖² + 2C₀ + 4C₀ A(t)) e^{2A(t)}`.
pub fn gronwall_envelope(t: f64, grad0_sq: f64, c0: f64, cd: &CumulativeDamping) -> Result<f64> {
    if !(grad0_sq >= 0.0) || !(c0 > 0.0) {
        return Err(Error::Precondition(format!("envelope needs grad0_sq >= 0 and C0 > 0, got {grad0_sq}, {c0}")));
    }
    let a = cd.cumulative(t)?;
    Ok((2.0 * grad0_sq + 2.0 * c0 + 4.0 * c0 * a) * (2.0 * a).exp())
}

/// Per-frame terms of the variance upper bound `K(t) <= P(t) + (16(p-1)/(p+1)) Q(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtTerms {
    pub t: f64,
    /// Variance of the gauge field.
    pub variance: f64,
    /// `4E₀t² + 4V₀t + K₀`.
    pub quadratic: f64,
    /// Triple time integral of `a e^{(1-p)A} ‖v‖_{p+1}^{p+1}`.
    pub triple: f64,
    /// `(t³/6) sup_{s<=t} ‖v(s)‖_{p+1}^{p+1} ā`, with `t³/6` integrated by the same rule as `triple`.
    pub triple_bound: f64,
}

impl KtTerms {
    pub fn upper(&self, p: f64) -> f64 {
        self.quadratic + 16.0 * (p - 1.0) / (p + 1.0) * self.triple
    }
}

/// Three nested running trapezoid integrals.
pub fn triple_cumulative(t: &[f64], g: &[f64]) -> Vec<f64> {
    let g1 = cumulative_trapezoid(t, g);
    let g2 = cumulative_trapezoid(t, &g1);
    cumulative_trapezoid(t, &g2)
}

pub fn kt_inequality_terms(frames: &[DiagnosticsRecord], cd: &CumulativeDamping, p: f64, abar: f64) -> Result<Vec<KtTerms>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let t: Vec<f64> = frames.iter().map(|f| f.t).collect();
    let lp1: Vec<f64> = frames.iter().map(|f| f.v_lp1(p)).collect();
    let g: Vec<f64> = frames
        .iter()
        .zip(&lp1)
        .map(|(f, l)| cd.rate(f.t) * ((1.0 - p) * f.cumulative).exp() * l)
        .collect();
    let q = triple_cumulative(&t, &g);
    // The same quadrature applied to 1, so the comparison carries no trapezoid bias.
    let cube = triple_cumulative(&t, &vec![1.0; t.len()]);
    let mut sup = 0.0_f64;
    Ok(frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            sup = sup.max(lp1[i]);
            KtTerms {
                t: f.t,
                variance: f.v_variance(),
                quadratic: 4.0 * first.energy * f.t * f.t + 4.0 * first.virial * f.t + first.variance,
                triple: q[i],
                triple_bound: cube[i] * sup * abar,
            }
        })
        .collect())
}
