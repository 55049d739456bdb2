//! Damping functions `a(t) >= 0`, their cumulative integral `A(t)`, and
//! the running-average measurements built from `A(t)/t`.
//!
//! Sup/inf over the open half-line are never claimed exactly: every
//! measurement is a grid estimate that carries boundary flags and a
//! refinement history so callers can see when the extremum sits at
//! `t -> 0` or at the horizon.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, gauss_legendre};

/// Default relative tolerance for numeric cumulative integrals.
pub const DEFAULT_QUADRATURE_TOL: f64 = 1e-10;

/// A named, parameterized damping function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DampingSpec {
    /// `a(t) = lambda`
    Constant { lambda: f64 },
    /// `a(t) = lambda (1 - e^{-t})`
    Saturating { lambda: f64 },
    /// `a(t) = (1 + t)^{-theta}`
    PolynomialDecay { theta: f64 },
    /// Triangular spikes of height `4n` on `[n, n+1]`, zero on `[0, 1]`.
    AppendixSpike { alpha: f64 },
    /// Linear interpolation of a table, held constant past its last knot.
    PiecewiseLinear { table: PiecewiseTable },
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    NonDecreasing,
    NonIncreasing,
    Neither,
}

/// Knots `(t, a)` of a piecewise-linear damping profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct PiecewiseTable {
    knots: Vec<(f64, f64)>,
}

impl PiecewiseTable {
    /// Knots must start at `t = 0`, have strictly increasing `t`, and
    /// finite nonnegative values.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("piecewise-linear table needs at least two knots".into()));
        }
        if knots[0].0 != 0.0 {
            return Err(Error::Config(format!(
                "piecewise-linear table must start at t = 0, found t = {}",
                knots[0].0
            )));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config(format!(
                    "piecewise-linear table times must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, a)) = knots.iter().find(|(t, a)| !t.is_finite() || !a.is_finite() || *a < 0.0) {
            return Err(Error::Config(format!("invalid table knot ({t}, {a}): values must be finite and a >= 0")));
        }
        Ok(Self { knots })
    }

    /// Reads a two-column CSV with header `t,a`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "a" {
            return Err(Error::Format(format!(
                "damping table header must be `t,a`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut knots = Vec::new();
        for record in rdr.deserialize::<(f64, f64)>() {
            knots.push(record?);
        }
        Self::new(knots)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        let last = k[k.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|&(ti, _)| ti <= t) - 1;
        let (t0, a0) = k[i];
        let (t1, a1) = k[i + 1];
        a0 + (a1 - a0) * (t - t0) / (t1 - t0)
    }

    fn integral(&self, t: f64) -> f64 {
        let k = &self.knots;
        let mut acc = 0.0;
        for w in k.windows(2) {
            let (t0, a0) = w[0];
            let (t1, _) = w[1];
            if t <= t0 {
                return acc;
            }
            let hi = t.min(t1);
            acc += 0.5 * (hi - t0) * (a0 + self.eval(hi));
            if t <= t1 {
                return acc;
            }
        }
        let last = k[k.len() - 1];
        acc + (t - last.0) * last.1
    }
}

impl TryFrom<Vec<(f64, f64)>> for PiecewiseTable {
    type Error = Error;
    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PiecewiseTable> for Vec<(f64, f64)> {
    fn from(t: PiecewiseTable) -> Self {
        t.knots
    }
}

/// Geometry of the spike living on `[n, n+1]`.
#[derive(Clone, Copy, Debug)]
struct Spike {
    start: f64,
    half_base: f64,
    slope: f64,
}

impl Spike {
    fn new(n: u64, alpha: f64) -> Self {
        let nf = n as f64;
        Spike {
            start: nf,
            half_base: 1.0 / (4.0 * nf.powf(alpha + 1.0)),
            slope: 16.0 * nf.powf(alpha + 2.0),
        }
    }

    fn value(&self, t: f64) -> f64 {
        let s = t - self.start;
        if s <= 0.0 || s >= 2.0 * self.half_base {
            0.0
        } else if s <= self.half_base {
            self.slope * s
        } else {
            self.slope * (2.0 * self.half_base - s)
        }
    }

    fn area(&self) -> f64 {
        self.slope * self.half_base * self.half_base
    }

    /// `int_start^t` of the spike.
    fn partial(&self, t: f64) -> f64 {
        let s = (t - self.start).max(0.0);
        let w = self.half_base;
        if s <= w {
            0.5 * self.slope * s * s
        } else if s < 2.0 * w {
            let r = 2.0 * w - s;
            self.area() - 0.5 * self.slope * r * r
        } else {
            self.area()
        }
    }
}

/// The spike function `h_alpha` evaluated at `t`.
pub fn h_alpha(alpha: f64, t: f64) -> f64 {
    if t < 1.0 {
        return 0.0;
    }
    Spike::new(t.floor() as u64, alpha).value(t)
}

/// `int_n^{n+1} h_alpha(t)^q dt` by exact integration of the two linear flanks.
pub fn h_alpha_moment(alpha: f64, n: u64, q: f64) -> Result<f64> {
    if n < 1 || !(q >= 1.0) || !(alpha > 0.0) {
        return Err(Error::Precondition(format!(
            "h_alpha_moment needs alpha > 0, n >= 1, q >= 1 (got alpha={alpha}, n={n}, q={q})"
        )));
    }
    let spike = Spike::new(n, alpha);
    // Each flank is `slope * s` for s in [0, half_base].
    Ok(2.0 * spike.slope.powf(q) * spike.half_base.powf(q + 1.0) / (q + 1.0))
}

/// The constant `C_q = 2^{2q-1}/(q+1)` in `int_n^{n+1} h^q = C_q n^{q-alpha-1}`.
pub fn spike_moment_constant(q: f64) -> f64 {
    2f64.powf(2.0 * q - 1.0) / (q + 1.0)
}

impl DampingSpec {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("damping parameter {name} must be finite and >= 0, got {v}")))
            }
        };
        match self {
            DampingSpec::Constant { lambda } | DampingSpec::Saturating { lambda } => nonneg("lambda", *lambda),
            DampingSpec::PolynomialDecay { theta } => nonneg("theta", *theta),
            DampingSpec::AppendixSpike { alpha } => {
                if alpha.is_finite() && *alpha > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("spike exponent alpha must be > 0, got {alpha}")))
                }
            }
            DampingSpec::PiecewiseLinear { .. } | DampingSpec::Zero => Ok(()),
        }
    }

    /// `a(t)`.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Precondition(format!("damping evaluated at t = {t}; need finite t >= 0")));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        match self {
            DampingSpec::Constant { lambda } => *lambda,
            DampingSpec::Saturating { lambda } => -lambda * (-t).exp_m1(),
            DampingSpec::PolynomialDecay { theta } => (-theta * t.ln_1p()).exp(),
            DampingSpec::AppendixSpike { alpha } => h_alpha(*alpha, t),
            DampingSpec::PiecewiseLinear { table } => table.eval(t),
            DampingSpec::Zero => 0.0,
        }
    }

    /// Points in `(t0, t1)` where `a` is not smooth.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            DampingSpec::AppendixSpike { alpha } => {
                let first = t0.floor().max(1.0) as u64;
                let mut n = first;
                while (n as f64) < t1 {
                    let s = Spike::new(n, *alpha);
                    for b in [s.start, s.start + s.half_base, s.start + 2.0 * s.half_base] {
                        if b > t0 && b < t1 {
                            out.push(b);
                        }
                    }
                    n += 1;
                }
            }
            DampingSpec::PiecewiseLinear { table } => {
                out.extend(table.knots.iter().map(|k| k.0).filter(|&k| k > t0 && k < t1));
            }
            _ => {}
        }
        out
    }

    /// Closed-form `A(t)`, available for every built-in family.
    fn closed_integral(&self, t: f64) -> f64 {
        match self {
            DampingSpec::Constant { lambda } => lambda * t,
            DampingSpec::Saturating { lambda } => lambda * saturating_primitive(t),
            DampingSpec::PolynomialDecay { theta } => {
                let one_minus = 1.0 - theta;
                if one_minus == 0.0 {
                    t.ln_1p()
                } else {
                    (one_minus * t.ln_1p()).exp_m1() / one_minus
                }
            }
            DampingSpec::AppendixSpike { alpha } => {
                if t <= 1.0 {
                    return 0.0;
                }
                let n = t.floor() as u64;
                let full: f64 = (1..n).map(|m| (m as f64).powf(-alpha)).sum();
                full + Spike::new(n, *alpha).partial(t)
            }
            DampingSpec::PiecewiseLinear { table } => table.integral(t),
            DampingSpec::Zero => 0.0,
        }
    }
}

/// `t - 1 + e^{-t}` without cancellation near `t = 0`.
fn saturating_primitive(t: f64) -> f64 {
    if t < 1e-2 {
        // t^2/2 - t^3/6 + t^4/24 - t^5/120 + t^6/720
        let mut term = t * t / 2.0;
        let mut sum = term;
        for k in 3..12 {
            term *= -t / k as f64;
            sum += term;
        }
        sum
    } else {
        t + (-t).exp_m1()
    }
}

/// `A(t) = int_0^t a(s) ds` for a damping spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativeDamping {
    source: DampingSpec,
    closed_form: bool,
    quadrature_tol: f64,
}

impl CumulativeDamping {
    /// Uses the closed-form antiderivative.
    pub fn new(source: DampingSpec) -> Result<Self> {
        source.validate()?;
        Ok(Self { source, closed_form: true, quadrature_tol: DEFAULT_QUADRATURE_TOL })
    }

    /// Forces adaptive quadrature (split at the spec's breakpoints).
    pub fn numeric(source: DampingSpec, quadrature_tol: f64) -> Result<Self> {
        source.validate()?;
        if !(quadrature_tol > 0.0) {
            return Err(Error::Config(format!("quadrature tolerance must be > 0, got {quadrature_tol}")));
        }
        Ok(Self { source, closed_form: false, quadrature_tol })
    }

    pub fn source(&self) -> &DampingSpec {
        &self.source
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.source.eval_unchecked(t.max(0.0))
    }

    /// `A(t)`.
    pub fn cumulative(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Precondition(format!("cumulative damping at t = {t}; need finite t >= 0")));
        }
        if self.closed_form {
            return Ok(self.source.closed_integral(t));
        }
        let mut nodes = vec![0.0];
        nodes.extend(self.source.breakpoints(0.0, t));
        nodes.push(t);
        let mut acc = 0.0;
        for w in nodes.windows(2) {
            acc += adaptive_simpson(|s| self.source.eval_unchecked(s), w[0], w[1], self.quadrature_tol)?;
        }
        Ok(acc)
    }

    /// `A(t)/t`, exact for constant damping.
    pub fn running_average(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Precondition(format!("running average needs t > 0, got {t}")));
        }
        match (&self.source, self.closed_form) {
            (DampingSpec::Constant { lambda }, true) => Ok(*lambda),
            (DampingSpec::Zero, _) => Ok(0.0),
            _ => Ok(self.cumulative(t)? / t),
        }
    }

    /// `int_{t0}^{t1} e^{(1-p) A(s)} ds`, the accumulated nonlinear
    /// coefficient of the gauge-transformed equation over a step.
    pub fn nonlinear_weight_integral(&self, t0: f64, t1: f64, p: f64) -> Result<f64> {
        let c = 1.0 - p;
        if t1 == t0 {
            return Ok(0.0);
        }
        match (&self.source, self.closed_form) {
            (DampingSpec::Zero, _) => return Ok(t1 - t0),
            (DampingSpec::Constant { lambda }, true) if *lambda * c != 0.0 => {
                let k = c * lambda;
                // e^{k t0} (e^{k (t1 - t0)} - 1) / k
                return Ok((k * t0).exp() * (k * (t1 - t0)).exp_m1() / k);
            }
            _ => {}
        }
        let (lo, hi, sign) = if t1 > t0 { (t0, t1, 1.0) } else { (t1, t0, -1.0) };
        let mut nodes = vec![lo];
        nodes.extend(self.source.breakpoints(lo, hi));
        nodes.push(hi);
        let mut acc = 0.0;
        for w in nodes.windows(2) {
            let mut err = None;
            let part = gauss_legendre(
                |s| match self.cumulative(s) {
                    Ok(a) => (c * a).exp(),
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                w[0],
                w[1],
            );
            if let Some(e) = err {
                return Err(e);
            }
            acc += part;
        }
        Ok(sign * acc)
    }
}

/// Parameters of the weight `w(t) = t^alpha (1+t)^beta (ln(1+t))^gamma e^{delta t^sigma}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WamParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub sigma: f64,
}

impl WamParams {
    pub const LINEAR: WamParams = WamParams { alpha: 1.0, beta: 0.0, gamma: 0.0, delta: 0.0, sigma: 0.0 };

    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64, sigma: f64) -> Self {
        Self { alpha, beta, gamma, delta, sigma }
    }

    pub fn weight(&self, t: f64) -> f64 {
        fn pow(x: f64, e: f64) -> f64 {
            if e == 0.0 {
                1.0
            } else if e == 1.0 {
                x
            } else {
                x.powf(e)
            }
        }
        let exp_part = if self.delta == 0.0 { 1.0 } else { (self.delta * pow(t, self.sigma)).exp() };
        pow(t, self.alpha) * pow(1.0 + t, self.beta) * pow(t.ln_1p(), self.gamma) * exp_part
    }
}

/// Log-spaced sampling of `(0, horizon]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub t_min: f64,
    pub horizon: f64,
    pub points: usize,
}

impl SamplingGrid {
    /// Nine decades below the horizon.
    pub fn new(horizon: f64, points: usize) -> Result<Self> {
        Self::with_floor(horizon * 1e-9, horizon, points)
    }

    pub fn with_floor(t_min: f64, horizon: f64, points: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Precondition(format!("horizon must be finite and > 0, got {horizon}")));
        }
        if points < 2 {
            return Err(Error::Precondition(format!("sampling grid needs >= 2 points, got {points}")));
        }
        if !(t_min > 0.0 && t_min < horizon) {
            return Err(Error::Precondition(format!("need 0 < t_min < horizon, got t_min = {t_min}")));
        }
        Ok(Self { t_min, horizon, points })
    }

    pub fn samples(&self) -> Vec<f64> {
        let (l0, l1) = (self.t_min.ln(), self.horizon.ln());
        let m = (self.points - 1) as f64;
        let mut out: Vec<f64> = (0..self.points).map(|i| (l0 + (l1 - l0) * i as f64 / m).exp()).collect();
        out[0] = self.t_min;
        *out.last_mut().unwrap() = self.horizon;
        out
    }
}

/// A sampled sup or inf of a ratio over `(0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub value: f64,
    /// Sample time of the extremum.
    pub at: f64,
    /// The extremum sits at the smallest sample (limit `t -> 0` suspected).
    pub lower_boundary: bool,
    /// The extremum sits at the horizon (limit `t -> infinity` suspected).
    pub upper_boundary: bool,
    pub infinite: bool,
    /// Estimates on successively finer lower floors; the last equals `value`.
    pub refinements: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Extremum {
    Sup,
    Inf,
}

fn extremum_on<F>(samples: &[f64], ratio: F, kind: Extremum) -> Result<(f64, usize)>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut best = match kind {
        Extremum::Sup => f64::NEG_INFINITY,
        Extremum::Inf => f64::INFINITY,
    };
    let mut at = 0;
    for (i, &t) in samples.iter().enumerate() {
        let r = ratio(t)?;
        let better = match kind {
            Extremum::Sup => r > best || r.is_nan(),
            Extremum::Inf => r < best || r.is_nan(),
        };
        if better {
            best = r;
            at = i;
        }
    }
    Ok((best, at))
}

fn ratio_estimate<F>(grid: &SamplingGrid, ratio: F, kind: Extremum) -> Result<RatioEstimate>
where
    F: Fn(f64) -> Result<f64>,
{
    // Refinement history: floors 10^-3, 10^-6 of the horizon, then the grid floor.
    let mut refinements = Vec::new();
    for floor in [grid.horizon * 1e-3, grid.horizon * 1e-6] {
        if floor > grid.t_min {
            let coarse = SamplingGrid { t_min: floor, ..*grid };
            refinements.push(extremum_on(&coarse.samples(), &ratio, kind)?.0);
        }
    }
    let samples = grid.samples();
    let (value, idx) = extremum_on(&samples, &ratio, kind)?;
    refinements.push(value);
    Ok(RatioEstimate {
        value,
        at: samples[idx],
        lower_boundary: idx == 0,
        upper_boundary: idx == samples.len() - 1,
        infinite: value.is_infinite(),
        refinements,
    })
}

/// Grid estimate of `sup_{t>0} A(t)/t`.
pub fn abar(cd: &CumulativeDamping, horizon: f64, points: usize) -> Result<RatioEstimate> {
    abar_on(cd, &SamplingGrid::new(horizon, points)?)
}

pub fn abar_on(cd: &CumulativeDamping, grid: &SamplingGrid) -> Result<RatioEstimate> {
    ratio_estimate(grid, |t| cd.running_average(t), Extremum::Sup)
}

/// Grid estimate of `inf_{t>0} A(t)/t`.
pub fn aunder(cd: &CumulativeDamping, horizon: f64, points: usize) -> Result<RatioEstimate> {
    aunder_on(cd, &SamplingGrid::new(horizon, points)?)
}

pub fn aunder_on(cd: &CumulativeDamping, grid: &SamplingGrid) -> Result<RatioEstimate> {
    ratio_estimate(grid, |t| cd.running_average(t), Extremum::Inf)
}

/// Weighted average measurement: grid estimate of `inf_{t>0} A(t)/w(t)`.
pub fn wam(cd: &CumulativeDamping, params: &WamParams, horizon: f64, points: usize) -> Result<RatioEstimate> {
    wam_on(cd, params, &SamplingGrid::new(horizon, points)?)
}

pub fn wam_on(cd: &CumulativeDamping, params: &WamParams, grid: &SamplingGrid) -> Result<RatioEstimate> {
    if *params == WamParams::LINEAR {
        return aunder_on(cd, grid);
    }
    ratio_estimate(
        grid,
        |t| {
            let w = params.weight(t);
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Domain(format!("WAM weight w({t}) = {w} is not positive and finite")));
            }
            Ok(cd.cumulative(t)? / w)
        },
        Extremum::Inf,
    )
}

/// Sampled monotonicity of `a` on `[0, horizon]`; constants count as non-decreasing.
pub fn classify_monotonicity(spec: &DampingSpec, horizon: f64, points: usize) -> Result<Monotonicity> {
    const TOL: f64 = 1e-12;
    if points < 3 {
        return Err(Error::Precondition(format!("monotonicity check needs >= 3 points, got {points}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::Precondition(format!("horizon must be > 0, got {horizon}")));
    }
    let mut ts: Vec<f64> = (0..points).map(|i| horizon * i as f64 / (points - 1) as f64).collect();
    ts.extend(spec.breakpoints(0.0, horizon));
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup();
    let values: Vec<f64> = ts.iter().map(|&t| spec.eval_unchecked(t)).collect();
    let up = values.windows(2).all(|w| w[1] - w[0] >= -TOL);
    let down = values.windows(2).all(|w| w[1] - w[0] <= TOL);
    Ok(match (up, down) {
        (true, _) => Monotonicity::NonDecreasing,
        (false, true) => Monotonicity::NonIncreasing,
        _ => Monotonicity::Neither,
    })
}
