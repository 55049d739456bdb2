//! Integral functionals of a field: mass, energy, variance, virial and
//! their relatives, plus radial cut-off weights for localized virial
//! estimates.
//!
//! `E`, `I` and `P` are the focusing-sign expressions
//! `‖∇u‖² - c ∫|u|^{p+1}` with `c = 2/(p+1)`, `1` and `N(p-1)/(2(p+1))`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::damping::CumulativeDamping;
use crate::error::{Error, Result};
use crate::grid::{
    boundary_mass_fraction, derivative_from_spectrum, spectral_gradient_norm_squared, spectral_tail_fraction, Field,
    Grid,
};

/// Default boundary-mass warning threshold for whole-space diagnostics.
pub const DEFAULT_BOUNDARY_WARN: f64 = 1e-6;

/// Header of the diagnostics CSV.
pub const DIAGNOSTICS_HEADER: [&str; 10] = ["t", "M", "E", "I", "K", "V", "P", "H", "grad2", "bmf"];

/// `∫|u|^2`.
pub fn mass(field: &Field) -> f64 {
    field.l2_norm_squared()
}

/// `‖∇u‖²` via Parseval on the spectrum.
pub fn grad_norm_sq(field: &Field) -> f64 {
    let g = field.grid();
    spectral_gradient_norm_squared(g, &g.k_squared(), &field.spectrum())
}

/// `∫|u|^{p+1}`.
pub fn lp1_integral(field: &Field, p: f64) -> f64 {
    let e = 0.5 * (p + 1.0);
    field.values().iter().map(|z| z.norm_sqr().powf(e)).sum::<f64>() * field.grid().cell_volume()
}

pub fn energy_coefficient(p: f64) -> f64 {
    2.0 / (p + 1.0)
}

pub fn pohozaev_coefficient(dim: usize, p: f64) -> f64 {
    dim as f64 * (p - 1.0) / (2.0 * (p + 1.0))
}

fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("nonlinearity exponent must satisfy p > 1, got {p}")))
    }
}

/// `E(u) = ‖∇u‖² - (2/(p+1)) ∫|u|^{p+1}`.
pub fn energy(field: &Field, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(grad_norm_sq(field) - energy_coefficient(p) * lp1_integral(field, p))
}

/// `I(u) = ‖∇u‖² - ∫|u|^{p+1}`.
pub fn i_functional(field: &Field, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(grad_norm_sq(field) - lp1_integral(field, p))
}

/// `P(u) = ‖∇u‖² - (N(p-1)/(2(p+1))) ∫|u|^{p+1}`.
pub fn p_functional(field: &Field, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(grad_norm_sq(field) - pohozaev_coefficient(field.grid().dim(), p) * lp1_integral(field, p))
}

/// `K(u) = ∫|x|²|u|²`.
pub fn variance(field: &Field) -> f64 {
    let g = field.grid();
    field
        .values()
        .iter()
        .enumerate()
        .map(|(i, z)| g.position(i).iter().map(|c| c * c).sum::<f64>() * z.norm_sqr())
        .sum::<f64>()
        * g.cell_volume()
}

/// `V(u) = Im ∫ (x·∇u) ū`.
pub fn virial_v(field: &Field) -> f64 {
    let g = *field.grid();
    let hat = field.spectrum();
    virial_from_spectrum(field, &g, &hat)
}

fn virial_from_spectrum(field: &Field, g: &Grid, hat: &[Complex64]) -> f64 {
    let mut acc = 0.0;
    for axis in 0..g.dim() {
        let d = derivative_from_spectrum(g, hat, axis);
        for (i, (du, u)) in d.values().iter().zip(field.values()).enumerate() {
            acc += g.position(i)[axis] * (du * u.conj()).im;
        }
    }
    acc * g.cell_volume()
}

/// `H(v) = ‖∇v‖² - (2/(p+1)) e^{(1-p)A(t)} ∫|v|^{p+1}`.
pub fn hamiltonian_v(v: &Field, t: f64, cd: &CumulativeDamping, p: f64) -> Result<f64> {
    check_p(p)?;
    let a = cd.cumulative(t)?;
    Ok(grad_norm_sq(v) - energy_coefficient(p) * ((1.0 - p) * a).exp() * lp1_integral(v, p))
}

/// `‖u‖_{H¹} = (‖u‖² + ‖∇u‖²)^{1/2}`.
pub fn h1_norm(field: &Field) -> f64 {
    (mass(field) + grad_norm_sq(field)).sqrt()
}

/// All field integrals needed for one diagnostics frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMoments {
    pub mass: f64,
    pub grad_norm_sq: f64,
    pub lp1: f64,
    pub variance: f64,
    pub virial: f64,
    pub boundary_fraction: f64,
    pub tail_fraction: f64,
}

impl FieldMoments {
    pub fn of(field: &Field, p: f64) -> Self {
        let g = *field.grid();
        let hat = field.spectrum();
        Self {
            mass: mass(field),
            grad_norm_sq: spectral_gradient_norm_squared(&g, &g.k_squared(), &hat),
            lp1: lp1_integral(field, p),
            variance: variance(field),
            virial: virial_from_spectrum(field, &g, &hat),
            boundary_fraction: boundary_mass_fraction(field),
            tail_fraction: spectral_tail_fraction(&g, &hat),
        }
    }
}

/// One frame of u-diagnostics along a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub i_func: f64,
    pub variance: f64,
    pub virial: f64,
    pub p_func: f64,
    pub hamiltonian_v: f64,
    pub grad_norm_sq: f64,
    pub boundary_fraction: f64,
    /// `∫|u|^{p+1}`.
    pub lp1: f64,
    /// `A(t)`.
    pub cumulative: f64,
    pub tail_fraction: f64,
    /// `K` and `V` are unreliable: boundary fraction above the warning threshold.
    pub flagged: bool,
}

impl DiagnosticsRecord {
    /// Builds u-diagnostics from the gauge variable `v = e^{A(t)} u`.
    pub fn from_v(v: &Field, t: f64, cumulative: f64, p: f64, boundary_warn: f64) -> Self {
        let m = FieldMoments::of(v, p);
        Self::from_v_moments(&m, v.grid().dim(), t, cumulative, p, boundary_warn)
    }

    pub fn from_v_moments(m: &FieldMoments, dim: usize, t: f64, cumulative: f64, p: f64, boundary_warn: f64) -> Self {
        let quad = (-2.0 * cumulative).exp();
        let grad2 = quad * m.grad_norm_sq;
        let lp1 = (-(p + 1.0) * cumulative).exp() * m.lp1;
        Self {
            t,
            mass: quad * m.mass,
            energy: grad2 - energy_coefficient(p) * lp1,
            i_func: grad2 - lp1,
            variance: quad * m.variance,
            virial: quad * m.virial,
            p_func: grad2 - pohozaev_coefficient(dim, p) * lp1,
            hamiltonian_v: m.grad_norm_sq - energy_coefficient(p) * ((1.0 - p) * cumulative).exp() * m.lp1,
            grad_norm_sq: grad2,
            boundary_fraction: m.boundary_fraction,
            lp1,
            cumulative,
            tail_fraction: m.tail_fraction,
            flagged: m.boundary_fraction > boundary_warn,
        }
    }

    /// `K(v) = e^{2A} K(u)`.
    pub fn v_variance(&self) -> f64 {
        (2.0 * self.cumulative).exp() * self.variance
    }

    /// `‖∇v‖² = e^{2A} ‖∇u‖²`.
    pub fn v_grad_norm_sq(&self) -> f64 {
        (2.0 * self.cumulative).exp() * self.grad_norm_sq
    }

    /// `∫|v|^{p+1} = e^{(p+1)A} ∫|u|^{p+1}`.
    pub fn v_lp1(&self, p: f64) -> f64 {
        ((p + 1.0) * self.cumulative).exp() * self.lp1
    }

    /// `E`, `I`, `P` recomputed from the stored `(grad2, lp1)`.
    pub fn recomputed(&self, dim: usize, p: f64) -> (f64, f64, f64) {
        (
            self.grad_norm_sq - energy_coefficient(p) * self.lp1,
            self.grad_norm_sq - self.lp1,
            self.grad_norm_sq - pohozaev_coefficient(dim, p) * self.lp1,
        )
    }
}

/// Writes frames as CSV with header `t,M,E,I,K,V,P,H,grad2,bmf`.
pub fn write_diagnostics_csv<W: Write>(w: W, frames: &[DiagnosticsRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(DIAGNOSTICS_HEADER)?;
    for r in frames {
        wtr.serialize((
            r.t,
            r.mass,
            r.energy,
            r.i_func,
            r.variance,
            r.virial,
            r.p_func,
            r.hamiltonian_v,
            r.grad_norm_sq,
            r.boundary_fraction,
        ))?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Radial cut-off

/// Start of the decreasing bridge, `1 + 5^{-1/4}`.
pub fn zeta_bridge_start() -> f64 {
    1.0 + 5f64.powf(-0.25)
}

/// Quintic Hermite bridge on `[s0, 2]`: coefficients in `τ = (s - s0)/h`.
struct Bridge {
    s0: f64,
    h: f64,
    c: [f64; 6],
    theta0: f64,
}

impl Bridge {
    fn get() -> &'static Bridge {
        static B: std::sync::OnceLock<Bridge> = std::sync::OnceLock::new();
        B.get_or_init(|| {
            let s0 = zeta_bridge_start();
            let h = 2.0 - s0;
            let d = s0 - 1.0;
            let y0 = 2.0 * (s0 - d.powi(5));
            let y2 = -40.0 * d.powi(3);
            // y0 H0 + h^2 y2 H2 with H0 = 1 - 10τ³ + 15τ⁴ - 6τ⁵ and
            // H2 = (τ² - 3τ³ + 3τ⁴ - τ⁵)/2; the first derivative at s0 is zero.
            let q = 0.5 * h * h * y2;
            let c = [y0, 0.0, q, -10.0 * y0 - 3.0 * q, 15.0 * y0 + 3.0 * q, -6.0 * y0 - q];
            let theta0 = s0 * s0 - d.powi(6) / 3.0;
            Bridge { s0, h, c, theta0 }
        })
    }

    /// `(ζ, ζ', ζ'', ζ''')` at `s` in `[s0, 2]`.
    fn derivatives(&self, s: f64) -> [f64; 4] {
        let t = (s - self.s0) / self.h;
        let c = &self.c;
        let p0 = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
        let p1 = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
        let p2 = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
        let p3 = 6.0 * c[3] + t * (24.0 * c[4] + t * 60.0 * c[5]);
        [p0, p1 / self.h, p2 / (self.h * self.h), p3 / self.h.powi(3)]
    }

    fn primitive(&self, s: f64) -> f64 {
        let t = (s - self.s0) / self.h;
        let c = &self.c;
        let poly = t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * (c[3] / 4.0 + t * (c[4] / 5.0 + t * c[5] / 6.0)))));
        self.theta0 + self.h * poly
    }
}

/// `(ζ, ζ', ζ'', ζ''')` at `r >= 0`.
pub fn zeta_derivatives(r: f64) -> [f64; 4] {
    let b = Bridge::get();
    if r <= 1.0 {
        [2.0 * r, 2.0, 0.0, 0.0]
    } else if r <= b.s0 {
        let d = r - 1.0;
        [2.0 * (r - d.powi(5)), 2.0 * (1.0 - 5.0 * d.powi(4)), -40.0 * d.powi(3), -120.0 * d * d]
    } else if r < 2.0 {
        b.derivatives(r)
    } else {
        [0.0; 4]
    }
}

/// The cut-off profile `ζ(r)`.
pub fn cutoff_zeta(r: f64) -> f64 {
    zeta_derivatives(r)[0]
}

/// `Θ(r) = ∫_0^r ζ`.
pub fn zeta_primitive(r: f64) -> f64 {
    let b = Bridge::get();
    if r <= 1.0 {
        r * r
    } else if r <= b.s0 {
        r * r - (r - 1.0).powi(6) / 3.0
    } else if r < 2.0 {
        b.primitive(r)
    } else {
        b.primitive(2.0)
    }
}

/// `φ_R(r) = R² Θ(r/R)` for a fixed dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    pub radius: f64,
    pub dim: usize,
}

/// Radial derivatives `φ, φ', φ'', φ''', φ''''` at one radius.
#[derive(Clone, Copy, Debug)]
pub struct RadialJet {
    pub phi: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
}

impl CutoffProfile {
    pub fn new(radius: f64, dim: usize) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Precondition(format!("cut-off radius must be > 0, got {radius}")));
        }
        Ok(Self { radius, dim })
    }

    pub fn jet(&self, r: f64) -> RadialJet {
        let big_r = self.radius;
        let s = r / big_r;
        let z = zeta_derivatives(s);
        RadialJet {
            phi: big_r * big_r * zeta_primitive(s),
            d1: big_r * z[0],
            d2: z[1],
            d3: z[2] / big_r,
            d4: z[3] / (big_r * big_r),
        }
    }

    pub fn phi(&self, r: f64) -> f64 {
        self.jet(r).phi
    }

    /// `φ_{1,R} = 2 - φ''_R`.
    pub fn phi1(&self, r: f64) -> f64 {
        2.0 - self.jet(r).d2
    }

    /// `φ_{2,R} = 2N - Δφ_R`.
    pub fn phi2(&self, r: f64) -> f64 {
        2.0 * self.dim as f64 - VirialWeight::Cutoff(*self).laplacian(self.dim, r)
    }

    /// Samples of `(r, ζ(r/R), φ_R, φ_{1,R}, φ_{2,R})` on `[0, 3R]`.
    pub fn samples(&self, count: usize) -> Vec<[f64; 5]> {
        (0..count)
            .map(|i| {
                let r = 3.0 * self.radius * i as f64 / (count.max(2) - 1) as f64;
                [r, cutoff_zeta(r / self.radius), self.phi(r), self.phi1(r), self.phi2(r)]
            })
            .collect()
    }
}

/// `cutoff_profile(R, grid)`.
pub fn cutoff_profile(radius: f64, grid: &Grid) -> Result<CutoffProfile> {
    CutoffProfile::new(radius, grid.dim())
}

/// Radial weight used in the localized virial functional.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum VirialWeight {
    /// `φ(x) = |x|²`.
    Quadratic,
    Cutoff(CutoffProfile),
}

impl VirialWeight {
    fn jet(&self, r: f64) -> RadialJet {
        match self {
            VirialWeight::Quadratic => RadialJet { phi: r * r, d1: 2.0 * r, d2: 2.0, d3: 0.0, d4: 0.0 },
            VirialWeight::Cutoff(c) => c.jet(r),
        }
    }

    /// Inside this radius the weight is exactly `|x|²`.
    fn quadratic_radius(&self) -> f64 {
        match self {
            VirialWeight::Quadratic => f64::INFINITY,
            VirialWeight::Cutoff(c) => c.radius,
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.jet(r).phi
    }

    /// `φ'(r)/r`, so that `∇φ = (φ'/r) x`.
    pub fn grad_over_r(&self, r: f64) -> f64 {
        if r <= self.quadratic_radius() {
            2.0
        } else {
            self.jet(r).d1 / r
        }
    }

    pub fn second(&self, r: f64) -> f64 {
        self.jet(r).d2
    }

    /// `Δφ = φ'' + (N-1) φ'/r`.
    pub fn laplacian(&self, dim: usize, r: f64) -> f64 {
        if r <= self.quadratic_radius() {
            return 2.0 * dim as f64;
        }
        let j = self.jet(r);
        j.d2 + (dim as f64 - 1.0) * j.d1 / r
    }

    /// `Δ²φ` from the radial jet.
    pub fn bilaplacian(&self, dim: usize, r: f64) -> f64 {
        if r <= self.quadratic_radius() {
            return 0.0;
        }
        let j = self.jet(r);
        let m = dim as f64 - 1.0;
        let psi1 = j.d3 + m * (j.d2 / r - j.d1 / (r * r));
        let psi2 = j.d4 + m * (j.d3 / r - 2.0 * j.d2 / (r * r) + 2.0 * j.d1 / (r * r * r));
        psi2 + m * psi1 / r
    }

    /// Hessian `∂²_{jk} φ` at position `x`.
    pub fn hessian(&self, x: &[f64]) -> [[f64; 3]; 3] {
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        let mut h = [[0.0; 3]; 3];
        if r <= self.quadratic_radius() {
            for (j, row) in h.iter_mut().enumerate().take(x.len()) {
                row[j] = 2.0;
            }
            return h;
        }
        let jet = self.jet(r);
        let tangential = jet.d1 / r;
        for j in 0..x.len() {
            for k in 0..x.len() {
                let xx = x[j] * x[k] / (r * r);
                h[j][k] = jet.d2 * xx + tangential * (if j == k { 1.0 } else { 0.0 } - xx);
            }
        }
        h
    }
}

fn radius_at(g: &Grid, i: usize) -> f64 {
    g.position(i).iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `V_φ = ∫ φ |v|²`.
pub fn localized_virial(v: &Field, weight: &VirialWeight) -> f64 {
    let g = v.grid();
    v.values()
        .iter()
        .enumerate()
        .map(|(i, z)| weight.value(radius_at(g, i)) * z.norm_sqr())
        .sum::<f64>()
        * g.cell_volume()
}

/// `V_φ' = 2 Im ∫ v̄ (∇φ · ∇v)`.
pub fn localized_virial_rate(v: &Field, weight: &VirialWeight) -> f64 {
    let g = *v.grid();
    let hat = v.spectrum();
    let grads: Vec<Field> = (0..g.dim()).map(|a| derivative_from_spectrum(&g, &hat, a)).collect();
    let mut acc = 0.0;
    for i in 0..g.len() {
        let x = g.position(i);
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        let w = weight.grad_over_r(r);
        let mut dot = Complex64::default();
        for (a, d) in grads.iter().enumerate() {
            dot += w * x[a] * d.values()[i];
        }
        acc += (v.values()[i].conj() * dot).im;
    }
    2.0 * acc * g.cell_volume()
}

/// `Re Σ_{jk} ∫ ∂²_{jk}φ ∂_j v̄ ∂_k v`, evaluated as the full double sum.
pub fn hessian_term(v: &Field, weight: &VirialWeight) -> f64 {
    let g = *v.grid();
    let hat = v.spectrum();
    let grads: Vec<Field> = (0..g.dim()).map(|a| derivative_from_spectrum(&g, &hat, a)).collect();
    let dim = g.dim();
    let mut acc = 0.0;
    for i in 0..g.len() {
        let x = g.position(i);
        let h = weight.hessian(&x[..dim]);
        for j in 0..dim {
            for k in 0..dim {
                acc += h[j][k] * (grads[j].values()[i].conj() * grads[k].values()[i]).re;
            }
        }
    }
    acc * g.cell_volume()
}

/// `∫ φ'' |∇v|²`, the radial reduction of [`hessian_term`].
pub fn radial_hessian_term(v: &Field, weight: &VirialWeight) -> f64 {
    let g = *v.grid();
    let hat = v.spectrum();
    let grads: Vec<Field> = (0..g.dim()).map(|a| derivative_from_spectrum(&g, &hat, a)).collect();
    let mut acc = 0.0;
    for i in 0..g.len() {
        let r = radius_at(&g, i);
        let phi2 = if r <= weight.quadratic_radius() { 2.0 } else { weight.second(r) };
        acc += phi2 * grads.iter().map(|d| d.values()[i].norm_sqr()).sum::<f64>();
    }
    acc * g.cell_volume()
}

/// Second time derivative of `V_φ` along the gauge-transformed flow:
/// `-∫Δ²φ|v|² + 4 Re Σ∫∂²_{jk}φ ∂_j v̄ ∂_k v - (2(p-1)/(p+1)) e^{(1-p)A(t)} ∫Δφ|v|^{p+1}`.
pub fn localized_virial_second(v: &Field, t: f64, cd: &CumulativeDamping, p: f64, weight: &VirialWeight) -> Result<f64> {
    check_p(p)?;
    if !v.is_finite() {
        return Err(Error::Domain("localized virial of a non-finite field".into()));
    }
    let g = *v.grid();
    let dim = g.dim();
    let coupling = ((1.0 - p) * cd.cumulative(t)?).exp();
    let e = 0.5 * (p + 1.0);
    let mut bilap = 0.0;
    let mut nonlin = 0.0;
    for (i, z) in v.values().iter().enumerate() {
        let r = radius_at(&g, i);
        let m2 = z.norm_sqr();
        bilap += weight.bilaplacian(dim, r) * m2;
        nonlin += weight.laplacian(dim, r) * m2.powf(e);
    }
    let dv = g.cell_volume();
    Ok(-bilap * dv + 4.0 * hessian_term(v, weight) - 2.0 * (p - 1.0) / (p + 1.0) * coupling * nonlin * dv)
}

/// Largest `ε` (on a dense sample of `r > R`) with `4φ_{1,R} - ε φ_{2,R}^{N/2} >= 0`.
///
/// The ratio `4φ_1/φ_2^{N/2}` depends only on `s = r/R`, so the result is
/// independent of `R`. Returns `(ε₀, s at the minimum)`.
pub fn mass_critical_epsilon(dim: usize) -> (f64, f64) {
    let profile = CutoffProfile { radius: 1.0, dim };
    let mut best = (f64::INFINITY, f64::NAN);
    let samples = 200_000;
    for i in 1..=samples {
        // Geometric clustering near s = 1 where both functions vanish.
        let u = i as f64 / samples as f64;
        let s = 1.0 + 2.0 * u * u;
        let phi2 = profile.phi2(s);
        if phi2 <= 0.0 {
            continue;
        }
        let ratio = 4.0 * profile.phi1(s) / phi2.powf(0.5 * dim as f64);
        if ratio < best.0 {
            best = (ratio, s);
        }
    }
    best
}

/// Gagliardo–Nirenberg ratio `‖f‖_{p+1} / (‖f‖₂^{1-σ} ‖∇f‖₂^σ)` with `σ = N(p-1)/(2(p+1))`.
pub fn gn_check(field: &Field, p: f64) -> Result<f64> {
    check_p(p)?;
    let m = mass(field);
    let g2 = grad_norm_sq(field);
    if m == 0.0 || g2 == 0.0 {
        return Err(Error::Domain("Gagliardo-Nirenberg ratio needs a nonzero, nonconstant field".into()));
    }
    let sigma = gn_exponent(field.grid().dim(), p);
    let lp = lp1_integral(field, p).powf(1.0 / (p + 1.0));
    Ok(lp / (m.sqrt().powf(1.0 - sigma) * g2.sqrt().powf(sigma)))
}

/// `σ = N(p-1)/(2(p+1))`.
pub fn gn_exponent(dim: usize, p: f64) -> f64 {
    pohozaev_coefficient(dim, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::damping::DampingSpec;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn grid1() -> Grid {
        Grid::new(1, 512, 16.0).unwrap()
    }

    fn gaussian_chirp(grid: Grid, amp: f64, b: f64) -> Field {
        Field::from_fn(grid, |x| {
            let r2: f64 = x.iter().map(|c| c * c).sum();
            amp * (-0.5 * r2).exp() * Complex64::cis(-b * r2)
        })
        .unwrap()
    }

    #[test]
    fn mass_examples() {
        let u = gaussian_chirp(grid1(), 1.0, 0.0);
        assert!((mass(&u) - PI.sqrt()).abs() <= 1e-10);
        assert_eq!(mass(&Field::zeros(grid1())), 0.0);
        assert_relative_eq!(mass(&u.scaled(Complex64::new(3.0, 0.0))), 9.0 * mass(&u), max_relative = 1e-14);
    }

    #[test]
    fn energy_family_examples() {
        let u = gaussian_chirp(grid1(), 1.0, 0.0);
        let expected = PI.sqrt() / 2.0 - 0.5 * (PI / 2.0).sqrt();
        assert!((energy(&u, 3.0).unwrap() - expected).abs() <= 1e-9);
        let z = Field::zeros(grid1());
        for f in [energy, i_functional, p_functional] {
            assert_eq!(f(&z, 3.0).unwrap(), 0.0);
        }
        assert_relative_eq!(pohozaev_coefficient(1, 5.0), 1.0 / 3.0);
        let w = gaussian_chirp(grid1(), 1.3, 0.4);
        let direct = grad_norm_sq(&w) - lp1_integral(&w, 5.0) / 3.0;
        assert_relative_eq!(p_functional(&w, 5.0).unwrap(), direct, max_relative = 1e-13);
        assert!(energy(&w, 1.0).is_err());
    }

    #[test]
    fn variance_examples() {
        let g = grid1();
        let u = gaussian_chirp(g, 1.0, 0.0);
        assert!((variance(&u) - PI.sqrt() / 2.0).abs() <= 1e-9);
        assert_eq!(variance(&Field::zeros(g)), 0.0);
        // Parallel-axis: K(u(· - x0)) = K(u) + x0² M + 2 x0 ∫x|u|².
        let x0 = 2.0;
        let shifted = Field::from_fn(g, |x| Complex64::new((-0.5 * (x[0] - x0).powi(2)).exp(), 0.0)).unwrap();
        let first_moment: f64 = g.axis().iter().zip(u.values()).map(|(x, z)| x * z.norm_sqr()).sum::<f64>() * g.cell_volume();
        let predicted = variance(&u) + x0 * x0 * mass(&u) + 2.0 * x0 * first_moment;
        assert_relative_eq!(variance(&shifted), predicted, max_relative = 1e-12);
    }

    #[test]
    fn virial_examples() {
        let g = grid1();
        assert!(virial_v(&gaussian_chirp(g, 1.0, 0.0)).abs() <= 1e-12);
        let u = gaussian_chirp(g, 1.0, 1.0);
        assert!((virial_v(&u) + PI.sqrt()).abs() <= 1e-8);
        assert_relative_eq!(virial_v(&u.conj()), -virial_v(&u), max_relative = 1e-12);
    }

    #[test]
    fn hamiltonian_examples() {
        let g = grid1();
        let v = gaussian_chirp(g, 1.2, 0.0);
        let sat = CumulativeDamping::new(DampingSpec::Saturating { lambda: 1.0 }).unwrap();
        assert_eq!(hamiltonian_v(&v, 0.0, &sat, 3.0).unwrap(), energy(&v, 3.0).unwrap());
        let zero = CumulativeDamping::new(DampingSpec::Zero).unwrap();
        assert_eq!(hamiltonian_v(&v, 4.0, &zero, 3.0).unwrap(), energy(&v, 3.0).unwrap());
        // a = 1, p = 3, t = 1, v = e^{-x²/2}: √π/2 - ½ e^{-2} √(π/2).
        let one = CumulativeDamping::new(DampingSpec::Constant { lambda: 1.0 }).unwrap();
        let u = gaussian_chirp(g, 1.0, 0.0);
        let expected = PI.sqrt() / 2.0 - 0.5 * (-2f64).exp() * (PI / 2.0).sqrt();
        assert!((hamiltonian_v(&u, 1.0, &one, 3.0).unwrap() - expected).abs() <= 1e-9);
    }

    #[test]
    fn diagnostics_record_consistency() {
        let g = grid1();
        let v = gaussian_chirp(g, 1.4, 0.3);
        for (p, a) in [(3.0, 0.0), (5.0, 0.37)] {
            let r = DiagnosticsRecord::from_v(&v, 0.5, a, p, DEFAULT_BOUNDARY_WARN);
            let (e, i, pp) = r.recomputed(1, p);
            assert!((e - r.energy).abs() <= 1e-12 * r.grad_norm_sq.max(1.0));
            assert!((i - r.i_func).abs() <= 1e-12 * r.grad_norm_sq.max(1.0));
            assert!((pp - r.p_func).abs() <= 1e-12 * r.grad_norm_sq.max(1.0));
            assert!(((r.i_func - r.energy) - (2.0 / (p + 1.0) - 1.0) * r.lp1).abs() <= 1e-12 * r.lp1.max(1.0));
            let u = v.scaled(Complex64::new((-a).exp(), 0.0));
            assert_relative_eq!(r.energy, energy(&u, p).unwrap(), max_relative = 1e-12);
            assert_relative_eq!(r.variance, variance(&u), max_relative = 1e-12);
            assert_relative_eq!(r.virial, virial_v(&u), max_relative = 1e-12);
            assert_relative_eq!(r.mass, mass(&u), max_relative = 1e-12);
            assert!(!r.flagged);
        }
    }

    #[test]
    fn diagnostics_csv_header() {
        let g = grid1();
        let r = DiagnosticsRecord::from_v(&gaussian_chirp(g, 1.0, 0.0), 0.0, 0.0, 3.0, 1e-6);
        let mut buf = Vec::new();
        write_diagnostics_csv(&mut buf, &[r, r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,M,E,I,K,V,P,H,grad2,bmf");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn zeta_examples() {
        assert_eq!(cutoff_zeta(0.5), 1.0);
        for r in [2.0, 2.5, 10.0] {
            assert_eq!(cutoff_zeta(r), 0.0);
        }
        let s0 = zeta_bridge_start();
        assert!(zeta_derivatives(s0)[1].abs() < 1e-14);
    }

    #[test]
    fn zeta_is_smooth_at_joints_and_decreasing_on_bridge() {
        let s0 = zeta_bridge_start();
        for (a, b) in [(1.0 - 1e-12, 1.0 + 1e-12), (s0 - 1e-12, s0 + 1e-12), (2.0 - 1e-12, 2.0 + 1e-12)] {
            let (l, r) = (zeta_derivatives(a), zeta_derivatives(b));
            for k in 0..3 {
                assert!((l[k] - r[k]).abs() < 1e-7, "derivative {k} jumps at {a}: {} vs {}", l[k], r[k]);
            }
        }
        let n = 10_000;
        for i in 1..n {
            let s = s0 + (2.0 - s0) * i as f64 / n as f64;
            let z = zeta_derivatives(s);
            assert!(z[1] < 0.0, "zeta' = {} at {s}", z[1]);
            assert!(z[0] >= 0.0);
        }
    }

    #[test]
    fn zeta_primitive_matches_quadrature() {
        for r in [0.7, 1.3, 1.9, 2.4] {
            let q = crate::quadrature::adaptive_simpson(cutoff_zeta, 0.0, r, 1e-13).unwrap();
            assert!((zeta_primitive(r) - q).abs() < 1e-11, "r = {r}");
        }
    }

    #[test]
    fn cutoff_profile_invariants() {
        for dim in 1..=3 {
            let c = CutoffProfile::new(3.0, dim).unwrap();
            let w = VirialWeight::Cutoff(c);
            for i in 0..=3000 {
                let r = 9.0 * i as f64 / 3000.0;
                let j = c.jet(r);
                if r <= 3.0 {
                    assert!((j.phi - r * r).abs() < 1e-12);
                }
                if r >= 6.0 {
                    assert_eq!(j.phi, c.phi(6.0));
                }
                assert!(j.d1 <= 2.0 * r + 1e-12);
                assert!(j.d2 <= 2.0 + 1e-12);
                assert!(w.laplacian(dim, r) <= 2.0 * dim as f64 + 1e-12);
                if r <= zeta_bridge_start() * 3.0 {
                    assert!(j.d2 >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn bilaplacian_matches_finite_differences() {
        let c = CutoffProfile::new(1.5, 3).unwrap();
        let w = VirialWeight::Cutoff(c);
        let h = 1e-3;
        for r in [1.7, 2.0, 2.3, 2.7] {
            let lap = |r: f64| w.laplacian(3, r);
            let d1 = (lap(r + h) - lap(r - h)) / (2.0 * h);
            let d2 = (lap(r + h) - 2.0 * lap(r) + lap(r - h)) / (h * h);
            let fd = d2 + 2.0 * d1 / r;
            assert!((w.bilaplacian(3, r) - fd).abs() < 1e-4 * fd.abs().max(1.0), "r = {r}");
        }
    }

    #[test]
    fn localized_virial_examples() {
        let g = Grid::new(2, 128, 12.0).unwrap();
        let v = Field::from_fn(g, |x| Complex64::new((-(x[0] * x[0] + x[1] * x[1]) / (2.0 * 0.25)).exp(), 0.0)).unwrap();
        // σ = 0.5, R = 8σ = 4.
        let w = VirialWeight::Cutoff(CutoffProfile::new(4.0, 2).unwrap());
        assert_relative_eq!(localized_virial(&v, &w), variance(&v), max_relative = 1e-6);
        assert_eq!(localized_virial(&Field::zeros(g), &w), 0.0);
        let ones = Field::from_fn(g, |_| Complex64::new(1.0, 0.0)).unwrap();
        let direct: f64 = (0..g.len())
            .map(|i| {
                let x = g.position(i);
                4.0 * 4.0 * zeta_primitive((x[0] * x[0] + x[1] * x[1]).sqrt() / 4.0)
            })
            .sum::<f64>()
            * g.cell_volume();
        assert_relative_eq!(localized_virial(&ones, &w), direct, max_relative = 1e-12);
    }

    #[test]
    fn localized_second_reduces_to_quadratic_identity() {
        let g = Grid::new(2, 64, 8.0).unwrap();
        let v = gaussian_chirp(g, 1.5, 0.3);
        let cd = CumulativeDamping::new(DampingSpec::Constant { lambda: 0.2 }).unwrap();
        let (p, t) = (4.0, 0.7);
        let lhs = localized_virial_second(&v, t, &cd, p, &VirialWeight::Quadratic).unwrap();
        let coupling = ((1.0 - p) * 0.2 * t).exp();
        let rhs = 8.0 * grad_norm_sq(&v) - 4.0 * 2.0 * (p - 1.0) / (p + 1.0) * coupling * lp1_integral(&v, p);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
        assert_eq!(localized_virial_second(&Field::zeros(g), t, &cd, p, &VirialWeight::Quadratic).unwrap(), 0.0);
    }

    #[test]
    fn radial_hessian_reduction() {
        let g = Grid::new(2, 128, 10.0).unwrap();
        let v = Field::from_fn(g, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            Complex64::new(1.0 + 0.5 * r2, 0.0) * (-0.25 * r2).exp() * Complex64::cis(-0.4 * r2)
        })
        .unwrap();
        let w = VirialWeight::Cutoff(CutoffProfile::new(2.0, 2).unwrap());
        let full = hessian_term(&v, &w);
        let reduced = radial_hessian_term(&v, &w);
        assert_relative_eq!(full, reduced, max_relative = 1e-8);
    }

    #[test]
    fn mass_critical_epsilon_positivity() {
        for dim in [2usize, 3] {
            let (eps0, _) = mass_critical_epsilon(dim);
            assert!(eps0 > 0.0 && eps0.is_finite());
            let c = CutoffProfile::new(2.0, dim).unwrap();
            let half = 0.5 * dim as f64;
            let mut violated = false;
            for i in 1..=20_000 {
                let r = 2.0 + 6.0 * i as f64 / 20_000.0;
                let at_eps0 = 4.0 * c.phi1(r) - eps0 * c.phi2(r).powf(half);
                assert!(at_eps0 >= -1e-9, "dim {dim}, r {r}: {at_eps0}");
                if 4.0 * c.phi1(r) - 1.05 * eps0 * c.phi2(r).powf(half) < 0.0 {
                    violated = true;
                }
            }
            assert!(violated, "eps0 is not sharp for dim {dim}");
        }
    }

    #[test]
    fn gn_examples() {
        assert_relative_eq!(gn_exponent(3, 3.0), 0.75);
        let g = grid1();
        let u = gaussian_chirp(g, 1.0, 0.0);
        // ‖u‖_4 = (√(π/2))^{1/4}, ‖u‖_2 = π^{1/4}, ‖∇u‖_2 = (√π/2)^{1/2}, σ = 1/4.
        let expected = (PI / 2.0).sqrt().powf(0.25) / (PI.powf(0.25).powf(0.75) * (PI.sqrt() / 2.0).sqrt().powf(0.25));
        assert_relative_eq!(gn_check(&u, 3.0).unwrap(), expected, max_relative = 1e-9);
        assert!(gn_check(&Field::zeros(g), 3.0).is_err());
    }

    #[test]
    fn gn_ratio_is_dilation_invariant() {
        let g = Grid::new(2, 256, 20.0).unwrap();
        let base = |lam: f64| {
            Field::from_fn(g, |x| {
                let (a, b) = (lam * x[0], lam * x[1]);
                Complex64::new((1.0 + a * a) * (-(a * a + 2.0 * b * b) / 2.0).exp(), 0.0)
            })
            .unwrap()
        };
        let r1 = gn_check(&base(1.0), 3.0).unwrap();
        for lam in [0.5, 2.0] {
            assert_relative_eq!(gn_check(&base(lam), 3.0).unwrap(), r1, max_relative = 1e-6);
        }
    }
}
