//! Periodic tensor-product grids on `[-L, L)^dim`, complex fields sampled
//! on them, and the spectral operations built on the FFT.
//!
//! Storage is row-major with the last axis fastest. Grid point `j` on an
//! axis sits at `x_j = -L + j * 2L/n`, so `x = 0` is the grid point `n/2`.
//! Forward transforms are unnormalized; inverse transforms divide by `n^dim`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod snapshot;

/// Points-per-axis caps for dimensions 1, 2, 3.
pub const MAX_POINTS: [usize; 3] = [1024, 512, 128];

/// Fraction of the half-width beyond which a cell counts as boundary shell.
pub const SHELL_FRACTION: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    half_width: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("grid dimension must be 1, 2 or 3, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!("points per axis must be a power of two >= 4, got {n}")));
        }
        if n > MAX_POINTS[dim - 1] {
            return Err(Error::Config(format!(
                "points per axis {n} exceeds the {dim}D cap of {}",
                MAX_POINTS[dim - 1]
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Config(format!("half width L must be finite and > 0, got {half_width}")));
        }
        Ok(Self { dim, n, half_width })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Total number of grid points, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    /// Coordinates along one axis.
    pub fn axis(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.coordinate(j)).collect()
    }

    pub fn coordinate(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx()
    }

    /// Signed integer mode of FFT slot `j` (Nyquist maps to `-n/2`).
    pub fn mode(&self, j: usize) -> i64 {
        let n = self.n as i64;
        let j = j as i64;
        if j < n / 2 {
            j
        } else {
            j - n
        }
    }

    /// `2π m / (2L)` for FFT slot `j`.
    pub fn wavenumber(&self, j: usize) -> f64 {
        PI * self.mode(j) as f64 / self.half_width
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.wavenumber(j)).collect()
    }

    /// Per-axis indices of flat index `i` (unused trailing axes are zero).
    pub fn multi_index(&self, i: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut rest = i;
        for a in (0..self.dim).rev() {
            idx[a] = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    /// Position of flat index `i`; unused trailing components are zero.
    pub fn position(&self, i: usize) -> [f64; 3] {
        let idx = self.multi_index(i);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.coordinate(idx[a]);
        }
        x
    }

    /// `|x|^2` at every grid point.
    pub fn radius_squared(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.position(i).iter().map(|c| c * c).sum())
            .collect()
    }

    /// `|k|^2` at every spectral slot.
    pub fn k_squared(&self) -> Vec<f64> {
        let k = self.wavenumbers();
        (0..self.len())
            .map(|i| {
                let idx = self.multi_index(i);
                (0..self.dim).map(|a| k[idx[a]] * k[idx[a]]).sum()
            })
            .collect()
    }

    /// Rectangle-rule integral of a real array sampled on the grid.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::Shape { expected: self.len(), got: f.len() });
        }
        Ok(f.iter().sum::<f64>() * self.cell_volume())
    }

    /// In-place unnormalized forward DFT over all axes.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    /// In-place inverse DFT over all axes, normalized by `n^dim`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, false);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        assert_eq!(data.len(), self.len(), "buffer does not match grid");
        let fft = plan(self.n, forward);
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        let n = self.n;
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                fft.process_with_scratch(data, &mut scratch);
                continue;
            }
            // Gather `stride` lines per block into a contiguous batch.
            let block = n * stride;
            let mut batch = vec![Complex64::default(); block];
            for chunk in data.chunks_exact_mut(block) {
                for k in 0..n {
                    for inner in 0..stride {
                        batch[inner * n + k] = chunk[k * stride + inner];
                    }
                }
                fft.process_with_scratch(&mut batch, &mut scratch);
                for k in 0..n {
                    for inner in 0..stride {
                        chunk[k * stride + inner] = batch[inner * n + k];
                    }
                }
            }
        }
    }
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

/// Per-thread cached FFT plan.
fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, forward))
            .or_insert_with(|| if forward { planner.plan_fft_forward(n) } else { planner.plan_fft_inverse(n) })
            .clone()
    })
}

/// A complex field sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<Complex64>,
    post_blowup: bool,
}

impl Field {
    /// Rejects wrong lengths and non-finite samples.
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain(format!("field sample {i} is not finite")));
        }
        Ok(Self { grid, values, post_blowup: false })
    }

    /// Keeps non-finite samples; used for frames recorded after blow-up.
    pub fn new_post_blowup(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values, post_blowup: true })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![Complex64::default(); grid.len()], post_blowup: false }
    }

    /// Samples `f(x)` at every grid point (`x` has `dim` components).
    pub fn from_fn<F>(grid: Grid, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Complex64,
    {
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.position(i);
                f(&x[..grid.dim])
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_post_blowup(&self) -> bool {
        self.post_blowup
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|z| *z *= c);
        out
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|z| *z = z.conj());
        out
    }

    pub fn modulus_squared(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max).sqrt()
    }

    /// Unnormalized forward DFT of the samples.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut hat = self.values.clone();
        self.grid.forward(&mut hat);
        hat
    }

    pub fn from_spectrum(grid: Grid, mut hat: Vec<Complex64>) -> Result<Self> {
        grid.inverse(&mut hat);
        Self::new(grid, hat)
    }

    /// `∫|u|^2` by the rectangle rule.
    pub fn l2_norm_squared(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    /// Maximum pointwise modulus of the difference.
    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Rectangle-rule integral of a real array sampled on `grid`.
pub fn integrate(grid: &Grid, f: &[f64]) -> Result<f64> {
    grid.integrate(f)
}

/// Spectral partial derivatives, one field per axis. The Nyquist mode of
/// an odd derivative is set to zero so real fields stay real.
pub fn gradient(field: &Field) -> Vec<Field> {
    let grid = *field.grid();
    let hat = field.spectrum();
    (0..grid.dim()).map(|axis| derivative_from_spectrum(&grid, &hat, axis)).collect()
}

pub(crate) fn derivative_from_spectrum(grid: &Grid, hat: &[Complex64], axis: usize) -> Field {
    let n = grid.n();
    let k = grid.wavenumbers();
    let stride = n.pow((grid.dim() - 1 - axis) as u32);
    let mut d: Vec<Complex64> = hat
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let j = (i / stride) % n;
            if j == n / 2 {
                Complex64::default()
            } else {
                z * Complex64::new(0.0, k[j])
            }
        })
        .collect();
    grid.inverse(&mut d);
    Field { grid: *grid, values: d, post_blowup: false }
}

/// Free Schrödinger flow `e^{itΔ}`: multiplies each Fourier coefficient by `e^{-i|k|^2 t}`.
pub fn free_evolve(field: &Field, t: f64) -> Result<Field> {
    if !t.is_finite() {
        return Err(Error::Precondition(format!("free evolution time must be finite, got {t}")));
    }
    let grid = *field.grid();
    let mut hat = field.spectrum();
    apply_free_multiplier(&grid.k_squared(), &mut hat, t);
    grid.inverse(&mut hat);
    Ok(Field { grid, values: hat, post_blowup: field.post_blowup })
}

pub(crate) fn apply_free_multiplier(ksq: &[f64], hat: &mut [Complex64], t: f64) {
    for (z, &k2) in hat.iter_mut().zip(ksq) {
        *z *= Complex64::cis(-k2 * t);
    }
}

/// Fraction of `∫|u|^2` carried by cells with `|x_j| > 0.9 L` on any axis.
pub fn boundary_mass_fraction(field: &Field) -> f64 {
    let grid = field.grid();
    let cutoff = SHELL_FRACTION * grid.half_width();
    let mut shell = 0.0;
    let mut total = 0.0;
    for (i, z) in field.values().iter().enumerate() {
        let w = z.norm_sqr();
        total += w;
        let x = grid.position(i);
        if x[..grid.dim()].iter().any(|c| c.abs() > cutoff) {
            shell += w;
        }
    }
    if total > 0.0 {
        shell / total
    } else {
        0.0
    }
}

/// Fraction of spectral mass in the top third of wavenumbers (`|m| > n/3` on any axis).
pub fn spectral_tail_fraction(grid: &Grid, hat: &[Complex64]) -> f64 {
    let n = grid.n();
    let third = n as f64 / 3.0;
    let mut tail = 0.0;
    let mut total = 0.0;
    for (i, z) in hat.iter().enumerate() {
        let w = z.norm_sqr();
        total += w;
        let idx = grid.multi_index(i);
        if idx[..grid.dim()].iter().any(|&j| grid.mode(j).unsigned_abs() as f64 > third) {
            tail += w;
        }
    }
    if total > 0.0 {
        tail / total
    } else {
        0.0
    }
}

/// `∫|u|^2` evaluated on the wavenumber side via Parseval.
pub fn spectral_mass(grid: &Grid, hat: &[Complex64]) -> f64 {
    hat.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.cell_volume() / grid.len() as f64
}

/// `‖∇u‖^2 = Σ |k|^2 |û|^2` with the Parseval normalization.
pub fn spectral_gradient_norm_squared(grid: &Grid, ksq: &[f64], hat: &[Complex64]) -> f64 {
    hat.iter().zip(ksq).map(|(z, k2)| k2 * z.norm_sqr()).sum::<f64>() * grid.cell_volume() / grid.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian(grid: Grid) -> Field {
        Field::from_fn(grid, |x| Complex64::new((-0.5 * x.iter().map(|c| c * c).sum::<f64>()).exp(), 0.0)).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0, 64, 1.0).is_err());
        assert!(Grid::new(1, 100, 1.0).is_err());
        assert!(Grid::new(2, 1024, 1.0).is_err());
        assert!(Grid::new(3, 128, 1.0).is_ok());
        assert!(Grid::new(1, 64, -1.0).is_err());
    }

    #[test]
    fn coordinates_put_origin_on_grid() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        assert_eq!(g.coordinate(32), 0.0);
        assert_eq!(g.coordinate(0), -8.0);
        assert_relative_eq!(g.cell_volume(), 0.25);
    }

    #[test]
    fn wavenumbers_are_symmetric() {
        let g = Grid::new(1, 16, 3.0).unwrap();
        let k = g.wavenumbers();
        for j in 1..8 {
            assert_eq!(k[j], -k[16 - j]);
        }
        assert_relative_eq!(k[1], PI / 3.0);
        assert_relative_eq!(k[8], -8.0 * PI / 3.0);
    }

    #[test]
    fn integrate_examples() {
        let g = Grid::new(1, 512, 16.0).unwrap();
        assert_relative_eq!(g.integrate(&vec![1.0; 512]).unwrap(), 32.0, max_relative = 1e-14);
        let f: Vec<f64> = g.axis().iter().map(|x| (-x * x).exp()).collect();
        assert!((g.integrate(&f).unwrap() - PI.sqrt()).abs() <= 1e-12);
        assert_eq!(g.integrate(&vec![0.0; 512]).unwrap(), 0.0);
        assert!(matches!(g.integrate(&[1.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn fft_round_trip_all_dims() {
        for (dim, n) in [(1, 32), (2, 16), (3, 8)] {
            let g = Grid::new(dim, n, 2.0).unwrap();
            let f = Field::from_fn(g, |x| Complex64::new(x.iter().sum::<f64>().sin(), x[0].cos())).unwrap();
            let back = Field::from_spectrum(g, f.spectrum()).unwrap();
            assert!(back.max_abs_diff(&f) < 1e-13);
        }
    }

    #[test]
    fn gradient_examples() {
        let g = Grid::new(1, 256, 16.0).unwrap();
        let u = gaussian(g);
        let du = &gradient(&u)[0];
        for (x, d) in g.axis().iter().zip(du.values()) {
            assert!((d.re + x * (-0.5 * x * x).exp()).abs() <= 1e-10);
            assert!(d.im.abs() <= 1e-12);
        }
        let c = Field::from_fn(g, |_| Complex64::new(2.5, -1.0)).unwrap();
        assert!(gradient(&c)[0].max_modulus() < 1e-13);

        let l = 16.0;
        let s = Field::from_fn(g, |x| Complex64::new((PI * x[0] / l).sin(), 0.0)).unwrap();
        let ds = &gradient(&s)[0];
        for (x, d) in g.axis().iter().zip(ds.values()) {
            assert!((d.re - PI / l * (PI * x / l).cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_2d_axes_are_independent() {
        let g = Grid::new(2, 64, 8.0).unwrap();
        let u = Field::from_fn(g, |x| Complex64::new((-0.5 * (x[0] * x[0] + 2.0 * x[1] * x[1])).exp(), 0.0)).unwrap();
        let d = gradient(&u);
        for i in 0..g.len() {
            let x = g.position(i);
            let e = (-0.5 * (x[0] * x[0] + 2.0 * x[1] * x[1])).exp();
            assert!((d[0].values()[i].re + x[0] * e).abs() < 1e-9);
            assert!((d[1].values()[i].re + 2.0 * x[1] * e).abs() < 1e-9);
        }
    }

    #[test]
    fn free_evolve_identity_unitarity_and_exact_gaussian() {
        let g = Grid::new(1, 512, 16.0).unwrap();
        let u = gaussian(g);
        assert!(free_evolve(&u, 0.0).unwrap().max_abs_diff(&u) < 1e-15);
        let u1 = free_evolve(&u, 1.0).unwrap();
        assert!((u1.l2_norm_squared() - u.l2_norm_squared()).abs() <= 1e-12 * u.l2_norm_squared());
        // i u_t + u_xx = 0 with u0 = e^{-x^2/2}: u = (1+2it)^{-1/2} e^{-x^2/(2(1+2it))}.
        let t = 1.0;
        let denom = Complex64::new(1.0, 2.0 * t);
        let mut err: f64 = 0.0;
        for (x, z) in g.axis().iter().zip(u1.values()) {
            let exact = denom.sqrt().inv() * (-(x * x) / (2.0 * denom)).exp();
            err = err.max((exact - z).norm());
        }
        assert!(err <= 1e-8, "max error {err}");
    }

    #[test]
    fn free_evolve_is_reversible() {
        let g = Grid::new(2, 64, 8.0).unwrap();
        let u = Field::from_fn(g, |x| Complex64::new((-0.5 * (x[0] * x[0] + x[1] * x[1])).exp(), x[0] * (-x[0] * x[0]).exp())).unwrap();
        let back = free_evolve(&free_evolve(&u, 0.7).unwrap(), -0.7).unwrap();
        assert!(back.max_abs_diff(&u) <= 1e-12);
    }

    #[test]
    fn boundary_mass_fraction_examples() {
        let g = Grid::new(1, 512, 16.0).unwrap();
        assert!(boundary_mass_fraction(&gaussian(g)) <= 1e-30);
        let one = Field::from_fn(g, |_| Complex64::new(1.0, 0.0)).unwrap();
        // Cells strictly beyond 0.9 L: x < -14.4 or x > 14.4 on the grid.
        let expected = g.axis().iter().filter(|x| x.abs() > 14.4).count() as f64 / 512.0;
        assert_relative_eq!(boundary_mass_fraction(&one), expected);
        assert!((expected - 0.1).abs() < 5e-3);
        assert_eq!(boundary_mass_fraction(&Field::zeros(g)), 0.0);
    }

    #[test]
    fn parseval_and_tail() {
        let g = Grid::new(2, 64, 8.0).unwrap();
        let u = Field::from_fn(g, |x| Complex64::new((-0.5 * (x[0] * x[0] + x[1] * x[1])).exp(), 0.3 * x[1])).unwrap();
        let hat = u.spectrum();
        assert_relative_eq!(spectral_mass(&g, &hat), u.l2_norm_squared(), max_relative = 1e-12);
        assert!(spectral_tail_fraction(&g, &gaussian(g).spectrum()) < 1e-20);
        let spike = Field::from_fn(g, |x| Complex64::new(if x[0] == 0.0 && x[1] == 0.0 { 1.0 } else { 0.0 }, 0.0)).unwrap();
        let tail = spectral_tail_fraction(&g, &spike.spectrum());
        assert!(tail > 0.4);
    }

    #[test]
    fn field_rejects_bad_samples() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        assert!(Field::new(g, vec![Complex64::default(); 7]).is_err());
        let mut v = vec![Complex64::default(); 8];
        v[3] = Complex64::new(f64::NAN, 0.0);
        assert!(Field::new(g, v.clone()).is_err());
        assert!(Field::new_post_blowup(g, v).unwrap().is_post_blowup());
    }
}
