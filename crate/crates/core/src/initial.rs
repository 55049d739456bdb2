//! Initial-data families.

use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::snapshot::read_snapshot;
use crate::grid::{Field, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `A e^{-|x-c|²/(2w²)}`
    Gaussian,
    /// Gaussian times `e^{-i b |x-c|²}`.
    GaussianChirp,
    /// `A e^{-(|x|-r₀)²/(2w²)}`, radial about the origin.
    Ring,
    /// A binary snapshot on the configured grid.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub family: Family,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default)]
    pub chirp: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub center: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

impl InitialSpec {
    pub fn gaussian(amplitude: f64) -> Self {
        Self { family: Family::Gaussian, amplitude, width: 1.0, chirp: 0.0, center: Vec::new(), radius: None, path: None }
    }

    pub fn chirped(amplitude: f64, chirp: f64) -> Self {
        Self { family: Family::GaussianChirp, chirp, ..Self::gaussian(amplitude) }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(Error::Config(format!("amplitude must be finite, got {}", self.amplitude)));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("width must be positive, got {}", self.width)));
        }
        if !self.chirp.is_finite() {
            return Err(Error::Config(format!("chirp must be finite, got {}", self.chirp)));
        }
        if !self.center.is_empty() && self.center.len() != dim {
            return Err(Error::Config(format!("center has {} components for dimension {dim}", self.center.len())));
        }
        match self.family {
            Family::Ring if !self.radius.is_some_and(|r| r >= 0.0 && r.is_finite()) => {
                Err(Error::Config("ring datum needs radius >= 0".into()))
            }
            Family::File if self.path.is_none() => Err(Error::Config("file datum needs a path".into())),
            _ => Ok(()),
        }
    }

    pub fn build(&self, grid: Grid) -> Result<Field> {
        self.validate(grid.dim())?;
        let dim = grid.dim();
        let center = |x: &[f64], j: usize| x[j] - self.center.get(j).copied().unwrap_or(0.0);
        let w2 = self.width * self.width;
        match self.family {
            Family::Gaussian | Family::GaussianChirp => {
                let b = if self.family == Family::GaussianChirp { self.chirp } else { 0.0 };
                Field::from_fn(grid, |x| {
                    let r2: f64 = (0..dim).map(|j| center(x, j).powi(2)).sum();
                    self.amplitude * (-r2 / (2.0 * w2)).exp() * Complex64::cis(-b * r2)
                })
            }
            Family::Ring => {
                let r0 = self.radius.unwrap_or(0.0);
                Field::from_fn(grid, |x| {
                    let r: f64 = (0..dim).map(|j| x[j] * x[j]).sum::<f64>().sqrt();
                    Complex64::new(self.amplitude * (-(r - r0).powi(2) / (2.0 * w2)).exp(), 0.0)
                })
            }
            Family::File => {
                let path = self.path.as_ref().expect("validated");
                let (field, _) = read_snapshot(std::io::BufReader::new(std::fs::File::open(path)?))?;
                if *field.grid() != grid {
                    return Err(Error::Config(format!(
                        "snapshot {} has grid {:?}, configured grid is {:?}",
                        path.display(),
                        field.grid(),
                        grid
                    )));
                }
                Ok(field)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::snapshot::write_snapshot;

    #[test]
    fn families_build() {
        let g = Grid::new(2, 32, 6.0).unwrap();
        let u = InitialSpec::chirped(2.0, 0.5).build(g).unwrap();
        assert!((u.max_modulus() - 2.0).abs() < 1e-12);
        let mut ring = InitialSpec::gaussian(1.0);
        ring.family = Family::Ring;
        assert!(ring.build(g).is_err());
        ring.radius = Some(2.0);
        assert!(ring.build(g).unwrap().max_modulus() > 0.9);
        let mut bad = InitialSpec::gaussian(1.0);
        bad.center = vec![0.0];
        assert!(bad.build(g).is_err());
    }

    #[test]
    fn file_family_checks_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u0.bin");
        let g = Grid::new(1, 16, 4.0).unwrap();
        let u = InitialSpec::gaussian(1.5).build(g).unwrap();
        write_snapshot(std::fs::File::create(&path).unwrap(), &u, 0.0).unwrap();
        let spec = InitialSpec { family: Family::File, path: Some(path), ..InitialSpec::gaussian(1.0) };
        assert_eq!(spec.build(g).unwrap(), u);
        assert!(spec.build(Grid::new(1, 32, 4.0).unwrap()).is_err());
    }
}
