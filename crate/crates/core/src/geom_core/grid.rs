//! Periodic grids on the flat torus and the two field types living on them.

use serde::{Deserialize, Serialize};

use super::mat::Mat;
use crate::error::{JeqError, Result};

/// Uniform periodic grid on a real 2n-torus; complex coordinate z_j = x_{2j} + i x_{2j+1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    points: usize,
    periods: Vec<f64>,
}

impl Grid {
    /// Grid with every period equal to 2π.
    pub fn new(n: usize, points: usize) -> Result<Self> {
        Grid::with_periods(n, points, vec![2.0 * std::f64::consts::PI; 2 * n])
    }

    pub fn with_periods(n: usize, points: usize, periods: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(JeqError::InvalidInput(format!(
                "complex dimension {n} outside 1..=3"
            )));
        }
        if points < 8 || points % 2 != 0 {
            return Err(JeqError::InvalidInput(format!(
                "points per axis must be even and at least 8, got {points}"
            )));
        }
        if periods.len() != 2 * n {
            return Err(JeqError::InvalidInput(format!(
                "expected {} periods, got {}",
                2 * n,
                periods.len()
            )));
        }
        if periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(JeqError::InvalidInput("periods must be positive".into()));
        }
        Ok(Grid { n, points, periods })
    }

    #[inline]
    pub fn complex_dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn real_dim(&self) -> usize {
        2 * self.n
    }

    #[inline]
    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    /// Total number of grid points N^{2n}.
    pub fn len(&self) -> usize {
        self.points.pow(2 * self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> f64 {
        self.periods[axis] / self.points as f64
    }

    /// Lebesgue volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.real_dim()).map(|a| self.spacing(a)).product()
    }

    /// Index stride of a real axis; axis 0 varies slowest.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.real_dim() - 1 - axis) as u32)
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        (0..self.real_dim())
            .map(|a| (idx / self.stride(a)) % self.points)
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .enumerate()
            .map(|(a, &i)| (i % self.points) * self.stride(a))
            .sum()
    }

    /// Index of the point shifted by `offset` cells along `axis`, wrapping periodically.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let s = self.stride(axis);
        let n = self.points as isize;
        let i = ((idx / s) % self.points) as isize;
        let j = (i + offset).rem_euclid(n);
        (idx as isize + (j - i) * s as isize) as usize
    }

    /// Real coordinates of a grid point.
    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(a, &i)| i as f64 * self.spacing(a))
            .collect()
    }
}

/// Real scalar function sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl PotentialField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(JeqError::InvalidInput(format!(
                "field has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(JeqError::InvalidInput(format!(
                "non-finite value at point {i}"
            )));
        }
        Ok(PotentialField { grid, values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        PotentialField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        PotentialField {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    /// Samples a function of the real coordinates.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        PotentialField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Discrete integral: sum of values times the cell volume.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        PotentialField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Field of n×n Hermitian matrices g_{i j̄}.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianField {
    pub grid: Grid,
    pub values: Vec<Mat>,
}

impl HermitianField {
    pub fn new(grid: Grid, values: Vec<Mat>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(JeqError::InvalidInput(format!(
                "field has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        let n = grid.complex_dim();
        for (i, m) in values.iter().enumerate() {
            if m.dim() != n {
                return Err(JeqError::InvalidInput(format!(
                    "matrix at point {i} has wrong size"
                )));
            }
            let scale = m.max_abs().max(1.0);
            if m.hermitian_defect() > 1e-12 * scale {
                return Err(JeqError::InvalidInput(format!(
                    "matrix at point {i} is not Hermitian"
                )));
            }
        }
        Ok(HermitianField { grid, values })
    }

    /// The same matrix at every point.
    pub fn constant(grid: &Grid, m: Mat) -> Self {
        assert_eq!(m.dim(), grid.complex_dim());
        HermitianField {
            grid: grid.clone(),
            values: vec![m; grid.len()],
        }
    }

    pub fn identity(grid: &Grid) -> Self {
        HermitianField::constant(grid, Mat::identity(grid.complex_dim()))
    }

    pub fn add(&self, other: &HermitianField) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a + *b)
            .collect();
        HermitianField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        HermitianField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|a| a.scale(s)).collect(),
        }
    }

    /// Pointwise s·self + r·other.
    pub fn combine(&self, s: f64, other: &HermitianField, r: f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.scale(s) + b.scale(r))
            .collect();
        HermitianField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.values
            .iter()
            .fold(0.0f64, |m, a| m.max(a.hermitian_defect()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, a| m.max(a.max_abs()))
    }

    /// Fails with NonPositiveMetric at the first point whose smallest eigenvalue is <= `floor`.
    pub fn check_positive(&self, floor: f64) -> Result<()> {
        for (i, m) in self.values.iter().enumerate() {
            let e = m.min_eigenvalue();
            if !(e > floor) {
                return Err(JeqError::NonPositiveMetric {
                    index: i,
                    min_eig: e,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip_and_shift() {
        let g = Grid::new(2, 8).unwrap();
        assert_eq!(g.len(), 4096);
        for idx in [0usize, 17, 511, 4095] {
            assert_eq!(g.flat_index(&g.multi_index(idx)), idx);
        }
        let idx = g.flat_index(&[7, 0, 3, 7]);
        assert_eq!(g.multi_index(g.shift(idx, 0, 1)), vec![0, 0, 3, 7]);
        assert_eq!(g.multi_index(g.shift(idx, 3, 2)), vec![7, 0, 3, 1]);
        assert_eq!(g.multi_index(g.shift(idx, 1, -1)), vec![7, 7, 3, 7]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(0, 8).is_err());
        assert!(Grid::new(4, 8).is_err());
        assert!(Grid::new(1, 7).is_err());
        assert!(Grid::new(1, 6).is_err());
    }

    #[test]
    fn cell_volume_sums_to_torus_volume() {
        let g = Grid::with_periods(1, 10, vec![1.0, 2.0]).unwrap();
        assert!((g.cell_volume() * g.len() as f64 - 2.0).abs() < 1e-14);
    }
}
