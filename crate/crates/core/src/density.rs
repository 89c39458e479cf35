use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::Interval;
use crate::ENDPOINT_TOL;

/// Piecewise-constant function on the uniform partition of `[0, 1]` into `n`
/// cells, stored as cell averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("a density grid needs at least one cell".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("cell {i} holds a non-finite value")));
        }
        Ok(DensityGrid { values })
    }

    pub fn constant(n: usize, c: f64) -> Self {
        DensityGrid { values: vec![c; n.max(1)] }
    }

    /// The uniform probability density.
    pub fn uniform(n: usize) -> Self {
        Self::constant(n, 1.0)
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    /// `height * 1_J` projected onto the grid with exact partial-cell weights.
    pub fn indicator(n: usize, j: Interval, height: f64) -> Self {
        let nf = n as f64;
        let values = (0..n)
            .map(|i| {
                let (lo, hi) = (i as f64 / nf, (i + 1) as f64 / nf);
                if lo >= j.lo && hi <= j.hi {
                    height
                } else {
                    height * j.overlap(lo, hi) * nf
                }
            })
            .collect();
        DensityGrid { values }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.n() as f64
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n() as f64
    }

    /// `int f dx`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n() as f64
    }

    /// `|f|_{L^1}`.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.n() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum |f_{i+1} - f_i|` over interior cell boundaries.
    pub fn total_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64> {
        self.check_same_n(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / self.n() as f64)
    }

    /// `int_J f dx` with exact overlap of `J` and each cell.
    pub fn integrate(&self, j: Interval) -> f64 {
        let nf = self.n() as f64;
        if j.is_empty() {
            return 0.0;
        }
        let first = ((j.lo * nf).floor() as usize).min(self.n() - 1);
        let last = ((j.hi * nf).ceil() as usize).clamp(first + 1, self.n());
        (first..last)
            .map(|i| self.values[i] * j.overlap(i as f64 / nf, (i + 1) as f64 / nf))
            .sum()
    }

    /// Cell value near `x`: the containing cell averaged with its neighbours.
    pub fn value_near(&self, x: f64) -> f64 {
        let n = self.n();
        let i = ((x * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        self.values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
    }

    /// Indices of the cells lying inside `j`. `j` must be aligned with cell
    /// boundaries up to [`ENDPOINT_TOL`].
    pub fn aligned_cells(n: usize, j: Interval) -> Result<Range<usize>> {
        let nf = n as f64;
        let (a, b) = (j.lo * nf, j.hi * nf);
        if (a - a.round()).abs() > ENDPOINT_TOL * nf || (b - b.round()).abs() > ENDPOINT_TOL * nf {
            return Err(Error::Domain(format!("{j} is not aligned with a grid of {n} cells")));
        }
        Ok(a.round() as usize..b.round() as usize)
    }

    pub fn scaled(&self, c: f64) -> DensityGrid {
        DensityGrid { values: self.values.iter().map(|v| c * v).collect() }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &DensityGrid, b: f64) -> Result<DensityGrid> {
        self.check_same_n(other)?;
        Ok(DensityGrid {
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        })
    }

    pub fn check_same_n(&self, other: &DensityGrid) -> Result<()> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), found: other.n() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_of_a_step() {
        let d = DensityGrid::indicator(8, Interval { lo: 0.0, hi: 0.5 }, 2.0);
        assert_eq!(d.values(), &[2.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.mass(), 1.0);
        assert_eq!(d.l1_norm(), 1.0);
        assert_eq!(d.total_variation(), 2.0);
    }

    #[test]
    fn partial_cell_integration() {
        let d = DensityGrid::uniform(10);
        let j = Interval { lo: 0.123, hi: 0.4567 };
        assert!((d.integrate(j) - j.len()).abs() < 1e-15);
        let ramp = DensityGrid::new((0..10).map(|i| i as f64).collect()).unwrap();
        // half of cell 2 (value 2) plus all of cell 3 (value 3)
        let v = ramp.integrate(Interval { lo: 0.25, hi: 0.4 });
        assert!((v - (0.05 * 2.0 + 0.1 * 3.0)).abs() < 1e-15);
        assert_eq!(ramp.integrate(Interval { lo: 0.3, hi: 0.3 }), 0.0);
    }

    #[test]
    fn aligned_cell_ranges() {
        assert_eq!(DensityGrid::aligned_cells(6, Interval { lo: 0.5, hi: 1.0 }).unwrap(), 3..6);
        assert!(DensityGrid::aligned_cells(6, Interval { lo: 0.25, hi: 1.0 }).is_err());
    }

    #[test]
    fn mismatched_grids() {
        let a = DensityGrid::uniform(4);
        let b = DensityGrid::uniform(5);
        assert!(matches!(a.l1_distance(&b), Err(Error::DimensionMismatch { expected: 4, found: 5 })));
    }
}
