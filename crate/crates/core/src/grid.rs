//! Periodic grids, their frequency lattices, and sampled fields.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default cap on the total number of grid points.
pub const DEFAULT_POINT_CAP: usize = 1 << 22;

/// Uniform periodic grid on the box `[-L, L)^n`, the torus surrogate for `R^n`.
///
/// Points are `x_j = -L + j h` with `h = 2L / N`. Flat indices are row-major
/// with axis 0 slowest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    points: usize,
    half_len: f64,
}

impl Grid {
    pub fn new(dim: usize, points: usize, half_len: f64) -> Result<Self> {
        Self::with_cap(dim, points, half_len, DEFAULT_POINT_CAP)
    }

    pub fn with_cap(dim: usize, points: usize, half_len: f64, cap: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("points per axis must be a power of two >= 8, got {points}")));
        }
        if !(half_len > 0.0 && half_len.is_finite()) {
            return Err(Error::InvalidGrid(format!("half length must be positive, got {half_len}")));
        }
        let total = points.checked_pow(dim as u32).ok_or_else(|| Error::InvalidGrid("point count overflows".into()))?;
        if total > cap {
            return Err(Error::InvalidGrid(format!("{total} points exceed cap {cap}")));
        }
        Ok(Self { dim, points, half_len })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn half_len(&self) -> f64 {
        self.half_len
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_len / self.points as f64
    }

    /// `h^n`, the quadrature weight of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total number of points, `N^n`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of axis index `j`.
    pub fn axis_coord(&self, j: usize) -> f64 {
        -self.half_len + j as f64 * self.spacing()
    }

    /// Axis index closest to coordinate `x` (clamped to the grid).
    pub fn nearest_axis_index(&self, x: f64) -> usize {
        let j = ((x + self.half_len) / self.spacing()).round();
        j.clamp(0.0, (self.points - 1) as f64) as usize
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let n = self.points;
        match self.dim {
            1 => [flat, 0, 0],
            2 => [flat / n, flat % n, 0],
            _ => [flat / (n * n), (flat / n) % n, flat % n],
        }
    }

    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        let n = self.points;
        match self.dim {
            1 => idx[0],
            2 => idx[0] * n + idx[1],
            _ => (idx[0] * n + idx[1]) * n + idx[2],
        }
    }

    /// Physical coordinates of a flat index; unused axes are zero.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let m = self.multi_index(flat);
        let mut p = [0.0; 3];
        for (a, pa) in p.iter_mut().enumerate().take(self.dim) {
            *pa = self.axis_coord(m[a]);
        }
        p
    }

    /// Angular frequency of FFT bin `k` (standard ordering, Nyquist at `-N/2`).
    pub fn axis_freq(&self, k: usize) -> f64 {
        let n = self.points as i64;
        let signed = if (k as i64) < n / 2 { k as i64 } else { k as i64 - n };
        PI * signed as f64 / self.half_len
    }

    pub fn freq_grid(&self) -> FreqGrid {
        FreqGrid::new(*self)
    }

    /// Euclidean norm of a point's coordinates relative to `center`.
    pub fn dist(&self, flat: usize, center: &[f64]) -> f64 {
        let p = self.point(flat);
        (0..self.dim)
            .map(|a| {
                let d = p[a] - center.get(a).copied().unwrap_or(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Discrete frequencies `xi_k = pi k / L` for each axis and the radial
/// magnitude `|xi|` of every bin, in the same flat layout as fields.
#[derive(Debug, Clone)]
pub struct FreqGrid {
    grid: Grid,
    axis: Vec<f64>,
    radial: Vec<f64>,
}

impl FreqGrid {
    pub fn new(grid: Grid) -> Self {
        let axis: Vec<f64> = (0..grid.points()).map(|k| grid.axis_freq(k)).collect();
        let radial = (0..grid.len())
            .map(|flat| {
                let m = grid.multi_index(flat);
                (0..grid.dim()).map(|a| axis[m[a]] * axis[m[a]]).sum::<f64>().sqrt()
            })
            .collect();
        Self { grid, axis, radial }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Per-axis frequencies in FFT order.
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    /// `|xi|` for every flat bin.
    pub fn radial(&self) -> &[f64] {
        &self.radial
    }

    /// Frequency vector of a flat bin.
    pub fn xi(&self, flat: usize) -> [f64; 3] {
        let m = self.grid.multi_index(flat);
        let mut xi = [0.0; 3];
        for (a, x) in xi.iter_mut().enumerate().take(self.grid.dim()) {
            *x = self.axis[m[a]];
        }
        xi
    }

    /// True if any axis of this bin sits on the Nyquist frequency.
    pub fn is_nyquist(&self, flat: usize) -> bool {
        let m = self.grid.multi_index(flat);
        (0..self.grid.dim()).any(|a| m[a] == self.grid.points() / 2)
    }
}

/// Real samples of a function on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldLength { expected: grid.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `L^2` norm with the cell-volume weight.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(Field { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Removes the mean (projects out the zero Fourier mode).
    pub fn mean_zero(&self) -> Field {
        let m = self.mean();
        self.map(|v| v - m)
    }

    /// Copy with every point outside `keep` set to zero.
    pub fn restrict(&self, keep: &[usize]) -> Field {
        let mut values = vec![0.0; self.values.len()];
        for &i in keep {
            values[i] = self.values[i];
        }
        Field { grid: self.grid, values }
    }
}

/// A real exponent together with its integer and fractional parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponent {
    s: f64,
}

impl Exponent {
    pub fn new(s: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::ExponentOutOfRange { s, min: f64::NEG_INFINITY });
        }
        Ok(Self { s })
    }

    pub fn value(&self) -> f64 {
        self.s
    }

    pub fn floor(&self) -> i64 {
        self.s.floor() as i64
    }

    /// `s - floor(s)`, in `[0, 1)`.
    pub fn frac(&self) -> f64 {
        self.s - self.s.floor()
    }

    pub fn is_fractional(&self) -> bool {
        self.s.fract() != 0.0
    }

    /// Checks `s > -n/2`.
    pub fn check_range(&self, dim: usize) -> Result<()> {
        let min = -(dim as f64) / 2.0;
        if self.s <= min {
            return Err(Error::ExponentOutOfRange { s: self.s, min });
        }
        Ok(())
    }
}

impl From<Exponent> for f64 {
    fn from(e: Exponent) -> f64 {
        e.s
    }
}
