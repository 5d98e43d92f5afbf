//! Unique-continuation probes: how small can `u` and `(-Δ)^s u` both be on
//! an open set `V` for a unit-norm field?
//!
//! The form `Q_s(u) = ||u||^2_{L^2(V)} + ||(-Δ)^s u||^2_{L^2(V)}` is
//! minimized over a finite subspace by a dense symmetric eigensolve. Powers
//! use the lattice symbol `sum_a (2/h)^2 sin^2(xi_a h / 2)`, so integer
//! powers are exactly the local stencil while fractional ones stay
//! nonlocal.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::{Field, Grid};
use crate::linalg::sym_eigen;
use crate::region::Region;
use crate::spectral::make_bump;

/// Denominator floor in [`locality_contrast`].
pub const LAMBDA_FLOOR: f64 = 1e-16;

/// Orthonormal (in `L^2`) basis of a finite probe space.
#[derive(Debug, Clone)]
pub struct UcpSubspace {
    grid: Grid,
    basis: Vec<Field>,
}

/// Integer wave vectors in a half space, ordered by length then
/// lexicographically, Nyquist components excluded.
fn half_space_modes(grid: &Grid, count: usize) -> Vec<[i64; 3]> {
    let n = grid.dim();
    let top = grid.points() as i64 / 2 - 1;
    let mut radius = 1;
    loop {
        let r = radius.min(top);
        let mut modes = Vec::new();
        let mut m = [-r; 3];
        m[n..].fill(0);
        loop {
            let first = m[..n].iter().find(|&&c| c != 0);
            if matches!(first, Some(&c) if c > 0) {
                modes.push(m);
            }
            let mut a = 0;
            loop {
                if a == n {
                    break;
                }
                m[a] += 1;
                if m[a] <= r {
                    break;
                }
                m[a] = -r;
                a += 1;
            }
            if a == n {
                break;
            }
        }
        let norm = |m: &[i64; 3]| m.iter().map(|c| c * c).sum::<i64>();
        modes.sort_by(|p, q| norm(p).cmp(&norm(q)).then(p.cmp(q)));
        // every mode within length r is present once the box reaches r
        let complete = modes.iter().take_while(|m| norm(m) <= r * r).count();
        if 2 * complete >= count || r == top {
            modes.truncate(count.div_ceil(2));
            return modes;
        }
        radius *= 2;
    }
}

impl UcpSubspace {
    /// The `dim` lowest-frequency real Fourier modes: the constant, then
    /// `cos` and `sin` pairs by increasing `|xi|`.
    pub fn band_limited(grid: Grid, dim: usize) -> Result<Self> {
        let max = grid.len() - (1 << grid.dim()) + 1;
        if dim == 0 || dim > max.min(4096) {
            return Err(Error::InvalidMask(format!("subspace dimension {dim} outside 1..={}", max.min(4096))));
        }
        let n = grid.dim();
        let l = grid.half_len();
        let unit = (1.0 / (2.0 * l).powi(n as i32)).sqrt();
        let mut basis = vec![Field::from_fn(grid, |_| unit)];
        for m in half_space_modes(&grid, dim - 1) {
            let phase = move |p: [f64; 3]| (0..n).map(|a| m[a] as f64 * std::f64::consts::PI * p[a] / l).sum::<f64>();
            let amp = unit * 2f64.sqrt();
            basis.push(Field::from_fn(grid, move |p| amp * phase(p).cos()));
            if basis.len() < dim {
                basis.push(Field::from_fn(grid, move |p| amp * phase(p).sin()));
            }
            if basis.len() == dim {
                break;
            }
        }
        Ok(Self { grid, basis })
    }

    /// Adds fields to the span and re-orthonormalizes. Fields already in
    /// the span are dropped.
    pub fn with_fields(mut self, extra: &[Field]) -> Result<Self> {
        for f in extra {
            if *f.grid() != self.grid {
                return Err(Error::GridMismatch);
            }
        }
        let cols: Vec<&Field> = self.basis.iter().chain(extra).collect();
        let hn = self.grid.cell_volume();
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
        for f in cols {
            let mut v = f.values().to_vec();
            let start: f64 = (hn * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for q in &out {
                    let c: f64 = hn * q.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                    for (x, y) in v.iter_mut().zip(q) {
                        *x -= c * y;
                    }
                }
            }
            let norm: f64 = (hn * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
            if norm > 1e-10 * start {
                out.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        self.basis = out.into_iter().map(|v| Field::new(self.grid, v)).collect::<Result<_>>()?;
        Ok(self)
    }

    /// The `modes` lowest Fourier modes together with [`outside_bump`], so
    /// that a local operator always has an exact witness in the span.
    pub fn with_witness(grid: Grid, modes: usize, v: &Region) -> Result<Self> {
        Self::band_limited(grid, modes)?.with_fields(&[outside_bump(&grid, v)?])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Field] {
        &self.basis
    }
}

/// `(-Δ_h)^s u` through the lattice symbol. For `s < 0` the zero mode is
/// projected out.
pub fn lattice_power(u: &Field, s: f64) -> Field {
    let grid = *u.grid();
    let n = grid.dim();
    let h = grid.spacing();
    let np = grid.points();
    let axis: Vec<f64> =
        (0..np).map(|k| (2.0 / h * (std::f64::consts::PI * k as f64 / np as f64).sin()).powi(2)).collect();
    fft::apply_real_multiplier(u, |flat| {
        let m = grid.multi_index(flat);
        let sym: f64 = (0..n).map(|a| axis[m[a]]).sum();
        if s == 0.0 {
            1.0
        } else if sym == 0.0 {
            0.0
        } else {
            sym.powf(s)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcpSpectrumResult {
    pub s: f64,
    pub v: Region,
    /// Smallest eigenvalue of `Q_s` on the subspace.
    pub lambda_min: f64,
    /// Unit-norm minimizer.
    pub witness: Field,
    /// Grid points per axis.
    pub points: usize,
    pub subspace_dim: usize,
    /// Grid points in `V`.
    pub v_points: usize,
}

/// One row of the trend table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcpRow {
    pub s: f64,
    #[serde(rename = "N")]
    pub points: usize,
    pub subspace_dim: usize,
    pub v_volume: f64,
    pub lambda_min: f64,
}

impl UcpSpectrumResult {
    pub fn row(&self) -> UcpRow {
        UcpRow {
            s: self.s,
            points: self.points,
            subspace_dim: self.subspace_dim,
            v_volume: self.v.volume(),
            lambda_min: self.lambda_min,
        }
    }
}

pub const UCP_CSV_HEADER: &str = "s,N,subspace_dim,v_volume,lambda_min";

pub fn ucp_rows_csv(rows: &[UcpRow]) -> String {
    let mut out = String::from(UCP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{:?},{},{},{:?},{:?}\n", r.s, r.points, r.subspace_dim, r.v_volume, r.lambda_min));
    }
    out
}

fn v_indices(grid: &Grid, v: &Region) -> Result<Vec<usize>> {
    v.validate()?;
    if v.dim() != grid.dim() {
        return Err(Error::InvalidMask("V does not match the grid dimension".into()));
    }
    let (lo, hi) = v.bounds();
    let l = grid.half_len();
    if lo.iter().chain(&hi).any(|c| c.abs() >= l) {
        return Err(Error::InvalidMask(format!("V must lie strictly inside the box [-{l}, {l}]")));
    }
    let idx = v.indices(grid);
    if idx.is_empty() {
        return Err(Error::InvalidMask("V contains no grid points".into()));
    }
    Ok(idx)
}

/// Minimizes `Q_s` over the `subspace_dim` lowest Fourier modes.
pub fn ucp_quadratic_min(grid: Grid, s: f64, v: &Region, subspace_dim: usize) -> Result<UcpSpectrumResult> {
    ucp_quadratic_min_in(&UcpSubspace::band_limited(grid, subspace_dim)?, s, v)
}

/// Minimizes `Q_s` over an arbitrary orthonormal subspace.
pub fn ucp_quadratic_min_in(space: &UcpSubspace, s: f64, v: &Region) -> Result<UcpSpectrumResult> {
    if !s.is_finite() {
        return Err(Error::ExponentOutOfRange { s, min: f64::NEG_INFINITY });
    }
    let grid = space.grid;
    let idx = v_indices(&grid, v)?;
    let k = space.dim();
    let hn = grid.cell_volume();
    let images: Vec<Field> = space.basis.iter().map(|b| lattice_power(b, s)).collect();
    let on_v = |fields: &[Field]| DMatrix::from_fn(idx.len(), k, |r, j| fields[j].values()[idx[r]]);
    let b = on_v(&space.basis);
    let a = on_v(&images);
    let q = (b.tr_mul(&b) + a.tr_mul(&a)) * hn;
    let eig = sym_eigen(q)?;
    let y = eig.vectors.column(0);
    let mut w = vec![0.0; grid.len()];
    for (j, f) in space.basis.iter().enumerate() {
        for (x, v) in w.iter_mut().zip(f.values()) {
            *x += y[j] * v;
        }
    }
    Ok(UcpSpectrumResult {
        s,
        v: v.clone(),
        lambda_min: eig.values[0],
        witness: Field::new(grid, w)?,
        points: grid.points(),
        subspace_dim: k,
        v_points: idx.len(),
    })
}

/// A smooth bump on the positive side of axis 0 whose support keeps two
/// cells away from `V` and from the box edge, so the nearest-neighbour
/// stencil applied to it vanishes on `V`.
pub fn outside_bump(grid: &Grid, v: &Region) -> Result<Field> {
    v_indices(grid, v)?;
    let h = grid.spacing();
    let (_, hi) = v.bounds();
    let lo = hi[0] + 2.0 * h;
    let top = grid.half_len() - 2.0 * h;
    let radius = 0.45 * (top - lo);
    if radius < 2.0 * h {
        return Err(Error::InvalidMask("no room for a bump outside V".into()));
    }
    let mut center = vec![0.0; grid.dim()];
    center[0] = 0.5 * (lo + top);
    let bump = make_bump(grid, &center, radius, 1.0)?;
    let norm = bump.l2_norm();
    Ok(bump.scale(1.0 / norm))
}

/// `Q_s(u)` evaluated directly.
pub fn ucp_form(u: &Field, s: f64, v: &Region) -> Result<f64> {
    let idx = v_indices(u.grid(), v)?;
    let au = lattice_power(u, s);
    let sum: f64 = idx.iter().map(|&i| u.values()[i].powi(2) + au.values()[i].powi(2)).sum();
    Ok(u.grid().cell_volume() * sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalityContrast {
    pub first: UcpSpectrumResult,
    pub second: UcpSpectrumResult,
    /// `lambda_min(first) / max(lambda_min(second), LAMBDA_FLOOR)`.
    pub ratio: f64,
}

/// Compares the extremal forms of two exponents on the `subspace_dim`
/// lowest Fourier modes; normally a fractional one against an integer one.
pub fn locality_contrast(
    grid: Grid,
    s_frac: f64,
    s_int: f64,
    v: &Region,
    subspace_dim: usize,
) -> Result<LocalityContrast> {
    locality_contrast_in(&UcpSubspace::band_limited(grid, subspace_dim)?, s_frac, s_int, v)
}

pub fn locality_contrast_in(space: &UcpSubspace, s_frac: f64, s_int: f64, v: &Region) -> Result<LocalityContrast> {
    let first = ucp_quadratic_min_in(space, s_frac, v)?;
    let second = ucp_quadratic_min_in(space, s_int, v)?;
    let ratio = first.lambda_min / second.lambda_min.max(LAMBDA_FLOOR);
    Ok(LocalityContrast { first, second, ratio })
}

/// One point of a trend sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcpSweepPoint {
    pub s: f64,
    pub v: Region,
    pub dim: usize,
    pub points: usize,
    pub half_len: f64,
    /// Lowest Fourier modes in the subspace.
    pub modes: usize,
    /// Add [`outside_bump`] to the span.
    pub witness: bool,
}

impl UcpSweepPoint {
    pub fn subspace(&self) -> Result<UcpSubspace> {
        let grid = Grid::new(self.dim, self.points, self.half_len)?;
        if self.witness {
            UcpSubspace::with_witness(grid, self.modes, &self.v)
        } else {
            UcpSubspace::band_limited(grid, self.modes)
        }
    }
}

/// Solves the sweep points independently in parallel; results keep the
/// input order.
pub fn ucp_sweep(points: &[UcpSweepPoint]) -> Result<Vec<UcpSpectrumResult>> {
    points.par_iter().map(|p| ucp_quadratic_min_in(&p.subspace()?, p.s, &p.v)).collect()
}
