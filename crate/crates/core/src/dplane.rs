//! d-plane transforms on the grid ball.
//!
//! Planes are sampled as a direction set times a uniform offset lattice with
//! spacing `h`. Plane integrals use bilinear/trilinear interpolation at
//! in-plane nodes spaced `h/2`, and the adjoint is the exact transpose of
//! that quadrature. The measure on planes weights every direction class by
//! `1/M` and every offset cell by `h^{n-d}`. All remaining normalization
//! sits in the fitted constant of the normal operator.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::io;
use crate::linalg::sym_eigen;
use crate::region::Region;
use crate::spectral::{apply_power, make_bump, riesz_direct, RieszCalibration};

const SUPPORT_TOL: f64 = 1e-12;
/// Directions per scatter task in the adjoint.
const DIRECTION_CHUNK: usize = 8;

/// Sampled family of affine d-planes meeting the grid ball `|x| <= radius`.
///
/// For `d = n - 1` the direction is the plane normal and there is one
/// offset axis. For lines in 3-D (`d = 1`) the direction is the line
/// itself and offsets run over a square lattice in its orthogonal plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneGeometry {
    grid: Grid,
    d: usize,
    radius: f64,
    directions: Vec<[f64; 3]>,
    offsets: Vec<f64>,
}

struct Frame {
    plane: [[f64; 3]; 2],
    normal: [[f64; 3]; 2],
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let r = dot(&a, &a).sqrt();
    [a[0] / r, a[1] / r, a[2] / r]
}

/// Two unit vectors completing `w` to an orthonormal frame.
fn complete(w: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let a = if w[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let e1 = unit(cross(&a, w));
    (e1, cross(w, &e1))
}

impl PlaneGeometry {
    /// `m` direction classes on the ball of radius `L - h`.
    pub fn new(grid: Grid, d: usize, m: usize) -> Result<Self> {
        Self::with_radius(grid, d, m, grid.half_len() - grid.spacing())
    }

    pub fn with_radius(grid: Grid, d: usize, m: usize, radius: f64) -> Result<Self> {
        let n = grid.dim();
        let h = grid.spacing();
        if !(2..=3).contains(&n) {
            return Err(Error::InvalidGeometry(format!("dimension {n} not in 2..=3")));
        }
        if d != 1 && d != n - 1 {
            return Err(Error::InvalidGeometry(format!("d={d} must be 1 or {}", n - 1)));
        }
        if m == 0 {
            return Err(Error::InvalidGeometry("need at least one direction".into()));
        }
        if !(radius >= 2.0 * h && radius <= grid.half_len() - h + 1e-12) {
            return Err(Error::InvalidGeometry(format!(
                "ball radius {radius} outside [{}, {}]",
                2.0 * h,
                grid.half_len() - h
            )));
        }
        let directions = if n == 2 {
            (0..m)
                .map(|k| {
                    let t = PI * k as f64 / m as f64;
                    [t.cos(), t.sin(), 0.0]
                })
                .collect()
        } else {
            // upper half of a 2m-point Fibonacci sphere, one point per antipodal class
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..m)
                .map(|k| {
                    let z = 1.0 - (2 * k + 1) as f64 / (2 * m) as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    [r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        };
        let half = (radius / h).floor() as i64;
        let offsets = (-half..=half).map(|j| j as f64 * h).collect();
        Ok(Self { grid, d, radius, directions, offsets })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn plane_dim(&self) -> usize {
        self.d
    }

    pub fn codim(&self) -> usize {
        self.dim() - self.d
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    /// Offset values along one offset axis.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Offsets per direction: `P` or `P^2`.
    pub fn offsets_per_direction(&self) -> usize {
        self.offsets.len().pow(self.codim() as u32)
    }

    /// Number of sampled planes.
    pub fn len(&self) -> usize {
        self.directions.len() * self.offsets_per_direction()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Measure of one sampled plane: `h^{n-d} / M`.
    pub fn plane_weight(&self) -> f64 {
        self.grid.spacing().powi(self.codim() as i32) / self.directions.len() as f64
    }

    fn frame(&self, k: usize) -> Frame {
        let w = self.directions[k];
        if self.dim() == 2 {
            return Frame { plane: [[-w[1], w[0], 0.0], [0.0; 3]], normal: [w, [0.0; 3]] };
        }
        let (e1, e2) = complete(&w);
        if self.d == 2 {
            Frame { plane: [e1, e2], normal: [w, [0.0; 3]] }
        } else {
            Frame { plane: [w, [0.0; 3]], normal: [e1, e2] }
        }
    }

    /// Offset coordinates of plane `j` within its direction class.
    pub fn offset_coords(&self, j: usize) -> [f64; 2] {
        let p = self.offsets.len();
        if self.codim() == 1 {
            [self.offsets[j], 0.0]
        } else {
            [self.offsets[j / p], self.offsets[j % p]]
        }
    }

    fn anchor(&self, frame: &Frame, j: usize) -> [f64; 3] {
        let c = self.offset_coords(j);
        let mut o = [0.0; 3];
        for (k, ck) in c.iter().enumerate().take(self.codim()) {
            for (a, oa) in o.iter_mut().enumerate() {
                *oa += ck * frame.normal[k][a];
            }
        }
        o
    }

    /// Distance from `x` to plane `(k, j)`.
    pub fn plane_distance(&self, k: usize, j: usize, x: &[f64]) -> f64 {
        let frame = self.frame(k);
        let c = self.offset_coords(j);
        let mut xx = [0.0; 3];
        xx[..x.len()].copy_from_slice(x);
        (0..self.codim()).map(|a| (dot(&xx, &frame.normal[a]) - c[a]).powi(2)).sum::<f64>().sqrt()
    }

    /// Calls `visit` with every quadrature node of plane `(k, j)` inside
    /// the ball of radius `reach`.
    fn for_each_node(&self, frame: &Frame, j: usize, reach: f64, mut visit: impl FnMut(&[f64; 3])) {
        let o = self.anchor(frame, j);
        let rem = reach * reach - dot(&o, &o);
        if rem < 0.0 {
            return;
        }
        let tau = self.grid.spacing() / 2.0;
        let kmax = (rem.sqrt() / tau).floor() as i64;
        let e0 = frame.plane[0];
        for k1 in -kmax..=kmax {
            let t1 = k1 as f64 * tau;
            let y1 = [o[0] + t1 * e0[0], o[1] + t1 * e0[1], o[2] + t1 * e0[2]];
            if self.d == 1 {
                visit(&y1);
                continue;
            }
            let e1 = frame.plane[1];
            let k2max = ((rem - t1 * t1).max(0.0).sqrt() / tau).floor() as i64;
            for k2 in -k2max..=k2max {
                let t2 = k2 as f64 * tau;
                visit(&[y1[0] + t2 * e1[0], y1[1] + t2 * e1[1], y1[2] + t2 * e1[2]]);
            }
        }
    }

    #[inline]
    fn axis_cell(&self, x: f64) -> (usize, f64) {
        let g = (x + self.grid.half_len()) / self.grid.spacing();
        let i0 = (g.floor().max(0.0) as usize).min(self.grid.points() - 2);
        (i0, g - i0 as f64)
    }

    /// Interpolated value at `y`.
    #[inline]
    fn interpolate(&self, data: &[f64], y: &[f64; 3]) -> f64 {
        let np = self.grid.points();
        let (ix, fx) = self.axis_cell(y[0]);
        let (iy, fy) = self.axis_cell(y[1]);
        if self.dim() == 2 {
            let b = ix * np + iy;
            let lo = data[b] * (1.0 - fy) + data[b + 1] * fy;
            let hi = data[b + np] * (1.0 - fy) + data[b + np + 1] * fy;
            return lo * (1.0 - fx) + hi * fx;
        }
        let (iz, fz) = self.axis_cell(y[2]);
        let b = (ix * np + iy) * np + iz;
        let plane = np * np;
        let line = |o: usize| data[o] * (1.0 - fz) + data[o + 1] * fz;
        let lo = line(b) * (1.0 - fy) + line(b + np) * fy;
        let hi = line(b + plane) * (1.0 - fy) + line(b + plane + np) * fy;
        lo * (1.0 - fx) + hi * fx
    }

    /// Transpose of [`Self::interpolate`]: adds `value` times the
    /// interpolation weights at `y` into `out`.
    #[inline]
    fn spread(&self, out: &mut [f64], y: &[f64; 3], value: f64) {
        let np = self.grid.points();
        let (ix, fx) = self.axis_cell(y[0]);
        let (iy, fy) = self.axis_cell(y[1]);
        let (wx0, wx1) = (value * (1.0 - fx), value * fx);
        if self.dim() == 2 {
            let b = ix * np + iy;
            out[b] += wx0 * (1.0 - fy);
            out[b + 1] += wx0 * fy;
            out[b + np] += wx1 * (1.0 - fy);
            out[b + np + 1] += wx1 * fy;
            return;
        }
        let (iz, fz) = self.axis_cell(y[2]);
        let b = (ix * np + iy) * np + iz;
        let plane = np * np;
        for (o, w) in
            [(b, wx0 * (1.0 - fy)), (b + np, wx0 * fy), (b + plane, wx1 * (1.0 - fy)), (b + plane + np, wx1 * fy)]
        {
            out[o] += w * (1.0 - fz);
            out[o + 1] += w * fz;
        }
    }

    /// Radius beyond which interpolation of `f` reads only zeros.
    fn support_reach(&self, f: &Field) -> f64 {
        let n = self.dim();
        let r2 = f
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| self.grid.point(i)[..n].iter().map(|c| c * c).sum::<f64>())
            .fold(0.0, f64::max);
        (r2.sqrt() + 2.0 * self.grid.spacing()).min(self.radius)
    }

    fn node_weight(&self) -> f64 {
        (self.grid.spacing() / 2.0).powi(self.d as i32)
    }

    /// Rejects fields on other grids or with mass outside the ball.
    pub fn check_support(&self, f: &Field) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        let scale = f.max_abs();
        let r2 = self.radius * self.radius;
        let n = self.dim();
        let outside = f.values().iter().enumerate().any(|(i, v)| {
            let p = self.grid.point(i);
            v.abs() > SUPPORT_TOL * scale && p[..n].iter().map(|c| c * c).sum::<f64>() > r2
        });
        if outside {
            return Err(Error::SupportOutsideBall);
        }
        Ok(())
    }

    /// Grid points with `|x| <= radius - 2h`, where every backend of the
    /// normal operator is meaningful.
    pub fn comparison_indices(&self) -> Vec<usize> {
        let r = self.radius - 2.0 * self.grid.spacing();
        let n = self.dim();
        (0..self.grid.len()).filter(|&i| self.grid.point(i)[..n].iter().map(|c| c * c).sum::<f64>() <= r * r).collect()
    }
}

/// Plane integrals `values[direction * offsets_per_direction + offset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    geometry: PlaneGeometry,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinogramSidecar {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "N")]
    pub points: usize,
    #[serde(rename = "L")]
    pub half_len: f64,
    pub radius: f64,
    pub directions: usize,
    pub offsets: usize,
}

impl Sinogram {
    pub fn new(geometry: PlaneGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::ShapeMismatch(format!("{} values for {} planes", values.len(), geometry.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: PlaneGeometry) -> Self {
        let values = vec![0.0; geometry.len()];
        Self { geometry, values }
    }

    pub fn geometry(&self) -> &PlaneGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, direction: usize, offset: usize) -> f64 {
        self.values[direction * self.geometry.offsets_per_direction() + offset]
    }

    /// Values of one direction class.
    pub fn row(&self, direction: usize) -> &[f64] {
        let per = self.geometry.offsets_per_direction();
        &self.values[direction * per..(direction + 1) * per]
    }

    fn check_shape(&self, other: &Sinogram) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::ShapeMismatch("sinograms use different geometries".into()));
        }
        Ok(())
    }

    /// Inner product in `L^2(mu)`.
    pub fn inner(&self, other: &Sinogram) -> Result<f64> {
        self.check_shape(other)?;
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(self.geometry.plane_weight() * dot)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).expect("same geometry").sqrt()
    }

    pub fn add(&self, other: &Sinogram) -> Result<Sinogram> {
        self.check_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Sinogram { geometry: self.geometry.clone(), values })
    }

    pub fn sub(&self, other: &Sinogram) -> Result<Sinogram> {
        self.check_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Sinogram { geometry: self.geometry.clone(), values })
    }

    pub fn csv_header(codim: usize) -> &'static str {
        if codim == 1 {
            "direction_id,offset,value"
        } else {
            "direction_id,offset_1,offset_2,value"
        }
    }

    pub fn to_csv(&self) -> String {
        let g = &self.geometry;
        let per = g.offsets_per_direction();
        let mut out = String::with_capacity(self.values.len() * 28);
        out.push_str(Self::csv_header(g.codim()));
        out.push('\n');
        for (i, v) in self.values.iter().enumerate() {
            let c = g.offset_coords(i % per);
            out.push_str(&(i / per).to_string());
            for ck in c.iter().take(g.codim()) {
                out.push_str(&format!(",{ck:?}"));
            }
            out.push_str(&format!(",{v:?}\n"));
        }
        out
    }

    pub fn sidecar(&self) -> SinogramSidecar {
        let g = &self.geometry;
        SinogramSidecar {
            n: g.dim(),
            d: g.d,
            points: g.grid.points(),
            half_len: g.grid.half_len(),
            radius: g.radius,
            directions: g.directions.len(),
            offsets: g.offsets.len(),
        }
    }

    /// Raw `f64` values plus the JSON sidecar next to them.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_raw(path, &self.values)?;
        std::fs::write(io::sidecar_path(path), serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: SinogramSidecar = serde_json::from_str(&std::fs::read_to_string(io::sidecar_path(path))?)?;
        let grid = Grid::new(meta.n, meta.points, meta.half_len)?;
        let geometry = PlaneGeometry::with_radius(grid, meta.d, meta.directions, meta.radius)?;
        if geometry.offsets.len() != meta.offsets {
            return Err(Error::Format(format!(
                "sidecar lists {} offsets, geometry has {}",
                meta.offsets,
                geometry.offsets.len()
            )));
        }
        Sinogram::new(geometry, io::read_raw(path)?)
    }
}

/// `R_d f`: integrals of `f` over every sampled plane.
pub fn forward_dplane(f: &Field, geom: &PlaneGeometry) -> Result<Sinogram> {
    geom.check_support(f)?;
    let per = geom.offsets_per_direction();
    let w = geom.node_weight();
    let data = f.values();
    let reach = geom.support_reach(f);
    let mut values = vec![0.0; geom.len()];
    values.par_chunks_mut(per).enumerate().for_each(|(k, row)| {
        let frame = geom.frame(k);
        for (j, out) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            geom.for_each_node(&frame, j, reach, |y| sum += geom.interpolate(data, y));
            *out = w * sum;
        }
    });
    Ok(Sinogram { geometry: geom.clone(), values })
}

/// `R_d^* g`: the exact transpose of [`forward_dplane`] with respect to the
/// plane measure and the grid inner product.
pub fn adjoint_dplane(g: &Sinogram) -> Field {
    let geom = &g.geometry;
    let grid = geom.grid;
    let m = geom.directions.len();
    let chunks: Vec<(usize, usize)> =
        (0..m).step_by(DIRECTION_CHUNK).map(|a| (a, (a + DIRECTION_CHUNK).min(m))).collect();
    let batch = 2 * rayon::current_num_threads().max(1);
    let mut acc = vec![0.0; grid.len()];
    for group in chunks.chunks(batch) {
        let parts: Vec<Vec<f64>> = group
            .par_iter()
            .map(|&(a, b)| {
                let mut part = vec![0.0; grid.len()];
                for k in a..b {
                    let frame = geom.frame(k);
                    for (j, &gv) in g.row(k).iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        geom.for_each_node(&frame, j, geom.radius, |y| geom.spread(&mut part, y, gv));
                    }
                }
                part
            })
            .collect();
        // fixed summation order, independent of the thread count
        for part in parts {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        }
    }
    let scale = geom.node_weight() * geom.plane_weight() / grid.cell_volume();
    Field::from_vec_unchecked(grid, acc.into_iter().map(|v| v * scale).collect())
}

/// How [`normal_operator`] evaluates `N_d f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormalBackend {
    /// `R_d^* R_d f`.
    Composition,
    /// `c (f * |x|^{-(n-d)})` by direct quadrature.
    Convolution { c: f64 },
    /// `c * riesz_scale * (-Δ)^{-d/2}` applied to the mean-free part of `f`.
    Multiplier { c: f64, riesz_scale: f64 },
}

pub fn normal_operator(f: &Field, geom: &PlaneGeometry, backend: NormalBackend) -> Result<Field> {
    geom.check_support(f)?;
    let alpha = geom.codim() as f64;
    match backend {
        NormalBackend::Composition => Ok(adjoint_dplane(&forward_dplane(f, geom)?)),
        NormalBackend::Convolution { c } => Ok(riesz_direct(f, alpha).scale(c)),
        NormalBackend::Multiplier { c, riesz_scale } => {
            let s = -(geom.d as f64) / 2.0;
            Ok(apply_power(&f.mean_zero(), &geom.grid.freq_grid(), s).scale(c * riesz_scale))
        }
    }
}

/// Least-squares constant relating the composition to the convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub c_fit: f64,
    /// Largest relative deviation of a single phantom's own fit.
    pub spread: f64,
    pub per_phantom: Vec<f64>,
}

impl NormalFit {
    pub fn convolution(&self) -> NormalBackend {
        NormalBackend::Convolution { c: self.c_fit }
    }

    /// Multiplier backend with the Riesz constant fitted on `grid`.
    pub fn multiplier(&self, geom: &PlaneGeometry) -> Result<NormalBackend> {
        let cal = RieszCalibration::fit(&geom.grid, geom.codim() as f64)?;
        Ok(NormalBackend::Multiplier { c: self.c_fit, riesz_scale: cal.scale })
    }
}

fn restricted_dot(a: &Field, b: &Field, keep: &[usize]) -> f64 {
    keep.iter().map(|&i| a.values()[i] * b.values()[i]).sum()
}

fn check_phantoms(phantoms: &[Field]) -> Result<()> {
    if phantoms.len() < 5 {
        return Err(Error::DegeneratePhantoms(format!("need at least 5 phantoms, got {}", phantoms.len())));
    }
    let norms: Vec<f64> = phantoms.iter().map(|p| p.values().iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if norms.contains(&0.0) {
        return Err(Error::DegeneratePhantoms("zero phantom".into()));
    }
    for i in 0..phantoms.len() {
        for j in 0..i {
            let c: f64 = phantoms[i].values().iter().zip(phantoms[j].values()).map(|(a, b)| a * b).sum();
            if (c / (norms[i] * norms[j])).abs() > 1.0 - 1e-9 {
                return Err(Error::DegeneratePhantoms(format!("phantoms {j} and {i} are parallel")));
            }
        }
    }
    Ok(())
}

/// Fits `c_{n,d}` so that `R^*R f ~ c (f * |x|^{-(n-d)})` on the
/// comparison ball, over a set of at least five distinct phantoms.
pub fn fit_normal_constant(geom: &PlaneGeometry, phantoms: &[Field]) -> Result<NormalFit> {
    check_phantoms(phantoms)?;
    let keep = geom.comparison_indices();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut per_phantom = Vec::with_capacity(phantoms.len());
    for f in phantoms {
        let comp = normal_operator(f, geom, NormalBackend::Composition)?;
        let conv = normal_operator(f, geom, NormalBackend::Convolution { c: 1.0 })?;
        let a = restricted_dot(&comp, &conv, &keep);
        let b = restricted_dot(&conv, &conv, &keep);
        num += a;
        den += b;
        per_phantom.push(a / b);
    }
    let c_fit = num / den;
    let spread = per_phantom.iter().map(|c| (c / c_fit - 1.0).abs()).fold(0.0, f64::max);
    Ok(NormalFit { c_fit, spread, per_phantom })
}

/// Relative `L^2` gap between the composition and `c` times the
/// convolution on the comparison ball.
pub fn normal_backend_discrepancy(f: &Field, geom: &PlaneGeometry, c: f64) -> Result<f64> {
    let comp = normal_operator(f, geom, NormalBackend::Composition)?;
    let conv = normal_operator(f, geom, NormalBackend::Convolution { c })?;
    let keep = geom.comparison_indices();
    let diff = comp.sub(&conv)?;
    Ok((restricted_dot(&diff, &diff, &keep) / restricted_dot(&conv, &conv, &keep)).sqrt())
}

/// Recovers `f` on `v` from `N_d f` known on `known`, by the local operator
/// `(-Δ_h)^{d/2}` (7-point stencil).
///
/// Values of `ndf` outside `known` are never read. The result is zero off
/// `v`.
pub fn roi_invert_even_d(ndf: &Field, v: &Region, known: &Region, d: usize, c_fit: f64) -> Result<Field> {
    let grid = *ndf.grid();
    let n = grid.dim();
    if n != 3 || d != 2 {
        return Err(Error::InvalidGeometry(format!("local inversion needs n=3, d=2 (got n={n}, d={d})")));
    }
    if v.dim() != n || known.dim() != n {
        return Err(Error::InvalidGeometry("regions do not match the grid dimension".into()));
    }
    let h = grid.spacing();
    let margin = known.margin_around(v);
    if margin < 3.0 * h {
        return Err(Error::MarginTooSmall { margin, required: 3.0 * h });
    }
    let local = ndf.restrict(&known.indices(&grid));
    let u = local.values();
    let np = grid.points();
    // (-Δ)|x|^{-1} = 4π δ in three dimensions
    let scale = 1.0 / (4.0 * PI * c_fit * h * h);
    let mut out = vec![0.0; grid.len()];
    for i in v.indices(&grid) {
        let m = grid.multi_index(i);
        let mut lap = 2.0 * n as f64 * u[i];
        for a in 0..n {
            for step in [1, np - 1] {
                let mut mm = m;
                mm[a] = (m[a] + step) % np;
                lap -= u[grid.flat_index(mm)];
            }
        }
        out[i] = scale * lap;
    }
    Ok(Field::from_vec_unchecked(grid, out))
}

/// Whether each sampled plane meets `v`.
pub fn planes_meeting(geom: &PlaneGeometry, v: &Region) -> Result<Vec<bool>> {
    if v.dim() != geom.dim() {
        return Err(Error::InvalidGeometry("region does not match the grid dimension".into()));
    }
    let per = geom.offsets_per_direction();
    match v {
        Region::Ball { center, radius } => {
            Ok((0..geom.len()).map(|i| geom.plane_distance(i / per, i % per, center) < *radius).collect())
        }
        Region::Box { center, half_widths } if geom.codim() == 1 => Ok((0..geom.len())
            .map(|i| {
                let frame = geom.frame(i / per);
                let nu = frame.normal[0];
                let reach: f64 = half_widths.iter().zip(nu).map(|(w, c)| w * c.abs()).sum();
                let mid: f64 = center.iter().zip(nu).map(|(c, u)| c * u).sum();
                (mid - geom.offset_coords(i % per)[0]).abs() < reach
            })
            .collect()),
        Region::Box { .. } => Err(Error::InvalidGeometry("box regions need codimension-one planes".into())),
    }
}

fn norm_on(f: &Field, v: &Region) -> f64 {
    let idx = v.indices(f.grid());
    (f.grid().cell_volume() * idx.iter().map(|&i| f.values()[i].powi(2)).sum::<f64>()).sqrt()
}

/// `(max |R_d f| over planes meeting v, ||f||_{L^2(v)})`.
pub fn partial_data_residual(f: &Field, v: &Region, geom: &PlaneGeometry) -> Result<(f64, f64)> {
    let sino = forward_dplane(f, geom)?;
    let meets = planes_meeting(geom, v)?;
    let sup = sino.values().iter().zip(&meets).filter(|(_, &m)| m).fold(0.0_f64, |a, (v, _)| a.max(v.abs()));
    Ok((sup, norm_on(f, v)))
}

/// Which planes carry data in [`partial_data_minimum`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaneSelection {
    MeetingV,
    /// As many planes as meet `v`, chosen among those avoiding it, farthest
    /// from the centre of `v` first.
    AvoidingFar,
    /// Same count, nearest to `v` first.
    AvoidingNear,
}

/// Plane mask for a selection.
pub fn select_planes(geom: &PlaneGeometry, v: &Region, selection: PlaneSelection) -> Result<Vec<bool>> {
    let meets = planes_meeting(geom, v)?;
    if selection == PlaneSelection::MeetingV {
        return Ok(meets);
    }
    let count = meets.iter().filter(|&&m| m).count();
    let per = geom.offsets_per_direction();
    let c = v.center();
    let r2 = geom.radius * geom.radius;
    let mut candidates: Vec<(f64, usize)> = (0..geom.len())
        .filter(|&i| !meets[i])
        .filter(|&i| {
            let o = geom.offset_coords(i % per);
            o[0] * o[0] + o[1] * o[1] < r2
        })
        .map(|i| (geom.plane_distance(i / per, i % per, c), i))
        .collect();
    if selection == PlaneSelection::AvoidingFar {
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    } else {
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    let mut mask = vec![false; geom.len()];
    for &(_, i) in candidates.iter().take(count) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Floor applied to minima before forming ratios.
pub const RESIDUAL_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq)]
pub struct PartialDataMin {
    /// Smallest `||R_d f||^2` on the selected planes plus `||f||^2_{L^2(v)}`
    /// over unit-norm members of the span.
    pub minimum: f64,
    pub witness: Field,
    pub coefficients: Vec<f64>,
    pub planes: usize,
}

/// Minimizes the combined partial-data residual over the span of `family`.
pub fn partial_data_minimum(
    family: &[Field],
    v: &Region,
    geom: &PlaneGeometry,
    selection: PlaneSelection,
) -> Result<PartialDataMin> {
    if family.is_empty() {
        return Err(Error::DegeneratePhantoms("empty family".into()));
    }
    let sinos = family.iter().map(|f| forward_dplane(f, geom)).collect::<Result<Vec<_>>>()?;
    minimum_from(family, &sinos, v, geom, selection)
}

fn minimum_from(
    family: &[Field],
    sinos: &[Sinogram],
    v: &Region,
    geom: &PlaneGeometry,
    selection: PlaneSelection,
) -> Result<PartialDataMin> {
    let k = family.len();
    let mask = select_planes(geom, v, selection)?;
    let planes = mask.iter().filter(|&&m| m).count();
    let grid = geom.grid;
    let v_idx = v.indices(&grid);
    let hn = grid.cell_volume();
    let pw = geom.plane_weight();
    let rows: Vec<usize> = (0..geom.len()).filter(|&i| mask[i]).collect();
    let b = DMatrix::from_fn(rows.len(), k, |r, j| sinos[j].values()[rows[r]]);
    let fv = DMatrix::from_fn(v_idx.len(), k, |r, j| family[j].values()[v_idx[r]]);
    let full = DMatrix::from_fn(grid.len(), k, |r, j| family[j].values()[r]);
    let a = b.tr_mul(&b) * pw + fv.tr_mul(&fv) * hn;
    let gram = full.tr_mul(&full) * hn;
    let chol = Cholesky::new(gram).ok_or_else(|| Error::DegeneratePhantoms("family is linearly dependent".into()))?;
    let l = chol.l();
    let linv =
        l.clone().try_inverse().ok_or_else(|| Error::DegeneratePhantoms("family is linearly dependent".into()))?;
    let reduced = &linv * a * linv.transpose();
    let eig = sym_eigen(reduced)?;
    let y = eig.vectors.column(0).into_owned();
    let coef = linv.transpose() * y;
    let mut witness = vec![0.0; grid.len()];
    for (j, f) in family.iter().enumerate() {
        for (w, x) in witness.iter_mut().zip(f.values()) {
            *w += coef[j] * x;
        }
    }
    let witness = Field::from_vec_unchecked(grid, witness);
    let norm = witness.l2_norm();
    Ok(PartialDataMin {
        minimum: eig.values[0].max(0.0),
        witness: witness.scale(1.0 / norm),
        coefficients: coef.iter().map(|c| c / norm).collect(),
        planes,
    })
}

/// Names accepted by [`phantom`].
pub const PHANTOM_NAMES: [&str; 4] = ["bump", "bumps", "ring", "ellipse"];

/// Smooth phantom supported in `|x| <= 0.7 R`, addressed by name and seed.
///
/// `ring` is rotationally symmetric and ignores the seed.
pub fn phantom(geom: &PlaneGeometry, name: &str, seed: u64) -> Result<Field> {
    let grid = geom.grid;
    let n = grid.dim();
    let r = geom.radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centre = |reach: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-reach..=reach)).collect();
            if c.iter().map(|x| x * x).sum::<f64>() <= reach * reach {
                return c;
            }
        }
    };
    match name {
        "bump" => {
            let c = centre(0.3 * r, &mut rng);
            make_bump(&grid, &c, 0.4 * r, 1.0)
        }
        "bumps" => {
            let mut f = Field::zeros(grid);
            for _ in 0..4 {
                let rho = rng.random_range(0.15..0.3) * r;
                let c = centre(0.7 * r - rho, &mut rng);
                let amp = rng.random_range(0.5..1.5);
                f = f.add(&make_bump(&grid, &c, rho, amp)?)?;
            }
            Ok(f)
        }
        "ring" => {
            let (mid, width) = (0.45 * r, 0.2 * r);
            Ok(Field::from_fn(grid, |p| {
                let t = ((p[..n].iter().map(|x| x * x).sum::<f64>().sqrt() - mid) / width).powi(2);
                if t < 1.0 {
                    (-1.0 / (1.0 - t)).exp()
                } else {
                    0.0
                }
            }))
        }
        "ellipse" => {
            let c = centre(0.15 * r, &mut rng);
            let theta: f64 = rng.random_range(0.0..PI);
            let (a, b) = (0.5 * r, 0.25 * r);
            Ok(Field::from_fn(grid, |p| {
                let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
                let u = dx * theta.cos() + dy * theta.sin();
                let w = -dx * theta.sin() + dy * theta.cos();
                let mut t = (u / a).powi(2) + (w / b).powi(2);
                if n == 3 {
                    t += ((p[2] - c[2]) / b).powi(2);
                }
                if t < 1.0 {
                    (-1.0 / (1.0 - t)).exp()
                } else {
                    0.0
                }
            }))
        }
        other => Err(Error::InvalidGeometry(format!("unknown phantom {other:?}; known: {}", PHANTOM_NAMES.join(", ")))),
    }
}

/// The six phantoms used to fit the normal constant.
pub fn default_phantoms(geom: &PlaneGeometry) -> Result<Vec<Field>> {
    [("bump", 0), ("bumps", 1), ("bumps", 2), ("ring", 0), ("ellipse", 3), ("ellipse", 4)]
        .iter()
        .map(|&(name, seed)| phantom(geom, name, seed))
        .collect()
}

/// `count` overlapping bumps on a square lattice, nearest the origin first,
/// all supported in `|x| <= support`.
pub fn bump_family(grid: &Grid, support: f64, count: usize) -> Result<Vec<Field>> {
    let n = grid.dim();
    let lattice = |a: f64| -> Vec<Vec<f64>> {
        let reach = support - 2.0 * a;
        if reach <= 0.0 {
            return Vec::new();
        }
        let k = (reach / a).floor() as i64;
        let mut pts = Vec::new();
        let mut idx = vec![-k; n];
        loop {
            let p: Vec<f64> = idx.iter().map(|&i| i as f64 * a).collect();
            if p.iter().map(|x| x * x).sum::<f64>() <= reach * reach {
                pts.push(p);
            }
            let mut ax = 0;
            loop {
                if ax == n {
                    return pts;
                }
                idx[ax] += 1;
                if idx[ax] <= k {
                    break;
                }
                idx[ax] = -k;
                ax += 1;
            }
        }
    };
    let mut a = support / 2.0;
    let mut pts = lattice(a);
    while pts.len() < count {
        a *= 0.98;
        if a < grid.spacing() {
            return Err(Error::DegeneratePhantoms(format!("{count} bumps do not fit at this resolution")));
        }
        pts = lattice(a);
    }
    pts.sort_by(|p, q| {
        let (np, nq) = (p.iter().map(|x| x * x).sum::<f64>(), q.iter().map(|x| x * x).sum::<f64>());
        np.total_cmp(&nq).then_with(|| p.partial_cmp(q).expect("finite"))
    });
    pts.truncate(count);
    pts.iter().map(|c| make_bump(grid, c, 2.0 * a, 1.0)).collect()
}

/// `min(meeting v) / max(min(control), RESIDUAL_FLOOR)` over one family.
pub fn partial_data_contrast(
    family: &[Field],
    v: &Region,
    geom: &PlaneGeometry,
    control: PlaneSelection,
) -> Result<(PartialDataMin, PartialDataMin, f64)> {
    if family.is_empty() {
        return Err(Error::DegeneratePhantoms("empty family".into()));
    }
    let sinos = family.iter().map(|f| forward_dplane(f, geom)).collect::<Result<Vec<_>>>()?;
    let meet = minimum_from(family, &sinos, v, geom, PlaneSelection::MeetingV)?;
    let other = minimum_from(family, &sinos, v, geom, control)?;
    let ratio = meet.minimum / other.minimum.max(RESIDUAL_FLOOR);
    Ok((meet, other, ratio))
}
