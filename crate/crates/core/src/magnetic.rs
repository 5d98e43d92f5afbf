//! Fractional magnetic Schrödinger machinery: two-point (bivariate) tensor
//! fields, the fractional gradient, the magnetic bilinear form and DN map,
//! and the gauge operators `N`, `M_beta`.
//!
//! Supported configurations are `n = 1` with `floor(s) <= 2` and `n = 2`
//! with `floor(s) = 0`. Bivariate fields are stored densely over
//! grid x grid, so they are only practical for small `N^n`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{apply_real_multiplier, spectral_partial};
use crate::grid::{Exponent, Field, Grid};
use crate::io::{sidecar_path, write_raw};
use crate::linalg::sym_eigen;
use crate::schrodinger::{BasisDescriptor, DirichletSolution, DnMatrix, DomainMask, SolverPath, SINGULAR_TOL};
use crate::spectral::{frac_laplacian, l2_inner, MeanPolicy};

/// Largest number of stored bivariate entries.
pub const BIVARIATE_CAP: usize = 1 << 24;
/// Image shells summed explicitly in the periodic kernel.
const IMAGE_SHELLS_1D: i64 = 64;
const IMAGE_SHELLS_2D: i64 = 8;
const SUM_BLOCK: usize = 4096;

/// Sum of parallel partial sums, combined in index order so the result does
/// not depend on the thread count.
fn ordered_sum(parts: impl IndexedParallelIterator<Item = f64>) -> f64 {
    parts.collect::<Vec<f64>>().iter().sum()
}

/// A family of two-point functions indexed by `{1..n}^order`, sampled on
/// grid x grid. Entry `(x, y, c)` lives at `(x * G + y) * n^order + c`
/// with `G = N^n`; component multi-indices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateField {
    grid: Grid,
    order: usize,
    values: Vec<f64>,
}

fn components(grid: &Grid, order: usize) -> usize {
    grid.dim().pow(order as u32)
}

impl BivariateField {
    pub fn zeros(grid: Grid, order: usize) -> Result<Self> {
        let len = grid.len() * grid.len() * components(&grid, order);
        if len > BIVARIATE_CAP {
            return Err(Error::UnsupportedConfig(format!("{len} bivariate entries exceed the cap {BIVARIATE_CAP}")));
        }
        Ok(Self { grid, order, values: vec![0.0; len] })
    }

    pub fn from_values(grid: Grid, order: usize, values: Vec<f64>) -> Result<Self> {
        let mut out = Self::zeros(grid, order)?;
        if values.len() != out.values.len() {
            return Err(Error::FieldLength { expected: out.values.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        out.values = values;
        Ok(out)
    }

    /// Fills `(x, y)` blocks from `f(ix, iy, block)`, rows in parallel.
    pub fn from_fn(grid: Grid, order: usize, f: impl Fn(usize, usize, &mut [f64]) + Sync) -> Result<Self> {
        let mut out = Self::zeros(grid, order)?;
        let c = out.components();
        let g = grid.len();
        out.values.par_chunks_mut(g * c).enumerate().for_each(|(ix, row)| {
            for (iy, block) in row.chunks_mut(c).enumerate() {
                f(ix, iy, block);
            }
        });
        if out.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(out)
    }

    /// Scalar field `f(x) g(y)`.
    pub fn separable(f: &Field, g: &Field) -> Result<Self> {
        if f.grid() != g.grid() {
            return Err(Error::GridMismatch);
        }
        let (a, b) = (f.values(), g.values());
        Self::from_fn(*f.grid(), 0, |ix, iy, out| out[0] = a[ix] * b[iy])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn components(&self) -> usize {
        components(&self.grid, self.order)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, ix: usize, iy: usize) -> &[f64] {
        let c = self.components();
        let start = (ix * self.grid.len() + iy) * c;
        &self.values[start..start + c]
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.order != other.order {
            return Err(Error::OrderMismatch(format!("orders {} and {}", self.order, other.order)));
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        self.check_same(other)?;
        let values = self.values.par_iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect();
        Ok(Self { grid: self.grid, order: self.order, values })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { grid: self.grid, order: self.order, values: self.values.iter().map(|v| v * c).collect() }
    }

    /// `(x, y) -> A(y, x)`.
    pub fn swapped(&self) -> Self {
        let c = self.components();
        Self::from_fn(self.grid, self.order, |ix, iy, out| out.copy_from_slice(&self.at(iy, ix)[..c]))
            .expect("same shape")
    }

    pub fn sym(&self) -> Self {
        self.add(&self.swapped()).expect("same shape").scale(0.5)
    }

    pub fn antisym(&self) -> Self {
        self.sub(&self.sym()).expect("same shape")
    }

    /// Full contraction integrated over grid x grid.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        let dot = ordered_sum(
            self.values
                .par_chunks(SUM_BLOCK)
                .zip(other.values.par_chunks(SUM_BLOCK))
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()),
        );
        Ok(dot * self.grid.cell_volume().powi(2))
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).expect("same shape").sqrt()
    }

    /// Sum of pointwise Frobenius norms times the cell volume.
    pub fn l1_norm(&self) -> f64 {
        let c = self.components();
        let total = ordered_sum(self.values.par_chunks(c).map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt()));
        total * self.grid.cell_volume().powi(2)
    }

    /// Component-wise integral over grid x grid.
    pub fn integral(&self) -> Vec<f64> {
        let c = self.components();
        let w = self.grid.cell_volume().powi(2);
        let mut out = vec![0.0; c];
        for block in self.values.chunks(c) {
            for (o, v) in out.iter_mut().zip(block) {
                *o += v;
            }
        }
        out.iter().map(|v| v * w).collect()
    }

    /// `(∫ |A(y, x)|^2 dy)^{1/2}`.
    pub fn j1(&self) -> Field {
        self.swapped().j2()
    }

    /// `(∫ |A(x, y)|^2 dy)^{1/2}`.
    pub fn j2(&self) -> Field {
        let row = self.grid.len() * self.components();
        let h = self.grid.cell_volume();
        let v = self.values.par_chunks(row).map(|r| (h * r.iter().map(|a| a * a).sum::<f64>()).sqrt()).collect();
        Field::from_vec_unchecked(self.grid, v)
    }

    /// Order `a + b` pointwise tensor product.
    pub fn tensor_product(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let cb = other.components();
        Self::from_fn(self.grid, self.order + other.order, |ix, iy, out| {
            let (a, b) = (self.at(ix, iy), other.at(ix, iy));
            for (i, ai) in a.iter().enumerate() {
                for (j, bj) in b.iter().enumerate() {
                    out[i * cb + j] = ai * bj;
                }
            }
        })
    }

    /// Contraction over the last `order(other)` indices of `self`.
    pub fn contract(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.order < other.order {
            return Err(Error::OrderMismatch(format!(
                "cannot contract order {} with order {}",
                self.order, other.order
            )));
        }
        let cb = other.components();
        Self::from_fn(self.grid, self.order - other.order, |ix, iy, out| {
            let (a, b) = (self.at(ix, iy), other.at(ix, iy));
            for (i, o) in out.iter_mut().enumerate() {
                *o = a[i * cb..(i + 1) * cb].iter().zip(b).map(|(x, y)| x * y).sum();
            }
        })
    }

    /// Largest entry norm at pairs with `x` or `y` outside `inside`.
    pub fn max_outside(&self, inside: &[bool]) -> f64 {
        let g = self.grid.len();
        let c = self.components();
        self.values
            .par_chunks(g * c)
            .enumerate()
            .map(|(ix, row)| {
                row.chunks(c)
                    .enumerate()
                    .filter(|(iy, _)| !(inside[ix] && inside[*iy]))
                    .map(|(_, b)| b.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Raw little-endian `f64` values plus a sidecar `{n, N, L, order}`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = BivariateSidecar {
            n: self.grid.dim(),
            points: self.grid.points(),
            half_len: self.grid.half_len(),
            order: self.order,
        };
        write_raw(path, &self.values)?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: BivariateSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let grid = Grid::new(meta.n, meta.points, meta.half_len)?;
        Self::from_values(grid, meta.order, crate::io::read_raw(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateSidecar {
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
    #[serde(rename = "L")]
    pub half_len: f64,
    pub order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorMode {
    TensorProduct,
    Contraction,
    Sym,
    Antisym,
    J1,
    J2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorOutput {
    Bivariate(BivariateField),
    Field(Field),
}

/// Dispatches the pointwise algebra; `b` is only read by the binary modes.
pub fn tensor_ops(a: &BivariateField, b: Option<&BivariateField>, mode: TensorMode) -> Result<TensorOutput> {
    let need_b = || b.ok_or_else(|| Error::OrderMismatch(format!("{mode:?} needs a second operand")));
    Ok(match mode {
        TensorMode::TensorProduct => TensorOutput::Bivariate(a.tensor_product(need_b()?)?),
        TensorMode::Contraction => TensorOutput::Bivariate(a.contract(need_b()?)?),
        TensorMode::Sym => TensorOutput::Bivariate(a.sym()),
        TensorMode::Antisym => TensorOutput::Bivariate(a.antisym()),
        TensorMode::J1 => TensorOutput::Field(a.j1()),
        TensorMode::J2 => TensorOutput::Field(a.j2()),
    })
}

/// Component-wise `∫∫ A dy dx`; zero for antisymmetric `A`.
pub fn antisym_integral(a: &BivariateField) -> Vec<f64> {
    a.integral()
}

fn check_supported(dim: usize, floor: i64) -> Result<()> {
    match (dim, floor) {
        (1, 0..=2) | (2, 0) => Ok(()),
        _ => Err(Error::UnsupportedConfig(format!("n={dim} with floor(s)={floor}"))),
    }
}

fn fractional_exponent(s: f64) -> Result<Exponent> {
    let e = Exponent::new(s)?;
    if e.value() <= 0.0 || !e.is_fractional() {
        return Err(Error::ExponentOutOfRange { s, min: 0.0 });
    }
    Ok(e)
}

/// Periodic difference `iy - ix` as a flat offset index.
fn offset_index(grid: &Grid, ix: usize, iy: usize) -> usize {
    let (a, b) = (grid.multi_index(ix), grid.multi_index(iy));
    let n = grid.points();
    let mut d = [0usize; 3];
    for k in 0..grid.dim() {
        d[k] = (b[k] + n - a[k]) % n;
    }
    grid.flat_index(d)
}

/// Minimum-image displacement of an offset, `None` when a component sits
/// exactly at half the period (no antisymmetric choice exists there).
fn displacement(grid: &Grid, offset: usize) -> Option<[f64; 3]> {
    let n = grid.points();
    let m = grid.multi_index(offset);
    let mut d = [0.0; 3];
    for k in 0..grid.dim() {
        let j = m[k] as i64;
        let j = if j > (n / 2) as i64 { j - n as i64 } else { j };
        if j == (n / 2) as i64 {
            return None;
        }
        d[k] = j as f64 * grid.spacing();
    }
    Some(d)
}

const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Weight for the cell around `d`: the cell average of `|t|^{2-n-2σ}`
/// divided by `|d|^2`, so that locally quadratic differences
/// `|u(x) - u(y)|^2 ~ |t|^2` are integrated exactly. Periodic images are
/// added as point values.
fn kernel_weight(grid: &Grid, d: [f64; 3], sigma: f64) -> f64 {
    let n = grid.dim();
    let h = grid.spacing();
    let period = 2.0 * grid.half_len();
    let p = n as f64 + 2.0 * sigma;
    let e = 2.0 - 2.0 * sigma;
    let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let near = match n {
        1 => {
            let j = r / h;
            ((j + 0.5).powf(e) - (j - 0.5).powf(e)) / e * h.powf(e - 1.0) / (r * r)
        }
        _ if r < 4.5 * h => {
            let mut acc = 0.0;
            for (a, wa) in GL4 {
                for (b, wb) in GL4 {
                    let t = ((d[0] + 0.5 * h * a).powi(2) + (d[1] + 0.5 * h * b).powi(2)).sqrt();
                    acc += 0.25 * wa * wb * t.powf(e - n as f64);
                }
            }
            acc / (r * r)
        }
        _ => r.powf(-p),
    };
    let mut images = 0.0;
    let shells = if n == 1 { IMAGE_SHELLS_1D } else { IMAGE_SHELLS_2D };
    let range = -shells..=shells;
    if n == 1 {
        for m in range.clone().filter(|&m| m != 0) {
            images += (d[0] + period * m as f64).abs().powf(-p);
        }
    } else {
        for m0 in range.clone() {
            for m1 in range.clone() {
                if m0 == 0 && m1 == 0 {
                    continue;
                }
                let t = ((d[0] + period * m0 as f64).powi(2) + (d[1] + period * m1 as f64).powi(2)).sqrt();
                images += t.powf(-p);
            }
        }
    }
    // far images as a continuum
    let radius = (shells as f64 + 0.5) * period;
    let sphere = if n == 1 { 2.0 } else { 2.0 * std::f64::consts::PI };
    let tail = sphere * radius.powf(-2.0 * sigma) / (2.0 * sigma) / period.powi(n as i32);
    near + images + tail
}

/// `∫_{cell} |t|^{2-n-2σ} dt` over the excluded diagonal cell.
fn diagonal_moment(grid: &Grid, sigma: f64) -> f64 {
    let h = grid.spacing();
    let e = 2.0 - 2.0 * sigma;
    match grid.dim() {
        1 => 2.0 * (0.5 * h).powf(e) / e,
        _ => {
            // eight triangles 0 <= θ <= π/4, r <= (h/2) / cos θ
            let quarter = std::f64::consts::FRAC_PI_4;
            let panels = 8;
            let mut acc = 0.0;
            for k in 0..panels {
                let (a, b) = (quarter * k as f64 / panels as f64, quarter * (k + 1) as f64 / panels as f64);
                for (x, w) in GL4 {
                    let th = 0.5 * (a + b) + 0.5 * (b - a) * x;
                    acc += 0.5 * (b - a) * w * (0.5 * h / th.cos()).powf(e) / e;
                }
            }
            8.0 * acc
        }
    }
}

/// The calibrated two-point kernel behind `∇^s`.
///
/// Pair weights `K(d)` are cell averages of `|d|^{-n-2s'}` summed over
/// periodic images. The diagonal cell is excluded; its leading
/// contribution `|∇u|^2 ∫|t|^{2-n-2s'}/n` is folded into the nearest
/// neighbour weights. The normalisation constant is then fitted so that
/// the energy identity holds on a reference Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientKernel {
    grid: Grid,
    s: Exponent,
    constant: f64,
    weights: Vec<f64>,
}

impl GradientKernel {
    pub fn new(grid: Grid, s: f64) -> Result<Self> {
        let s = fractional_exponent(s)?;
        check_supported(grid.dim(), s.floor())?;
        let sigma = s.frac();
        let mut weights: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|o| match displacement(&grid, o) {
                Some(d) if o != 0 => kernel_weight(&grid, d, sigma),
                _ => 0.0,
            })
            .collect();
        let extra =
            diagonal_moment(&grid, sigma) / (2.0 * grid.dim() as f64 * grid.spacing().powi(grid.dim() as i32 + 2));
        let n = grid.points();
        for axis in 0..grid.dim() {
            for step in [1, n - 1] {
                let mut idx = [0usize; 3];
                idx[axis] = step;
                weights[grid.flat_index(idx)] += extra;
            }
        }
        let mut kernel = Self { grid, s, constant: 1.0, weights };
        let sigma_ref = grid.half_len() / 8.0;
        let gauss = Field::from_fn(grid, |p| {
            (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (2.0 * sigma_ref * sigma_ref)).exp()
        });
        let target = l2_inner(&frac_laplacian(&gauss, sigma, MeanPolicy::Require)?, &gauss)?;
        kernel.constant = target / kernel.pair_energy(&gauss);
        Ok(kernel)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn exponent(&self) -> Exponent {
        self.s
    }

    pub fn floor(&self) -> usize {
        self.s.floor() as usize
    }

    /// Fitted `C_{n,s'}`.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// `(C/2) ∫∫ |u(x)-u(y)|^2 K(x-y)` via the circulant structure.
    pub fn pair_energy(&self, u: &Field) -> f64 {
        let symbol = self.symbol();
        let lu = apply_real_multiplier(u, |k| symbol[k]);
        l2_inner(&lu, u).expect("same grid")
    }

    /// Multiplier of the quadrature form: `C h^n Σ_d K(d) (1 - cos ξ·d)`.
    pub fn symbol(&self) -> Vec<f64> {
        let g = self.grid;
        let w = Field::from_vec_unchecked(g, self.weights.clone());
        let hat = crate::fft::forward_real(&w);
        let total = hat[0].re;
        hat.iter().map(|c| self.constant * g.cell_volume() * (total - c.re)).collect()
    }

    /// `α(x, y)`, zero on the diagonal.
    pub fn alpha(&self, ix: usize, iy: usize) -> [f64; 3] {
        let o = offset_index(&self.grid, ix, iy);
        let w = self.weights[o];
        match displacement(&self.grid, o) {
            Some(d) if w > 0.0 => {
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let mag = (0.5 * self.constant * w).sqrt() / r;
                [mag * d[0], mag * d[1], mag * d[2]]
            }
            _ => [0.0; 3],
        }
    }

    /// `α` as an order-1 bivariate field.
    pub fn alpha_field(&self) -> Result<BivariateField> {
        let n = self.grid.dim();
        BivariateField::from_fn(self.grid, 1, |ix, iy, out| out.copy_from_slice(&self.alpha(ix, iy)[..n]))
    }
}

/// Derivative orders per axis for component `c` of a rank-`k` tensor.
fn partial_orders(c: usize, k: usize, n: usize) -> [u32; 3] {
    let mut orders = [0u32; 3];
    let mut rest = c;
    for _ in 0..k {
        orders[rest % n] += 1;
        rest /= n;
    }
    orders
}

fn partial(f: &Field, orders: [u32; 3]) -> Field {
    let freqs = f.grid().freq_grid();
    let mut out = f.clone();
    for (axis, &o) in orders.iter().enumerate().take(f.grid().dim()) {
        out = spectral_partial(&out, &freqs, axis, o);
    }
    out
}

/// Components of `∇^k u`, row-major over `{1..n}^k`, by spectral
/// differentiation.
pub fn floor_gradient(u: &Field, k: usize) -> Vec<Field> {
    let n = u.grid().dim();
    (0..n.pow(k as u32)).map(|c| partial(u, partial_orders(c, k, n))).collect()
}

/// Adjoint of [`floor_gradient`]: `(-1)^k (∇·)^k`.
fn floor_divergence(parts: &[Field], k: usize) -> Field {
    let g = *parts[0].grid();
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    parts
        .iter()
        .enumerate()
        .fold(Field::zeros(g), |acc, (c, p)| acc.add(&partial(p, partial_orders(c, k, g.dim()))).expect("same grid"))
        .scale(sign)
}

/// `∇^s u (x, y) = (∇^k u(x) - ∇^k u(y)) ⊗ α(x, y)`, order `k + 1`.
pub fn frac_gradient_with(u: &Field, kernel: &GradientKernel) -> Result<BivariateField> {
    if u.grid() != kernel.grid() {
        return Err(Error::GridMismatch);
    }
    let k = kernel.floor();
    let n = u.grid().dim();
    let du = floor_gradient(u, k);
    BivariateField::from_fn(*u.grid(), k + 1, |ix, iy, out| {
        let a = kernel.alpha(ix, iy);
        for (c, part) in du.iter().enumerate() {
            let diff = part.values()[ix] - part.values()[iy];
            for j in 0..n {
                out[c * n + j] = diff * a[j];
            }
        }
    })
}

pub fn frac_gradient(u: &Field, s: f64) -> Result<BivariateField> {
    frac_gradient_with(u, &GradientKernel::new(*u.grid(), s)?)
}

/// Fidelity diagnostics for the potential assumptions. Only support is
/// enforced; the rest is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `max_x J_2 A(x)`.
    pub j2_max: f64,
    /// `||S~||_{L^2}` for the column envelope `S~(y) = max_x |S(x, y)|`.
    pub envelope_l2: f64,
    /// `max |S|` over pairs touching the edge of `Omega x Omega`, relative to `max |S|`.
    pub edge_ratio: f64,
    pub warnings: Vec<String>,
}

/// Potentials `(A, q)` on a mask, with `S = A·α` and `∫|A|^2 dy` cached.
#[derive(Debug, Clone)]
pub struct MagneticProblem {
    pub mask: DomainMask,
    pub s: Exponent,
    pub a: BivariateField,
    pub q: Field,
    kernel: GradientKernel,
    s_field: BivariateField,
    a_energy: Field,
    pub assumptions: AssumptionReport,
}

impl MagneticProblem {
    pub fn new(mask: DomainMask, s: f64, a: BivariateField, q: Field) -> Result<Self> {
        let kernel = GradientKernel::new(mask.grid, s)?;
        Self::with_kernel(mask, kernel, a, q)
    }

    /// Reuses an already calibrated kernel for the same grid and exponent.
    pub fn with_kernel(mask: DomainMask, kernel: GradientKernel, a: BivariateField, q: Field) -> Result<Self> {
        let s = kernel.exponent();
        if kernel.grid() != &mask.grid || a.grid() != &mask.grid || q.grid() != &mask.grid {
            return Err(Error::GridMismatch);
        }
        if a.order() != kernel.floor() + 1 {
            return Err(Error::OrderMismatch(format!(
                "A has order {}, expected floor(s)+1 = {}",
                a.order(),
                kernel.floor() + 1
            )));
        }
        let inside = mask.in_omega();
        if a.max_outside(&inside) != 0.0 {
            return Err(Error::InvalidMask("A must be supported in Omega x Omega".into()));
        }
        if q.values().iter().zip(&inside).any(|(v, &m)| !m && *v != 0.0) {
            return Err(Error::InvalidMask("q must vanish outside Omega".into()));
        }
        let s_field = a.contract(&kernel.alpha_field()?)?;
        let a_energy = a.j2().map(|v| v * v);
        let assumptions = assess(&mask, &a_energy, &s_field);
        Ok(Self { mask, s, a, q, kernel, s_field, a_energy, assumptions })
    }

    /// Builds `A = S ⊗ α / |α|^2`, the potential parallel to `α` with
    /// `A·α = S`.
    pub fn from_s(mask: DomainMask, kernel: GradientKernel, s_target: &BivariateField, q: Field) -> Result<Self> {
        let a = lift(&kernel, s_target)?;
        Self::with_kernel(mask, kernel, a, q)
    }

    pub fn grid(&self) -> &Grid {
        &self.mask.grid
    }

    pub fn kernel(&self) -> &GradientKernel {
        &self.kernel
    }

    pub fn floor(&self) -> usize {
        self.kernel.floor()
    }

    /// `S = A·α`.
    pub fn s_field(&self) -> &BivariateField {
        &self.s_field
    }

    /// `∫ |A(x, y)|^2 dy`.
    pub fn a_energy(&self) -> &Field {
        &self.a_energy
    }

    /// `Q = q + ∫|A|^2 dy`.
    pub fn q_total(&self) -> Field {
        self.q.add(&self.a_energy).expect("same grid")
    }

    /// Same mask, kernel and exponent with new potentials.
    pub fn with_potentials(&self, a: BivariateField, q: Field) -> Result<Self> {
        Self::with_kernel(self.mask.clone(), self.kernel.clone(), a, q)
    }

    /// `L u` with `B(u, w) = <L u, w>`: spectral `(-Δ)^s u` plus the
    /// magnetic cross terms and `(Q) u`.
    pub fn apply(&self, u: &Field) -> Result<Field> {
        if u.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        let g = *self.grid();
        let k = self.floor();
        let h = g.cell_volume();
        let om = &self.mask.omega;
        let lap = frac_laplacian(u, self.s.value(), MeanPolicy::Require)?;
        let du = floor_gradient(u, k);
        let nc = du.len();
        let uv = u.values();
        // <∇^s u, A w>: w(x) Σ_y S(x,y)·(Du(x) - Du(y))
        // <A u, ∇^s w>: <P - Q, Dw> with P(x) = u(x) Σ_y S(x,y), Q(y) = Σ_x u(x) S(x,y)
        let mut t1 = vec![0.0; g.len()];
        let mut pq = vec![vec![0.0; g.len()]; nc];
        for &x in om {
            for &y in om {
                let sxy = self.s_field.at(x, y);
                let mut acc = 0.0;
                for c in 0..nc {
                    acc += sxy[c] * (du[c].values()[x] - du[c].values()[y]);
                    pq[c][x] += h * uv[x] * sxy[c];
                    pq[c][y] -= h * uv[x] * sxy[c];
                }
                t1[x] += h * acc;
            }
        }
        let parts: Vec<Field> = pq.into_iter().map(|v| Field::from_vec_unchecked(g, v)).collect();
        let cross = floor_divergence(&parts, k);
        let qt = self.q_total();
        let out = lap
            .values()
            .iter()
            .zip(&t1)
            .zip(cross.values())
            .zip(qt.values().iter().zip(uv))
            .map(|(((l, a), b), (q, u))| l + a + b + q * u)
            .collect();
        Ok(Field::from_vec_unchecked(g, out))
    }

    /// Matrix of `v -> restrict(L extend(v))` on the Omega unknowns.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let m = self.mask.omega.len();
        let cols = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                Ok(self.mask.restrict(&self.apply(&self.mask.extend(&e))?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(m, m, |i, j| cols[j][i]))
    }
}

fn lift(kernel: &GradientKernel, s_target: &BivariateField) -> Result<BivariateField> {
    let g = *kernel.grid();
    if s_target.grid() != &g {
        return Err(Error::GridMismatch);
    }
    if s_target.order() != kernel.floor() {
        return Err(Error::OrderMismatch(format!(
            "S has order {}, expected floor(s) = {}",
            s_target.order(),
            kernel.floor()
        )));
    }
    let n = g.dim();
    BivariateField::from_fn(g, kernel.floor() + 1, |ix, iy, out| {
        let a = kernel.alpha(ix, iy);
        let a2: f64 = a.iter().map(|v| v * v).sum();
        if a2 == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        for (c, sv) in s_target.at(ix, iy).iter().enumerate() {
            for j in 0..n {
                out[c * n + j] = sv * a[j] / a2;
            }
        }
    })
}

fn assess(mask: &DomainMask, a_energy: &Field, s_field: &BivariateField) -> AssumptionReport {
    let g = mask.grid;
    let inside = mask.in_omega();
    let j2_max = a_energy.values().iter().fold(0.0_f64, |m, v| m.max(v.sqrt()));
    let c = s_field.components();
    let norm = |b: &[f64]| b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut envelope = vec![0.0_f64; g.len()];
    let mut smax = 0.0_f64;
    for &x in &mask.omega {
        for &y in &mask.omega {
            let v = norm(&s_field.at(x, y)[..c]);
            envelope[y] = envelope[y].max(v);
            smax = smax.max(v);
        }
    }
    let envelope_l2 = (g.cell_volume() * envelope.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let edge: Vec<usize> = mask
        .omega
        .iter()
        .copied()
        .filter(|&i| {
            let m = g.multi_index(i);
            (0..g.dim()).any(|a| {
                [1, g.points() - 1].iter().any(|&step| {
                    let mut nb = m;
                    nb[a] = (m[a] + step) % g.points();
                    !inside[g.flat_index(nb)]
                })
            })
        })
        .collect();
    let mut edge_max = 0.0_f64;
    for &x in &mask.omega {
        for &y in &edge {
            edge_max = edge_max.max(norm(&s_field.at(x, y)[..c])).max(norm(&s_field.at(y, x)[..c]));
        }
    }
    let edge_ratio = if smax > 0.0 { edge_max / smax } else { 0.0 };
    let mut warnings = Vec::new();
    if !j2_max.is_finite() || !envelope_l2.is_finite() {
        warnings.push("J2 A or the S envelope is not finite".into());
    }
    if edge_ratio > 1e-3 {
        warnings.push(format!("S does not vanish at the edge of Omega x Omega (ratio {edge_ratio:.2e})"));
    }
    AssumptionReport { j2_max, envelope_l2, edge_ratio, warnings }
}

/// `∇^s_A u = ∇^s u + A(x, y) u(x)`.
pub fn magnetic_gradient(u: &Field, problem: &MagneticProblem) -> Result<BivariateField> {
    let grad = frac_gradient_with(u, problem.kernel())?;
    let uv = u.values();
    let au = BivariateField::from_fn(*u.grid(), problem.a.order(), |ix, iy, out| {
        for (o, a) in out.iter_mut().zip(problem.a.at(ix, iy)) {
            *o = a * uv[ix];
        }
    })?;
    grad.add(&au)
}

/// `∫∫ ∇^s_A u · ∇^s_A v + ∫ q u v`, evaluated literally on grid x grid.
pub fn magnetic_bilinear(u: &Field, v: &Field, problem: &MagneticProblem) -> Result<f64> {
    if u.grid() != problem.grid() || v.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    let gu = magnetic_gradient(u, problem)?;
    let gv = magnetic_gradient(v, problem)?;
    Ok(gu.inner(&gv)? + l2_inner(&problem.q.mul(u)?, v)?)
}

/// `N(S)` (order 0) and `M_beta(S)`, indexed by `|beta|` for `n = 1`.
#[derive(Debug, Clone)]
pub struct GaugeOperators {
    pub n_field: BivariateField,
    pub m_fields: Vec<Field>,
}

/// Derivative in the second slot, centred inside, one-sided second order
/// at the ends of the grid.
fn second_slot_derivative(s: &BivariateField) -> BivariateField {
    let g = *s.grid();
    let n = g.points();
    let h = g.spacing();
    BivariateField::from_fn(g, 0, |ix, iy, out| {
        let f = |j: usize| s.at(ix, j)[0];
        out[0] = if iy == 0 {
            (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
        } else if iy == n - 1 {
            (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h)
        } else {
            (f(iy + 1) - f(iy - 1)) / (2.0 * h)
        };
    })
    .expect("finite differences of finite values")
}

fn field_derivative(f: &Field) -> Field {
    let g = *f.grid();
    let n = g.points();
    let h = g.spacing();
    let v = f.values();
    let d = (0..n)
        .map(|i| {
            if i == 0 {
                (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * h)
            }
        })
        .collect();
    Field::from_vec_unchecked(g, d)
}

/// `∫ S(x, y) dy`, per tensor component.
fn row_integral(s: &BivariateField) -> Vec<Field> {
    let g = *s.grid();
    let h = g.cell_volume();
    (0..s.components())
        .map(|c| {
            let v = (0..g.len()).map(|x| h * (0..g.len()).map(|y| s.at(x, y)[c]).sum::<f64>()).collect();
            Field::from_vec_unchecked(g, v)
        })
        .collect()
}

/// Gauge operators for `floor(s) ∈ {0, 1}`.
///
/// `floor = 0`: `N = -(S(y,x) + S(x,y))`, `M_0 = 2 ∫ S(x,y) dy`.
/// `floor = 1` (`n = 1`): with `m = ∫ S(x,y) dy`, the product rule on
/// `u' m - (u m)'` gives `M_1 = 0` and `M_0 = -m'`, and
/// `N = ∂_x[S(y,x)] + ∂_y[S(x,y)]`.
pub fn gauge_operators(s: &BivariateField, floor: i64) -> Result<GaugeOperators> {
    if !(0..=1).contains(&floor) {
        return Err(Error::UnsupportedFloor(floor));
    }
    if s.order() != floor as usize {
        return Err(Error::OrderMismatch(format!("S has order {}, expected {floor}", s.order())));
    }
    if floor == 1 && s.grid().dim() != 1 {
        return Err(Error::UnsupportedConfig(format!("floor(s)=1 needs n=1, got n={}", s.grid().dim())));
    }
    let m = row_integral(s);
    if floor == 0 {
        let n_field = s.add(&s.swapped())?.scale(-1.0);
        return Ok(GaugeOperators { n_field, m_fields: vec![m[0].scale(2.0)] });
    }
    let d2 = second_slot_derivative(s);
    let n_field = d2.add(&d2.swapped())?;
    let m0 = field_derivative(&m[0]).scale(-1.0);
    let m1 = m[0].sub(&m[0])?;
    Ok(GaugeOperators { n_field, m_fields: vec![m0, m1] })
}

/// Right side of the expanded form:
/// `(-Δ)^s u + Σ_β ∂^β u M_β(S) + ∫ u(y) N(S)(x,y) dy + u ∫|A|^2 dy`.
pub fn expanded_operator(u: &Field, problem: &MagneticProblem) -> Result<Field> {
    let g = *problem.grid();
    let ops = gauge_operators(problem.s_field(), problem.floor() as i64)?;
    let mut out = frac_laplacian(u, problem.s.value(), MeanPolicy::Require)?;
    let freqs = g.freq_grid();
    for (order, m) in ops.m_fields.iter().enumerate() {
        let du = spectral_partial(u, &freqs, 0, order as u32);
        out = out.add(&du.mul(m)?)?;
    }
    let h = g.cell_volume();
    let uv = u.values();
    let nonlocal: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|x| h * problem.mask.omega.iter().map(|&y| uv[y] * ops.n_field.at(x, y)[0]).sum::<f64>())
        .collect();
    out = out.add(&Field::from_vec_unchecked(g, nonlocal))?;
    out.add(&problem.a_energy.mul(u)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeReport {
    /// `||N(S1 - S2)||`.
    pub n_residual: f64,
    /// `||M_0(S1 - S2) + ∫(|A1|^2 - |A2|^2) dy + q1 - q2||`.
    pub m0_residual: f64,
    /// `max_{1 <= |β| <= floor} ||M_β(S1 - S2)||`, zero when `floor = 0`.
    pub m_beta_residual: f64,
    pub tol: f64,
    pub equivalent: bool,
}

fn check_comparable(p1: &MagneticProblem, p2: &MagneticProblem) -> Result<()> {
    if p1.mask != p2.mask {
        return Err(Error::ConfigMismatch("masks differ".into()));
    }
    if p1.s != p2.s {
        return Err(Error::ConfigMismatch(format!("exponents {} and {}", p1.s.value(), p2.s.value())));
    }
    Ok(())
}

/// Evaluates the three gauge conditions for `(A1, q1)` against `(A2, q2)`.
pub fn gauge_equivalent(p1: &MagneticProblem, p2: &MagneticProblem, tol: f64) -> Result<GaugeReport> {
    check_comparable(p1, p2)?;
    let diff = p1.s_field().sub(p2.s_field())?;
    let ops = gauge_operators(&diff, p1.floor() as i64)?;
    let n_residual = ops.n_field.l2_norm();
    let zeroth = ops.m_fields[0].add(&p1.a_energy.sub(&p2.a_energy)?)?.add(&p1.q.sub(&p2.q)?)?;
    let m0_residual = zeroth.l2_norm();
    let m_beta_residual = ops.m_fields[1..].iter().map(|m| m.l2_norm()).fold(0.0, f64::max);
    Ok(GaugeReport {
        n_residual,
        m0_residual,
        m_beta_residual,
        tol,
        equivalent: n_residual <= tol && m0_residual <= tol && m_beta_residual <= tol,
    })
}

/// Partner of `p1` in its gauge class: `S2 = S1 - D` for an antisymmetric
/// `D` (so `N(S1 - S2) = 0`), and `q2` chosen to cancel the zeroth-order
/// condition. Only meaningful for `floor(s) = 0`.
pub fn gauge_partner(p1: &MagneticProblem, d: &BivariateField) -> Result<MagneticProblem> {
    if p1.floor() != 0 {
        return Err(Error::UnsupportedFloor(p1.floor() as i64));
    }
    let s2 = p1.s_field().sub(d)?;
    let a2 = lift(p1.kernel(), &s2)?;
    let trial = p1.with_potentials(a2.clone(), p1.q.clone())?;
    let ops = gauge_operators(d, 0)?;
    let inside = p1.mask.in_omega();
    let q2 = p1.q.add(&ops.m_fields[0])?.add(&p1.a_energy.sub(&trial.a_energy)?)?;
    let q2 = Field::from_vec_unchecked(
        *q2.grid(),
        q2.values().iter().zip(&inside).map(|(v, &m)| if m { *v } else { 0.0 }).collect(),
    );
    p1.with_potentials(a2, q2)
}

/// Exterior-value solve `L u = 0` in Omega, `u = f` outside, by a dense
/// symmetric eigendecomposition.
pub struct MagneticSolver<'a> {
    problem: &'a MagneticProblem,
    eigen: crate::linalg::SortedEigen,
}

impl<'a> MagneticSolver<'a> {
    pub fn new(problem: &'a MagneticProblem) -> Result<Self> {
        let eigen = sym_eigen(problem.matrix()?)?;
        let min = eigen.min_abs();
        if min < SINGULAR_TOL {
            return Err(Error::NearSingular { eigenvalue: min, tol: SINGULAR_TOL });
        }
        Ok(Self { problem, eigen })
    }

    pub fn solve(&self, f: &Field) -> Result<DirichletSolution> {
        let p = self.problem;
        if f.grid() != p.grid() {
            return Err(Error::GridMismatch);
        }
        if p.mask.omega.iter().any(|&i| f.values()[i] != 0.0) {
            return Err(Error::InvalidMask("exterior data must vanish on Omega".into()));
        }
        let b: Vec<f64> = p.mask.restrict(&p.apply(f)?).iter().map(|v| -v).collect();
        let v = self.eigen.solve(&b);
        let u = f.add(&p.mask.extend(&v))?;
        let r = p.mask.restrict(&p.apply(&u)?);
        let bn = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let residual = r.iter().map(|x| x * x).sum::<f64>().sqrt() / bn;
        Ok(DirichletSolution { u, path: SolverPath::Dense, iterations: 0, residual })
    }
}

/// `Λ_ij = B(u_i, f_j)` over the exterior basis.
pub fn magnetic_dn_map(
    problem: &MagneticProblem,
    basis: &[Field],
    descriptors: Vec<BasisDescriptor>,
) -> Result<DnMatrix> {
    let solver = MagneticSolver::new(problem)?;
    let sols = basis.par_iter().map(|f| solver.solve(f)).collect::<Result<Vec<_>>>()?;
    let rows = sols
        .par_iter()
        .map(|sol| {
            let lu = problem.apply(&sol.u)?;
            basis.iter().map(|f| l2_inner(&lu, f)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DnMatrix {
        s: problem.s.value(),
        basis: descriptors,
        entries: rows,
        path: SolverPath::Dense,
        iterations: vec![0; sols.len()],
        max_residual: sols.iter().map(|x| x.residual).fold(0.0, f64::max),
    })
}

/// Constants with `B(u,u) + μ' <u,u> >= k' ||u||^2_{H^s}` on a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityFit {
    pub mu: f64,
    pub k: f64,
}

fn coercivity_terms(problem: &MagneticProblem, u: &Field) -> Result<(f64, f64, f64)> {
    let b = magnetic_bilinear(u, u, problem)?;
    let l2 = l2_inner(u, u)?;
    let hs = crate::spectral::sobolev_norm(u, problem.s.value(), false)?.powi(2);
    Ok((b, l2, hs))
}

impl CoercivityFit {
    /// `μ'` doubles the worst observed deficit (plus one), `k'` halves the
    /// smallest resulting ratio.
    pub fn fit(problem: &MagneticProblem, samples: &[Field]) -> Result<Self> {
        let terms = samples.par_iter().map(|u| coercivity_terms(problem, u)).collect::<Result<Vec<_>>>()?;
        let deficit = terms.iter().map(|(b, l2, _)| (-b / l2).max(0.0)).fold(0.0, f64::max);
        let mu = 1.0 + 2.0 * deficit;
        let k = 0.5 * terms.iter().map(|(b, l2, hs)| (b + mu * l2) / hs).fold(f64::INFINITY, f64::min);
        Ok(Self { mu, k })
    }

    /// Samples for which the estimate fails.
    pub fn violations(&self, problem: &MagneticProblem, samples: &[Field]) -> Result<usize> {
        let terms = samples.par_iter().map(|u| coercivity_terms(problem, u)).collect::<Result<Vec<_>>>()?;
        Ok(terms.iter().filter(|(b, l2, hs)| b + self.mu * l2 < self.k * hs).count())
    }
}
