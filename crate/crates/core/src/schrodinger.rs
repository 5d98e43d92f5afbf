//! Exterior-value problems for `(-Δ)^s u + q u = 0` in `Omega`, `u = f`
//! outside: variational solves, Dirichlet spectra, DN maps, the Alessandrini
//! identity and constructive Runge approximation.
//!
//! Unknowns are the grid values of `v = u - f` on `Omega`. The discrete
//! operator is `A v = restrict((-Δ)^s extend(v)) + q v`, symmetric in the
//! plain dot product; the bilinear form is `h^n` times that pairing.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Exponent, Field, Grid};
use crate::linalg::{conjugate_gradient, sym_eigen, CgFailure, SortedEigen};
use crate::region::Region;
use crate::spectral::{energy_inner, frac_laplacian, l2_inner, make_bump, MeanPolicy};

/// Eigenvalues of the restricted operator closer than this to zero make a
/// problem near-singular.
pub const SINGULAR_TOL: f64 = 1e-8;
/// Largest `|Omega|` the dense path will factor.
pub const DENSE_CAP: usize = 1 << 14;
/// Relative residual demanded of every accepted solve.
pub const SOLVE_TOL: f64 = 1e-12;
/// Condition estimates above this flag a Runge system as ill-conditioned.
pub const CONDITION_CAP: f64 = 1e12;
/// Largest acceptable relative Runge residual in [`recover_pairings`].
pub const RUNGE_LIMIT: f64 = 0.2;

/// Index sets for `Omega`, the exterior windows and an optional ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMask {
    pub grid: Grid,
    pub omega: Vec<usize>,
    pub w1: Vec<usize>,
    pub w2: Vec<usize>,
    pub roi: Option<Vec<usize>>,
}

impl DomainMask {
    /// Checks disjointness, a two-cell gap between `Omega` and each window
    /// and the `L/2` padding margin.
    pub fn new(grid: Grid, omega: Vec<usize>, w1: Vec<usize>, w2: Vec<usize>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidMask("Omega is empty".into()));
        }
        let n = grid.dim();
        let limit = grid.half_len() / 2.0 + 1e-12;
        for (name, set) in [("Omega", &omega), ("W1", &w1), ("W2", &w2)] {
            if set.iter().any(|&i| i >= grid.len()) {
                return Err(Error::InvalidMask(format!("{name} has an index outside the grid")));
            }
            if set.iter().any(|&i| grid.point(i)[..n].iter().any(|c| c.abs() > limit)) {
                return Err(Error::InvalidMask(format!("{name} leaves the padding margin |x_i| <= L/2")));
            }
        }
        let gap = 2.0 * grid.spacing() - 1e-12;
        for (name, set) in [("W1", &w1), ("W2", &w2)] {
            if set_distance(&grid, &omega, set) < gap {
                return Err(Error::InvalidMask(format!("{name} is closer than two cells to Omega")));
            }
        }
        if w1.iter().any(|i| w2.contains(i)) {
            return Err(Error::InvalidMask("W1 and W2 overlap".into()));
        }
        Ok(Self { grid, omega, w1, w2, roi: None })
    }

    pub fn from_regions(grid: Grid, omega: &Region, w1: &Region, w2: &Region) -> Result<Self> {
        Self::new(grid, omega.indices(&grid), w1.indices(&grid), w2.indices(&grid))
    }

    pub fn in_omega(&self) -> Vec<bool> {
        let mut m = vec![false; self.grid.len()];
        for &i in &self.omega {
            m[i] = true;
        }
        m
    }

    /// Zero-extends a vector of `Omega` values to the grid.
    pub fn extend(&self, v: &[f64]) -> Field {
        let mut out = vec![0.0; self.grid.len()];
        for (&i, &x) in self.omega.iter().zip(v) {
            out[i] = x;
        }
        Field::new(self.grid, out).expect("finite values")
    }

    pub fn restrict(&self, u: &Field) -> Vec<f64> {
        self.omega.iter().map(|&i| u.values()[i]).collect()
    }
}

fn set_distance(grid: &Grid, a: &[usize], b: &[usize]) -> f64 {
    let n = grid.dim();
    let pa: Vec<[f64; 3]> = a.iter().map(|&i| grid.point(i)).collect();
    b.iter()
        .map(|&j| {
            let q = grid.point(j);
            pa.iter().map(|p| (0..n).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>()).fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchrodingerProblem {
    pub mask: DomainMask,
    pub s: Exponent,
    pub q: Field,
}

impl SchrodingerProblem {
    pub fn new(mask: DomainMask, s: f64, q: Field) -> Result<Self> {
        let s = Exponent::new(s)?;
        if s.value() <= 0.0 || !s.is_fractional() {
            return Err(Error::ExponentOutOfRange { s: s.value(), min: 0.0 });
        }
        if q.grid() != &mask.grid {
            return Err(Error::GridMismatch);
        }
        let inside = mask.in_omega();
        if q.values().iter().zip(&inside).any(|(v, &m)| !m && *v != 0.0) {
            return Err(Error::InvalidMask("q must vanish outside Omega".into()));
        }
        Ok(Self { mask, s, q })
    }

    pub fn grid(&self) -> &Grid {
        &self.mask.grid
    }

    /// Same mask and exponent, different potential.
    pub fn with_q(&self, q: Field) -> Result<Self> {
        Self::new(self.mask.clone(), self.s.value(), q)
    }

    fn q_omega(&self) -> Vec<f64> {
        self.mask.restrict(&self.q)
    }

    /// `v -> restrict((-Δ)^s extend(v)) + q v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let ext = self.mask.extend(v);
        let lap = frac_laplacian(&ext, self.s.value(), MeanPolicy::Require).expect("s > 0");
        let q = self.q_omega();
        self.mask.omega.iter().zip(v).zip(&q).map(|((&i, x), qi)| lap.values()[i] + qi * x).collect()
    }

    /// Dense matrix of [`Self::apply`], built from the convolution kernel.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let m = self.mask.omega.len();
        if m > DENSE_CAP {
            return Err(Error::TooLarge { unknowns: m, cap: DENSE_CAP });
        }
        let g = self.grid();
        let mut delta = vec![0.0; g.len()];
        delta[0] = 1.0;
        let kernel = frac_laplacian(&Field::new(*g, delta)?, self.s.value(), MeanPolicy::Require)?;
        let n = g.points();
        let idx: Vec<[usize; 3]> = self.mask.omega.iter().map(|&i| g.multi_index(i)).collect();
        let q = self.q_omega();
        Ok(DMatrix::from_fn(m, m, |i, j| {
            let mut d = [0usize; 3];
            for a in 0..g.dim() {
                d[a] = (idx[i][a] + n - idx[j][a]) % n;
            }
            kernel.values()[g.flat_index(d)] + if i == j { q[i] } else { 0.0 }
        }))
    }

    /// Right-hand side `-restrict((-Δ)^s f)`.
    fn load(&self, f: &Field) -> Vec<f64> {
        let lap = frac_laplacian(f, self.s.value(), MeanPolicy::Require).expect("s > 0");
        self.mask.omega.iter().map(|&i| -lap.values()[i]).collect()
    }

    fn check_exterior(&self, f: &Field) -> Result<()> {
        if f.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        if self.mask.omega.iter().any(|&i| f.values()[i] != 0.0) {
            return Err(Error::InvalidMask("exterior data must vanish on Omega".into()));
        }
        Ok(())
    }
}

/// `<(-Δ)^{s/2} v, (-Δ)^{s/2} w> + <q v, w>`.
pub fn bilinear_form(v: &Field, w: &Field, problem: &SchrodingerProblem) -> Result<f64> {
    if v.grid() != problem.grid() || w.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(energy_inner(v, w, problem.s.value())? + l2_inner(&problem.q.mul(v)?, w)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    Cg,
    Dense,
}

#[derive(Debug, Clone)]
pub struct DirichletSolution {
    /// `u = f + v` on the whole grid.
    pub u: Field,
    pub path: SolverPath,
    pub iterations: usize,
    /// `||A v - b|| / ||b||` with `b` the load from the exterior data.
    pub residual: f64,
}

/// A problem prepared for repeated solves: the path is chosen once.
pub struct DirichletSolver<'a> {
    problem: &'a SchrodingerProblem,
    path: SolverPath,
    dense: Option<SortedEigen>,
}

const RAYLEIGH_PROBES: usize = 10;

impl<'a> DirichletSolver<'a> {
    /// CG when ten seeded Rayleigh quotients are positive, dense otherwise.
    pub fn new(problem: &'a SchrodingerProblem) -> Result<Self> {
        let m = problem.mask.omega.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let definite = (0..RAYLEIGH_PROBES).all(|_| {
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ax = problem.apply(&x);
            x.iter().zip(&ax).map(|(a, b)| a * b).sum::<f64>() > 0.0
        });
        if definite {
            Ok(Self { problem, path: SolverPath::Cg, dense: None })
        } else {
            Self::dense(problem)
        }
    }

    pub fn dense(problem: &'a SchrodingerProblem) -> Result<Self> {
        let eig = sym_eigen(problem.matrix()?)?;
        let min = eig.min_abs();
        if min < SINGULAR_TOL {
            return Err(Error::NearSingular { eigenvalue: min, tol: SINGULAR_TOL });
        }
        Ok(Self { problem, path: SolverPath::Dense, dense: Some(eig) })
    }

    pub fn path(&self) -> SolverPath {
        self.path
    }

    pub fn solve(&self, f: &Field) -> Result<DirichletSolution> {
        self.solve_with_source(f, None)
    }

    /// Solves with an extra interior source: `A v = -restrict((-Δ)^s f) + source`.
    pub fn solve_with_source(&self, f: &Field, source: Option<&[f64]>) -> Result<DirichletSolution> {
        let p = self.problem;
        p.check_exterior(f)?;
        let mut b = p.load(f);
        if let Some(src) = source {
            if src.len() != b.len() {
                return Err(Error::FieldLength { expected: b.len(), got: src.len() });
            }
            for (bi, si) in b.iter_mut().zip(src) {
                *bi += si;
            }
        }
        let (v, iterations) = match &self.dense {
            Some(eig) => (eig.solve(&b), 0),
            None => match conjugate_gradient(|x| p.apply(x), &b, SOLVE_TOL, 20 * b.len() + 100) {
                Ok(out) => (out.x, out.iterations),
                Err(CgFailure::Indefinite) => {
                    let fallback = DirichletSolver::dense(p)?;
                    return fallback.solve_with_source(f, source);
                }
                Err(CgFailure::NoConvergence { iterations, residual }) => {
                    return Err(Error::NoConvergence { iterations, residual })
                }
            },
        };
        let av = p.apply(&v);
        let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rnorm = av.iter().zip(&b).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        let residual = if bnorm == 0.0 { rnorm } else { rnorm / bnorm };
        let mut u = f.values().to_vec();
        for (&i, x) in p.mask.omega.iter().zip(&v) {
            u[i] = *x;
        }
        Ok(DirichletSolution { u: Field::new(*f.grid(), u)?, path: self.path, iterations, residual })
    }
}

/// One-off solve of the exterior-value problem with data `f`.
pub fn solve_dirichlet(f: &Field, problem: &SchrodingerProblem) -> Result<DirichletSolution> {
    DirichletSolver::new(problem)?.solve(f)
}

/// The `k` smallest eigenvalues of the restricted operator, ascending.
pub fn dirichlet_spectrum(problem: &SchrodingerProblem, k: usize) -> Result<Vec<f64>> {
    let eig = sym_eigen(problem.matrix()?)?;
    Ok(eig.values.into_iter().take(k).collect())
}

/// Exterior bumps placed on the grid points of a window whose balls fit in
/// it, taken in van der Corput order so every prefix is spread out and
/// bases of increasing size are nested.
#[derive(Debug, Clone)]
pub struct ExteriorBasis {
    pub centers: Vec<Vec<f64>>,
    pub radius: f64,
    pub fields: Vec<Field>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisDescriptor {
    pub window: u8,
    pub center: Vec<f64>,
    pub radius: f64,
}

fn van_der_corput(mut k: usize) -> f64 {
    let mut out = 0.0;
    let mut base = 0.5;
    while k > 0 {
        if k & 1 == 1 {
            out += base;
        }
        base *= 0.5;
        k >>= 1;
    }
    out
}

impl ExteriorBasis {
    pub fn new(grid: &Grid, window: &Region, radius: f64, count: usize) -> Result<Self> {
        let n = grid.dim();
        let candidates: Vec<Vec<f64>> =
            (0..grid.len()).map(|i| grid.point(i)[..n].to_vec()).filter(|c| window.contains_ball(c, radius)).collect();
        if candidates.len() < count {
            return Err(Error::InvalidMask(format!(
                "window holds {} bump centres, {count} requested",
                candidates.len()
            )));
        }
        let mut taken = vec![false; candidates.len()];
        let mut centers = Vec::with_capacity(count);
        let mut k = 0usize;
        while centers.len() < count {
            let mut j = (van_der_corput(k) * candidates.len() as f64) as usize;
            k += 1;
            while taken[j] {
                j = (j + 1) % candidates.len();
            }
            taken[j] = true;
            centers.push(candidates[j].clone());
        }
        let fields = centers.iter().map(|c| make_bump(grid, c, radius, 1.0)).collect::<Result<Vec<_>>>()?;
        Ok(Self { centers, radius, fields })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn truncate(&self, count: usize) -> Self {
        let count = count.min(self.len());
        Self { centers: self.centers[..count].to_vec(), radius: self.radius, fields: self.fields[..count].to_vec() }
    }

    pub fn descriptors(&self, window: u8) -> Vec<BasisDescriptor> {
        self.centers.iter().map(|c| BasisDescriptor { window, center: c.clone(), radius: self.radius }).collect()
    }
}

/// `Λ[i][j] = B_q(u_{f_i}, f_j)` over an exterior basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DnMatrix {
    pub s: f64,
    pub basis: Vec<BasisDescriptor>,
    pub entries: Vec<Vec<f64>>,
    pub path: SolverPath,
    pub iterations: Vec<usize>,
    pub max_residual: f64,
}

impl DnMatrix {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        let n = self.size();
        DMatrix::from_fn(n, n, |i, j| self.entries[i][j])
    }

    /// `||Λ - Λ^T||_F / ||Λ||_F`.
    pub fn asymmetry(&self) -> f64 {
        let m = self.as_matrix();
        (&m - m.transpose()).norm() / m.norm().max(f64::MIN_POSITIVE)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for (i, row) in self.entries.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.push_str(&format!("{i},{j},{v:?}\n"));
            }
        }
        out
    }
}

/// Solutions for every basis function, in basis order.
pub fn solve_basis(problem: &SchrodingerProblem, basis: &[Field]) -> Result<Vec<DirichletSolution>> {
    let solver = DirichletSolver::new(problem)?;
    basis.par_iter().map(|f| solver.solve(f)).collect()
}

/// DN matrix over `basis`; `descriptors` is carried into the metadata.
pub fn dn_map(problem: &SchrodingerProblem, basis: &[Field], descriptors: Vec<BasisDescriptor>) -> Result<DnMatrix> {
    let sols = solve_basis(problem, basis)?;
    let s = problem.s.value();
    // (-Δ)^s u_i once per row; q u_i f_j vanishes since q lives in Omega
    let rows = sols
        .par_iter()
        .map(|sol| {
            let lap = frac_laplacian(&sol.u, s, MeanPolicy::Require)?;
            basis.iter().map(|f| l2_inner(&lap, f)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DnMatrix {
        s,
        basis: descriptors,
        entries: rows,
        path: sols.first().map(|x| x.path).unwrap_or(SolverPath::Cg),
        iterations: sols.iter().map(|x| x.iterations).collect(),
        max_residual: sols.iter().map(|x| x.residual).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlessandriniGap {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

fn check_comparable(p1: &SchrodingerProblem, p2: &SchrodingerProblem) -> Result<()> {
    if p1.mask != p2.mask || p1.s != p2.s {
        return Err(Error::ConfigMismatch("problems must share mask and s".into()));
    }
    Ok(())
}

/// `<(Λ1 - Λ2) f1, f2>` against `<(q1 - q2) u1, u2>`.
pub fn alessandrini_gap(
    p1: &SchrodingerProblem,
    p2: &SchrodingerProblem,
    f1: &Field,
    f2: &Field,
) -> Result<AlessandriniGap> {
    check_comparable(p1, p2)?;
    let u1 = solve_dirichlet(f1, p1)?.u;
    let u2 = solve_dirichlet(f2, p2)?.u;
    // Λ_q[f1](f2) = B_q(u_{f1}, f2); the second solve uses f1 under q2
    let u1_q2 = solve_dirichlet(f1, p2)?.u;
    let lhs = bilinear_form(&u1, f2, p1)? - bilinear_form(&u1_q2, f2, p2)?;
    let dq = p1.q.sub(&p2.q)?;
    let rhs = l2_inner(&dq.mul(&u1)?, &u2)?;
    Ok(AlessandriniGap { lhs, rhs, gap: (lhs - rhs).abs() })
}

/// Outcome of a Tikhonov fit `min ||A c - g||^2 + delta ||c||^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RungeResult {
    /// Exterior data `f = sum c_i f_i`.
    #[serde(skip)]
    pub f: Option<Field>,
    pub coefficients: Vec<f64>,
    pub delta: f64,
    /// `||u_f|_Omega - g|| / ||g||` for the full basis.
    pub residual: f64,
    /// Relative misfit after each basis prefix `1..=size`.
    pub misfit_history: Vec<f64>,
    /// Tikhonov objective after each prefix, normalised by `||g||^2`.
    pub objective_history: Vec<f64>,
    pub condition: f64,
    pub ill_conditioned: bool,
}

/// Restrictions `u_{f_i}|_Omega` as columns, ready for repeated fits.
///
/// Columns are scaled to unit `L^2(Omega)` norm before fitting, so `delta`
/// is measured against a dimensionless Gram matrix; coefficients are mapped
/// back to the unscaled basis afterwards.
#[derive(Debug, Clone)]
pub struct RungeSystem {
    pub columns: DMatrix<f64>,
    /// `||u_{f_i}||_{L^2(Omega)}` of each unscaled column.
    pub norms: Vec<f64>,
    pub basis: Vec<Field>,
    pub cell: f64,
}

impl RungeSystem {
    pub fn new(problem: &SchrodingerProblem, basis: &[Field]) -> Result<Self> {
        let sols = solve_basis(problem, basis)?;
        let m = problem.mask.omega.len();
        let cell = problem.grid().cell_volume();
        let mut columns = DMatrix::zeros(m, basis.len());
        let mut norms = Vec::with_capacity(basis.len());
        for (j, sol) in sols.iter().enumerate() {
            let col = problem.mask.restrict(&sol.u);
            let norm = (cell * col.iter().map(|x| x * x).sum::<f64>()).sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroField);
            }
            for (i, v) in col.into_iter().enumerate() {
                columns[(i, j)] = v / norm;
            }
            norms.push(norm);
        }
        Ok(Self { columns, norms, basis: basis.to_vec(), cell })
    }

    /// Fits `g` (values on `Omega`) with the first `size` columns.
    fn fit_prefix(&self, g: &[f64], delta: f64, size: usize) -> (Vec<f64>, f64, f64, f64) {
        let a = self.columns.columns(0, size) * self.cell.sqrt();
        let gv = DVector::from_column_slice(g) * self.cell.sqrt();
        let svd = a.clone().svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let proj = u.transpose() * &gv;
        let mut c = DVector::zeros(size);
        for (k, &sig) in svd.singular_values.iter().enumerate() {
            let w = sig / (sig * sig + delta) * proj[k];
            c += vt.row(k).transpose() * w;
        }
        let resid = &a * &c - &gv;
        let misfit = resid.norm_squared();
        let objective = misfit + delta * c.norm_squared();
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
        let cond = (smax * smax + delta) / (smin * smin + delta);
        (c.iter().copied().collect(), misfit, objective, cond)
    }

    pub fn fit(&self, g: &[f64], delta: f64, size: usize) -> Result<RungeResult> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::UnsupportedConfig("Tikhonov delta must be positive".into()));
        }
        let size = size.min(self.columns.ncols());
        if size == 0 {
            return Err(Error::UnsupportedConfig("empty Runge basis".into()));
        }
        let gnorm2 = self.cell * g.iter().map(|x| x * x).sum::<f64>();
        if gnorm2 == 0.0 {
            return Err(Error::ZeroField);
        }
        let mut misfit_history = Vec::with_capacity(size);
        let mut objective_history = Vec::with_capacity(size);
        let mut last = (Vec::new(), 0.0, 0.0, 0.0);
        for k in 1..=size {
            last = self.fit_prefix(g, delta, k);
            misfit_history.push((last.1 / gnorm2).sqrt());
            objective_history.push(last.2 / gnorm2);
        }
        let (scaled, misfit, _, condition) = last;
        let coefficients: Vec<f64> = scaled.iter().zip(&self.norms).map(|(c, n)| c / n).collect();
        let mut f = Field::zeros(*self.basis[0].grid());
        for (ci, bi) in coefficients.iter().zip(&self.basis) {
            f = f.add(&bi.scale(*ci))?;
        }
        Ok(RungeResult {
            f: Some(f),
            coefficients,
            delta,
            residual: (misfit / gnorm2).sqrt(),
            misfit_history,
            objective_history,
            condition,
            ill_conditioned: condition > CONDITION_CAP,
        })
    }

    /// Picks `delta` at the L-curve corner of a logarithmic sweep.
    pub fn fit_auto(&self, g: &[f64], deltas: &[f64], size: usize) -> Result<RungeResult> {
        let fits = deltas.iter().map(|&d| self.fit(g, d, size)).collect::<Result<Vec<_>>>()?;
        Ok(fits.into_iter().nth(l_curve_corner(&self.l_curve(g, deltas, size)?)).expect("nonempty sweep"))
    }

    fn l_curve(&self, g: &[f64], deltas: &[f64], size: usize) -> Result<Vec<(f64, f64)>> {
        let size = size.min(self.columns.ncols());
        Ok(deltas
            .iter()
            .map(|&d| {
                let (c, misfit, _, _) = self.fit_prefix(g, d, size);
                let cn = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                (misfit.sqrt().max(f64::MIN_POSITIVE).ln(), cn.max(f64::MIN_POSITIVE).ln())
            })
            .collect())
    }
}

/// Index of maximum discrete curvature along the `(log misfit, log ||c||)`
/// curve; endpoints win only for sweeps shorter than three points.
pub fn l_curve_corner(points: &[(f64, f64)]) -> usize {
    if points.len() < 3 {
        return 0;
    }
    let mut best = (f64::NEG_INFINITY, 1);
    for i in 1..points.len() - 1 {
        let (a, b, c) = (points[i - 1], points[i], points[i + 1]);
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        let la = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let lb = ((c.0 - b.0).powi(2) + (c.1 - b.1).powi(2)).sqrt();
        let lc = ((c.0 - a.0).powi(2) + (c.1 - a.1).powi(2)).sqrt();
        let kappa = 2.0 * cross.abs() / (la * lb * lc).max(f64::MIN_POSITIVE);
        if kappa > best.0 {
            best = (kappa, i);
        }
    }
    best.1
}

/// Tikhonov-regularised approximation of `target` (a field supported in
/// `Omega`) by solutions driven from `basis`.
pub fn runge_approximate(
    target: &Field,
    basis: &[Field],
    problem: &SchrodingerProblem,
    delta: f64,
    size: usize,
) -> Result<RungeResult> {
    let system = RungeSystem::new(problem, &basis[..size.min(basis.len())])?;
    system.fit(&problem.mask.restrict(target), delta, size)
}

/// Both Runge fits and the resulting estimate of `<q1 - q2, phi>`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairingEstimate {
    pub estimate: f64,
    pub phi_fit: RungeResult,
    pub psi_fit: RungeResult,
}

/// Estimates `<q1 - q2, phi>` from DN data alone: `phi` is approximated from
/// `W1` under `q1`, the cutoff `psi` from `W2` under `q2`, and the estimate
/// is `c1^T (Λ1 - Λ2)_{W1 x W2} c2`.
///
/// `dn1`, `dn2` are DN matrices over `basis1` followed by `basis2`.
#[allow(clippy::too_many_arguments)]
pub fn recover_pairings(
    p1: &SchrodingerProblem,
    p2: &SchrodingerProblem,
    dn1: &DnMatrix,
    dn2: &DnMatrix,
    basis1: &[Field],
    basis2: &[Field],
    phi: &Field,
    psi: &Field,
    delta: f64,
) -> Result<PairingEstimate> {
    check_comparable(p1, p2)?;
    let (n1, n2) = (basis1.len(), basis2.len());
    if dn1.size() != n1 + n2 || dn2.size() != n1 + n2 {
        return Err(Error::ConfigMismatch("DN matrices must cover both bases".into()));
    }
    let phi_fit = RungeSystem::new(p1, basis1)?.fit(&p1.mask.restrict(phi), delta, n1)?;
    let psi_fit = RungeSystem::new(p2, basis2)?.fit(&p2.mask.restrict(psi), delta, n2)?;
    for fit in [&phi_fit, &psi_fit] {
        if fit.residual > RUNGE_LIMIT {
            return Err(Error::ApproximationTooCoarse { residual: fit.residual, limit: RUNGE_LIMIT });
        }
    }
    let mut estimate = 0.0;
    for (i, c1) in phi_fit.coefficients.iter().enumerate() {
        for (j, c2) in psi_fit.coefficients.iter().enumerate() {
            estimate += c1 * (dn1.entries[i][n1 + j] - dn2.entries[i][n1 + j]) * c2;
        }
    }
    Ok(PairingEstimate { estimate, phi_fit, psi_fit })
}
