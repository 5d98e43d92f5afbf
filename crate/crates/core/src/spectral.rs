//! Fourier-multiplier fractional operators: `(-Δ)^s`, Riesz potentials,
//! Sobolev norms, plus the bump functions and inner product the rest of
//! the crate is built on.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::{Exponent, Field, FreqGrid, Grid};

/// What to do with the zero Fourier mode when an operator is undefined there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanPolicy {
    /// Reject inputs whose mean is not numerically zero.
    Require,
    /// Subtract the mean before applying the operator.
    Project,
}

const MEAN_TOL: f64 = 1e-12;

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Resolves the mean policy for an operator that is singular at `xi = 0`.
fn prepare_mean_zero(u: &Field, policy: MeanPolicy, s: f64) -> Result<Field> {
    match policy {
        MeanPolicy::Project => Ok(u.mean_zero()),
        MeanPolicy::Require => {
            let mean = u.mean();
            if mean.abs() > MEAN_TOL * rms(u.values()) {
                Err(Error::NegativeExponentNonMeanZero { s, mean })
            } else {
                Ok(u.clone())
            }
        }
    }
}

/// `|xi|^{2s}` with the zero-mode convention `|0|^{2s} = 0` for `s != 0`.
#[inline]
pub fn symbol_power(radial: f64, s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else if radial == 0.0 {
        0.0
    } else {
        radial.powf(2.0 * s)
    }
}

/// `(-Δ)^s u = F^{-1}(|xi|^{2s} û)`.
///
/// For `s < 0` the zero mode is undefined; `policy` decides whether a
/// non-zero mean is an error or gets projected out.
pub fn frac_laplacian(u: &Field, s: f64, policy: MeanPolicy) -> Result<Field> {
    let grid = *u.grid();
    let exp = Exponent::new(s)?;
    exp.check_range(grid.dim())?;
    let input = if s < 0.0 { prepare_mean_zero(u, policy, s)? } else { u.clone() };
    let freqs = grid.freq_grid();
    Ok(apply_power(&input, &freqs, s))
}

/// Multiplier application without range checks, for callers that already
/// hold a [`FreqGrid`].
pub fn apply_power(u: &Field, freqs: &FreqGrid, s: f64) -> Field {
    let radial = freqs.radial();
    fft::apply_real_multiplier(u, |k| symbol_power(radial[k], s))
}

/// `<u, v> = h^n sum u_i v_i`.
pub fn l2_inner(u: &Field, v: &Field) -> Result<f64> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch);
    }
    let dot: f64 = u.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
    Ok(u.grid().cell_volume() * dot)
}

/// `<(-Δ)^{s/2} u, (-Δ)^{s/2} v>` evaluated directly on the Fourier side.
pub fn energy_inner(u: &Field, v: &Field, s: f64) -> Result<f64> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = *u.grid();
    let freqs = grid.freq_grid();
    let uh = fft::forward_real(u);
    let vh = fft::forward_real(v);
    let sum: f64 =
        uh.iter().zip(&vh).zip(freqs.radial()).map(|((a, b), &r)| symbol_power(r, s) * (a * b.conj()).re).sum();
    Ok(grid.cell_volume() * sum / grid.len() as f64)
}

/// Discrete Sobolev norm: `||<xi>^r û||` (inhomogeneous) or `|| |xi|^r û||`
/// (homogeneous), both with the Parseval weight `h^n / N^n`.
pub fn sobolev_norm(u: &Field, r: f64, homogeneous: bool) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::ExponentOutOfRange { s: r, min: f64::NEG_INFINITY });
    }
    let grid = *u.grid();
    if homogeneous && r < 0.0 {
        let mean = u.mean();
        if mean.abs() > MEAN_TOL * rms(u.values()) {
            return Err(Error::NonMeanZero { mean });
        }
    }
    let freqs = grid.freq_grid();
    let uh = fft::forward_real(u);
    let sum: f64 = uh
        .iter()
        .zip(freqs.radial())
        .map(|(c, &xi)| {
            let w = if homogeneous { symbol_power(xi, r) } else { (1.0 + xi * xi).powf(r) };
            w * c.norm_sqr()
        })
        .sum();
    Ok((grid.cell_volume() * sum / grid.len() as f64).sqrt())
}

/// Smooth compactly supported bump `A exp(-1/(1 - |x-c|^2/rho^2))`, exactly
/// zero outside the open ball.
pub fn make_bump(grid: &Grid, center: &[f64], radius: f64, amplitude: f64) -> Result<Field> {
    let margin = 2.0 * grid.spacing();
    let l = grid.half_len();
    let fits = radius > 0.0
        && center.len() == grid.dim()
        && center.iter().all(|&c| c - radius >= -l + margin && c + radius <= l - margin);
    if !fits {
        return Err(Error::BumpOutsideBox { center: center.to_vec(), radius });
    }
    Ok(Field::from_fn(*grid, |p| {
        let r2: f64 = (0..grid.dim()).map(|a| (p[a] - center[a]).powi(2)).sum::<f64>() / (radius * radius);
        if r2 < 1.0 {
            amplitude * (-1.0 / (1.0 - r2)).exp()
        } else {
            0.0
        }
    }))
}

/// How [`riesz_potential`] evaluates `u * |x|^{-alpha}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RieszBackend {
    /// `scale * (-Δ)^{-(n-alpha)/2} u` on the torus.
    Spectral { scale: f64 },
    /// Discrete convolution quadrature on the zero-padded grid (no wrap-around).
    Direct,
}

/// Riesz potential `I_alpha u = u * |x|^{-alpha}`, `0 < alpha < n`.
pub fn riesz_potential(u: &Field, alpha: f64, backend: RieszBackend, policy: MeanPolicy) -> Result<Field> {
    let grid = *u.grid();
    let n = grid.dim();
    if !(alpha > 0.0 && alpha < n as f64) {
        return Err(Error::AlphaOutOfRange { alpha, n });
    }
    let s = -(n as f64 - alpha) / 2.0;
    let input = prepare_mean_zero(u, policy, s).map_err(|e| match e {
        Error::NegativeExponentNonMeanZero { mean, .. } => Error::NonMeanZero { mean },
        other => other,
    })?;
    match backend {
        RieszBackend::Spectral { scale } => Ok(apply_power(&input, &grid.freq_grid(), s).scale(scale)),
        RieszBackend::Direct => Ok(riesz_direct(&input, alpha)),
    }
}

// 5-point Gauss-Legendre on [0, 1].
const GL5_NODES: [f64; 5] =
    [0.046_910_077_030_668, 0.230_765_344_947_158, 0.5, 0.769_234_655_052_842, 0.953_089_922_969_332];
const GL5_WEIGHTS: [f64; 5] =
    [0.118_463_442_528_095, 0.239_314_335_249_683, 0.284_444_444_444_444, 0.239_314_335_249_683, 0.118_463_442_528_095];

/// Average of `|x|^{-alpha}` over the cell `[-h/2, h/2]^n`.
///
/// By symmetry this equals the average over one orthant `[0, h/2]^n`. Each
/// axis uses 5 Gauss-Legendre nodes after the graded substitution
/// `x = (h/2) t^2`, which keeps nodes off the origin and softens the
/// singularity.
pub fn diagonal_cell_average(dim: usize, h: f64, alpha: f64) -> f64 {
    let half = h / 2.0;
    let mut total = 0.0;
    let mut idx = [0usize; 3];
    loop {
        let mut w = 1.0;
        let mut r2 = 0.0;
        for a in 0..dim {
            let t = GL5_NODES[idx[a]];
            w *= GL5_WEIGHTS[idx[a]] * 2.0 * t;
            r2 += (half * t * t).powi(2);
        }
        total += w * r2.sqrt().powf(-alpha);
        let mut a = 0;
        loop {
            if a == dim {
                return total;
            }
            idx[a] += 1;
            if idx[a] < 5 {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// Kernel `|x|^{-alpha}` sampled on the doubled grid, diagonal cell averaged.
fn riesz_kernel_padded(grid: &Grid, alpha: f64) -> (Grid, Vec<f64>) {
    let n = grid.points();
    let h = grid.spacing();
    let big = Grid::with_cap(grid.dim(), 2 * n, 2.0 * grid.half_len(), usize::MAX).expect("doubled grid is valid");
    let diag = diagonal_cell_average(grid.dim(), h, alpha);
    let kernel = (0..big.len())
        .map(|flat| {
            let m = big.multi_index(flat);
            let r2: f64 = (0..grid.dim())
                .map(|a| {
                    let k = m[a] as i64;
                    let signed = if k < n as i64 { k } else { k - 2 * n as i64 };
                    (signed as f64 * h).powi(2)
                })
                .sum();
            if r2 == 0.0 {
                diag
            } else {
                r2.sqrt().powf(-alpha)
            }
        })
        .collect();
    (big, kernel)
}

pub(crate) fn riesz_direct(u: &Field, alpha: f64) -> Field {
    let grid = *u.grid();
    let n = grid.points();
    let (big, kernel) = riesz_kernel_padded(&grid, alpha);
    let embed = |src: &[f64]| -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); big.len()];
        for (i, &v) in src.iter().enumerate() {
            let m = grid.multi_index(i);
            out[big.flat_index(m)] = Complex64::new(v, 0.0);
        }
        out
    };
    let mut uh = embed(u.values());
    let mut kh: Vec<Complex64> = kernel.iter().map(|&k| Complex64::new(k, 0.0)).collect();
    fft::forward(&big, &mut uh);
    fft::forward(&big, &mut kh);
    for (a, b) in uh.iter_mut().zip(&kh) {
        *a *= b;
    }
    fft::inverse(&big, &mut uh);
    let hn = grid.cell_volume();
    let values = (0..grid.len())
        .map(|i| {
            let m = grid.multi_index(i);
            debug_assert!(m.iter().all(|&c| c < n));
            hn * uh[big.flat_index(m)].re
        })
        .collect();
    Field::from_vec_unchecked(grid, values)
}

/// Scale that makes the spectral Riesz backend match the direct quadrature.
///
/// Fitted by least squares over a fixed set of mean-zero reference fields
/// (differences of shifted bumps), one scalar per `(grid, alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RieszCalibration {
    pub alpha: f64,
    pub scale: f64,
    /// Largest relative deviation of a single reference field's own fit.
    pub spread: f64,
}

impl RieszCalibration {
    pub fn fit(grid: &Grid, alpha: f64) -> Result<Self> {
        let refs = riesz_reference_fields(grid)?;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut per_field = Vec::with_capacity(refs.len());
        for u in &refs {
            let direct = riesz_potential(u, alpha, RieszBackend::Direct, MeanPolicy::Project)?;
            let spec = riesz_potential(u, alpha, RieszBackend::Spectral { scale: 1.0 }, MeanPolicy::Project)?;
            let a = l2_inner(&direct, &spec)?;
            let b = l2_inner(&spec, &spec)?;
            num += a;
            den += b;
            per_field.push(a / b);
        }
        let scale = num / den;
        let spread = per_field.iter().map(|c| (c / scale - 1.0).abs()).fold(0.0, f64::max);
        Ok(Self { alpha, scale, spread })
    }

    pub fn backend(&self) -> RieszBackend {
        RieszBackend::Spectral { scale: self.scale }
    }
}

/// Relative L2 discrepancy between the spectral and direct Riesz backends
/// on the central half box `[-L/2, L/2]^n`, after removing the mean of each
/// output there. Both potentials are only comparable modulo constants and
/// away from the periodic images.
pub fn riesz_backend_discrepancy(u: &Field, alpha: f64, scale: f64) -> Result<f64> {
    let direct = riesz_potential(u, alpha, RieszBackend::Direct, MeanPolicy::Require)?;
    let spec = riesz_potential(u, alpha, RieszBackend::Spectral { scale }, MeanPolicy::Require)?;
    let g = u.grid();
    let half = g.half_len() / 2.0;
    let inside: Vec<usize> =
        (0..g.len()).filter(|&i| g.point(i).iter().take(g.dim()).all(|c| c.abs() <= half)).collect();
    let mean = |f: &Field| inside.iter().map(|&i| f.values()[i]).sum::<f64>() / inside.len() as f64;
    let (md, ms) = (mean(&direct), mean(&spec));
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in &inside {
        let d = direct.values()[i] - md;
        num += (spec.values()[i] - ms - d).powi(2);
        den += d * d;
    }
    Ok((num / den.max(f64::MIN_POSITIVE)).sqrt())
}

fn riesz_reference_fields(grid: &Grid) -> Result<Vec<Field>> {
    let l = grid.half_len();
    let dim = grid.dim();
    let radius = l / 8.0;
    let offsets = [0.0, 0.1, -0.15, 0.2];
    let mut out = Vec::new();
    for (k, &off) in offsets.iter().enumerate() {
        let mut c1 = vec![off * l; dim];
        let mut c2 = vec![off * l; dim];
        c1[0] -= 0.15 * l;
        c2[k % dim] += 0.15 * l;
        let a = make_bump(grid, &c1, radius, 1.0)?;
        let b = make_bump(grid, &c2, radius * (1.0 + 0.1 * k as f64), 1.0)?;
        out.push(a.sub(&b)?.mean_zero());
    }
    Ok(out)
}
