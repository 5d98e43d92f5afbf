//! Multi-dimensional FFTs on flat row-major arrays, built on `rustfft`.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{Field, FreqGrid, Grid};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

fn transform(grid: &Grid, data: &mut [Complex64], inverse: bool) {
    let n = grid.points();
    let dim = grid.dim();
    assert_eq!(data.len(), grid.len());
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    // last axis is contiguous
    for row in data.chunks_exact_mut(n) {
        fft.process_with_scratch(row, &mut scratch);
    }
    if dim == 1 {
        return;
    }
    let mut line = vec![Complex64::default(); n];
    for axis in 0..dim - 1 {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for base in (0..data.len()).step_by(block) {
            for off in 0..stride {
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + off + k * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (k, v) in line.iter().enumerate() {
                    data[base + off + k * stride] = *v;
                }
            }
        }
    }
}

/// Unnormalised forward DFT, `sum_j u_j e^{-i xi_k x_j}` up to the phase of
/// the box origin (which cancels in every multiplier).
pub fn forward(grid: &Grid, data: &mut [Complex64]) {
    transform(grid, data, false);
}

/// Inverse DFT including the `1/N^n` normalisation.
pub fn inverse(grid: &Grid, data: &mut [Complex64]) {
    transform(grid, data, true);
    let scale = 1.0 / grid.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

pub fn forward_real(field: &Field) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = field.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward(field.grid(), &mut data);
    data
}

/// Applies a real, even multiplier `m(bin)` and returns the real part.
pub fn apply_real_multiplier(field: &Field, mult: impl Fn(usize) -> f64) -> Field {
    let grid = *field.grid();
    let mut data = forward_real(field);
    for (k, v) in data.iter_mut().enumerate() {
        *v *= mult(k);
    }
    inverse(&grid, &mut data);
    Field::from_vec_unchecked(grid, data.into_iter().map(|c| c.re).collect())
}

/// Spectral partial derivative `d^order / dx_axis^order`.
///
/// The Nyquist bin is dropped for odd orders so the result stays real.
pub fn spectral_partial(field: &Field, freqs: &FreqGrid, axis: usize, order: u32) -> Field {
    if order == 0 {
        return field.clone();
    }
    let grid = *field.grid();
    let mut data = forward_real(field);
    let i_pow = Complex64::new(0.0, 1.0).powu(order);
    for (k, v) in data.iter_mut().enumerate() {
        let m = grid.multi_index(k);
        if order % 2 == 1 && m[axis] == grid.points() / 2 {
            *v = Complex64::default();
            continue;
        }
        let xi = freqs.axis()[m[axis]];
        *v *= i_pow * xi.powi(order as i32);
    }
    inverse(&grid, &mut data);
    Field::from_vec_unchecked(grid, data.into_iter().map(|c| c.re).collect())
}
