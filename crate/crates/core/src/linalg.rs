//! Small linear-algebra kernels: matrix-free CG and dense symmetric
//! eigen/solve wrappers over `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||`.
    pub relative_residual: f64,
}

/// Why CG stopped without an answer.
#[derive(Debug, Clone, PartialEq)]
pub enum CgFailure {
    /// `p^T A p <= 0`: the operator is not positive definite.
    Indefinite,
    NoConvergence {
        iterations: usize,
        residual: f64,
    },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient for a symmetric positive definite operator.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> std::result::Result<CgOutcome, CgFailure> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(CgFailure::Indefinite);
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= rel_tol * bnorm {
            // recompute the true residual; the recurrence drifts
            let ax = apply(&x);
            let true_res = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt() / bnorm;
            if true_res <= rel_tol {
                return Ok(CgOutcome { x, iterations: it, relative_residual: true_res });
            }
            r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            p = r.clone();
            rr = dot(&r, &r);
            continue;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    let ax = apply(&x);
    let residual = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt() / bnorm;
    Err(CgFailure::NoConvergence { iterations: max_iter, residual })
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(mut m: DMatrix<f64>) -> Result<SortedEigen> {
    if m.nrows() != m.ncols() {
        return Err(Error::EigSolveFailure("matrix is not square".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigSolveFailure("matrix has non-finite entries".into()));
    }
    // symmetrise against rounding in the assembly
    let t = m.transpose();
    m = (m + t) * 0.5;
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigSolveFailure("symmetric QR iteration did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(SortedEigen { values, vectors })
}

impl SortedEigen {
    /// Solves `A x = b` through the decomposition.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let q = &self.vectors;
        let bt = q.transpose() * DVector::from_column_slice(b);
        let scaled = DVector::from_iterator(bt.len(), bt.iter().zip(&self.values).map(|(c, l)| c / l));
        (q * scaled).iter().copied().collect()
    }

    /// Eigenvalue of smallest magnitude.
    pub fn min_abs(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// `max |lambda| / min |lambda|`.
    pub fn condition(&self) -> f64 {
        let max = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        max / self.min_abs()
    }
}
