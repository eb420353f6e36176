use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Constraint, EngineError};

/// Dense view of a set of sparse rows.
pub(crate) fn dense_rows(rows: &[&Constraint], n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(rows.len(), n);
    for (r, c) in rows.iter().enumerate() {
        for (&j, &v) in c.idx.iter().zip(&c.val) {
            a[(r, j)] += v;
        }
    }
    a
}

/// Cholesky of `h`, retrying with a growing ridge on breakdown.
/// Returns the factor and the ridge that was finally applied.
pub(crate) fn factor_spd(h: &DMatrix<f64>, ridge: f64) -> Result<(Cholesky<f64, Dyn>, f64), EngineError> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
    let mut delta = ridge * scale;
    for _ in 0..12 {
        let mut reg = h.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += delta;
        }
        if let Some(ch) = reg.cholesky() {
            return Ok((ch, delta));
        }
        delta *= 100.0;
    }
    Err(EngineError::NumericalFailure(format!(
        "Hessian factorization broke down (ridge up to {delta:.1e}, n = {})",
        h.nrows()
    )))
}

/// Splits equality rows into a linearly independent subset and the
/// remainder, scanning in order with modified Gram-Schmidt.
pub(crate) fn independent_rows(rows: &[Constraint], n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (k, c) in rows.iter().enumerate() {
        let mut v = DVector::zeros(n);
        for (&j, &a) in c.idx.iter().zip(&c.val) {
            v[j] += a;
        }
        let norm0 = v.norm();
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        // second pass for orthogonality
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        let norm = v.norm();
        if norm0 > 0.0 && norm > 1e-10 * norm0 {
            basis.push(v / norm);
            kept.push(k);
        } else {
            dropped.push(k);
        }
    }
    (kept, dropped)
}

/// Minimum-norm solution of `A z = b` for full-row-rank `A`.
pub(crate) fn least_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, EngineError> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(a.ncols()));
    }
    let gram = a * a.transpose();
    let (ch, _) = factor_spd(&gram, 1e-14)?;
    Ok(a.transpose() * ch.solve(b))
}
