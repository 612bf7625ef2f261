//! Layer primitives with hand-written gradients.

use super::matrix::{Matrix, Real};
use crate::error::{Error, Result};

/// `x * w + b`, with `b` broadcast over rows.
pub fn affine<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let mut y = x.matmul(w)?;
    y.add_row_broadcast(b)?;
    Ok(y)
}

/// Gradients of `affine` given the upstream gradient `dy`.
///
/// Returns `(dx, dw, db)`.
pub fn affine_backward<T: Real>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    dy: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let dx = dy.matmul_nt(w)?;
    let dw = x.matmul_tn(dy)?;
    Ok((dx, dw, dy.column_sums()))
}

pub fn relu<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Multiplies `upstream` by the indicator `pre > 0`.
pub fn relu_backward<T: Real>(pre: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
    if !pre.same_shape(upstream) {
        return Err(Error::Dimension("relu_backward shape mismatch".into()));
    }
    let mut out = upstream.clone();
    for (g, &p) in out.data_mut().iter_mut().zip(pre.data()) {
        if p <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// `log(sum(exp(row)))`, stabilized.
pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

pub(crate) fn check_labels(labels: &[u32], classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
        return Err(Error::Index(format!("label {bad} with {classes} classes")));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// The gradient row for sample `i` is `(softmax(logits_i) - onehot(y_i)) / B`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Matrix<T>,
    labels: &[u32],
) -> Result<(T, Matrix<T>)> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "{} labels for {b} logit rows",
            labels.len()
        )));
    }
    check_labels(labels, c)?;
    if b == 0 {
        return Ok((T::zero(), logits.clone()));
    }
    let inv_b = T::one() / T::from_f64(b as f64);
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(i);
        let lse = log_sum_exp(row);
        loss += lse - row[y as usize];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_b;
        }
        row[y as usize] -= inv_b;
    }
    let loss = loss * inv_b;
    if !loss.is_finite() {
        return Err(Error::NumericOverflow("softmax_cross_entropy".into()));
    }
    Ok((loss, grad))
}
