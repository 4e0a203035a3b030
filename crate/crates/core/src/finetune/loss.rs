//! Symmetric image/text cross-entropy over a similarity matrix.

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Matrix};

/// Which entries of the logit matrix count as positives.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Pair `i` matches only column `i`.
    Diagonal,
    /// Every pair sharing a class id is a positive, weighted uniformly.
    SameClass(Vec<usize>),
}

impl Targets {
    fn row_weights(&self, i: usize, n: usize) -> Vec<f64> {
        match self {
            Targets::Diagonal => (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect(),
            Targets::SameClass(ids) => {
                let hits = ids.iter().filter(|&&c| c == ids[i]).count() as f64;
                ids.iter()
                    .map(|&c| if c == ids[i] { 1.0 / hits } else { 0.0 })
                    .collect()
            }
        }
    }
}

fn check(logits: &Matrix, targets: &Targets) -> Result<()> {
    if !logits.is_square() {
        return Err(Error::Shape(format!(
            "contrastive loss needs a square matrix, got {}x{}",
            logits.rows(),
            logits.cols()
        )));
    }
    if let Targets::SameClass(ids) = targets {
        if ids.len() != logits.rows() {
            return Err(Error::Shape(format!(
                "{} class ids for a batch of {}",
                ids.len(),
                logits.rows()
            )));
        }
    }
    Ok(())
}

/// Mean of the row-wise (image→text) and column-wise (text→image)
/// cross-entropies with diagonal targets.
pub fn symmetric_loss(logits: &Matrix) -> Result<f64> {
    Ok(symmetric_loss_with_grad(logits, &Targets::Diagonal)?.0)
}

/// Loss and its gradient with respect to every logit.
pub fn symmetric_loss_with_grad(logits: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    check(logits, targets)?;
    let n = logits.rows();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let inv = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, n);
    let mut row_loss = 0.0;
    let mut col_loss = 0.0;

    for i in 0..n {
        let row = logits.row(i);
        let lse = log_sum_exp(row.iter().copied());
        let t = targets.row_weights(i, n);
        row_loss += lse - row.iter().zip(&t).map(|(l, w)| l * w).sum::<f64>();
        for j in 0..n {
            let p = (row[j] - lse).exp();
            grad.set(i, j, grad.get(i, j) + 0.5 * inv * (p - t[j]));
        }
    }
    for j in 0..n {
        let col = (0..n).map(|i| logits.get(i, j));
        let lse = log_sum_exp(col);
        // Same-class relation is symmetric, so column weights equal row weights.
        let t = targets.row_weights(j, n);
        col_loss += lse - (0..n).map(|i| logits.get(i, j) * t[i]).sum::<f64>();
        for (i, ti) in t.iter().enumerate() {
            let p = (logits.get(i, j) - lse).exp();
            grad.set(i, j, grad.get(i, j) + 0.5 * inv * (p - ti));
        }
    }
    Ok((0.5 * inv * (row_loss + col_loss), grad))
}
