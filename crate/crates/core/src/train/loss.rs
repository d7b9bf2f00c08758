use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Output of [`masked_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedLoss {
    /// `Σ_mask w_t (pred − label)² / normalizer`.
    pub loss: f64,
    /// Unweighted squared error per cell; 0 on masked cells.
    pub cell_losses: Vec<f64>,
    /// `∂loss/∂pred`, zero on masked cells.
    pub grads: Matrix,
    /// Number of unmasked cells.
    pub cells: usize,
}

/// Weighted mean-squared error over unmasked cells, normalised by the count
/// of unmasked cells. Task weights do not enter the denominator.
pub fn masked_loss(pred: &Matrix, labels: &Matrix, mask: &[bool], weights: &[f64]) -> Result<MaskedLoss> {
    masked_loss_with_normalizer(pred, labels, mask, weights, None)
}

/// [`masked_loss`] with an explicit denominator in place of the unmasked
/// cell count.
pub fn masked_loss_with_normalizer(
    pred: &Matrix,
    labels: &Matrix,
    mask: &[bool],
    weights: &[f64],
    normalizer: Option<f64>,
) -> Result<MaskedLoss> {
    let (n, t) = (pred.rows(), pred.cols());
    if labels.rows() != n || labels.cols() != t {
        return Err(Error::DimensionMismatch {
            what: "label shape",
            expected: n * t,
            found: labels.rows() * labels.cols(),
        });
    }
    if mask.len() != n * t {
        return Err(Error::DimensionMismatch {
            what: "mask cells",
            expected: n * t,
            found: mask.len(),
        });
    }
    if weights.len() != t {
        return Err(Error::DimensionMismatch {
            what: "task weights",
            expected: t,
            found: weights.len(),
        });
    }
    let cells = mask.iter().filter(|&&m| m).count();
    if cells == 0 {
        return Err(Error::NoUnmaskedCells);
    }
    let denom = normalizer.unwrap_or(cells as f64);
    let mut sum = 0.0;
    let mut cell_losses = vec![0.0; n * t];
    let mut grads = Matrix::zeros(n, t);
    for r in 0..n {
        for c in 0..t {
            let i = r * t + c;
            if !mask[i] {
                continue;
            }
            let diff = pred.get(r, c) - labels.get(r, c);
            let sq = diff * diff;
            cell_losses[i] = sq;
            sum += weights[c] * sq;
            grads.set(r, c, 2.0 * weights[c] * diff / denom);
        }
    }
    Ok(MaskedLoss {
        loss: sum / denom,
        cell_losses,
        grads,
        cells,
    })
}
