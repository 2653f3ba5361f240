//! In-batch contrastive (InfoNCE) loss over a similarity matrix.
//!
//! Row i treats candidate i as the positive and the other unmasked
//! candidates as negatives:
//!
//! loss = -(1/B) * sum_i log( exp(s_ii / tau) / sum_{j unmasked} exp(s_ij / tau) )
//!
//! The duplicate mask excludes candidates whose text is identical to row
//! i's positive, so repeated entities in a batch do not act as false
//! negatives. Softmaxes are stabilized by row-max subtraction.

use crate::error::{Error, Result};

/// Builds the duplicate-candidate mask for a batch: `mask[i*b + j]` is true
/// when `j != i` and candidate j's lowercase text equals candidate i's.
pub fn duplicate_mask(candidate_texts: &[impl AsRef<str>]) -> Vec<bool> {
    let b = candidate_texts.len();
    let lowered: Vec<String> = candidate_texts
        .iter()
        .map(|t| t.as_ref().to_lowercase())
        .collect();
    let mut mask = vec![false; b * b];
    for i in 0..b {
        for j in 0..b {
            if i != j && lowered[i] == lowered[j] {
                mask[i * b + j] = true;
            }
        }
    }
    mask
}

/// Returns the loss and its gradient w.r.t. every similarity entry.
/// `similarities` and `mask` are `batch * batch`, row-major; the diagonal
/// must never be masked.
pub fn contrastive_loss(
    similarities: &[f64],
    batch: usize,
    tau: f64,
    mask: &[bool],
) -> Result<(f64, Vec<f64>)> {
    if batch == 0 {
        return Err(Error::Validation("batch must be non-empty".into()));
    }
    if similarities.len() != batch * batch {
        return Err(Error::ShapeMismatch(format!(
            "similarity matrix must be {batch}x{batch}, got {} entries",
            similarities.len()
        )));
    }
    if mask.len() != similarities.len() {
        return Err(Error::ShapeMismatch("mask must match the similarity matrix".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Validation(format!("temperature must be positive, got {tau}")));
    }
    for i in 0..batch {
        if mask[i * batch + i] {
            return Err(Error::Validation(format!("diagonal entry {i} is masked")));
        }
    }

    let mut loss = 0.0;
    let mut grad = vec![0.0f64; batch * batch];
    let inv_b = 1.0 / batch as f64;
    for i in 0..batch {
        let row = &similarities[i * batch..(i + 1) * batch];
        let row_mask = &mask[i * batch..(i + 1) * batch];
        let mut max = f64::NEG_INFINITY;
        for (j, &s) in row.iter().enumerate() {
            if !row_mask[j] {
                max = max.max(s / tau);
            }
        }
        let mut denom = 0.0;
        for (j, &s) in row.iter().enumerate() {
            if !row_mask[j] {
                denom += (s / tau - max).exp();
            }
        }
        let log_denom = denom.ln() + max;
        loss += -(row[i] / tau - log_denom);
        for j in 0..batch {
            if row_mask[j] {
                continue;
            }
            let p = (row[j] / tau - max).exp() / denom;
            let delta = if i == j { 1.0 } else { 0.0 };
            grad[i * batch + j] = inv_b * (p - delta) / tau;
        }
    }
    Ok((loss * inv_b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_element_batch_has_zero_loss() {
        let (loss, grad) = contrastive_loss(&[0.73], 1, 0.05, &[false]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad[0].abs() < 1e-15);
    }

    #[test]
    fn two_by_two_identity_matrix_matches_closed_form() {
        // s = [[1,0],[0,1]], tau = 1: each row contributes ln(1 + e^-1)
        let s = [1.0, 0.0, 0.0, 1.0];
        let mask = [false; 4];
        let (loss, _) = contrastive_loss(&s, 2, 1.0, &mask).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln(); // 0.3132616875182228...
        assert!((loss - expected).abs() < 1e-15, "loss {loss} vs {expected}");
        assert!((loss - 0.3132616875182228).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_duplicates_reduce_to_diagonal() {
        // both candidates identical: off-diagonals masked, each row is a
        // softmax over its diagonal alone
        let s = [0.9, 0.9, 0.9, 0.9];
        let mask = duplicate_mask(&["acorn house", "Acorn House"]);
        assert_eq!(mask, vec![false, true, true, false]);
        let (loss, grad) = contrastive_loss(&s, 2, 0.05, &mask).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g.abs() < 1e-15));
    }

    #[test]
    fn loss_is_nonnegative_and_gradient_rows_sum_to_zero() {
        let s = [0.2, 0.5, -0.1, 0.9, 0.4, 0.0, 0.3, -0.2, 0.6];
        let mask = [false; 9];
        let (loss, grad) = contrastive_loss(&s, 3, 0.1, &mask).unwrap();
        assert!(loss >= 0.0);
        for i in 0..3 {
            let row_sum: f64 = grad[i * 3..(i + 1) * 3].iter().sum();
            assert!(row_sum.abs() < 1e-12, "row {i} gradient sums to {row_sum}");
        }
    }

    #[test]
    fn permutation_invariance() {
        // swapping rows+columns 0 and 2 leaves the loss unchanged
        let s = [0.2, 0.5, -0.1, 0.9, 0.4, 0.0, 0.3, -0.2, 0.6];
        let perm = [2usize, 1, 0];
        let mut sp = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                sp[i * 3 + j] = s[perm[i] * 3 + perm[j]];
            }
        }
        let mask = [false; 9];
        let (a, _) = contrastive_loss(&s, 3, 0.07, &mask).unwrap();
        let (b, _) = contrastive_loss(&sp, 3, 0.07, &mask).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn masked_diagonal_is_rejected() {
        let mask = [true, false, false, false];
        assert!(contrastive_loss(&[1.0, 0.0, 0.0, 1.0], 2, 1.0, &mask).is_err());
    }

    #[test]
    fn non_square_input_is_rejected() {
        assert!(contrastive_loss(&[1.0, 0.0, 0.0], 2, 1.0, &[false; 3]).is_err());
    }
}
