use ndarray::{Array2, ArrayView2};

use crate::optics::sum_sorted;
use crate::{Error, Result};

/// The six orderings of three rows; `PERMUTATIONS[m][r]` is the estimate row matched to target row `r`.
pub const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Loss value, its gradient with respect to the estimate and the winning row matching.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantLoss {
    pub value: f64,
    pub grad: Array2<f64>,
    pub matching: [usize; 3],
}

fn check(est: &ArrayView2<'_, f64>, opt: &ArrayView2<'_, f64>) -> Result<()> {
    if est.dim() != (3, 3) || opt.dim() != (3, 3) {
        return Err(Error::DimensionMismatch(format!(
            "permutation loss needs 3x3 matrices, got {:?} and {:?}",
            est.dim(),
            opt.dim()
        )));
    }
    Ok(())
}

/// `sum max(0, -x) + sum max(0, x - 1)` over the estimate, row-major.
pub fn bound_penalty(est: ArrayView2<'_, f64>) -> f64 {
    est.iter().fold(0.0, |acc, &x| acc + (-x).max(0.0) + (x - 1.0).max(0.0))
}

/// Squared distance under one row matching. The nine terms are summed in ascending
/// order so the value does not depend on how the rows were presented.
fn matched_cost(est: &ArrayView2<'_, f64>, opt: &ArrayView2<'_, f64>, matching: &[usize; 3]) -> f64 {
    let mut terms = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            terms[r * 3 + c] = (est[[matching[r], c]] - opt[[r, c]]).powi(2);
        }
    }
    sum_sorted(&mut terms)
}

/// Minimum over row permutations of the squared Frobenius distance, plus the bound hinge.
pub fn permutation_invariant_loss(est: ArrayView2<'_, f64>, opt: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(permutation_invariant_loss_grad(est, opt)?.value)
}

/// [`permutation_invariant_loss`] with its gradient. Ties go to the first matching in
/// [`PERMUTATIONS`] order.
pub fn permutation_invariant_loss_grad(est: ArrayView2<'_, f64>, opt: ArrayView2<'_, f64>) -> Result<InvariantLoss> {
    check(&est, &opt)?;
    let mut best = (f64::INFINITY, PERMUTATIONS[0]);
    for m in PERMUTATIONS {
        let cost = matched_cost(&est, &opt, &m);
        if cost < best.0 {
            best = (cost, m);
        }
    }
    let (cost, matching) = best;
    let mut grad = Array2::zeros((3, 3));
    for r in 0..3 {
        for c in 0..3 {
            let e = est[[matching[r], c]];
            let mut g = 2.0 * (e - opt[[r, c]]);
            if e < 0.0 {
                g -= 1.0;
            } else if e > 1.0 {
                g += 1.0;
            }
            grad[[matching[r], c]] = g;
        }
    }
    Ok(InvariantLoss { value: cost + bound_penalty(est), grad, matching })
}
