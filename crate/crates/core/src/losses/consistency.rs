use ndarray::{Array2, ArrayView2};

use super::LossGrad;
use crate::error::{Error, Result};
use crate::ot::{wasserstein_pair_with, LabeledBatch, OtParams};

/// Distribution consistency for extended domain `k`: the sum over `j != k`
/// of the entropic OT value between batch k and batch j.
///
/// The gradient with respect to batch k's embeddings holds each solved plan
/// fixed, so only the cost entries carry derivatives:
/// `dC_ab/dx_a = C_ab (x_a - x_b) / sigma^2`. The other batches are
/// constants. With a single domain the sum is empty and the result is zero.
pub fn distribution_consistency(
    k: usize,
    batches: &[LabeledBatch<'_>],
    class_text: ArrayView2<'_, f64>,
    params: &OtParams,
) -> Result<LossGrad> {
    let own = batches.get(k).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "domain index {k} out of range for {}",
            batches.len()
        ))
    })?;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(own.embeddings.dim());
    let inv_var = 1.0 / (params.sigma * params.sigma);
    for (j, other) in batches.iter().enumerate() {
        if j == k {
            continue;
        }
        let pair = wasserstein_pair_with(*own, *other, class_text, params)?;
        loss += pair.value;
        let plan = &pair.plan.plan;
        let cost = pair.cost.values();
        for (a, mut g) in grad.outer_iter_mut().enumerate() {
            let xa = own.embeddings.row(a);
            for b in 0..other.len() {
                let weight = plan[[a, b]] * cost[[a, b]] * inv_var;
                if weight == 0.0 {
                    continue;
                }
                g.scaled_add(weight, &xa);
                g.scaled_add(-weight, &other.embeddings.row(b));
            }
        }
    }
    Ok(LossGrad { loss, grad })
}
