use ndarray::{Array2, ArrayView2};

use super::LossGrad;
use crate::error::{Error, Result};

/// Domain alignment: `sum_i 1 - cos(out_i - x_i, text_dir_i)`.
///
/// `text_dir_i` is the target-minus-source composed prompt embedding for the
/// class of sample i. Only its direction matters.
pub fn domain_alignment(
    aug_out: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    text_dir: ArrayView2<'_, f64>,
) -> Result<LossGrad> {
    if aug_out.dim() != x.dim() || aug_out.dim() != text_dir.dim() {
        return Err(Error::Shape(format!(
            "domain alignment rows must align: out {:?}, x {:?}, text {:?}",
            aug_out.dim(),
            x.dim(),
            text_dir.dim()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros(aug_out.dim());
    for (i, mut g) in grad.outer_iter_mut().enumerate() {
        let d = &aug_out.row(i) - &x.row(i);
        let d_norm = d.dot(&d).sqrt();
        if !(d_norm > 0.0) {
            return Err(Error::ZeroNorm {
                what: "image difference",
                row: i,
            });
        }
        let t = text_dir.row(i);
        let t_norm = t.dot(&t).sqrt();
        if !(t_norm > 0.0) {
            return Err(Error::ZeroNorm {
                what: "text direction",
                row: i,
            });
        }
        let u = &d / d_norm;
        let t_hat = &t / t_norm;
        let cos = u.dot(&t_hat);
        loss += 1.0 - cos;
        // d cos / d d = (t_hat - u cos) / |d|
        g.assign(&((&u * cos - &t_hat) / d_norm));
    }
    Ok(LossGrad { loss, grad })
}

/// Summed softmax cross-entropy; returns (loss, dL/dlogits).
pub fn softmax_cross_entropy(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() {
        return Err(Error::CountMismatch {
            what: "labels".into(),
            expected: logits.nrows(),
            found: labels.len(),
        });
    }
    let classes = logits.ncols();
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for (i, (row, &label)) in logits.outer_iter().zip(labels).enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                index: i,
                label,
                num_classes: classes,
            });
        }
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label];
        for (c, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = (row[c] - lse).exp();
        }
        grad[[i, label]] -= 1.0;
    }
    Ok((loss, grad))
}

/// Class alignment: cross-entropy of `softmax(tau · out_i · class_text)`
/// against the sample label, summed over the batch.
pub fn class_alignment(
    aug_out: ArrayView2<'_, f64>,
    labels: &[usize],
    class_text: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<LossGrad> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if aug_out.ncols() != class_text.ncols() {
        return Err(Error::Shape(format!(
            "class text dim {} does not match output dim {}",
            class_text.ncols(),
            aug_out.ncols()
        )));
    }
    let logits = aug_out.dot(&class_text.t()) * tau;
    let (loss, d_logits) = softmax_cross_entropy(logits.view(), labels)?;
    let grad = d_logits.dot(&class_text) * tau;
    Ok(LossGrad { loss, grad })
}
