//! Stage-one augmenter losses and the stage-two classifier loss, each with
//! analytic gradients. All losses are sums over samples, not means.

mod alignment;
mod consistency;

pub use alignment::{class_alignment, domain_alignment, softmax_cross_entropy};
pub use consistency::distribution_consistency;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Augmenter, AugmenterGrads, ClassifierGrads, LinearClassifier};
use crate::ot::{LabeledBatch, OtParams, SinkhornParams};

/// A scalar loss and its gradient with respect to one input matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Domain alignment weight.
    pub alpha: f64,
    /// Class alignment weight.
    pub beta: f64,
    /// Distribution consistency weight.
    pub gamma: f64,
    /// Weight of the class-text term in the transport cost.
    pub lambda: f64,
    /// Width of the transport cost.
    pub sigma: f64,
    /// Inverse entropic regularization.
    pub zeta: f64,
    /// Logit scale of the class alignment similarity.
    pub tau: f64,
    /// Share of original (vs augmented) embeddings in the classifier loss.
    pub epsilon: f64,
    pub class_alignment: bool,
    pub distribution_consistency: bool,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.05,
            lambda: 1.0,
            sigma: 1.0,
            zeta: 10.0,
            tau: 100.0,
            epsilon: 0.1,
            class_alignment: true,
            distribution_consistency: true,
            sinkhorn_max_iter: 1000,
            sinkhorn_tol: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        let positive = [
            ("sigma", self.sigma),
            ("zeta", self.zeta),
            ("tau", self.tau),
            ("sinkhorn_tol", self.sinkhorn_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.sinkhorn_max_iter == 0 {
            return Err(Error::Config("sinkhorn_max_iter must be >= 1".into()));
        }
        Ok(())
    }

    pub fn ot_params(&self) -> OtParams {
        OtParams {
            lambda: self.lambda,
            sigma: self.sigma,
            sinkhorn: SinkhornParams {
                zeta: self.zeta,
                max_iter: self.sinkhorn_max_iter,
                tol: self.sinkhorn_tol,
            },
        }
    }

    fn uses_class_alignment(&self) -> bool {
        self.class_alignment && self.beta != 0.0
    }

    fn uses_distribution_consistency(&self) -> bool {
        self.distribution_consistency && self.gamma != 0.0
    }
}

/// Everything the stage-one objective of augmenter k reads.
#[derive(Clone, Copy, Debug)]
pub struct StageOneBatch<'a> {
    /// Original image embeddings of domain k.
    pub inputs: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    /// Per-row target-minus-source composed prompt embedding.
    pub text_dir: ArrayView2<'a, f64>,
    pub class_text: ArrayView2<'a, f64>,
    /// Current extended-domain batches of every domain; entry k is replaced
    /// by the fresh forward pass of the augmenter being trained.
    pub extended: &'a [LabeledBatch<'a>],
}

#[derive(Clone, Debug)]
pub struct CombinedLoss {
    pub total: f64,
    pub domain_alignment: f64,
    pub class_alignment: f64,
    pub distribution_consistency: f64,
    pub grads: AugmenterGrads,
    /// Normalized augmenter outputs for the batch.
    pub outputs: Array2<f64>,
}

/// `alpha L_DA + beta L_CA + gamma L_DC` for augmenter k, with parameter
/// gradients chained through the augmenter.
///
/// Terms that are disabled or carry a zero weight are skipped and reported
/// as 0.
pub fn combined(
    k: usize,
    augmenter: &Augmenter,
    batch: &StageOneBatch<'_>,
    cfg: &LossConfig,
) -> Result<CombinedLoss> {
    let cache = augmenter.forward(batch.inputs, true)?;
    let out = cache.output().clone();
    let mut d_out = Array2::zeros(out.dim());

    let mut l_da = 0.0;
    if cfg.alpha != 0.0 {
        let r = domain_alignment(out.view(), batch.inputs, batch.text_dir)?;
        l_da = r.loss;
        d_out.scaled_add(cfg.alpha, &r.grad);
    }
    let mut l_ca = 0.0;
    if cfg.uses_class_alignment() {
        let r = class_alignment(out.view(), batch.labels, batch.class_text, cfg.tau)?;
        l_ca = r.loss;
        d_out.scaled_add(cfg.beta, &r.grad);
    }
    let mut l_dc = 0.0;
    if cfg.uses_distribution_consistency() && batch.extended.len() > 1 {
        if k >= batch.extended.len() {
            return Err(Error::InvalidParameter(format!(
                "domain index {k} out of range for {} extended batches",
                batch.extended.len()
            )));
        }
        let fresh = LabeledBatch::new(out.view(), batch.labels)?;
        let extended: Vec<LabeledBatch<'_>> = batch
            .extended
            .iter()
            .enumerate()
            .map(|(j, b)| {
                if j == k {
                    fresh
                } else {
                    LabeledBatch {
                        embeddings: b.embeddings.view(),
                        labels: b.labels,
                    }
                }
            })
            .collect();
        let r = distribution_consistency(k, &extended, batch.class_text, &cfg.ot_params())?;
        l_dc = r.loss;
        d_out.scaled_add(cfg.gamma, &r.grad);
    }
    let total = cfg.alpha * l_da
        + if cfg.uses_class_alignment() {
            cfg.beta * l_ca
        } else {
            0.0
        }
        + if cfg.uses_distribution_consistency() {
            cfg.gamma * l_dc
        } else {
            0.0
        };
    let grads = augmenter.backward(&cache, d_out.view())?;
    Ok(CombinedLoss {
        total,
        domain_alignment: l_da,
        class_alignment: l_ca,
        distribution_consistency: l_dc,
        grads,
        outputs: out,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierLoss {
    pub loss: f64,
    pub grads: ClassifierGrads,
}

/// `epsilon CE(clf(x_orig), y) + (1 - epsilon) CE(clf(x_aug), y)`, summed.
pub fn classifier_loss(
    clf: &LinearClassifier,
    x_orig: ArrayView2<'_, f64>,
    x_aug: ArrayView2<'_, f64>,
    labels: &[usize],
    epsilon: f64,
) -> Result<ClassifierLoss> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    if x_orig.dim() != x_aug.dim() {
        return Err(Error::Shape(format!(
            "original {:?} and augmented {:?} embeddings must align",
            x_orig.dim(),
            x_aug.dim()
        )));
    }
    let mut grads = ClassifierGrads {
        w: Array2::zeros(clf.w().dim()),
        b: ndarray::Array1::zeros(clf.num_classes()),
    };
    let mut loss = 0.0;
    for (weight, x) in [(epsilon, x_orig), (1.0 - epsilon, x_aug)] {
        if weight == 0.0 {
            continue;
        }
        let logits = clf.forward(x)?;
        let (l, d_logits) = softmax_cross_entropy(logits.view(), labels)?;
        let g = clf.backward(x, d_logits.view())?;
        loss += weight * l;
        grads.w.scaled_add(weight, &g.w);
        grads.b.scaled_add(weight, &g.b);
    }
    Ok(ClassifierLoss { loss, grads })
}
