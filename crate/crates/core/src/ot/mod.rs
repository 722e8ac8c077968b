//! Entropic optimal transport with a label- and text-aware cost.
//!
//! The cost between two labeled embeddings mixes the squared image distance
//! with the squared distance between their class text embeddings, so moving
//! mass between semantically close classes is cheaper than between distant
//! ones. Plans are solved with log-domain Sinkhorn: costs are >= 1, which
//! makes the plain kernel `exp(-zeta C)` underflow quickly.

mod cost;
mod sinkhorn;

pub use cost::{pairwise_cost, CostMatrix};
pub use sinkhorn::{sinkhorn, uniform_marginal, SinkhornParams, TransportPlan};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::embstore::PromptBank;
use crate::error::{Error, Result};

/// Cost and solver parameters used by every OT call in the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtParams {
    pub lambda: f64,
    pub sigma: f64,
    pub sinkhorn: SinkhornParams,
}

impl Default for OtParams {
    fn default() -> Self {
        OtParams {
            lambda: 1.0,
            sigma: 1.0,
            sinkhorn: SinkhornParams::default(),
        }
    }
}

/// Embeddings with one class label per row.
#[derive(Clone, Copy, Debug)]
pub struct LabeledBatch<'a> {
    pub embeddings: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

impl<'a> LabeledBatch<'a> {
    pub fn new(embeddings: ArrayView2<'a, f64>, labels: &'a [usize]) -> Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                what: "batch labels".into(),
                expected: embeddings.nrows(),
                found: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(LabeledBatch { embeddings, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Row a of the result is the class text embedding of `labels[a]`.
pub fn class_rows(class_text: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Array2<f64>> {
    let classes = class_text.nrows();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            num_classes: classes,
        });
    }
    Ok(class_text.select(ndarray::Axis(0), labels))
}

/// Entropic OT between two labeled batches.
#[derive(Clone, Debug)]
pub struct PairDistance {
    /// `<C, J> - H(J) / zeta` at the solved plan.
    pub value: f64,
    pub plan: TransportPlan,
    pub cost: CostMatrix,
}

/// Same as [`wasserstein_pair`] with the class text matrix already in f64.
pub fn wasserstein_pair_with(
    di: LabeledBatch<'_>,
    dj: LabeledBatch<'_>,
    class_text: ArrayView2<'_, f64>,
    params: &OtParams,
) -> Result<PairDistance> {
    if di.is_empty() || dj.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let ti = class_rows(class_text, di.labels)?;
    let tj = class_rows(class_text, dj.labels)?;
    let cost = pairwise_cost(
        di.embeddings,
        dj.embeddings,
        ti.view(),
        tj.view(),
        params.lambda,
        params.sigma,
    )?;
    let plan = sinkhorn(
        cost.view(),
        &uniform_marginal(di.len()),
        &uniform_marginal(dj.len()),
        &params.sinkhorn,
    )?;
    Ok(PairDistance {
        value: plan.value,
        plan,
        cost,
    })
}

/// Entropic OT between two labeled batches under uniform sample weights,
/// with class texts taken from `bank`.
pub fn wasserstein_pair(
    di: LabeledBatch<'_>,
    dj: LabeledBatch<'_>,
    bank: &PromptBank,
    params: &OtParams,
) -> Result<PairDistance> {
    wasserstein_pair_with(di, dj, bank.class_text().to_f64().view(), params)
}

/// OT distance between the source's composed prompts and the target's
/// composed prompts, each taken as a uniform distribution over classes.
/// Class i of the source and class j of the target are paired with the
/// bare class texts i and j in the cost.
pub fn text_weight_distance(
    bank: &PromptBank,
    source_name: &str,
    params: &OtParams,
) -> Result<f64> {
    let source = bank.composed(source_name)?.to_f64();
    let target = bank.target_composed().to_f64();
    let class_text = bank.class_text().to_f64();
    let cost = pairwise_cost(
        source.view(),
        target.view(),
        class_text.view(),
        class_text.view(),
        params.lambda,
        params.sigma,
    )?;
    let n = bank.num_classes();
    let plan = sinkhorn(
        cost.view(),
        &uniform_marginal(n),
        &uniform_marginal(n),
        &params.sinkhorn,
    )?;
    Ok(plan.value)
}
