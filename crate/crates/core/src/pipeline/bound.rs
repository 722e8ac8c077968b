use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::LandaModel;
use super::train::{check_sources, run_stage_one, StageOneDomain};
use crate::embstore::{DomainDataset, PromptBank};
use crate::error::{Error, Result};
use crate::nn::{init_augmenter, Augmenter};
use crate::ot::{class_rows, pairwise_cost, wasserstein_pair_with, LabeledBatch};
use crate::synth::zero_shot_predict;

// Initialization stream of the oracle augmenter.
const ORACLE_STREAM: u64 = u64::MAX - 1;

/// Every term of the target error bound, plus the measured target error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `sum_k w_k ε_k` with ε_k the zero-shot error of augmented source k.
    pub source_error: f64,
    /// Square root of the mean cost over all ordered target pairs.
    pub kernel_mean_norm: f64,
    /// `sum_{k<j} w_k w_j W(Q_k, Q_j)` over augmented source datasets.
    pub pairwise_wasserstein: f64,
    /// `exp((1 + λ) ln(1/δ) / (σ² n_k ς'))` per source.
    pub deviation_terms: Vec<f64>,
    /// `sum_{k<j} w_k w_j (dev_k + dev_j)`
    pub deviation_sum: f64,
    /// Combined source and target error of the oracle augmenter.
    pub theta: f64,
    pub rhs: f64,
    /// Zero-shot error of the aggregated augmented target embeddings.
    pub target_error: f64,
}

impl BoundReport {
    pub fn slack(&self) -> f64 {
        self.rhs - self.target_error
    }

    pub fn holds(&self) -> bool {
        self.rhs >= self.target_error
    }
}

fn zero_shot_error(x: &Array2<f64>, labels: &[usize], class_text: &Array2<f64>) -> Result<f64> {
    let predictions = zero_shot_predict(x, class_text, 1.0)?;
    let wrong = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p != l)
        .count();
    Ok(wrong as f64 / labels.len().max(1) as f64)
}

/// The deviation term `exp((1 + λ) ln(1/δ) / (σ² n ς'))`.
pub fn deviation_term(lambda: f64, sigma: f64, n: usize, delta: f64, varsigma: f64) -> f64 {
    ((1.0 + lambda) * (1.0 / delta).ln() / (sigma * sigma * n as f64 * varsigma)).exp()
}

/// Trains one augmenter with class alignment only on all sources and the
/// target pooled together: the stand-in for the ideal joint hypothesis.
fn train_oracle(
    datasets: &[DomainDataset],
    target: &DomainDataset,
    class_text: &Array2<f64>,
    model: &LandaModel,
) -> Result<Augmenter> {
    let mut cfg = model.config().clone();
    cfg.loss.alpha = 0.0;
    cfg.loss.beta = 1.0;
    cfg.loss.gamma = 0.0;
    cfg.loss.class_alignment = true;
    cfg.loss.distribution_consistency = false;
    let m = model.dim();
    let mut x = Array2::zeros((0, m));
    let mut labels = Vec::new();
    for d in datasets.iter().chain([target]) {
        x.append(ndarray::Axis(0), d.embeddings.to_f64().view())
            .expect("datasets share a dim");
        labels.extend_from_slice(&d.labels);
    }
    let pooled = StageOneDomain {
        name: "oracle".into(),
        text_dir: Array2::zeros((class_text.nrows(), m)),
        x,
        labels,
    };
    let h = model.augmenters()[0].hidden_dim();
    let mut aug = [init_augmenter(cfg.seed, ORACLE_STREAM, m, h)?];
    run_stage_one(&[pooled], class_text, &mut aug, &cfg)?;
    let [aug] = aug;
    Ok(aug)
}

/// Assembles the right-hand side of the multi-source target error bound
/// for `model` and measures the left-hand side on `target`.
///
/// Errors are zero-shot errors against the class texts, the pairwise terms
/// run over strict pairs k < j, and the OT and cost parameters come from
/// the model's config.
pub fn generalization_bound(
    datasets: &[DomainDataset],
    target: Option<&DomainDataset>,
    model: &LandaModel,
    bank: &PromptBank,
    delta: f64,
    varsigma: f64,
) -> Result<BoundReport> {
    let target =
        target.ok_or_else(|| Error::Config("the bound needs labeled target samples".into()))?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(varsigma > 0.0 && varsigma < 2f64.sqrt()) {
        return Err(Error::InvalidParameter(format!(
            "varsigma must lie in (0, sqrt 2), got {varsigma}"
        )));
    }
    check_sources(datasets, Some(bank))?;
    if target.class_names != datasets[0].class_names {
        return Err(Error::Config("target has a different class list".into()));
    }
    let params = model.config().loss.ot_params();
    let class_text = bank.class_text().to_f64();

    let mut weights = Vec::with_capacity(datasets.len());
    let mut augmented = Vec::with_capacity(datasets.len());
    let mut source_error = 0.0;
    for d in datasets {
        let k = model.domain_index(&d.domain_name)?;
        let w = model.weights()[k];
        let out = model.augmenters()[k]
            .forward(d.embeddings.to_f64().view(), true)?
            .into_output();
        source_error += w * zero_shot_error(&out, &d.labels, &class_text)?;
        weights.push(w);
        augmented.push(out);
    }

    let xt = target.embeddings.to_f64();
    let tt = class_rows(class_text.view(), &target.labels)?;
    let gram = pairwise_cost(
        xt.view(),
        xt.view(),
        tt.view(),
        tt.view(),
        params.lambda,
        params.sigma,
    )?;
    let kernel_mean_norm = gram.values().mean().unwrap_or(0.0).sqrt();

    let deviation_terms: Vec<f64> = datasets
        .iter()
        .map(|d| deviation_term(params.lambda, params.sigma, d.len(), delta, varsigma))
        .collect();
    let mut pairwise_wasserstein = 0.0;
    let mut deviation_sum = 0.0;
    for k in 0..datasets.len() {
        for j in k + 1..datasets.len() {
            let ww = weights[k] * weights[j];
            let pair = wasserstein_pair_with(
                LabeledBatch::new(augmented[k].view(), &datasets[k].labels)?,
                LabeledBatch::new(augmented[j].view(), &datasets[j].labels)?,
                class_text.view(),
                &params,
            )?;
            pairwise_wasserstein += ww * pair.value;
            deviation_sum += ww * (deviation_terms[k] + deviation_terms[j]);
        }
    }

    let oracle = train_oracle(datasets, target, &class_text, model)?;
    let mut theta = 0.0;
    for (d, w) in datasets.iter().zip(&weights) {
        let out = oracle
            .forward(d.embeddings.to_f64().view(), true)?
            .into_output();
        theta += w * zero_shot_error(&out, &d.labels, &class_text)?;
    }
    let oracle_target = oracle.forward(xt.view(), true)?.into_output();
    theta += zero_shot_error(&oracle_target, &target.labels, &class_text)?;

    let target_error = zero_shot_error(&model.aggregate(xt.view())?, &target.labels, &class_text)?;
    let rhs = source_error + kernel_mean_norm + theta + pairwise_wasserstein + deviation_sum;
    Ok(BoundReport {
        source_error,
        kernel_mean_norm,
        pairwise_wasserstein,
        deviation_terms,
        deviation_sum,
        theta,
        rhs,
        target_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviation_term_limits() {
        assert!((deviation_term(1.0, 1.0, 10, 1.0 - 1e-12, 1.0) - 1.0).abs() < 1e-10);
        let d = deviation_term(1.0, 1.0, 100, 0.05, 1.0);
        assert!((d - (2.0 * 20f64.ln() / 100.0).exp()).abs() < 1e-15);
    }
}
