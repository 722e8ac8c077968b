use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::config::{TrainConfig, Weighting};
use crate::embstore::{DomainDataset, EmbeddingMatrix, PromptBank};
use crate::error::{Error, Result};
use crate::nn::{Augmenter, LinearClassifier};
use crate::ot::{text_weight_distance, OtParams};
use crate::synth::argmax;

/// Trained augmenters, head and aggregation weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LandaModel {
    domain_names: Vec<String>,
    augmenters: Vec<Augmenter>,
    classifier: LinearClassifier,
    weights: Vec<f64>,
    config: TrainConfig,
}

impl LandaModel {
    pub fn new(
        domain_names: Vec<String>,
        augmenters: Vec<Augmenter>,
        classifier: LinearClassifier,
        weights: Vec<f64>,
        config: TrainConfig,
    ) -> Result<Self> {
        let n = domain_names.len();
        if n == 0 {
            return Err(Error::Config(
                "a model needs at least one source domain".into(),
            ));
        }
        if augmenters.len() != n || weights.len() != n {
            return Err(Error::CountMismatch {
                what: "augmenters and weights".into(),
                expected: n,
                found: augmenters.len().min(weights.len()),
            });
        }
        for (i, name) in domain_names.iter().enumerate() {
            if domain_names[..i].contains(name) {
                return Err(Error::Config(format!("duplicate domain {name:?}")));
            }
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "weights must be non-negative and sum to 1, got {weights:?}"
            )));
        }
        let m = classifier.input_dim();
        if augmenters.iter().any(|a| a.input_dim() != m) {
            return Err(Error::Shape(format!(
                "augmenter dims do not match classifier input dim {m}"
            )));
        }
        Ok(LandaModel {
            domain_names,
            augmenters,
            classifier,
            weights,
            config,
        })
    }

    pub fn domain_names(&self) -> &[String] {
        &self.domain_names
    }

    pub fn augmenters(&self) -> &[Augmenter] {
        &self.augmenters
    }

    pub fn classifier(&self) -> &LinearClassifier {
        &self.classifier
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.classifier.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// Position of `name` among the model's domains.
    pub fn domain_index(&self, name: &str) -> Result<usize> {
        self.domain_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    }

    /// `sum_k w_k normalize(aug_k(x))` per row, accumulated in sorted
    /// domain-name order so the listing order of domains cannot change it.
    pub fn aggregate(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "input dim {} does not match model dim {}",
                x.ncols(),
                self.dim()
            )));
        }
        let mut order: Vec<usize> = (0..self.domain_names.len()).collect();
        order.sort_by(|&a, &b| self.domain_names[a].cmp(&self.domain_names[b]));
        let mut z = Array2::zeros(x.dim());
        for k in order {
            let out = self.augmenters[k].forward(x, true)?.into_output();
            z.scaled_add(self.weights[k], &out);
        }
        Ok(z)
    }
}

/// OT distance between each source's composed prompts and the target's,
/// converted to weights.
///
/// `AsWritten` gives `d_k / sum_j d_j`, `Inverse` gives
/// `(1/d_k) / sum_j (1/d_j)`; in inverse mode sources at distance 0 share
/// all the weight. All-zero distances give uniform weights.
pub fn aggregation_weights(
    bank: &PromptBank,
    source_names: &[String],
    mode: Weighting,
    params: &OtParams,
) -> Result<Vec<f64>> {
    let distances = source_names
        .iter()
        .map(|n| text_weight_distance(bank, n, params))
        .collect::<Result<Vec<_>>>()?;
    weights_from_distances(&distances, mode)
}

/// The normalization step of [`aggregation_weights`].
pub fn weights_from_distances(distances: &[f64], mode: Weighting) -> Result<Vec<f64>> {
    let n = distances.len();
    if n == 0 {
        return Err(Error::Config(
            "at least one source domain is required".into(),
        ));
    }
    if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "distances must be finite and non-negative, got {distances:?}"
        )));
    }
    let uniform = vec![1.0 / n as f64; n];
    let raw: Vec<f64> = match mode {
        Weighting::AsWritten => {
            if distances.iter().all(|&d| d == 0.0) {
                return Ok(uniform);
            }
            distances.to_vec()
        }
        Weighting::Inverse => {
            if distances.contains(&0.0) {
                distances
                    .iter()
                    .map(|&d| if d == 0.0 { 1.0 } else { 0.0 })
                    .collect()
            } else {
                distances.iter().map(|d| 1.0 / d).collect()
            }
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|r| r / total).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub scores: Array1<f64>,
}

/// Classifies one embedding through the weighted augmenter ensemble.
pub fn predict(model: &LandaModel, x: ArrayView1<'_, f64>) -> Result<Prediction> {
    let row = x.insert_axis(Axis(0));
    let logits = model.classifier.forward(model.aggregate(row)?.view())?;
    let scores = logits.row(0).to_owned();
    Ok(Prediction {
        class: argmax(scores.view()),
        scores,
    })
}

/// Row-wise [`predict`].
pub fn predict_batch(model: &LandaModel, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let logits = model.classifier.forward(model.aggregate(x)?.view())?;
    Ok(logits.axis_iter(Axis(0)).map(argmax).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub samples: usize,
}

impl EvalReport {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Self {
        let mut confusion = vec![vec![0; num_classes]; num_classes];
        let mut hits = 0;
        for (&p, &l) in predictions.iter().zip(labels) {
            confusion[l][p] += 1;
            hits += usize::from(p == l);
        }
        EvalReport {
            accuracy: hits as f64 / labels.len().max(1) as f64,
            confusion,
            samples: labels.len(),
        }
    }
}

/// Accuracy and confusion counts on `dataset`.
///
/// With aggregation every sample goes through [`predict`]. Without it
/// (in-domain evaluation) samples go through their own domain's augmenter
/// only, which must exist in the model.
pub fn evaluate(
    dataset: &DomainDataset,
    model: &LandaModel,
    use_aggregation: bool,
) -> Result<EvalReport> {
    if dataset.num_classes() != model.num_classes() {
        return Err(Error::CountMismatch {
            what: "classes".into(),
            expected: model.num_classes(),
            found: dataset.num_classes(),
        });
    }
    let x = dataset.embeddings.to_f64();
    let predictions = if use_aggregation {
        predict_batch(model, x.view())?
    } else {
        let k = model.domain_index(&dataset.domain_name)?;
        let out = model.augmenters[k].forward(x.view(), true)?.into_output();
        let logits = model.classifier.forward(out.view())?;
        logits.axis_iter(Axis(0)).map(argmax).collect()
    };
    Ok(EvalReport::from_predictions(
        &predictions,
        &dataset.labels,
        model.num_classes(),
    ))
}

/// Accuracy of a bare classifier on raw embeddings.
pub fn evaluate_classifier(dataset: &DomainDataset, clf: &LinearClassifier) -> Result<EvalReport> {
    let logits = clf.forward(dataset.embeddings.to_f64().view())?;
    let predictions: Vec<usize> = logits.axis_iter(Axis(0)).map(argmax).collect();
    Ok(EvalReport::from_predictions(
        &predictions,
        &dataset.labels,
        clf.num_classes(),
    ))
}

/// Half the mean in-domain accuracy plus half the out-of-domain accuracy.
pub fn ext_metric(in_domain: &[f64], out_of_domain: f64) -> f64 {
    let mean = in_domain.iter().sum::<f64>() / in_domain.len().max(1) as f64;
    0.5 * mean + 0.5 * out_of_domain
}

/// Euclidean nearest row of `data` to `query` (optionally augmented and
/// renormalized first); ties go to the lowest index.
pub fn nearest_neighbor(
    query: ArrayView1<'_, f64>,
    data: &EmbeddingMatrix,
    augmenter: Option<&Augmenter>,
) -> Result<(usize, f64)> {
    if query.len() != data.dim() {
        return Err(Error::Shape(format!(
            "query dim {} does not match data dim {}",
            query.len(),
            data.dim()
        )));
    }
    let q = match augmenter {
        Some(aug) => aug
            .forward(query.insert_axis(Axis(0)), true)?
            .into_output()
            .row(0)
            .to_owned(),
        None => query.to_owned(),
    };
    let mut best = (0, f64::INFINITY);
    for (i, row) in data.view().outer_iter().enumerate() {
        let d2: f64 = row
            .iter()
            .zip(q.iter())
            .map(|(&a, &b)| {
                let d = f64::from(a) - b;
                d * d
            })
            .sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    Ok((best.0, best.1.sqrt()))
}
