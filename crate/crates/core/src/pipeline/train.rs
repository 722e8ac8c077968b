use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Head, TrainConfig};
use super::model::{aggregation_weights, LandaModel};
use crate::embstore::{DomainDataset, PromptBank};
use crate::error::{Error, Result};
use crate::losses::{classifier_loss, combined, StageOneBatch};
use crate::nn::{init_augmenter, init_classifier, AdamState, Augmenter, LinearClassifier};
use crate::ot::LabeledBatch;

// Shuffling streams sit far away from the initialization streams.
const SHUFFLE_STREAM_BASE: u64 = 1 << 32;
const CLASSIFIER_SHUFFLE_STREAM: u64 = SHUFFLE_STREAM_BASE - 1;

/// Per-domain loss sums over one epoch of stage one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub total: f64,
    pub domain_alignment: f64,
    pub class_alignment: f64,
    pub distribution_consistency: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageOneHistory {
    /// `epochs[e][k]`: losses of domain k in epoch e.
    pub epochs: Vec<Vec<EpochLosses>>,
}

/// Checks that the datasets form a consistent multi-source problem, and
/// that every one of them has composed prompts in `bank` when given.
pub(crate) fn check_sources(datasets: &[DomainDataset], bank: Option<&PromptBank>) -> Result<()> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::Config("at least one source domain is required".into()))?;
    for (i, d) in datasets.iter().enumerate() {
        if d.class_names != first.class_names {
            return Err(Error::Config(format!(
                "domain {:?} has a different class list than {:?}",
                d.domain_name, first.domain_name
            )));
        }
        if d.dim() != first.dim() {
            return Err(Error::Shape(format!(
                "domain {:?} has dim {}, expected {}",
                d.domain_name,
                d.dim(),
                first.dim()
            )));
        }
        if datasets[..i].iter().any(|o| o.domain_name == d.domain_name) {
            return Err(Error::Config(format!(
                "duplicate domain {:?}",
                d.domain_name
            )));
        }
        if let Some(bank) = bank {
            bank.composed(&d.domain_name)?;
        }
    }
    if let Some(bank) = bank {
        if bank.dim() != first.dim() || bank.num_classes() != first.num_classes() {
            return Err(Error::Shape(format!(
                "prompt bank is {}×{}, datasets have {} classes of dim {}",
                bank.num_classes(),
                bank.dim(),
                first.num_classes(),
                first.dim()
            )));
        }
    }
    Ok(())
}

/// Prepared inputs of one domain for stage one.
pub(crate) struct StageOneDomain {
    pub name: String,
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    /// Target-minus-source composed prompt per class; only read when the
    /// domain alignment weight is non-zero.
    pub text_dir: Array2<f64>,
}

/// Round-robin stage-one training of `augs[k]` on `domains[k]`.
pub(crate) fn run_stage_one(
    domains: &[StageOneDomain],
    class_text: &Array2<f64>,
    augs: &mut [Augmenter],
    cfg: &TrainConfig,
) -> Result<StageOneHistory> {
    let n_domains = domains.len();
    let bs = cfg.batch_size;
    let max_n = domains.iter().map(|d| d.labels.len()).max().unwrap_or(0);
    let n_batches = max_n.div_ceil(bs);
    let mut adam: Vec<AdamState> = augs.iter().map(AdamState::new).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..n_domains as u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(SHUFFLE_STREAM_BASE + k);
            rng
        })
        .collect();
    let mut orders: Vec<Vec<usize>> = domains
        .iter()
        .map(|d| (0..d.labels.len()).collect())
        .collect();
    let mut history = StageOneHistory::default();

    for epoch in 0..cfg.augmenter_epochs {
        let lr = cfg.augmenter_lr.lr(epoch);
        for (order, rng) in orders.iter_mut().zip(&mut rngs) {
            order.shuffle(rng);
        }
        let mut sums = vec![EpochLosses::default(); n_domains];
        for b in 0..n_batches {
            let start = b * bs;
            let take = bs.min(max_n - start);
            let mut xs = Vec::with_capacity(n_domains);
            let mut labels = Vec::with_capacity(n_domains);
            let mut dirs = Vec::with_capacity(n_domains);
            for (d, order) in domains.iter().zip(&orders) {
                let n = order.len();
                let idx: Vec<usize> = (0..take.min(n)).map(|i| order[(start + i) % n]).collect();
                let lab: Vec<usize> = idx.iter().map(|&i| d.labels[i]).collect();
                dirs.push(d.text_dir.select(Axis(0), &lab));
                xs.push(d.x.select(Axis(0), &idx));
                labels.push(lab);
            }
            let mut outs = Vec::with_capacity(n_domains);
            for (aug, x) in augs.iter().zip(&xs) {
                outs.push(aug.forward(x.view(), true)?.into_output());
            }
            for k in 0..n_domains {
                let extended = outs
                    .iter()
                    .zip(&labels)
                    .map(|(o, l)| LabeledBatch::new(o.view(), l))
                    .collect::<Result<Vec<_>>>()?;
                let batch = StageOneBatch {
                    inputs: xs[k].view(),
                    labels: &labels[k],
                    text_dir: dirs[k].view(),
                    class_text: class_text.view(),
                    extended: &extended,
                };
                let res = combined(k, &augs[k], &batch, &cfg.loss)?;
                if !res.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b,
                        domain: domains[k].name.clone(),
                    });
                }
                adam[k].step(&mut augs[k], &res.grads, lr)?;
                outs[k] = augs[k].forward(xs[k].view(), true)?.into_output();
                let s = &mut sums[k];
                s.total += res.total;
                s.domain_alignment += res.domain_alignment;
                s.class_alignment += res.class_alignment;
                s.distribution_consistency += res.distribution_consistency;
            }
        }
        history.epochs.push(sums);
    }
    Ok(history)
}

/// Stage one: trains one augmenter per source dataset, in dataset order.
///
/// Every minibatch is forwarded through all augmenters; augmenters are then
/// updated one at a time, each seeing the others' latest outputs in its
/// distribution consistency term. Smaller domains wrap around within an
/// epoch so every batch has all domains. Deterministic given `cfg.seed`.
pub fn train_augmenters(
    datasets: &[DomainDataset],
    bank: &PromptBank,
    cfg: &TrainConfig,
) -> Result<(Vec<Augmenter>, StageOneHistory)> {
    cfg.validate()?;
    check_sources(datasets, Some(bank))?;
    let m = bank.dim();
    let h = cfg.hidden_for(m);
    let target = bank.target_composed().to_f64();
    let domains = datasets
        .iter()
        .map(|d| {
            Ok(StageOneDomain {
                name: d.domain_name.clone(),
                x: d.embeddings.to_f64(),
                labels: d.labels.clone(),
                text_dir: &target - &bank.composed(&d.domain_name)?.to_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut augs = (0..datasets.len() as u64)
        .map(|k| init_augmenter(cfg.seed, k, m, h))
        .collect::<Result<Vec<_>>>()?;
    let history = run_stage_one(&domains, &bank.class_text().to_f64(), &mut augs, cfg)?;
    Ok((augs, history))
}

/// Minimizes the mixed original/augmented cross-entropy over all domains by
/// Adam on shuffled minibatches of (domain, sample) pairs.
pub(crate) fn fit_classifier(
    x_orig: &[Array2<f64>],
    x_aug: &[Array2<f64>],
    labels: &[&[usize]],
    num_classes: usize,
    epsilon: f64,
    cfg: &TrainConfig,
) -> Result<(LinearClassifier, Vec<f64>)> {
    let m = x_orig
        .first()
        .ok_or_else(|| Error::Config("at least one domain is required".into()))?
        .ncols();
    let mut clf = init_classifier(cfg.seed, m, num_classes)?;
    let mut adam = AdamState::new(&clf);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(CLASSIFIER_SHUFFLE_STREAM);
    let mut pairs: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .flat_map(|(k, l)| (0..l.len()).map(move |i| (k, i)))
        .collect();
    let mut epoch_losses = Vec::with_capacity(cfg.classifier_epochs);
    for epoch in 0..cfg.classifier_epochs {
        let lr = cfg.classifier_lr.lr(epoch);
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in pairs.chunks(cfg.batch_size).enumerate() {
            let mut xo = Array2::zeros((chunk.len(), m));
            let mut xa = Array2::zeros((chunk.len(), m));
            let mut lab = Vec::with_capacity(chunk.len());
            for (r, &(k, i)) in chunk.iter().enumerate() {
                xo.row_mut(r).assign(&x_orig[k].row(i));
                xa.row_mut(r).assign(&x_aug[k].row(i));
                lab.push(labels[k][i]);
            }
            let res = classifier_loss(&clf, xo.view(), xa.view(), &lab, epsilon)?;
            if !res.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    domain: "all (classifier)".into(),
                });
            }
            adam.step(&mut clf, &res.grads, lr)?;
            total += res.loss;
        }
        epoch_losses.push(total);
    }
    Ok((clf, epoch_losses))
}

/// Stage two: trains the shared linear head on original embeddings and
/// their (frozen) augmentations. `augmenters[k]` belongs to `datasets[k]`.
pub fn train_classifier(
    datasets: &[DomainDataset],
    augmenters: &[Augmenter],
    cfg: &TrainConfig,
) -> Result<(LinearClassifier, Vec<f64>)> {
    cfg.validate()?;
    check_sources(datasets, None)?;
    if augmenters.len() != datasets.len() {
        return Err(Error::CountMismatch {
            what: "augmenters".into(),
            expected: datasets.len(),
            found: augmenters.len(),
        });
    }
    let x_orig: Vec<Array2<f64>> = datasets.iter().map(|d| d.embeddings.to_f64()).collect();
    let x_aug = augmenters
        .iter()
        .zip(&x_orig)
        .map(|(a, x)| Ok(a.forward(x.view(), true)?.into_output()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<&[usize]> = datasets.iter().map(|d| d.labels.as_slice()).collect();
    fit_classifier(
        &x_orig,
        &x_aug,
        &labels,
        datasets[0].num_classes(),
        cfg.loss.epsilon,
        cfg,
    )
}

/// The source-only baseline: a linear probe on the original embeddings
/// with the same optimizer, schedule and seed as stage two.
pub fn train_source_only_probe(
    datasets: &[DomainDataset],
    cfg: &TrainConfig,
) -> Result<(LinearClassifier, Vec<f64>)> {
    cfg.validate()?;
    check_sources(datasets, None)?;
    let x: Vec<Array2<f64>> = datasets.iter().map(|d| d.embeddings.to_f64()).collect();
    let labels: Vec<&[usize]> = datasets.iter().map(|d| d.labels.as_slice()).collect();
    fit_classifier(&x, &x, &labels, datasets[0].num_classes(), 1.0, cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: LandaModel,
    pub stage_one: StageOneHistory,
    /// Per-epoch stage-two loss sums; empty for the zero-shot head.
    pub stage_two: Vec<f64>,
}

/// Both stages plus aggregation weights.
pub fn train(
    datasets: &[DomainDataset],
    bank: &PromptBank,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let (augmenters, stage_one) = train_augmenters(datasets, bank, cfg)?;
    let names: Vec<String> = datasets.iter().map(|d| d.domain_name.clone()).collect();
    let weights = aggregation_weights(bank, &names, cfg.weighting, &cfg.loss.ot_params())?;
    let (classifier, stage_two) = match cfg.head {
        Head::LinearProbe => train_classifier(datasets, &augmenters, cfg)?,
        Head::ZeroShot => (
            LinearClassifier::from_class_text(&bank.class_text().to_f64(), cfg.loss.tau)?,
            Vec::new(),
        ),
    };
    let model = LandaModel::new(names, augmenters, classifier, weights, cfg.clone())?;
    Ok(TrainOutcome {
        model,
        stage_one,
        stage_two,
    })
}
