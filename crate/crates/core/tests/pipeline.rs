mod common;

use common::*;
use landa::embstore::{DomainDataset, EmbeddingMatrix};
use landa::nn::{Augmenter, LinearClassifier, MultiStepLr};
use landa::ot::{text_weight_distance, OtParams};
use landa::pipeline::{
    aggregation_weights, deviation_term, evaluate, generalization_bound, load_model,
    nearest_neighbor, predict, predict_batch, save_model, train, train_augmenters,
    train_classifier, Ablation, LandaModel, TrainConfig, Weighting,
};
use landa::synth::{generate_world, WorldSpec};
use landa::Error;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

fn spec(seed: u64) -> WorldSpec {
    WorldSpec {
        m: 16,
        num_classes: 4,
        num_source_domains: 3,
        samples_per_class: 10,
        shift: 1.5,
        noise: 0.1,
        seed,
        ..WorldSpec::default()
    }
}

fn quick(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        hidden_dim: Some(16),
        batch_size: 8,
        augmenter_epochs: 2,
        classifier_epochs: 2,
        ..TrainConfig::default()
    };
    cfg.loss.tau = 10.0;
    cfg
}

fn random_model(seed: u64, m: usize, h: usize, domains: usize, classes: usize) -> LandaModel {
    let mut r = rng(seed);
    let raw: Vec<f64> = (0..domains).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    LandaModel::new(
        (0..domains).map(|k| format!("d{k}")).collect(),
        (0..domains)
            .map(|_| random_augmenter(&mut r, m, h))
            .collect(),
        LinearClassifier::from_parts(
            random_matrix(&mut r, classes, m, 1.0),
            Array1::from_shape_fn(classes, |_| r.random_range(-0.5..0.5)),
        )
        .unwrap(),
        raw.iter().map(|v| v / total).collect(),
        TrainConfig::default(),
    )
    .unwrap()
}

#[test]
fn training_is_bit_reproducible() {
    let w = generate_world(&spec(1)).unwrap();
    let a = train(&w.sources, &w.bank, &quick(1)).unwrap();
    let b = train(&w.sources, &w.bank, &quick(1)).unwrap();
    assert_eq!(a, b);
    let tmp = tempfile::tempdir().unwrap();
    save_model(tmp.path().join("a"), &a.model).unwrap();
    save_model(tmp.path().join("b"), &b.model).unwrap();
    for entry in std::fs::read_dir(tmp.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(&name)).unwrap(),
            std::fs::read(tmp.path().join("b").join(&name)).unwrap(),
            "{name:?}"
        );
    }
    let c = train(&w.sources, &w.bank, &quick(2)).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn checkpoints_load_back_exactly() {
    let w = generate_world(&spec(2)).unwrap();
    let model = train(&w.sources, &w.bank, &quick(2)).unwrap().model;
    let tmp = tempfile::tempdir().unwrap();
    save_model(tmp.path(), &model).unwrap();
    assert_eq!(load_model(tmp.path()).unwrap(), model);
}

#[test]
fn zero_epochs_are_rejected() {
    let w = generate_world(&spec(3)).unwrap();
    let cfg = TrainConfig {
        augmenter_epochs: 0,
        ..quick(3)
    };
    assert!(matches!(
        train(&w.sources, &w.bank, &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn single_source_gets_all_the_weight() {
    let mut s = spec(4);
    s.num_source_domains = 1;
    let w = generate_world(&s).unwrap();
    let names = vec!["src0".to_string()];
    for mode in [Weighting::AsWritten, Weighting::Inverse] {
        let weights = aggregation_weights(&w.bank, &names, mode, &OtParams::default()).unwrap();
        assert_eq!(weights, vec![1.0]);
    }
}

#[test]
fn identical_prompts_split_the_weight_evenly() {
    let mut r = rng(5);
    let class_text = random_unit_rows(&mut r, 3, 8);
    let shared = random_unit_rows(&mut r, 3, 8);
    let b = bank(
        &class_text,
        vec![("a", shared.clone()), ("b", shared)],
        ("t", random_unit_rows(&mut r, 3, 8)),
    );
    let names = vec!["a".to_string(), "b".to_string()];
    for mode in [Weighting::AsWritten, Weighting::Inverse] {
        let w = aggregation_weights(&b, &names, mode, &OtParams::default()).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }
}

#[test]
fn three_source_weights_match_hand_normalization() {
    let mut r = rng(6);
    let dim = 8;
    let class_text = random_unit_rows(&mut r, 3, dim);
    let target = random_unit_rows(&mut r, 3, dim);
    // Sources at increasing distance: target rows blended with noise.
    let sources: Vec<(&str, Array2<f64>)> = [("near", 0.1), ("mid", 0.5), ("far", 2.0)]
        .into_iter()
        .map(|(n, s)| (n, &target + &(random_matrix(&mut r, 3, dim, 1.0) * s)))
        .collect();
    let b = bank(&class_text, sources, ("t", target));
    let names: Vec<String> = ["near", "mid", "far"].map(String::from).to_vec();
    let params = OtParams::default();
    let d: Vec<f64> = names
        .iter()
        .map(|n| text_weight_distance(&b, n, &params).unwrap())
        .collect();
    assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    let total: f64 = d.iter().sum();
    let written = aggregation_weights(&b, &names, Weighting::AsWritten, &params).unwrap();
    let inv_total: f64 = d.iter().map(|v| 1.0 / v).sum();
    let inverse = aggregation_weights(&b, &names, Weighting::Inverse, &params).unwrap();
    for k in 0..3 {
        assert!((written[k] - d[k] / total).abs() < 1e-15);
        assert!((inverse[k] - (1.0 / d[k]) / inv_total).abs() < 1e-15);
    }
    assert!(written[2] > written[0]);
    assert!(inverse[0] > inverse[2]);
}

/// Prediction recomputed with plain loops from the raw parameters.
fn scalar_scores(model: &LandaModel, x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let mut z = vec![0.0; m];
    let mut order: Vec<usize> = (0..model.domain_names().len()).collect();
    order.sort_by_key(|&k| model.domain_names()[k].clone());
    for k in order {
        let a: &Augmenter = &model.augmenters()[k];
        let h = a.hidden_dim();
        let mut hidden = vec![0.0; h];
        for j in 0..h {
            let mut s = a.b1()[j];
            for i in 0..m {
                s += a.w1()[[j, i]] * x[i];
            }
            hidden[j] = s.max(0.0);
        }
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut s = a.b2()[i];
            for j in 0..h {
                s += a.w2()[[i, j]] * hidden[j];
            }
            out[i] = s;
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..m {
            z[i] += model.weights()[k] * out[i] / norm;
        }
    }
    let clf = model.classifier();
    (0..clf.num_classes())
        .map(|c| {
            let mut s = clf.b()[c];
            for i in 0..m {
                s += clf.w()[[c, i]] * z[i];
            }
            s
        })
        .collect()
}

#[test]
fn prediction_matches_a_scalar_recomputation() {
    let model = random_model(7, 8, 6, 3, 5);
    let mut r = rng(70);
    let probes = random_unit_rows(&mut r, 20, 8);
    let batch = predict_batch(&model, probes.view()).unwrap();
    for (i, x) in probes.outer_iter().enumerate() {
        let p = predict(&model, x).unwrap();
        let expected = scalar_scores(&model, x.as_slice().unwrap());
        assert!(rel_err(p.scores.as_slice().unwrap(), &expected) < 1e-12);
        let best =
            (0..expected.len()).fold(0, |b, c| if expected[c] > expected[b] { c } else { b });
        assert_eq!(p.class, best);
        assert_eq!(batch[i], best);
    }
}

#[test]
fn single_domain_prediction_is_the_classifier_on_its_augmenter() {
    let mut r = rng(8);
    let aug = random_augmenter(&mut r, 8, 4);
    let clf =
        LinearClassifier::from_parts(random_matrix(&mut r, 3, 8, 1.0), Array1::zeros(3)).unwrap();
    let model = LandaModel::new(
        vec!["only".into()],
        vec![aug.clone()],
        clf.clone(),
        vec![1.0],
        TrainConfig::default(),
    )
    .unwrap();
    let x = random_unit_rows(&mut r, 10, 8);
    let direct = clf
        .forward(aug.forward(x.view(), true).unwrap().output().view())
        .unwrap();
    for (i, row) in x.outer_iter().enumerate() {
        assert_eq!(predict(&model, row).unwrap().scores, direct.row(i));
    }
}

#[test]
fn identical_augmenters_make_weights_irrelevant() {
    let mut r = rng(9);
    let aug = random_augmenter(&mut r, 8, 4);
    let clf =
        LinearClassifier::from_parts(random_matrix(&mut r, 4, 8, 1.0), Array1::zeros(4)).unwrap();
    let x = random_unit_rows(&mut r, 30, 8);
    let with = |w: Vec<f64>| {
        let model = LandaModel::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![aug.clone(); 3],
            clf.clone(),
            w,
            TrainConfig::default(),
        )
        .unwrap();
        predict_batch(&model, x.view()).unwrap()
    };
    let base = with(vec![1.0 / 3.0; 3]);
    assert_eq!(with(vec![0.7, 0.2, 0.1]), base);
    assert_eq!(with(vec![0.0, 0.0, 1.0]), base);
}

#[test]
fn listing_order_of_domains_does_not_change_predictions() {
    let model = random_model(10, 8, 4, 4, 3);
    let perm = [2, 0, 3, 1];
    let permuted = LandaModel::new(
        perm.iter()
            .map(|&k| model.domain_names()[k].clone())
            .collect(),
        perm.iter()
            .map(|&k| model.augmenters()[k].clone())
            .collect(),
        model.classifier().clone(),
        perm.iter().map(|&k| model.weights()[k]).collect(),
        TrainConfig::default(),
    )
    .unwrap();
    let mut r = rng(100);
    let x = random_unit_rows(&mut r, 25, 8);
    assert_eq!(
        model.aggregate(x.view()).unwrap(),
        permuted.aggregate(x.view()).unwrap()
    );
}

fn balanced(name: &str, n: usize, classes: usize, seed: u64) -> DomainDataset {
    let mut r = rng(seed);
    dataset(
        name,
        &random_matrix(&mut r, n, 8, 1.0),
        (0..n).map(|i| i % classes).collect(),
        classes,
    )
}

#[test]
fn constant_classifier_on_constant_labels_is_perfect() {
    let mut r = rng(11);
    let data = dataset("d0", &random_matrix(&mut r, 40, 8, 1.0), vec![0; 40], 3);
    let mut b = Array1::zeros(3);
    b[0] = 1.0;
    let model = LandaModel::new(
        vec!["d0".into()],
        vec![random_augmenter(&mut r, 8, 4)],
        LinearClassifier::from_parts(Array2::zeros((3, 8)), b).unwrap(),
        vec![1.0],
        TrainConfig::default(),
    )
    .unwrap();
    for aggregate in [true, false] {
        let rep = evaluate(&data, &model, aggregate).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.confusion[0][0], 40);
    }
}

#[test]
fn random_classifier_is_at_chance() {
    let data = balanced("d0", 1000, 5, 12);
    let model = random_model(13, 8, 8, 1, 5);
    let model = LandaModel::new(
        vec!["d0".into()],
        model.augmenters().to_vec(),
        model.classifier().clone(),
        vec![1.0],
        TrainConfig::default(),
    )
    .unwrap();
    let rep = evaluate(&data, &model, true).unwrap();
    assert!((rep.accuracy - 0.2).abs() <= 0.05, "{}", rep.accuracy);
    let total: usize = rep.confusion.iter().flatten().sum();
    assert_eq!(total, 1000);
    assert_eq!(rep.samples, 1000);
}

#[test]
fn in_domain_evaluation_needs_a_known_domain() {
    let model = random_model(14, 8, 4, 2, 3);
    let data = balanced("stranger", 10, 3, 15);
    assert!(matches!(
        evaluate(&data, &model, false),
        Err(Error::UnknownDomain(_))
    ));
    assert!(evaluate(&data, &model, true).is_ok());
}

#[test]
fn nearest_neighbor_matches_an_exhaustive_scan() {
    let mut r = rng(16);
    let data = EmbeddingMatrix::normalized_from_f64(&random_matrix(&mut r, 50, 8, 1.0)).unwrap();
    let rows = data.to_f64();
    let aug = random_augmenter(&mut r, 8, 4);
    for q in random_unit_rows(&mut r, 20, 8).outer_iter() {
        for augment in [None, Some(&aug)] {
            let query = match augment {
                Some(a) => a
                    .forward(q.insert_axis(Axis(0)), true)
                    .unwrap()
                    .into_output()
                    .row(0)
                    .to_owned(),
                None => q.to_owned(),
            };
            let mut best = (0, f64::INFINITY);
            for (i, row) in rows.outer_iter().enumerate() {
                let d: f64 = row.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.1 {
                    best = (i, d);
                }
            }
            let (idx, dist) = nearest_neighbor(q, &data, augment).unwrap();
            assert_eq!(idx, best.0);
            assert!((dist - best.1.sqrt()).abs() < 1e-12);
        }
    }
    let hit = rows.row(17).to_owned();
    assert_eq!(
        nearest_neighbor(hit.view(), &data, None).unwrap(),
        (17, 0.0)
    );
}

#[test]
fn deviation_terms_vanish_as_delta_approaches_one() {
    let near_one = deviation_term(1.0, 1.0, 100, 1.0 - 1e-12, 1.0);
    assert!((near_one - 1.0).abs() < 1e-12);
    let mut prev = f64::INFINITY;
    for delta in [0.01, 0.05, 0.2, 0.5, 0.9, 0.999] {
        let d = deviation_term(1.0, 1.0, 100, delta, 1.0);
        assert!(d < prev && d > 1.0);
        prev = d;
    }
    // exp((1 + λ) ln(1/δ) / (σ² n ς'))
    let by_hand = ((1.0 + 0.5) * (1.0f64 / 0.05).ln() / (1.5 * 1.5 * 40.0 * 0.8)).exp();
    assert!((deviation_term(0.5, 1.5, 40, 0.05, 0.8) - by_hand).abs() < 1e-15);
}

#[test]
fn bound_holds_with_identical_domains_and_identity_augmenters() {
    let s = WorldSpec {
        shift: 0.0,
        noise: 0.3,
        samples_per_class: 40,
        ..spec(17)
    };
    let w = generate_world(&s).unwrap();
    let m = s.m;
    let model = LandaModel::new(
        w.sources.iter().map(|d| d.domain_name.clone()).collect(),
        vec![Augmenter::identity(m).unwrap(); 3],
        LinearClassifier::from_class_text(&w.bank.class_text().to_f64(), 1.0).unwrap(),
        vec![1.0 / 3.0; 3],
        quick(17),
    )
    .unwrap();
    let rep =
        generalization_bound(&w.sources, Some(&w.target), &model, &w.bank, 0.05, 1.0).unwrap();
    assert!(rep.holds());
    assert!(
        (rep.target_error - rep.source_error).abs() < 0.05,
        "{rep:?}"
    );
    assert!(rep.deviation_terms.iter().all(|&d| d > 1.0));
    assert!(rep.kernel_mean_norm >= 1.0);
    let parts = rep.source_error
        + rep.kernel_mean_norm
        + rep.theta
        + rep.pairwise_wasserstein
        + rep.deviation_sum;
    assert_eq!(rep.rhs, parts);
}

#[test]
fn bound_requires_target_samples_and_valid_delta() {
    let w = generate_world(&spec(18)).unwrap();
    let model = train(&w.sources, &w.bank, &quick(18)).unwrap().model;
    assert!(generalization_bound(&w.sources, None, &model, &w.bank, 0.05, 1.0).is_err());
    for (delta, varsigma) in [(0.0, 1.0), (1.0, 1.0), (0.05, 0.0), (0.05, 1.5)] {
        assert!(generalization_bound(
            &w.sources,
            Some(&w.target),
            &model,
            &w.bank,
            delta,
            varsigma
        )
        .is_err());
    }
}

#[test]
fn domain_alignment_falls_on_an_aligned_world() {
    let s = WorldSpec {
        num_source_domains: 1,
        noise: 0.0,
        shift: 1.0,
        samples_per_class: 16,
        ..spec(19)
    };
    let w = generate_world(&s).unwrap();
    let mut cfg = quick(19);
    cfg.augmenter_epochs = 5;
    cfg.loss.gamma = 0.0;
    cfg.loss.beta = 0.0;
    let (_, history) = train_augmenters(&w.sources, &w.bank, &cfg).unwrap();
    let da: Vec<f64> = history
        .epochs
        .iter()
        .map(|e| e[0].domain_alignment)
        .collect();
    assert_eq!(da.len(), 5);
    assert!(da[4] < da[0], "{da:?}");
    assert!(da.windows(2).all(|p| p[1] <= p[0]), "{da:?}");
}

#[test]
fn configuration_a_trains_on_domain_alignment_alone() {
    let w = generate_world(&spec(20)).unwrap();
    let mut cfg = quick(20);
    Ablation::A.apply(&mut cfg);
    let (_, history) = train_augmenters(&w.sources, &w.bank, &cfg).unwrap();
    for epoch in &history.epochs {
        for d in epoch {
            assert_eq!(d.class_alignment, 0.0);
            assert_eq!(d.distribution_consistency, 0.0);
            assert_eq!(d.total, d.domain_alignment);
        }
    }
    cfg.loss.class_alignment = true;
    let (_, with_ca) = train_augmenters(&w.sources, &w.bank, &cfg).unwrap();
    assert!(with_ca.epochs[0][0].class_alignment > 0.0);
    assert_eq!(with_ca.epochs[0][0].distribution_consistency, 0.0);
}

#[test]
fn separable_embeddings_are_learned_within_ten_epochs() {
    let s = WorldSpec {
        noise: 0.05,
        shift: 0.5,
        samples_per_class: 25,
        ..spec(21)
    };
    let w = generate_world(&s).unwrap();
    let m = s.m;
    let mut cfg = quick(21);
    cfg.loss.epsilon = 1.0;
    cfg.classifier_epochs = 10;
    cfg.classifier_lr = MultiStepLr::new(0.05, vec![5], 0.5).unwrap();
    let identity = vec![Augmenter::identity(m).unwrap(); 3];
    let (clf, losses) = train_classifier(&w.sources, &identity, &cfg).unwrap();
    assert_eq!(losses.len(), 10);
    let model = LandaModel::new(
        w.sources.iter().map(|d| d.domain_name.clone()).collect(),
        identity,
        clf,
        vec![1.0 / 3.0; 3],
        cfg,
    )
    .unwrap();
    for d in &w.sources {
        let acc = evaluate(d, &model, false).unwrap().accuracy;
        assert!(acc >= 0.99, "{}: {acc}", d.domain_name);
    }
}
