use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::LandaModel;
use crate::embstore::{read_params, write_params};
use crate::error::{Error, Result};
use crate::nn::{Augmenter, LinearClassifier};

pub const MODEL_MANIFEST: &str = "manifest.json";
const WEIGHTS_FILE: &str = "weights.lemb";
const CLASSIFIER_W: &str = "classifier_w.lemb";
const CLASSIFIER_B: &str = "classifier_b.lemb";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmenterEntry {
    pub name: String,
    /// Informational copy; the exact value lives in the weights file.
    pub weight: f64,
    pub w1: String,
    pub b1: String,
    pub w2: String,
    pub b2: String,
}

/// `manifest.json` of a saved model. Parameter tensors live next to it as
/// f64 parameter files, one tensor per file, vectors stored as 1×n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub weights_file: String,
    pub classifier_w: String,
    pub classifier_b: String,
    pub augmenters: Vec<AugmenterEntry>,
    pub config: TrainConfig,
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

fn vector(dir: &Path, file: &str, len: usize) -> Result<Array1<f64>> {
    let m = read_params(dir.join(file))?;
    if m.dim() != (1, len) {
        return Err(Error::Shape(format!(
            "{file} has shape {:?}, expected (1, {len})",
            m.dim()
        )));
    }
    Ok(m.row(0).to_owned())
}

fn matrix(dir: &Path, file: &str, shape: (usize, usize)) -> Result<Array2<f64>> {
    let m = read_params(dir.join(file))?;
    if m.dim() != shape {
        return Err(Error::Shape(format!(
            "{file} has shape {:?}, expected {shape:?}",
            m.dim()
        )));
    }
    Ok(m)
}

pub fn save_model(dir: impl AsRef<Path>, model: &LandaModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (k, (name, aug)) in model
        .domain_names()
        .iter()
        .zip(model.augmenters())
        .enumerate()
    {
        let file = |t: &str| format!("aug{k}_{t}.lemb");
        let entry = AugmenterEntry {
            name: name.clone(),
            weight: model.weights()[k],
            w1: file("w1"),
            b1: file("b1"),
            w2: file("w2"),
            b2: file("b2"),
        };
        write_params(dir.join(&entry.w1), aug.w1())?;
        write_params(dir.join(&entry.b1), &row(aug.b1()))?;
        write_params(dir.join(&entry.w2), aug.w2())?;
        write_params(dir.join(&entry.b2), &row(aug.b2()))?;
        entries.push(entry);
    }
    write_params(
        dir.join(WEIGHTS_FILE),
        &row(&Array1::from(model.weights().to_vec())),
    )?;
    write_params(dir.join(CLASSIFIER_W), model.classifier().w())?;
    write_params(dir.join(CLASSIFIER_B), &row(model.classifier().b()))?;
    let manifest = ModelManifest {
        dim: model.dim(),
        hidden_dim: model.augmenters()[0].hidden_dim(),
        num_classes: model.num_classes(),
        weights_file: WEIGHTS_FILE.into(),
        classifier_w: CLASSIFIER_W.into(),
        classifier_b: CLASSIFIER_B.into(),
        augmenters: entries,
        config: model.config().clone(),
    };
    let path = dir.join(MODEL_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<LandaModel> {
    let dir = dir.as_ref();
    let path = dir.join(MODEL_MANIFEST);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::Metadata {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let (m, h, c) = (manifest.dim, manifest.hidden_dim, manifest.num_classes);
    let n = manifest.augmenters.len();
    let weights = vector(dir, &manifest.weights_file, n)?.to_vec();
    let mut names = Vec::with_capacity(n);
    let mut augmenters = Vec::with_capacity(n);
    for e in &manifest.augmenters {
        names.push(e.name.clone());
        augmenters.push(Augmenter::from_parts(
            matrix(dir, &e.w1, (h, m))?,
            vector(dir, &e.b1, h)?,
            matrix(dir, &e.w2, (m, h))?,
            vector(dir, &e.b2, m)?,
        )?);
    }
    let classifier = LinearClassifier::from_parts(
        matrix(dir, &manifest.classifier_w, (c, m))?,
        vector(dir, &manifest.classifier_b, c)?,
    )?;
    LandaModel::new(names, augmenters, classifier, weights, manifest.config)
}
