//! Synthetic embedding worlds.
//!
//! Class prototypes, source domain directions and the target direction are
//! mutually orthonormal. An image embedding of class y in domain k is
//! `normalize(separation·c_y + shift·d_k + noise·g)` with g standard normal;
//! its composed prompt is the same vector without noise. At zero noise the
//! image difference between two domains is therefore exactly parallel to the
//! difference of their composed prompts.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embstore::{DomainDataset, EmbeddingMatrix, PromptBank};
use crate::error::{Error, Result};

pub const TARGET_NAME: &str = "tgt";

pub fn source_name(k: usize) -> String {
    format!("src{k}")
}

pub fn class_name(c: usize) -> String {
    format!("class{c}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub m: usize,
    pub num_classes: usize,
    pub num_source_domains: usize,
    /// Samples per class in every domain, target included.
    pub samples_per_class: usize,
    pub shift: f64,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            m: 32,
            num_classes: 5,
            num_source_domains: 3,
            samples_per_class: 100,
            shift: 1.0,
            separation: 1.0,
            noise: 0.15,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1 || self.num_source_domains < 1 || self.samples_per_class < 1 {
            return Err(Error::Config(
                "num_classes, num_source_domains and samples_per_class must be >= 1".into(),
            ));
        }
        let needed = self.num_classes + self.num_source_domains + 1;
        if self.m < needed.max(2) {
            return Err(Error::Config(format!(
                "m = {} leaves no room for {} orthogonal directions",
                self.m, needed
            )));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!(
                "separation must be > 0, got {}",
                self.separation
            )));
        }
        for (name, v) in [("shift", self.shift), ("noise", self.noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The orthonormal directions a world is built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    /// num_classes × m
    pub prototypes: Array2<f64>,
    /// num_source_domains × m
    pub source_dirs: Array2<f64>,
    pub target_dir: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub basis: Basis,
    pub sources: Vec<DomainDataset>,
    pub target: DomainDataset,
    pub bank: PromptBank,
}

/// Columns of a seeded Gaussian matrix, orthonormalized by modified
/// Gram-Schmidt (two passes), returned as rows.
fn orthonormal_rows(rng: &mut ChaCha8Rng, count: usize, m: usize) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((count, m));
    for i in 0..count {
        let mut v: Array1<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for j in 0..i {
                let proj = v.dot(&q.row(j));
                v.scaled_add(-proj, &q.row(j));
            }
        }
        let norm = v.dot(&v).sqrt();
        q.row_mut(i).assign(&(v / norm));
    }
    q
}

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn domain_samples(
    spec: &WorldSpec,
    basis: &Basis,
    name: String,
    dir: ArrayView1<'_, f64>,
    rng: &mut ChaCha8Rng,
) -> Result<DomainDataset> {
    let n = spec.num_classes * spec.samples_per_class;
    let mut x = Array2::zeros((n, spec.m));
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.num_classes {
        for s in 0..spec.samples_per_class {
            let row = c * spec.samples_per_class + s;
            let mut v = &basis.prototypes.row(c) * spec.separation + &dir * spec.shift;
            if spec.noise > 0.0 {
                for e in v.iter_mut() {
                    let g: f64 = StandardNormal.sample(rng);
                    *e += spec.noise * g;
                }
            }
            x.row_mut(row).assign(&normalized(v));
            labels.push(c);
        }
    }
    DomainDataset::new(
        name,
        EmbeddingMatrix::from_f64(&x)?,
        labels,
        (0..spec.num_classes).map(class_name).collect(),
    )
}

fn composed(spec: &WorldSpec, basis: &Basis, dir: ArrayView1<'_, f64>) -> Result<EmbeddingMatrix> {
    let mut t = Array2::zeros((spec.num_classes, spec.m));
    for (c, mut row) in t.outer_iter_mut().enumerate() {
        row.assign(&normalized(
            &basis.prototypes.row(c) * spec.separation + &dir * spec.shift,
        ));
    }
    EmbeddingMatrix::from_f64(&t)
}

/// Builds a world: sources `src0..`, target `tgt`, classes `class0..`.
/// Deterministic given the `WorldSpec`; the basis and every domain draw from
/// separate random streams.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let (c, k) = (spec.num_classes, spec.num_source_domains);
    let all = orthonormal_rows(&mut stream_rng(spec.seed, 0), c + k + 1, spec.m);
    let basis = Basis {
        prototypes: all.slice(ndarray::s![..c, ..]).to_owned(),
        source_dirs: all.slice(ndarray::s![c..c + k, ..]).to_owned(),
        target_dir: all.row(c + k).to_owned(),
    };
    let mut sources = Vec::with_capacity(k);
    let mut composed_sources = Vec::with_capacity(k);
    for d in 0..k {
        let dir = basis.source_dirs.row(d);
        let mut rng = stream_rng(spec.seed, 1 + d as u64);
        sources.push(domain_samples(spec, &basis, source_name(d), dir, &mut rng)?);
        composed_sources.push((source_name(d), composed(spec, &basis, dir)?));
    }
    let mut rng = stream_rng(spec.seed, 1 + k as u64);
    let target = domain_samples(
        spec,
        &basis,
        TARGET_NAME.into(),
        basis.target_dir.view(),
        &mut rng,
    )?;
    let bank = PromptBank::new(
        EmbeddingMatrix::from_f64(&basis.prototypes)?,
        composed_sources,
        TARGET_NAME,
        composed(spec, &basis, basis.target_dir.view())?,
    )?;
    Ok(World {
        spec: spec.clone(),
        basis,
        sources,
        target,
        bank,
    })
}

/// Which text embeddings a zero-shot classifier compares against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZeroShotPrompt {
    /// Bare class names.
    General,
    /// The dataset domain's composed prompts.
    Adapted,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Zero-shot predictions `argmax_c tau · x · t_c` for rows of `x`.
pub fn zero_shot_predict(x: &Array2<f64>, text: &Array2<f64>, tau: f64) -> Result<Vec<usize>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if x.ncols() != text.ncols() {
        return Err(Error::Shape(format!(
            "embedding dim {} does not match text dim {}",
            x.ncols(),
            text.ncols()
        )));
    }
    let logits = x.dot(&text.t()) * tau;
    Ok(logits.axis_iter(Axis(0)).map(argmax).collect())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Zero-shot accuracy of `dataset` against class texts (General) or the
/// dataset's own composed prompts (Adapted).
pub fn zero_shot_eval(
    dataset: &DomainDataset,
    bank: &PromptBank,
    tau: f64,
    prompt: ZeroShotPrompt,
) -> Result<f64> {
    let text = match prompt {
        ZeroShotPrompt::General => bank.class_text().to_f64(),
        ZeroShotPrompt::Adapted if dataset.domain_name == bank.target_name() => {
            bank.target_composed().to_f64()
        }
        ZeroShotPrompt::Adapted => bank.composed(&dataset.domain_name)?.to_f64(),
    };
    let predictions = zero_shot_predict(&dataset.embeddings.to_f64(), &text, tau)?;
    Ok(accuracy(&predictions, &dataset.labels))
}
