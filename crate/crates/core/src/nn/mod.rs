//! Small hand-written neural kernels: the augmenter MLP, the linear head,
//! Adam and a multi-step learning rate schedule.

mod adam;
mod augmenter;
mod linear;
mod schedule;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use augmenter::{Augmenter, AugmenterCache, AugmenterGrads};
pub use linear::{ClassifierGrads, LinearClassifier};
pub use schedule::{lr_at_epoch, MultiStepLr};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A fixed list of flat parameter tensors. Adam works on anything that
/// implements this, and gradient structs mirror their parameter structs.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamSet for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

// Stream id reserved for the classifier; augmenter k uses stream k.
const CLASSIFIER_STREAM: u64 = u64::MAX;

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, fan_in), || rng.random_range(-bound..bound))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One augmenter drawn from `stream` of `seed`.
pub fn init_augmenter(seed: u64, stream: u64, m: usize, h: usize) -> Result<Augmenter> {
    if m == 0 || h == 0 {
        return Err(Error::InvalidParameter(format!(
            "augmenter dims must be >= 1, got m={m}, h={h}"
        )));
    }
    let mut rng = rng_for(seed, stream);
    let w1 = uniform_matrix(&mut rng, h, m);
    let w2 = uniform_matrix(&mut rng, m, h);
    Augmenter::from_parts(w1, Array1::zeros(h), w2, Array1::zeros(m))
}

pub fn init_classifier(seed: u64, m: usize, num_classes: usize) -> Result<LinearClassifier> {
    if m == 0 || num_classes == 0 {
        return Err(Error::InvalidParameter(format!(
            "classifier dims must be >= 1, got m={m}, classes={num_classes}"
        )));
    }
    let mut rng = rng_for(seed, CLASSIFIER_STREAM);
    LinearClassifier::from_parts(
        uniform_matrix(&mut rng, num_classes, m),
        Array1::zeros(num_classes),
    )
}

/// Seeded initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero. Each augmenter and the classifier draw from their own
/// ChaCha stream, so adding a domain does not perturb the others.
pub fn init_params(
    seed: u64,
    m: usize,
    h: usize,
    num_augmenters: usize,
    num_classes: usize,
) -> Result<(Vec<Augmenter>, LinearClassifier)> {
    let augs = (0..num_augmenters as u64)
        .map(|k| init_augmenter(seed, k, m, h))
        .collect::<Result<Vec<_>>>()?;
    Ok((augs, init_classifier(seed, m, num_classes)?))
}
