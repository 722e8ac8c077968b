//! Stage one (augmenters), stage two (linear head), aggregated prediction,
//! evaluation and diagnostics.

mod bound;
mod checkpoint;
mod config;
mod model;
mod train;

pub use bound::{deviation_term, generalization_bound, BoundReport};
pub use checkpoint::{load_model, save_model, AugmenterEntry, ModelManifest, MODEL_MANIFEST};
pub use config::{Ablation, Head, TrainConfig, Weighting};
pub use model::{
    aggregation_weights, evaluate, evaluate_classifier, ext_metric, nearest_neighbor, predict,
    predict_batch, weights_from_distances, EvalReport, LandaModel, Prediction,
};
pub use train::{
    train, train_augmenters, train_classifier, train_source_only_probe, EpochLosses,
    StageOneHistory, TrainOutcome,
};
