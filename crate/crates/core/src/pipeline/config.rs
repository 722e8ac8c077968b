use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nn::MultiStepLr;

/// How OT distances between prompt sets turn into aggregation weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `w_k = d_k / sum_j d_j`: farther sources weigh more.
    #[default]
    AsWritten,
    /// `w_k ∝ 1 / d_k`: nearer sources weigh more.
    Inverse,
}

/// What maps the aggregated embedding to class scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// A linear classifier trained on original and augmented embeddings.
    #[default]
    LinearProbe,
    /// `tau ·` similarity to the class texts, no training.
    ZeroShot,
}

/// Ablation presets, each adding one component to the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// Domain alignment only, zero-shot head.
    A,
    /// Domain and class alignment, zero-shot head.
    B,
    /// All three augmenter losses, zero-shot head.
    C,
    /// All three augmenter losses and a trained linear head.
    D,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::A, Ablation::B, Ablation::C, Ablation::D];

    /// Sets the loss switches and head of `cfg`; everything else is kept.
    pub fn apply(self, cfg: &mut TrainConfig) {
        let (ca, dc, head) = match self {
            Ablation::A => (false, false, Head::LinearProbe),
            Ablation::B => (true, false, Head::LinearProbe),
            Ablation::C => (true, true, Head::ZeroShot),
            Ablation::D => (true, true, Head::LinearProbe),
        };
        cfg.loss.class_alignment = ca;
        cfg.loss.distribution_consistency = dc;
        cfg.head = head;
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Ablation::A => "A",
            Ablation::B => "B",
            Ablation::C => "C",
            Ablation::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Ablation::A),
            "B" | "b" => Ok(Ablation::B),
            "C" | "c" => Ok(Ablation::C),
            "D" | "d" => Ok(Ablation::D),
            _ => Err(Error::Config(format!(
                "unknown ablation {s:?}, expected A-D"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Augmenter hidden width; `None` means half the embedding dim.
    pub hidden_dim: Option<usize>,
    pub batch_size: usize,
    pub augmenter_epochs: usize,
    pub augmenter_lr: MultiStepLr,
    pub classifier_epochs: usize,
    pub classifier_lr: MultiStepLr,
    pub weighting: Weighting,
    pub head: Head,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            hidden_dim: None,
            batch_size: 32,
            augmenter_epochs: 10,
            augmenter_lr: MultiStepLr {
                base_lr: 1e-2,
                milestones: vec![2, 4, 7, 10, 15, 20, 30, 40],
                gamma: 0.5,
            },
            classifier_epochs: 6,
            classifier_lr: MultiStepLr {
                base_lr: 1e-3,
                milestones: vec![1, 3, 5],
                gamma: 0.1,
            },
            weighting: Weighting::AsWritten,
            head: Head::LinearProbe,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.augmenter_epochs < 1 || self.classifier_epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.loss.distribution_consistency && self.loss.gamma != 0.0 && self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 when distribution consistency is enabled".into(),
            ));
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::Config("hidden_dim must be >= 1".into()));
        }
        self.augmenter_lr.validate()?;
        self.classifier_lr.validate()?;
        self.loss.validate()
    }

    /// Hidden width for embeddings of dimension `m`.
    pub fn hidden_for(&self, m: usize) -> usize {
        self.hidden_dim.unwrap_or((m / 2).max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            augmenter_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn single_sample_batches_need_consistency_off() {
        let mut cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.loss.distribution_consistency = false;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn ablations_are_cumulative() {
        let mut cfg = TrainConfig::default();
        Ablation::A.apply(&mut cfg);
        assert!(!cfg.loss.class_alignment && !cfg.loss.distribution_consistency);
        assert_eq!(cfg.head, Head::LinearProbe);
        Ablation::C.apply(&mut cfg);
        assert!(cfg.loss.class_alignment && cfg.loss.distribution_consistency);
        assert_eq!(cfg.head, Head::ZeroShot);
        Ablation::D.apply(&mut cfg);
        assert_eq!(cfg.head, Head::LinearProbe);
        assert_eq!("b".parse::<Ablation>().unwrap(), Ablation::B);
        assert!("E".parse::<Ablation>().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig {
            hidden_dim: Some(7),
            weighting: Weighting::Inverse,
            ..TrainConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("weighting = \"inverse\""));
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
    }
}
