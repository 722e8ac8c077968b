//! Embedding data model and on-disk formats.
//!
//! Every embedding in the system (image, augmented, text) is a row of an
//! [`EmbeddingMatrix`] with unit L2 norm. Storage is `f32`; all downstream
//! arithmetic converts to `f64` first.
//!
//! Files:
//!
//! | File | Layout |
//! |------|--------|
//! | `*.lemb` | `"LEMB"`, version `1` (u32 LE), rows (u64 LE), dim (u64 LE), rows×dim f32 LE row-major |
//! | `labels.llab` | `"LLAB"`, count (u64 LE), count × u32 LE |
//! | `meta.json` | `{"domain_name": .., "class_names": [..]}` |
//!
//! A data directory holds `world.json` (`{"sources": [..], "target": ..}`),
//! `domains/<name>/{images.lemb, labels.llab, meta.json}` per domain and
//! `prompts/{class.lemb, <domain>.lemb}`.

mod dataset;
mod format;

pub use dataset::{
    load_domain_dataset, load_layout, load_prompt_bank, write_domain_dataset, write_layout,
    write_prompt_bank, DomainMeta, Layout, LayoutIndex, CLASS_TEXT_FILE, DOMAINS_DIR, IMAGES_FILE,
    LABELS_FILE, META_FILE, PROMPTS_DIR, WORLD_FILE,
};
pub use format::{
    read_labels, read_matrix, read_params, write_labels, write_matrix, write_params, LABELS_MAGIC,
    MATRIX_MAGIC, MATRIX_VERSION, PARAMS_VERSION,
};

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Maximum deviation of a row norm from 1 accepted at construction and load.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// An n×m matrix whose rows are unit-norm embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f32>,
}

impl EmbeddingMatrix {
    /// Validates and wraps `data`. Rows are never renormalized here.
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (rows, dim) = data.dim();
        if rows < 1 {
            return Err(Error::Shape(
                "embedding matrix needs at least one row".into(),
            ));
        }
        if dim < 2 {
            return Err(Error::Shape(format!(
                "embedding dim must be >= 2, got {dim}"
            )));
        }
        for (r, row) in data.outer_iter().enumerate() {
            let mut sq = 0.0f64;
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: r, col: c });
                }
                sq += f64::from(v) * f64::from(v);
            }
            let norm = sq.sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NormViolation {
                    row: r,
                    norm,
                    tolerance: NORM_TOLERANCE,
                });
            }
        }
        Ok(EmbeddingMatrix {
            data: data.as_standard_layout().into_owned(),
        })
    }

    /// Rounds `data` to f32 and validates it.
    pub fn from_f64(data: &Array2<f64>) -> Result<Self> {
        Self::new(data.mapv(|v| v as f32))
    }

    /// Normalizes every row of `data` to unit length, then rounds to f32.
    ///
    /// Intended for producers (synthetic worlds, checkpoints of augmented
    /// embeddings). Loading never goes through this path.
    pub fn normalized_from_f64(data: &Array2<f64>) -> Result<Self> {
        let mut out = data.clone();
        for (r, mut row) in out.outer_iter_mut().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::ZeroNorm {
                    what: "embedding",
                    row: r,
                });
            }
            row /= norm;
        }
        Self::from_f64(&out)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.data.row(i)
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    /// Row-major f32 payload.
    pub fn as_slice(&self) -> &[f32] {
        self.data
            .as_slice()
            .expect("embedding matrices are kept in standard layout")
    }

    /// Keeps the rows listed in `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Shape("row selection is empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.rows()) {
            return Err(Error::Shape(format!(
                "row index {bad} out of range for {} rows",
                self.rows()
            )));
        }
        Ok(EmbeddingMatrix {
            data: self.data.select(ndarray::Axis(0), indices),
        })
    }
}

/// One labeled source (or target) domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_name: String,
    pub embeddings: EmbeddingMatrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl DomainDataset {
    pub fn new(
        domain_name: impl Into<String>,
        embeddings: EmbeddingMatrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != embeddings.rows() {
            return Err(Error::CountMismatch {
                what: "labels".into(),
                expected: embeddings.rows(),
                found: labels.len(),
            });
        }
        if class_names.is_empty() {
            return Err(Error::Shape("class list is empty".into()));
        }
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= class_names.len())
        {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes: class_names.len(),
            });
        }
        Ok(DomainDataset {
            domain_name: domain_name.into(),
            embeddings,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }
}

/// Text embeddings for bare class names and for every domain∘class prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBank {
    class_text: EmbeddingMatrix,
    sources: Vec<(String, EmbeddingMatrix)>,
    target_name: String,
    target_composed: EmbeddingMatrix,
}

impl PromptBank {
    pub fn new(
        class_text: EmbeddingMatrix,
        sources: Vec<(String, EmbeddingMatrix)>,
        target_name: impl Into<String>,
        target_composed: EmbeddingMatrix,
    ) -> Result<Self> {
        let target_name = target_name.into();
        let classes = class_text.rows();
        let dim = class_text.dim();
        let check = |name: &str, m: &EmbeddingMatrix| -> Result<()> {
            if m.dim() != dim {
                return Err(Error::Shape(format!(
                    "prompt matrix {name:?} has dim {}, class text has {dim}",
                    m.dim()
                )));
            }
            if m.rows() != classes {
                return Err(Error::CountMismatch {
                    what: format!("prompt matrix {name:?} rows"),
                    expected: classes,
                    found: m.rows(),
                });
            }
            Ok(())
        };
        for (i, (name, m)) in sources.iter().enumerate() {
            check(name, m)?;
            if sources[..i].iter().any(|(other, _)| other == name) {
                return Err(Error::Config(format!("duplicate source domain {name:?}")));
            }
            if *name == target_name {
                return Err(Error::Config(format!(
                    "domain {name:?} is both a source and the target"
                )));
            }
        }
        check(&target_name, &target_composed)?;
        Ok(PromptBank {
            class_text,
            sources,
            target_name,
            target_composed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_text.rows()
    }

    pub fn dim(&self) -> usize {
        self.class_text.dim()
    }

    pub fn class_text(&self) -> &EmbeddingMatrix {
        &self.class_text
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn target_composed(&self) -> &EmbeddingMatrix {
        &self.target_composed
    }

    pub fn source_names(&self) -> impl Iterator<Item = &str> {
        self.sources.iter().map(|(n, _)| n.as_str())
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn composed(&self, source_name: &str) -> Result<&EmbeddingMatrix> {
        self.sources
            .iter()
            .find(|(n, _)| n == source_name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::UnknownDomain(source_name.to_string()))
    }
}
