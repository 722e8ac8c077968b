use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format::{read_labels, read_matrix, write_labels, write_matrix};
use super::{DomainDataset, PromptBank};
use crate::error::{Error, Result};

pub const IMAGES_FILE: &str = "images.lemb";
pub const LABELS_FILE: &str = "labels.llab";
pub const META_FILE: &str = "meta.json";
pub const CLASS_TEXT_FILE: &str = "class.lemb";

/// Sidecar written next to a domain's embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMeta {
    pub domain_name: String,
    pub class_names: Vec<String>,
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

pub fn load_domain_dataset(dir: impl AsRef<Path>) -> Result<DomainDataset> {
    let dir = dir.as_ref();
    let images = dir.join(IMAGES_FILE);
    let labels = dir.join(LABELS_FILE);
    let meta = dir.join(META_FILE);
    for p in [&images, &labels, &meta] {
        require(p)?;
    }
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let meta_obj: DomainMeta = serde_json::from_str(&text).map_err(|e| Error::Metadata {
        path: meta.clone(),
        message: e.to_string(),
    })?;
    let embeddings = read_matrix(&images)?;
    let labels = read_labels(&labels)?;
    DomainDataset::new(
        meta_obj.domain_name,
        embeddings,
        labels,
        meta_obj.class_names,
    )
}

pub fn write_domain_dataset(dir: impl AsRef<Path>, dataset: &DomainDataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(dir.join(IMAGES_FILE), &dataset.embeddings)?;
    write_labels(dir.join(LABELS_FILE), &dataset.labels)?;
    let meta = DomainMeta {
        domain_name: dataset.domain_name.clone(),
        class_names: dataset.class_names.clone(),
    };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn prompt_file(name: &str) -> Result<String> {
    let file = format!("{name}.lemb");
    if name.is_empty()
        || name.contains(['/', '\\'])
        || name == "."
        || name == ".."
        || file == CLASS_TEXT_FILE
    {
        return Err(Error::Config(format!(
            "domain name {name:?} cannot be used as a prompt file name"
        )));
    }
    Ok(file)
}

/// Loads `class.lemb`, one `<source>.lemb` per source and `<target>.lemb`.
pub fn load_prompt_bank(
    dir: impl AsRef<Path>,
    source_names: &[String],
    target_name: &str,
) -> Result<PromptBank> {
    let dir = dir.as_ref();
    let class_text = read_matrix(dir.join(CLASS_TEXT_FILE))?;
    let mut sources = Vec::with_capacity(source_names.len());
    for name in source_names {
        sources.push((name.clone(), read_matrix(dir.join(prompt_file(name)?))?));
    }
    let target = read_matrix(dir.join(prompt_file(target_name)?))?;
    PromptBank::new(class_text, sources, target_name, target)
}

pub fn write_prompt_bank(dir: impl AsRef<Path>, bank: &PromptBank) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(dir.join(CLASS_TEXT_FILE), bank.class_text())?;
    for name in bank.source_names() {
        write_matrix(dir.join(prompt_file(name)?), bank.composed(name)?)?;
    }
    write_matrix(
        dir.join(prompt_file(bank.target_name())?),
        bank.target_composed(),
    )
}

pub const WORLD_FILE: &str = "world.json";
pub const DOMAINS_DIR: &str = "domains";
pub const PROMPTS_DIR: &str = "prompts";

/// Index of a data directory: which domains are sources and which one is the
/// target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutIndex {
    pub sources: Vec<String>,
    pub target: String,
}

/// Everything under one data directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub sources: Vec<DomainDataset>,
    /// Labeled target samples, when the directory has them.
    pub target: Option<DomainDataset>,
    pub bank: PromptBank,
}

/// Writes `world.json`, `domains/<name>/…` for every dataset and
/// `prompts/…` for the bank.
pub fn write_layout(
    dir: impl AsRef<Path>,
    sources: &[DomainDataset],
    target: Option<&DomainDataset>,
    bank: &PromptBank,
) -> Result<()> {
    let dir = dir.as_ref();
    let domains = dir.join(DOMAINS_DIR);
    for d in sources.iter().chain(target) {
        prompt_file(&d.domain_name)?;
        write_domain_dataset(domains.join(&d.domain_name), d)?;
    }
    write_prompt_bank(dir.join(PROMPTS_DIR), bank)?;
    let index = LayoutIndex {
        sources: sources.iter().map(|d| d.domain_name.clone()).collect(),
        target: bank.target_name().to_string(),
    };
    let path = dir.join(WORLD_FILE);
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads a directory written by [`write_layout`] (or by the extractor).
/// The target dataset is optional; all domains must share one class list.
pub fn load_layout(dir: impl AsRef<Path>) -> Result<Layout> {
    let dir = dir.as_ref();
    let path = dir.join(WORLD_FILE);
    require(&path)?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: LayoutIndex = serde_json::from_str(&text).map_err(|e| Error::Metadata {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if index.sources.is_empty() {
        return Err(Error::Metadata {
            path,
            message: "no source domains listed".into(),
        });
    }
    let domains = dir.join(DOMAINS_DIR);
    let mut sources = Vec::with_capacity(index.sources.len());
    for name in &index.sources {
        prompt_file(name)?;
        let d = load_domain_dataset(domains.join(name))?;
        if d.domain_name != *name {
            return Err(Error::Metadata {
                path: domains.join(name).join(META_FILE),
                message: format!("domain_name {:?} does not match {name:?}", d.domain_name),
            });
        }
        sources.push(d);
    }
    prompt_file(&index.target)?;
    let target_dir = domains.join(&index.target);
    let target = if target_dir.is_dir() {
        Some(load_domain_dataset(target_dir)?)
    } else {
        None
    };
    let bank = load_prompt_bank(dir.join(PROMPTS_DIR), &index.sources, &index.target)?;
    let classes = &sources[0].class_names;
    for d in sources.iter().chain(target.as_ref()) {
        if d.class_names != *classes {
            return Err(Error::Config(format!(
                "domain {:?} has a different class list",
                d.domain_name
            )));
        }
        if d.dim() != bank.dim() {
            return Err(Error::Shape(format!(
                "domain {:?} has dim {}, prompts have {}",
                d.domain_name,
                d.dim(),
                bank.dim()
            )));
        }
    }
    if classes.len() != bank.num_classes() {
        return Err(Error::CountMismatch {
            what: "prompt bank classes".into(),
            expected: classes.len(),
            found: bank.num_classes(),
        });
    }
    Ok(Layout {
        sources,
        target,
        bank,
    })
}
