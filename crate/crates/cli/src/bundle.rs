//! On-disk bundle layout: one directory holding the graph, the node arrays
//! and the split, plus a small metadata file.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use simcal_core::classifier::NodeBundle;
use simcal_core::numerics::DenseMatrix;
use simcal_core::{Graph, Masks};

use crate::error::{CliError, CliResult};

pub const GRAPH: &str = "graph.txt";
pub const FEATURES: &str = "features.csv";
pub const HIDDEN: &str = "hidden.csv";
pub const LOGITS: &str = "logits.csv";
pub const LABELS: &str = "labels.txt";
pub const MASKS: &str = "masks.json";
pub const META: &str = "meta.json";

pub const DATA_FILES: [&str; 5] = [GRAPH, FEATURES, LABELS, MASKS, META];
pub const BUNDLE_FILES: [&str; 7] = [GRAPH, FEATURES, HIDDEN, LOGITS, LABELS, MASKS, META];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub train_ece: f64,
    pub test_ece: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub hidden_dim: Option<usize>,
    pub classifier: Option<ClassifierSummary>,
}

/// Errors listing every file of `names` absent from `dir`.
pub fn require(dir: &Path, names: &[&str]) -> CliResult<()> {
    let missing: Vec<String> = names
        .iter()
        .filter(|n| !dir.join(n).is_file())
        .map(|n| n.to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingFiles {
            dir: dir.to_path_buf(),
            files: missing,
        })
    }
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// No header, one row per node, nine significant digits.
pub fn write_matrix(path: &Path, m: &DenseMatrix) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("writing {}", path.display()))?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:.8e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> anyhow::Result<DenseMatrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: line {}", path.display(), line + 1))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}: bad number on line {}", path.display(), line + 1))?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    Ok(DenseMatrix::from_rows(&rows)?)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> anyhow::Result<()> {
    let text: String = labels.iter().map(|y| format!("{y}\n")).collect();
    write_text(path, &text)
}

pub fn read_labels(path: &Path) -> anyhow::Result<Vec<usize>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim()
                .parse()
                .with_context(|| format!("{}: bad label on line {}", path.display(), k + 1))
        })
        .collect()
}

/// Graph, features, labels, split and metadata as written by `datagen`.
#[derive(Debug, Clone)]
pub struct DataFiles {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub masks: Masks,
    pub meta: Meta,
}

impl DataFiles {
    pub fn load(dir: &Path) -> CliResult<Self> {
        require(dir, &DATA_FILES)?;
        let meta: Meta = read_json(&dir.join(META))?;
        let graph = Graph::from_edge_list_text(&read_text(&dir.join(GRAPH))?, meta.num_nodes)?;
        let features = read_matrix(&dir.join(FEATURES))?;
        let labels = read_labels(&dir.join(LABELS))?;
        let masks: Masks = read_json(&dir.join(MASKS))?;
        let n = meta.num_nodes;
        if features.rows() != n || labels.len() != n {
            return Err(anyhow::anyhow!(
                "meta.json declares {n} nodes but features have {} rows and labels {} lines",
                features.rows(),
                labels.len()
            )
            .into());
        }
        masks.validate(n)?;
        Ok(Self {
            graph,
            features,
            labels,
            masks,
            meta,
        })
    }

    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_text(&dir.join(GRAPH), &self.graph.to_edge_list_text())?;
        write_matrix(&dir.join(FEATURES), &self.features)?;
        write_labels(&dir.join(LABELS), &self.labels)?;
        write_json(&dir.join(MASKS), &self.masks)?;
        write_json(&dir.join(META), &self.meta)
    }
}

/// A complete bundle after `pretrain`.
pub fn load_bundle(dir: &Path) -> CliResult<(NodeBundle, Graph, Meta)> {
    require(dir, &BUNDLE_FILES)?;
    let data = DataFiles::load(dir)?;
    let hidden = read_matrix(&dir.join(HIDDEN))?;
    let logits = read_matrix(&dir.join(LOGITS))?;
    let bundle = NodeBundle::new(data.features, hidden, logits, data.labels, data.masks)?;
    Ok((bundle, data.graph, data.meta))
}
