//! Raw citation-network files and the cached dataset format.
//!
//! A *content* file has one node per line: `id<TAB>f_1 … f_F<TAB>label`
//! with binary `0`/`1` feature tokens. A *cites* file has one
//! `cited<TAB>citing` pair per line. Both accept LF or CRLF endings.
//!
//! The cache written by `gat-infomax ingest` is a single JSON object:
//!
//! ```text
//! {
//!   "format": "gat-infomax-dataset", "version": 1,
//!   "name": ..., "node_ids": [...], "label_names": [...],
//!   "labels": [...], "num_features": F,
//!   "active_features": [[col, ...], ...],   // per node, sorted, value 1
//!   "edges": [[citing, cited], ...],         // unique, sorted
//!   "skipped_citations": k,
//!   "split": {"train_idx": [...], "val_idx": [...], "test_idx": [...]}
//! }
//! ```
//!
//! Loading a cache rebuilds the undirected self-looped graph and the
//! row-normalized features exactly as [`build_dataset`] does.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DatasetSplit, FeatureMatrix, Graph, LabeledDataset};
use crate::matrix::Matrix;

pub const CACHE_FORMAT: &str = "gat-infomax-dataset";
pub const CACHE_VERSION: u32 = 1;

/// Parsed content file.
#[derive(Clone, Debug)]
pub struct NodeContent {
    pub ids: Vec<String>,
    /// Raw binary features, one row per node in file order.
    pub features: FeatureMatrix,
    pub labels: Vec<String>,
}

impl NodeContent {
    pub fn id_index(&self) -> HashMap<String, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect()
    }
}

/// Parsed cites file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Citations {
    /// `(citing, cited)` node indices in file order; duplicates kept.
    pub edges: Vec<(usize, usize)>,
    /// Lines naming an id missing from the content file.
    pub skipped: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn load_content(path: impl AsRef<Path>) -> Result<NodeContent> {
    let path = path.as_ref();
    parse_content(&read(path)?, path)
}

/// Parses content-file text; `path` only labels error messages.
pub fn parse_content(text: &str, path: &Path) -> Result<NodeContent> {
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut seen = HashMap::new();

    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(parse_err(path, lineno, format!(
                "expected id, features and label, found {} fields",
                fields.len()
            )));
        }
        let f = fields.len() - 2;
        match width {
            None => width = Some(f),
            Some(w) if w != f => {
                return Err(parse_err(path, lineno, format!(
                    "line has {} fields, expected {}",
                    fields.len(),
                    w + 2
                )))
            }
            Some(_) => {}
        }
        let id = fields[0];
        if let Some(first) = seen.insert(id.to_string(), lineno) {
            return Err(parse_err(path, lineno, format!(
                "duplicate node id `{id}` (first seen on line {first})"
            )));
        }
        for tok in &fields[1..=f] {
            values.push(match *tok {
                "0" => 0.0,
                "1" => 1.0,
                other => {
                    return Err(parse_err(path, lineno, format!(
                        "feature token `{other}` is not 0 or 1"
                    )))
                }
            });
        }
        ids.push(id.to_string());
        labels.push(fields[fields.len() - 1].to_string());
    }

    let Some(width) = width else {
        return Err(Error::Dataset(format!("{}: no nodes", path.display())));
    };
    let features = FeatureMatrix::new(Matrix::from_vec(ids.len(), width, values)?)?;
    Ok(NodeContent {
        ids,
        features,
        labels,
    })
}

pub fn load_cites(path: impl AsRef<Path>, id_to_index: &HashMap<String, usize>) -> Result<Citations> {
    let path = path.as_ref();
    parse_cites(&read(path)?, path, id_to_index)
}

pub fn parse_cites(text: &str, path: &Path, id_to_index: &HashMap<String, usize>) -> Result<Citations> {
    let mut edges = Vec::new();
    let mut skipped = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(path, n + 1, "expected `cited<TAB>citing`"));
        }
        match (id_to_index.get(fields[0]), id_to_index.get(fields[1])) {
            (Some(&cited), Some(&citing)) => edges.push((citing, cited)),
            _ => skipped += 1,
        }
    }
    Ok(Citations { edges, skipped })
}

/// Sorted distinct label names and each node's index into them.
pub fn index_labels(names: &[String]) -> (Vec<String>, Vec<usize>) {
    let distinct: Vec<String> = names.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let index: HashMap<&str, usize> = distinct.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels = names.iter().map(|n| index[n.as_str()]).collect();
    (distinct, labels)
}

/// Split sizes: per-class training count plus validation and test totals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train_per_class: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train_per_class: 20,
            val_size: 500,
            test_size: 1000,
        }
    }
}

/// Class-stratified random split.
///
/// Nodes are shuffled with `seed`; the first `train_per_class` nodes of
/// each class in that order form the training set, and the remaining nodes
/// (still in shuffled order) fill validation and then test.
pub fn make_splits(labels: &[usize], num_classes: usize, sizes: SplitSizes, seed: u64) -> Result<DatasetSplit> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::Input(format!("label {l} outside 0..{num_classes}")));
        }
        counts[l] += 1;
    }
    if let Some((class, &have)) = counts
        .iter()
        .enumerate()
        .find(|(_, &c)| c < sizes.train_per_class)
    {
        return Err(Error::Config(format!(
            "class {class} has {have} nodes, fewer than train_per_class = {}",
            sizes.train_per_class
        )));
    }
    let remaining = labels.len() - sizes.train_per_class * num_classes;
    if remaining < sizes.val_size + sizes.test_size {
        return Err(Error::Config(format!(
            "{remaining} nodes left after training selection, need {} for validation + test",
            sizes.val_size + sizes.test_size
        )));
    }

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut taken = vec![0usize; num_classes];
    let mut train_idx = Vec::with_capacity(sizes.train_per_class * num_classes);
    let mut rest = Vec::with_capacity(remaining);
    for node in order {
        let c = labels[node];
        if taken[c] < sizes.train_per_class {
            taken[c] += 1;
            train_idx.push(node);
        } else {
            rest.push(node);
        }
    }
    let test_end = sizes.val_size + sizes.test_size;
    Ok(DatasetSplit {
        train_idx,
        val_idx: rest[..sizes.val_size].to_vec(),
        test_idx: rest[sizes.val_size..test_end].to_vec(),
    })
}

/// On-disk dataset cache; see the module docs for the layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetCache {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub node_ids: Vec<String>,
    pub label_names: Vec<String>,
    pub labels: Vec<usize>,
    pub num_features: usize,
    pub active_features: Vec<Vec<u32>>,
    pub edges: Vec<(usize, usize)>,
    pub skipped_citations: usize,
    pub split: DatasetSplit,
}

impl DatasetCache {
    pub fn from_parts(
        name: &str,
        content: &NodeContent,
        citations: &Citations,
        sizes: SplitSizes,
        seed: u64,
    ) -> Result<Self> {
        let (label_names, labels) = index_labels(&content.labels);
        let split = make_splits(&labels, label_names.len(), sizes, seed)?;
        let x = content.features.as_matrix();
        let active_features = (0..x.rows())
            .map(|i| {
                x.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, _)| c as u32)
                    .collect()
            })
            .collect();
        let edges: Vec<(usize, usize)> = citations
            .edges
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            name: name.into(),
            node_ids: content.ids.clone(),
            label_names,
            labels,
            num_features: x.cols(),
            active_features,
            edges,
            skipped_citations: citations.skipped,
            split,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Raw binary feature matrix.
    pub fn raw_features(&self) -> Result<FeatureMatrix> {
        let mut m = Matrix::zeros(self.num_nodes(), self.num_features);
        for (i, cols) in self.active_features.iter().enumerate() {
            for &c in cols {
                let c = c as usize;
                if c >= self.num_features {
                    return Err(Error::Dataset(format!(
                        "node {i} lists feature {c} but there are only {}",
                        self.num_features
                    )));
                }
                m.set(i, c, 1.0);
            }
        }
        FeatureMatrix::new(m)
    }

    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        if self.format != CACHE_FORMAT || self.version != CACHE_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported cache format {} v{}",
                self.format, self.version
            )));
        }
        if self.active_features.len() != self.num_nodes() || self.labels.len() != self.num_nodes() {
            return Err(Error::Dataset("cache arrays disagree on node count".into()));
        }
        let graph = Graph::build(&self.edges, self.num_nodes(), true, true)?;
        LabeledDataset::new(
            self.name.clone(),
            graph,
            self.raw_features()?.row_normalize(),
            self.labels.clone(),
            self.num_classes(),
            self.split.clone(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cache serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: PathBuf::from(path),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Undirected, self-looped graph and row-normalized features.
pub fn build_dataset(
    name: &str,
    content: &NodeContent,
    citations: &Citations,
    sizes: SplitSizes,
    seed: u64,
) -> Result<LabeledDataset> {
    DatasetCache::from_parts(name, content, citations, sizes, seed)?.to_dataset()
}

/// Reads `content_path` and `cites_path` into a cache.
pub fn ingest_files(
    name: &str,
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
    sizes: SplitSizes,
    seed: u64,
) -> Result<DatasetCache> {
    let content = load_content(content_path)?;
    let citations = load_cites(cites_path, &content.id_index())?;
    DatasetCache::from_parts(name, &content, &citations, sizes, seed)
}
