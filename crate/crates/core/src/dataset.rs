//! Feature, label, split and edge-list I/O.
//!
//! Text formats (all 0-indexed, whitespace separated, UTF-8):
//!
//! * coo-text features: `n_rows n_cols nnz`, then `nnz` lines `row col value`
//! * dense-text features: `n_rows n_cols`, then `n_rows` lines of `n_cols` values
//! * labels: `node_id class_id` per line; nodes that never appear are unknown
//! * edge list: `src dst` per directed edge

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseFeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureFormat {
    CooText,
    DenseText,
}

impl FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coo" | "coo-text" => Ok(Self::CooText),
            "dense" | "dense-text" => Ok(Self::DenseText),
            other => Err(Error::Config(format!("unknown feature format `{other}`"))),
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-empty lines paired with their 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub(crate) fn parse_field<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| Error::parse(line, format!("invalid {what} `{tok}`")))
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<SparseFeatureMatrix> {
    parse_features(&read_text(path)?, format)
}

pub fn parse_features(text: &str, format: FeatureFormat) -> Result<SparseFeatureMatrix> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "empty feature file"))?;
    let mut h = header.split_whitespace();
    let n_rows: usize = parse_field(h.next(), hline, "n_rows")?;
    let n_cols: usize = parse_field(h.next(), hline, "n_cols")?;
    match format {
        FeatureFormat::CooText => {
            let nnz: usize = parse_field(h.next(), hline, "nnz")?;
            if h.next().is_some() {
                return Err(Error::parse(hline, "header must be `n_rows n_cols nnz`"));
            }
            let mut triplets = Vec::with_capacity(nnz);
            for (ln, line) in lines {
                let mut t = line.split_whitespace();
                let r: usize = parse_field(t.next(), ln, "row")?;
                let c: usize = parse_field(t.next(), ln, "col")?;
                let v: f64 = parse_field(t.next(), ln, "value")?;
                if t.next().is_some() {
                    return Err(Error::parse(ln, "expected `row col value`"));
                }
                if r >= n_rows || c >= n_cols {
                    return Err(Error::Bounds(format!(
                        "line {ln}: entry ({r},{c}) outside declared {n_rows}x{n_cols}"
                    )));
                }
                triplets.push((r, c, v));
            }
            if triplets.len() != nnz {
                return Err(Error::parse(
                    hline,
                    format!("header declares {nnz} entries, found {}", triplets.len()),
                ));
            }
            SparseFeatureMatrix::from_triplets(n_rows, n_cols, triplets)
        }
        FeatureFormat::DenseText => {
            if h.next().is_some() {
                return Err(Error::parse(hline, "header must be `n_rows n_cols`"));
            }
            let mut data = Vec::with_capacity(n_rows * n_cols);
            let mut seen = 0;
            for (ln, line) in lines {
                if seen == n_rows {
                    return Err(Error::Bounds(format!("line {ln}: more than {n_rows} rows")));
                }
                let before = data.len();
                for tok in line.split_whitespace() {
                    data.push(parse_field::<f64>(Some(tok), ln, "value")?);
                }
                if data.len() - before != n_cols {
                    return Err(Error::parse(
                        ln,
                        format!("expected {n_cols} values, found {}", data.len() - before),
                    ));
                }
                seen += 1;
            }
            if seen != n_rows {
                return Err(Error::parse(hline, format!("header declares {n_rows} rows, found {seen}")));
            }
            SparseFeatureMatrix::from_dense(n_rows, n_cols, &data)
        }
    }
}

/// Writes features; values use shortest round-trip formatting so a reload is exact.
pub fn save_features(path: &Path, f: &SparseFeatureMatrix, format: FeatureFormat) -> Result<()> {
    write_text(path, &format_features(f, format))
}

pub fn format_features(f: &SparseFeatureMatrix, format: FeatureFormat) -> String {
    let mut out = String::new();
    match format {
        FeatureFormat::CooText => {
            let _ = writeln!(out, "{} {} {}", f.n_rows(), f.n_cols(), f.nnz());
            for (r, c, v) in f.triplets() {
                let _ = writeln!(out, "{r} {c} {v:?}");
            }
        }
        FeatureFormat::DenseText => {
            let _ = writeln!(out, "{} {}", f.n_rows(), f.n_cols());
            let dense = f.to_dense();
            for r in 0..f.n_rows() {
                let row: Vec<String> = dense.row(r).iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
    }
    out
}

/// Smoothed TF-IDF: `count * (ln((1 + N) / (1 + df)) + 1)`.
pub fn tfidf_transform(f: &SparseFeatureMatrix) -> Result<SparseFeatureMatrix> {
    if let Some(v) = f.values().iter().find(|v| **v < 0.0) {
        return Err(Error::Domain(format!("tf-idf needs non-negative counts, found {v}")));
    }
    let mut df = vec![0usize; f.n_cols()];
    for (&c, &v) in f.col_idx().iter().zip(f.values()) {
        if v != 0.0 {
            df[c as usize] += 1;
        }
    }
    let n = f.n_rows() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
    Ok(f.map_values(|c, v| v * idf[c]))
}

/// Per-node class ids; `None` marks a node whose label is unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTable {
    n_classes: usize,
    labels: Vec<Option<u32>>,
}

impl LabelTable {
    pub fn new(n_classes: usize, labels: Vec<Option<u32>>) -> Result<Self> {
        if let Some((i, c)) = labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c as usize >= n_classes).map(|c| (i, c)))
        {
            return Err(Error::Bounds(format!("node {i} has class {c} >= n_classes {n_classes}")));
        }
        Ok(Self { n_classes, labels })
    }

    /// All labels known; class count inferred from the largest id.
    pub fn from_classes(classes: &[u32]) -> Self {
        let n_classes = classes.iter().max().map_or(0, |&c| c as usize + 1);
        Self { n_classes, labels: classes.iter().map(|&c| Some(c)).collect() }
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, node: usize) -> Option<u32> {
        self.labels.get(node).copied().flatten()
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    pub fn known(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| l.map(|c| (i, c)))
    }

    pub fn n_known(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Reads a label file for `n_nodes` nodes; the class count is the largest id + 1
/// unless `n_classes` is given.
pub fn load_labels(path: &Path, n_nodes: usize, n_classes: Option<usize>) -> Result<LabelTable> {
    parse_labels(&read_text(path)?, n_nodes, n_classes)
}

pub fn parse_labels(text: &str, n_nodes: usize, n_classes: Option<usize>) -> Result<LabelTable> {
    let mut labels = vec![None; n_nodes];
    let mut max_class = None::<u32>;
    for (ln, line) in content_lines(text) {
        let mut t = line.split_whitespace();
        let node: usize = parse_field(t.next(), ln, "node_id")?;
        let class: u32 = parse_field(t.next(), ln, "class_id")?;
        if t.next().is_some() {
            return Err(Error::parse(ln, "expected `node_id class_id`"));
        }
        if node >= n_nodes {
            return Err(Error::Bounds(format!("line {ln}: node {node} >= n_nodes {n_nodes}")));
        }
        if labels[node].is_some() {
            return Err(Error::parse(ln, format!("node {node} labeled twice")));
        }
        labels[node] = Some(class);
        max_class = Some(max_class.map_or(class, |m| m.max(class)));
    }
    let n_classes = n_classes.unwrap_or_else(|| max_class.map_or(0, |m| m as usize + 1));
    LabelTable::new(n_classes, labels)
}

pub fn format_labels(labels: &LabelTable) -> String {
    let mut out = String::new();
    for (i, c) in labels.known() {
        let _ = writeln!(out, "{i} {c}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitStrategy {
    Uniform,
    PerClassBalanced,
}

impl SplitStrategy {
    /// Balanced when the budget divides evenly across classes, uniform otherwise.
    pub fn auto(budget: usize, n_classes: usize) -> Self {
        if n_classes > 0 && budget % n_classes == 0 {
            Self::PerClassBalanced
        } else {
            Self::Uniform
        }
    }
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "per-class-balanced" | "balanced" => Ok(Self::PerClassBalanced),
            other => Err(Error::Config(format!("unknown split strategy `{other}`"))),
        }
    }
}

/// Labeled / validation / test node indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub labeled_idx: Vec<usize>,
    #[serde(default)]
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

impl Split {
    pub fn m(&self) -> usize {
        self.labeled_idx.len()
    }

    /// Checks disjointness and bounds.
    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in self.labeled_idx.iter().chain(&self.val_idx).chain(&self.test_idx) {
            if i >= n_nodes {
                return Err(Error::Bounds(format!("split index {i} >= n_nodes {n_nodes}")));
            }
            if !seen.insert(i) {
                return Err(Error::Contract(format!("node {i} appears in more than one split part")));
            }
        }
        Ok(())
    }

    /// Mask over all nodes: true for labeled training nodes.
    pub fn labeled_mask(&self, n_nodes: usize) -> Vec<bool> {
        let mut mask = vec![false; n_nodes];
        for &i in &self.labeled_idx {
            mask[i] = true;
        }
        mask
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_text(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

/// Samples `budget` labeled nodes without replacement; remaining known nodes are the test set.
pub fn make_split(
    labels: &LabelTable,
    budget: usize,
    strategy: SplitStrategy,
    seed: u64,
) -> Result<Split> {
    make_split_with_validation(labels, budget, 0, strategy, seed)
}

/// As [`make_split`], additionally moving `n_val` uniformly drawn remaining nodes into a
/// validation set.
pub fn make_split_with_validation(
    labels: &LabelTable,
    budget: usize,
    n_val: usize,
    strategy: SplitStrategy,
    seed: u64,
) -> Result<Split> {
    let known: Vec<(usize, u32)> = labels.known().collect();
    if budget == 0 {
        return Err(Error::Config("label budget must be at least 1".into()));
    }
    if budget + n_val > known.len() {
        return Err(Error::Config(format!(
            "label budget {budget} + validation {n_val} exceeds {} known labels",
            known.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(budget);
    match strategy {
        SplitStrategy::Uniform => {
            let mut pool: Vec<usize> = known.iter().map(|&(i, _)| i).collect();
            pool.shuffle(&mut rng);
            labeled.extend_from_slice(&pool[..budget]);
            let covered: BTreeSet<u32> = labeled.iter().filter_map(|&i| labels.get(i)).collect();
            if covered.len() < labels.n_classes() {
                log::warn!(
                    "uniform split covers {} of {} classes",
                    covered.len(),
                    labels.n_classes()
                );
            }
        }
        SplitStrategy::PerClassBalanced => {
            let c = labels.n_classes();
            if c == 0 || budget % c != 0 {
                return Err(Error::Config(format!(
                    "per-class-balanced split needs a budget divisible by {c} classes, got {budget}"
                )));
            }
            let per_class = budget / c;
            for class in 0..c as u32 {
                let mut pool: Vec<usize> =
                    known.iter().filter(|&&(_, l)| l == class).map(|&(i, _)| i).collect();
                if pool.len() < per_class {
                    return Err(Error::Config(format!(
                        "class {class} has {} known labels, {per_class} requested",
                        pool.len()
                    )));
                }
                pool.shuffle(&mut rng);
                labeled.extend_from_slice(&pool[..per_class]);
            }
        }
    }
    labeled.sort_unstable();
    let chosen: BTreeSet<usize> = labeled.iter().copied().collect();
    let mut rest: Vec<usize> =
        known.iter().map(|&(i, _)| i).filter(|i| !chosen.contains(i)).collect();
    let mut val_idx = Vec::new();
    if n_val > 0 {
        rest.shuffle(&mut rng);
        val_idx = rest.drain(..n_val).collect();
        val_idx.sort_unstable();
        rest.sort_unstable();
    }
    if rest.is_empty() {
        log::warn!("label budget consumes every known label; the test set is empty");
    }
    Ok(Split { labeled_idx: labeled, val_idx, test_idx: rest, seed })
}

pub fn load_edge_list(path: &Path, n_nodes: usize) -> Result<Vec<(u32, u32)>> {
    parse_edge_list(&read_text(path)?, n_nodes)
}

pub fn parse_edge_list(text: &str, n_nodes: usize) -> Result<Vec<(u32, u32)>> {
    let mut edges = Vec::new();
    for (ln, line) in content_lines(text) {
        let mut t = line.split_whitespace();
        let s: usize = parse_field(t.next(), ln, "src")?;
        let d: usize = parse_field(t.next(), ln, "dst")?;
        if t.next().is_some() {
            return Err(Error::parse(ln, "expected `src dst`"));
        }
        if s >= n_nodes || d >= n_nodes {
            return Err(Error::Bounds(format!("line {ln}: edge {s}->{d} with n_nodes {n_nodes}")));
        }
        edges.push((s as u32, d as u32));
    }
    Ok(edges)
}

pub fn format_edge_list(edges: impl IntoIterator<Item = (u32, u32)>) -> String {
    let mut out = String::new();
    for (s, d) in edges {
        let _ = writeln!(out, "{s} {d}");
    }
    out
}
