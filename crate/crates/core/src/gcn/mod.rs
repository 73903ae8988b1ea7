//! Two-layer graph convolutional network with full-batch Adam training.
//!
//! `Z = softmax(Â · ReLU(Â · F · W1 + b1) · W2 + b2)` where `Â` is the
//! self-loop-augmented, symmetrically normalized adjacency.

mod adam;
mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelTable, Split};
use crate::error::{Error, Result};
use crate::graph::UndirectedGraph;
use crate::sparse::{DenseMatrix, SparseFeatureMatrix};

pub use checkpoint::{format_checkpoint, load_checkpoint, parse_checkpoint, save_checkpoint};

use adam::Adam;

/// `Â = D̃^{-1/2} (A + I) D̃^{-1/2}` stored as a sparse symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    mat: SparseFeatureMatrix,
}

impl NormalizedAdjacency {
    pub fn n_nodes(&self) -> usize {
        self.mat.n_rows()
    }

    pub fn matrix(&self) -> &SparseFeatureMatrix {
        &self.mat
    }

    /// `Â · x`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.mat.mul_dense(x)
    }

    /// Builds from raw neighbor lists, rejecting asymmetric input.
    pub fn from_neighbor_lists(adj: Vec<Vec<u32>>) -> Result<Self> {
        Ok(normalize_adjacency(&UndirectedGraph::new(adj)?))
    }
}

pub fn normalize_adjacency(g: &UndirectedGraph) -> NormalizedAdjacency {
    let n = g.n_nodes();
    let scale: Vec<f64> = (0..n).map(|u| 1.0 / ((1 + g.degree(u)) as f64).sqrt()).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(2 * g.n_edges() + n);
    let mut values = Vec::with_capacity(col_idx.capacity());
    row_ptr.push(0);
    for u in 0..n {
        let nbrs = g.neighbors(u);
        let split = nbrs.partition_point(|&v| (v as usize) < u);
        let cols = nbrs[..split].iter().copied().chain(std::iter::once(u as u32)).chain(nbrs[split..].iter().copied());
        for v in cols {
            col_idx.push(v);
            values.push(scale[u] * scale[v as usize]);
        }
        row_ptr.push(col_idx.len());
    }
    let mat = SparseFeatureMatrix::new(n, n, row_ptr, col_idx, values)
        .expect("normalized adjacency built from a validated graph");
    NormalizedAdjacency { mat }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnHyper {
    pub hidden: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GcnHyper {
    fn default() -> Self {
        Self { hidden: 128, learning_rate: 0.001, dropout: 0.5, weight_decay: 0.0005, epochs: 200, seed: 0 }
    }
}

impl GcnHyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
    pub hyper: GcnHyper,
}

impl GcnParams {
    pub fn zeros(d_in: usize, n_classes: usize, hyper: GcnHyper) -> Self {
        let h = hyper.hidden;
        Self {
            w1: DenseMatrix::zeros(d_in, h),
            b1: vec![0.0; h],
            w2: DenseMatrix::zeros(h, n_classes),
            b2: vec![0.0; n_classes],
            hyper,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(d_in: usize, n_classes: usize, hyper: GcnHyper, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(d_in, n_classes, hyper);
        for w in [&mut p.w1, &mut p.w2] {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for x in w.data_mut() {
                *x = rng.gen_range(-limit..limit);
            }
        }
        p
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn n_params(&self) -> usize {
        self.w1.data().len() + self.b1.len() + self.w2.data().len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|x| x.is_finite())
    }

    fn validate(&self) -> Result<()> {
        let h = self.w1.cols();
        if self.b1.len() != h || self.w2.rows() != h || self.b2.len() != self.w2.cols() {
            return Err(Error::Shape(format!(
                "inconsistent parameters: W1 {}x{}, b1 {}, W2 {}x{}, b2 {}",
                self.w1.rows(),
                self.w1.cols(),
                self.b1.len(),
                self.w2.rows(),
                self.w2.cols(),
                self.b2.len()
            )));
        }
        Ok(())
    }

    fn slices(&self) -> [&[f64]; 4] {
        [self.w1.data(), &self.b1, self.w2.data(), &self.b2]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.data_mut(), &mut self.b1, self.w2.data_mut(), &mut self.b2]
    }

    fn get_flat(&self, mut i: usize) -> f64 {
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index out of range")
    }

    fn set_flat(&mut self, mut i: usize, v: f64) {
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = v;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index out of range")
    }
}

struct ForwardCache {
    p1: DenseMatrix,
    /// Per hidden activation: 0 if dropped, `1 / (1 - p)` if kept.
    mask: Option<Vec<f64>>,
    hd: DenseMatrix,
    log_z: DenseMatrix,
}

fn check_finite(m: &DenseMatrix, layer: &'static str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric { layer, msg: "non-finite value".into() })
    }
}

fn check_inputs(params: &GcnParams, adj: &NormalizedAdjacency, f: &SparseFeatureMatrix) -> Result<()> {
    params.validate()?;
    if f.n_cols() != params.d_in() {
        return Err(Error::Shape(format!("features have {} columns, W1 expects {}", f.n_cols(), params.d_in())));
    }
    if f.n_rows() != adj.n_nodes() {
        return Err(Error::Shape(format!("features have {} rows, graph has {} nodes", f.n_rows(), adj.n_nodes())));
    }
    Ok(())
}

fn log_softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    let c = out.cols();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    out
}

fn forward_cached(
    params: &GcnParams,
    adj: &NormalizedAdjacency,
    f: &SparseFeatureMatrix,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardCache> {
    check_inputs(params, adj, f)?;
    let xw = f.mul_dense(&params.w1)?;
    let mut p1 = adj.apply(&xw)?;
    p1.add_row_vector(&params.b1);
    check_finite(&p1, "hidden")?;
    let mut hd = p1.clone();
    for x in hd.data_mut() {
        *x = x.max(0.0);
    }
    let mask = dropout_rng.filter(|_| params.hyper.dropout > 0.0).map(|rng| {
        let p = params.hyper.dropout;
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..hd.data().len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        for (x, m) in hd.data_mut().iter_mut().zip(&mask) {
            *x *= m;
        }
        mask
    });
    let q = hd.matmul(&params.w2)?;
    let mut logits = adj.apply(&q)?;
    logits.add_row_vector(&params.b2);
    check_finite(&logits, "output")?;
    let log_z = log_softmax_rows(&logits);
    check_finite(&log_z, "softmax")?;
    Ok(ForwardCache { p1, mask, hd, log_z })
}

/// Per-node class probabilities. Dropout is applied only when `dropout_rng` is given.
pub fn gcn_forward(
    params: &GcnParams,
    adj: &NormalizedAdjacency,
    f: &SparseFeatureMatrix,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<DenseMatrix> {
    let mut z = forward_cached(params, adj, f, dropout_rng)?.log_z;
    for x in z.data_mut() {
        *x = x.exp();
    }
    Ok(z)
}

fn labeled_targets(labels: &LabelTable, idx: &[usize]) -> Result<Vec<(usize, usize)>> {
    idx.iter()
        .map(|&i| match labels.labels().get(i) {
            Some(Some(y)) => Ok((i, *y as usize)),
            Some(None) => Err(Error::Contract(format!("node {i} has no known label"))),
            None => Err(Error::Bounds(format!("node {i} >= {} labeled nodes", labels.n_nodes()))),
        })
        .collect()
}

fn weight_penalty(params: &GcnParams) -> f64 {
    params.hyper.weight_decay * (params.w1.frobenius_sq() + params.w2.frobenius_sq()) / 2.0
}

/// `−(1/m) Σ_labeled ln Z[i, y_i] + wd (‖W1‖² + ‖W2‖²) / 2`.
pub fn gcn_loss(z: &DenseMatrix, split: &Split, labels: &LabelTable, params: &GcnParams) -> Result<f64> {
    let targets = labeled_targets(labels, &split.labeled_idx)?;
    if targets.is_empty() {
        return Err(Error::Input("loss needs at least one labeled node".into()));
    }
    let ce: f64 = targets.iter().map(|&(i, y)| -z.get(i, y).ln()).sum::<f64>() / targets.len() as f64;
    Ok(ce + weight_penalty(params))
}

fn loss_from_cache(cache: &ForwardCache, targets: &[(usize, usize)], params: &GcnParams) -> f64 {
    let ce: f64 = targets.iter().map(|&(i, y)| -cache.log_z.get(i, y)).sum::<f64>() / targets.len() as f64;
    ce + weight_penalty(params)
}

struct Gradients {
    w1: DenseMatrix,
    b1: Vec<f64>,
    w2: DenseMatrix,
    b2: Vec<f64>,
}

impl Gradients {
    fn slices(&self) -> [&[f64]; 4] {
        [self.w1.data(), &self.b1, self.w2.data(), &self.b2]
    }
}

fn backward(
    params: &GcnParams,
    adj: &NormalizedAdjacency,
    f_t: &SparseFeatureMatrix,
    cache: &ForwardCache,
    targets: &[(usize, usize)],
) -> Result<Gradients> {
    let n = cache.log_z.rows();
    let c = params.n_classes();
    let inv_m = 1.0 / targets.len() as f64;
    let mut g_logits = DenseMatrix::zeros(n, c);
    for &(i, y) in targets {
        let row = g_logits.row_mut(i);
        for (k, g) in row.iter_mut().enumerate() {
            *g = cache.log_z.get(i, k).exp() * inv_m;
        }
        row[y] -= inv_m;
    }
    let b2 = g_logits.col_sums();
    let g_q = adj.apply(&g_logits)?;
    let mut w2 = cache.hd.t_matmul(&g_q)?;
    let mut g_p1 = g_q.matmul_t(&params.w2)?;
    if let Some(mask) = &cache.mask {
        for (g, m) in g_p1.data_mut().iter_mut().zip(mask) {
            *g *= m;
        }
    }
    for (g, &p) in g_p1.data_mut().iter_mut().zip(cache.p1.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    let b1 = g_p1.col_sums();
    let g_xw = adj.apply(&g_p1)?;
    let mut w1 = f_t.mul_dense(&g_xw)?;
    let wd = params.hyper.weight_decay;
    for (g, w) in w1.data_mut().iter_mut().zip(params.w1.data()) {
        *g += wd * w;
    }
    for (g, w) in w2.data_mut().iter_mut().zip(params.w2.data()) {
        *g += wd * w;
    }
    Ok(Gradients { w1, b1, w2, b2 })
}

/// Loss and its analytic gradient with dropout disabled, flattened as `[W1, b1, W2, b2]`.
pub fn loss_and_gradient(
    params: &GcnParams,
    adj: &NormalizedAdjacency,
    f: &SparseFeatureMatrix,
    labels: &LabelTable,
    labeled_idx: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let targets = labeled_targets(labels, labeled_idx)?;
    if targets.is_empty() {
        return Err(Error::Input("loss needs at least one labeled node".into()));
    }
    let cache = forward_cached(params, adj, f, None)?;
    let grads = backward(params, adj, &f.transpose(), &cache, &targets)?;
    Ok((loss_from_cache(&cache, &targets, params), grads.slices().concat()))
}

/// Largest relative discrepancy `|g_a − g_fd| / max(|g_a|, |g_fd|, 1e-8)` between analytic
/// and central-difference gradients over every parameter, dropout disabled.
pub fn gradient_check(
    params: &GcnParams,
    adj: &NormalizedAdjacency,
    f: &SparseFeatureMatrix,
    labels: &LabelTable,
    labeled_idx: &[usize],
    step: f64,
) -> Result<f64> {
    let (_, analytic) = loss_and_gradient(params, adj, f, labels, labeled_idx)?;
    let targets = labeled_targets(labels, labeled_idx)?;
    let loss_at = |p: &GcnParams| -> Result<f64> {
        Ok(loss_from_cache(&forward_cached(p, adj, f, None)?, &targets, p))
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (i, &ga) in analytic.iter().enumerate() {
        let orig = probe.get_flat(i);
        probe.set_flat(i, orig + step);
        let up = loss_at(&probe)?;
        probe.set_flat(i, orig - step);
        let down = loss_at(&probe)?;
        probe.set_flat(i, orig);
        let gfd = (up - down) / (2.0 * step);
        let rel = (ga - gfd).abs() / ga.abs().max(gfd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: GcnParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned when a validation set drove selection.
    pub best_epoch: Option<usize>,
}

fn accuracy_of(log_z: &DenseMatrix, targets: &[(usize, usize)]) -> f64 {
    let hits = targets.iter().filter(|&&(i, y)| log_z.row_argmax(i) == y).count();
    hits as f64 / targets.len() as f64
}

/// Full-batch training on the labeled nodes of `split`.
///
/// Parameters come from a Glorot-uniform draw seeded by `hyper.seed`; the same seed also
/// drives the dropout masks. With a non-empty `val_idx` the parameters from the epoch with
/// the highest validation accuracy are returned (earliest on ties).
pub fn train_gcn(
    f: &SparseFeatureMatrix,
    adj: &NormalizedAdjacency,
    labels: &LabelTable,
    split: &Split,
    hyper: &GcnHyper,
) -> Result<TrainOutput> {
    hyper.validate()?;
    split.validate(f.n_rows())?;
    let targets = labeled_targets(labels, &split.labeled_idx)?;
    if targets.is_empty() {
        return Err(Error::Input("training needs at least one labeled node".into()));
    }
    let val_targets = labeled_targets(labels, &split.val_idx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = GcnParams::glorot(f.n_cols(), labels.n_classes(), hyper.clone(), &mut rng);
    check_inputs(&params, adj, f)?;
    let f_t = f.transpose();
    let sizes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    let mut opt = Adam::new(hyper.learning_rate, &sizes);
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, GcnParams)> = None;
    for epoch in 0..hyper.epochs {
        let cache = forward_cached(&params, adj, f, Some(&mut rng)).map_err(|e| Error::Training {
            epoch,
            msg: e.to_string(),
        })?;
        let loss = loss_from_cache(&cache, &targets, &params);
        if !loss.is_finite() {
            return Err(Error::Training { epoch, msg: format!("loss is {loss}") });
        }
        let train_accuracy = accuracy_of(&cache.log_z, &targets);
        let grads = backward(&params, adj, &f_t, &cache, &targets)?;
        opt.step(&mut params.slices_mut(), &grads.slices());
        if !params.is_finite() {
            return Err(Error::Training { epoch, msg: "parameters became non-finite".into() });
        }
        let val_accuracy = if val_targets.is_empty() {
            None
        } else {
            let eval = forward_cached(&params, adj, f, None)
                .map_err(|e| Error::Training { epoch, msg: e.to_string() })?;
            let acc = accuracy_of(&eval.log_z, &val_targets);
            if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                best = Some((acc, epoch, params.clone()));
            }
            Some(acc)
        };
        log::debug!("epoch {epoch}: loss {loss:.6} train acc {train_accuracy:.4}");
        history.push(EpochRecord { epoch, loss, train_accuracy, val_accuracy });
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (params, None),
    };
    Ok(TrainOutput { params, history, best_epoch })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub node: usize,
    pub label: u32,
    pub confidence: f64,
}

/// Predicted labels for every node outside the labeled set, ascending by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub n_nodes: usize,
    pub entries: Vec<PseudoLabel>,
}

impl PseudoLabels {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fraction of entries whose node has a known label equal to the prediction.
    /// Entries without a known label are skipped; `None` if none remain.
    pub fn accuracy(&self, labels: &LabelTable) -> Option<f64> {
        let scored: Vec<bool> = self
            .entries
            .iter()
            .filter_map(|e| labels.get(e.node).map(|y| y == e.label))
            .collect();
        if scored.is_empty() {
            None
        } else {
            Some(scored.iter().filter(|&&ok| ok).count() as f64 / scored.len() as f64)
        }
    }
}

/// Argmax of the inference-mode forward pass; ties go to the lowest class id.
pub fn predict(params: &GcnParams, f: &SparseFeatureMatrix, adj: &NormalizedAdjacency) -> Result<Vec<(u32, f64)>> {
    let z = gcn_forward(params, adj, f, None)?;
    Ok((0..z.rows())
        .map(|i| {
            let c = z.row_argmax(i);
            (c as u32, z.get(i, c))
        })
        .collect())
}

pub fn pseudo_label(
    params: &GcnParams,
    f: &SparseFeatureMatrix,
    adj: &NormalizedAdjacency,
    split: &Split,
) -> Result<PseudoLabels> {
    let n = f.n_rows();
    let labeled = split.labeled_mask(n);
    let entries = predict(params, f, adj)?
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !labeled[*i])
        .map(|(node, (label, confidence))| PseudoLabel { node, label, confidence })
        .collect();
    Ok(PseudoLabels { n_nodes: n, entries })
}

pub fn evaluate_accuracy(
    params: &GcnParams,
    f: &SparseFeatureMatrix,
    adj: &NormalizedAdjacency,
    labels: &LabelTable,
    idx: &[usize],
) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Input("accuracy over an empty index set".into()));
    }
    let targets = labeled_targets(labels, idx)?;
    let log_z = forward_cached(params, adj, f, None)?.log_z;
    Ok(accuracy_of(&log_z, &targets))
}

/// TSV `node_id, label, confidence, is_pseudo` over all nodes. Labeled nodes carry their
/// true label with confidence 1; nodes with neither a training label nor a prediction
/// are omitted.
pub fn pseudo_label_tsv(labels: &LabelTable, split: &Split, pseudo: &PseudoLabels) -> Result<String> {
    use std::fmt::Write as _;
    let mut rows: Vec<Option<(u32, f64, u8)>> = vec![None; pseudo.n_nodes];
    for (i, y) in labeled_targets(labels, &split.labeled_idx)? {
        rows[i] = Some((y as u32, 1.0, 0));
    }
    for e in &pseudo.entries {
        rows[e.node] = Some((e.label, e.confidence, 1));
    }
    let mut out = String::from("node_id\tlabel\tconfidence\tis_pseudo\n");
    for (i, row) in rows.iter().enumerate() {
        if let Some((label, conf, is_pseudo)) = row {
            let _ = writeln!(out, "{i}\t{label}\t{conf:.8e}\t{is_pseudo}");
        }
    }
    Ok(out)
}
