//! Graph convolutional student classifier: stacked normalized-adjacency
//! convolutions, mean-pool readout and an MLP head, trained by mini-batch
//! gradient descent on teacher labels.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeaturedGraph;
use crate::graph::SentenceGraph;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GcnError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature dimension {found} does not match model input {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("graph `{0}` has no reference label")]
    MissingLabels(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = GcnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(GcnError::Checkpoint(format!("unknown activation `{other}`"))),
        }
    }
}

/// How nodes outside a coalition are hidden from the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Zero the feature rows, keep the adjacency.
    #[default]
    ZeroFeatures,
    /// Zero the feature rows and also cut every edge touching a hidden node.
    DropEdges,
}

/// Affine layer; `w` is `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn glorot(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-limit..=limit));
        Dense {
            w,
            b: Array1::zeros(outputs),
        }
    }

    fn zeros_like(&self) -> Self {
        Dense {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub layers: Vec<Dense>,
    pub head: Vec<Dense>,
    pub n_classes: usize,
    pub activation: Activation,
}

/// `D^-1/2 (A + I) D^-1/2` over the direction-blind adjacency.
pub fn normalize_adjacency(g: &SentenceGraph) -> Array2<f64> {
    normalize_with_mask(g, None)
}

fn normalize_with_mask(g: &SentenceGraph, keep: Option<&[bool]>) -> Array2<f64> {
    let n = g.len();
    let mut a = Array2::<f64>::eye(n);
    for &(s, d) in g.edges() {
        if keep.is_some_and(|k| !k[s] || !k[d]) {
            continue;
        }
        a[[s, d]] = 1.0;
        a[[d, s]] = 1.0;
    }
    let inv_sqrt: Vec<f64> = a.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    for ((i, j), v) in a.indexed_iter_mut() {
        *v *= inv_sqrt[i] * inv_sqrt[j];
    }
    a
}

/// Normalized adjacency and features of one graph, computed once and reused
/// across many (masked) evaluations.
#[derive(Debug, Clone)]
pub struct PreparedGraph<'a> {
    pub graph: &'a FeaturedGraph,
    pub adjacency: Array2<f64>,
}

impl<'a> PreparedGraph<'a> {
    pub fn new(graph: &'a FeaturedGraph) -> Self {
        PreparedGraph {
            adjacency: normalize_adjacency(&graph.graph),
            graph,
        }
    }

    pub fn len(&self) -> usize {
        self.graph.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Trace {
    /// Aggregated conv inputs `A H` and conv pre-activations.
    aggregated: Vec<Array2<f64>>,
    conv_pre: Vec<Array2<f64>>,
    head_inputs: Vec<Array1<f64>>,
    head_pre: Vec<Array1<f64>>,
    logits: Array1<f64>,
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exp = logits.mapv(|x| (x - max).exp());
    let total = exp.sum();
    exp / total
}

fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl GcnModel {
    /// Glorot-initialized model with the given conv and head hidden widths.
    pub fn new(
        input_dim: usize,
        conv_dims: &[usize],
        head_hidden: &[usize],
        n_classes: usize,
        activation: Activation,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &d in conv_dims {
            layers.push(Dense::glorot(&mut rng, width, d));
            width = d;
        }
        let mut head = Vec::new();
        for &d in head_hidden.iter().chain(std::iter::once(&n_classes)) {
            head.push(Dense::glorot(&mut rng, width, d));
            width = d;
        }
        GcnModel {
            layers,
            head,
            n_classes,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .or(self.head.first())
            .map(Dense::inputs)
            .unwrap_or(0)
    }

    /// Conv widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Dense::outputs));
        dims
    }

    fn check_dim(&self, fg: &FeaturedGraph) -> Result<(), GcnError> {
        if fg.dim() != self.input_dim() {
            return Err(GcnError::DimensionMismatch {
                expected: self.input_dim(),
                found: fg.dim(),
            });
        }
        Ok(())
    }

    fn trace(&self, adjacency: &Array2<f64>, features: Array2<f64>) -> Trace {
        let act = self.activation;
        let mut aggregated = Vec::with_capacity(self.layers.len());
        let mut conv_pre = Vec::with_capacity(self.layers.len());
        let mut h = features;
        for layer in &self.layers {
            let agg = adjacency.dot(&h);
            let z = agg.dot(&layer.w) + &layer.b;
            let next = z.mapv(|x| act.apply(x));
            aggregated.push(agg);
            conv_pre.push(z);
            h = next;
        }
        let mut a = h.mean_axis(Axis(0)).expect("graphs have at least one node");
        let mut head_inputs = Vec::with_capacity(self.head.len());
        let mut head_pre = Vec::with_capacity(self.head.len());
        let last = self.head.len() - 1;
        for (k, layer) in self.head.iter().enumerate() {
            let z = a.dot(&layer.w) + &layer.b;
            let next = if k == last { z.clone() } else { z.mapv(|x| act.apply(x)) };
            head_inputs.push(a);
            head_pre.push(z);
            a = next;
        }
        Trace {
            aggregated,
            conv_pre,
            head_inputs,
            head_pre,
            logits: a,
        }
    }

    /// Raw class scores for `prepared`, with nodes whose `keep` entry is false hidden.
    pub fn logits_masked(&self, prepared: &PreparedGraph<'_>, keep: Option<&[bool]>, mode: MaskMode) -> Array1<f64> {
        let Some(keep) = keep else {
            return self.trace(&prepared.adjacency, prepared.graph.features.clone()).logits;
        };
        let mut x = prepared.graph.features.clone();
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            if !keep[i] {
                row.fill(0.0);
            }
        }
        match mode {
            MaskMode::ZeroFeatures => self.trace(&prepared.adjacency, x).logits,
            MaskMode::DropEdges => {
                let adj = normalize_with_mask(&prepared.graph.graph, Some(keep));
                self.trace(&adj, x).logits
            }
        }
    }

    pub fn logits(&self, fg: &FeaturedGraph) -> Result<Array1<f64>, GcnError> {
        self.check_dim(fg)?;
        Ok(self.trace(&normalize_adjacency(&fg.graph), fg.features.clone()).logits)
    }

    /// Class probabilities.
    pub fn forward(&self, fg: &FeaturedGraph) -> Result<Array1<f64>, GcnError> {
        Ok(softmax(&self.logits(fg)?))
    }

    /// Class probabilities with the feature rows of nodes outside `keep` zeroed.
    pub fn masked_forward(&self, fg: &FeaturedGraph, keep: &[bool]) -> Result<Array1<f64>, GcnError> {
        self.check_dim(fg)?;
        let prepared = PreparedGraph::new(fg);
        Ok(softmax(&self.logits_masked(&prepared, Some(keep), MaskMode::ZeroFeatures)))
    }

    pub fn predict(&self, fg: &FeaturedGraph) -> Result<usize, GcnError> {
        Ok(argmax(&self.logits(fg)?))
    }

    fn zeros_like(&self) -> Self {
        GcnModel {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            head: self.head.iter().map(Dense::zeros_like).collect(),
            n_classes: self.n_classes,
            activation: self.activation,
        }
    }

    fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.layers.iter().chain(&self.head)
    }

    fn dense_layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.layers.iter_mut().chain(&mut self.head)
    }

    /// All parameters flattened: per layer (conv first, then head), weights
    /// row-major followed by biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in self.dense_layers() {
            out.extend(d.w.iter());
            out.extend(d.b.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for d in self.dense_layers_mut() {
            for v in d.w.iter_mut().chain(d.b.iter_mut()) {
                *v = *it.next().expect("parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    pub fn parameter_count(&self) -> usize {
        self.dense_layers().map(|d| d.w.len() + d.b.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.parameters().iter().all(|x| x.is_finite())
    }

    fn accumulate(&self, prepared: &PreparedGraph<'_>, label: usize, scale: f64, grads: &mut GcnModel) -> f64 {
        let act = self.activation;
        let trace = self.trace(&prepared.adjacency, prepared.graph.features.clone());
        let probs = softmax(&trace.logits);
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();

        let mut dz = probs;
        dz[label] -= 1.0;
        dz *= scale;
        let mut da = Array1::zeros(0);
        for k in (0..self.head.len()).rev() {
            let a = &trace.head_inputs[k];
            let g = &mut grads.head[k];
            for i in 0..a.len() {
                for j in 0..dz.len() {
                    g.w[[i, j]] += a[i] * dz[j];
                }
            }
            g.b += &dz;
            da = self.head[k].w.dot(&dz);
            if k > 0 {
                dz = &da * &trace.head_pre[k - 1].mapv(|x| act.derivative(x));
            }
        }

        let n = prepared.len();
        let mut dh = Array2::from_shape_fn((n, da.len()), |(_, j)| da[j] / n as f64);
        for l in (0..self.layers.len()).rev() {
            let dzl = &dh * &trace.conv_pre[l].mapv(|x| act.derivative(x));
            let g = &mut grads.layers[l];
            g.w += &trace.aggregated[l].t().dot(&dzl);
            g.b += &dzl.sum_axis(Axis(0));
            if l > 0 {
                dh = prepared.adjacency.t().dot(&dzl.dot(&self.layers[l].w.t()));
            }
        }
        loss
    }

    /// Mean cross-entropy over `batch` plus `l2 / 2 * sum(W^2)`, with its gradient.
    pub fn loss_and_gradients(&self, batch: &[(&PreparedGraph<'_>, usize)], l2: f64) -> (f64, GcnModel) {
        let mut grads = self.zeros_like();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(prepared, label) in batch {
            loss += scale * self.accumulate(prepared, label, scale, &mut grads);
        }
        if l2 > 0.0 {
            for (d, g) in self.dense_layers().zip(grads.dense_layers_mut()) {
                loss += 0.5 * l2 * d.w.iter().map(|x| x * x).sum::<f64>();
                g.w.scaled_add(l2, &d.w);
            }
        }
        (loss, grads)
    }

    /// Loss only; matches [`GcnModel::loss_and_gradients`].
    pub fn loss(&self, batch: &[(&PreparedGraph<'_>, usize)], l2: f64) -> f64 {
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(prepared, label) in batch {
            let probs = softmax(&self.logits_masked(prepared, None, MaskMode::ZeroFeatures));
            loss -= scale * probs[label].max(f64::MIN_POSITIVE).ln();
        }
        if l2 > 0.0 {
            for d in self.dense_layers() {
                loss += 0.5 * l2 * d.w.iter().map(|x| x * x).sum::<f64>();
            }
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Widths of the graph convolution layers.
    pub hidden_dims: Vec<usize>,
    /// Widths of the hidden MLP head layers; the class layer is implicit.
    pub head_hidden: Vec<usize>,
    pub l2_penalty: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub activation: Activation,
    /// Number of classes; inferred from the labels when absent.
    pub n_classes: Option<usize>,
    /// Train the head only, keeping the convolution weights at initialization.
    pub freeze_conv: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.05,
            momentum: 0.9,
            hidden_dims: vec![32, 32],
            head_hidden: vec![16],
            l2_penalty: 1e-4,
            batch_size: 16,
            rng_seed: 0,
            early_stop_patience: 0,
            validation_fraction: 0.1,
            activation: Activation::Relu,
            n_classes: None,
            freeze_conv: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GcnError> {
        let bad = |msg: &str| Err(GcnError::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden_dims.contains(&0) || self.head_hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(self.l2_penalty >= 0.0) {
            return bad("l2_penalty must be non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.n_classes == Some(0) {
            return bad("n_classes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training cross-entropy after the epoch.
    pub loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: GcnModel,
    pub history: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
}

fn accuracy(model: &GcnModel, data: &[(PreparedGraph<'_>, usize)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .iter()
        .filter(|(p, label)| argmax(&model.logits_masked(p, None, MaskMode::ZeroFeatures)) == *label)
        .count();
    hits as f64 / data.len() as f64
}

/// Fits a model to the teacher labels of `dataset`.
///
/// A seeded `validation_fraction` of the data is held out for model
/// selection; the returned model is the one with the best validation
/// accuracy (training accuracy when nothing is held out), earliest on ties.
pub fn train(dataset: &[FeaturedGraph], cfg: &TrainConfig) -> Result<TrainOutcome, GcnError> {
    cfg.validate()?;
    let first = dataset.first().ok_or(GcnError::EmptyDataset)?;
    let dim = first.dim();
    for fg in dataset {
        if fg.dim() != dim {
            return Err(GcnError::DimensionMismatch {
                expected: dim,
                found: fg.dim(),
            });
        }
    }
    let max_label = dataset.iter().map(|fg| fg.teacher_label).max().unwrap_or(0);
    let n_classes = cfg.n_classes.unwrap_or((max_label + 1).max(2));
    if max_label >= n_classes {
        return Err(GcnError::LabelOutOfRange {
            label: max_label,
            n_classes,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut model = GcnModel::new(dim, &cfg.hidden_dims, &cfg.head_hidden, n_classes, cfg.activation, rng.random());

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((dataset.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(dataset.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let prepare = |idx: &[usize]| -> Vec<(PreparedGraph<'_>, usize)> {
        idx.iter()
            .map(|&i| (PreparedGraph::new(&dataset[i]), dataset[i].teacher_label))
            .collect()
    };
    let train_set = prepare(train_idx);
    let val_set = prepare(val_idx);
    let ids = |idx: &[usize]| idx.iter().map(|&i| dataset[i].id().to_string()).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = model.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut velocity = model.zeros_like();
    let mut batch_order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        batch_order.shuffle(&mut rng);
        for chunk in batch_order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| (&train_set[i].0, train_set[i].1)).collect();
            let (_, grads) = model.loss_and_gradients(&batch, cfg.l2_penalty);
            let n_conv = model.layers.len();
            for (k, ((p, v), g)) in model
                .dense_layers_mut()
                .zip(velocity.dense_layers_mut())
                .zip(grads.dense_layers())
                .enumerate()
            {
                if cfg.freeze_conv && k < n_conv {
                    continue;
                }
                v.w *= cfg.momentum;
                v.w.scaled_add(-cfg.learning_rate, &g.w);
                v.b *= cfg.momentum;
                v.b.scaled_add(-cfg.learning_rate, &g.b);
                p.w += &v.w;
                p.b += &v.b;
            }
        }
        if !model.is_finite() {
            return Err(GcnError::Config(format!(
                "training diverged at epoch {epoch}; lower the learning rate"
            )));
        }
        let batch: Vec<_> = train_set.iter().map(|(p, l)| (p, *l)).collect();
        let loss = model.loss(&batch, 0.0);
        let val_acc = if val_set.is_empty() {
            accuracy(&model, &train_set)
        } else {
            accuracy(&model, &val_set)
        };
        history.push(EpochLog { epoch, loss, val_acc });
        if val_acc > best_score {
            best_score = val_acc;
            best = model.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        train_ids: ids(train_idx),
        validation_ids: ids(val_idx),
    })
}

pub fn history_csv(history: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,val_acc\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.loss, h.val_acc));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Gold,
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub reference: Reference,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[reference][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_pairs(reference: Reference, n_classes: usize, pairs: &[(usize, usize)]) -> Self {
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for &(truth, pred) in pairs {
            confusion[truth][pred] += 1;
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let per_class: Vec<ClassMetrics> = (0..n_classes)
            .map(|c| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    class: c,
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n_classes as f64;
        let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        EvalReport {
            reference,
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            accuracy: ratio(correct, pairs.len()),
            per_class,
            confusion,
        }
    }
}

pub fn evaluate(model: &GcnModel, dataset: &[FeaturedGraph], reference: Reference) -> Result<EvalReport, GcnError> {
    let mut pairs = Vec::with_capacity(dataset.len());
    for fg in dataset {
        let truth = match reference {
            Reference::Teacher => fg.teacher_label,
            Reference::Gold => fg.gold_label.ok_or_else(|| GcnError::MissingLabels(fg.id().to_string()))?,
        };
        if truth >= model.n_classes {
            return Err(GcnError::LabelOutOfRange {
                label: truth,
                n_classes: model.n_classes,
            });
        }
        pairs.push((truth, model.predict(fg)?));
    }
    Ok(EvalReport::from_pairs(reference, model.n_classes, &pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DenseRecord {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointRecord {
    version: u32,
    dims: Vec<usize>,
    n_classes: usize,
    activation: String,
    layers: Vec<DenseRecord>,
    head: Vec<DenseRecord>,
}

impl From<&Dense> for DenseRecord {
    fn from(d: &Dense) -> Self {
        DenseRecord {
            w: d.w.rows().into_iter().map(|r| r.to_vec()).collect(),
            b: d.b.to_vec(),
        }
    }
}

impl TryFrom<&DenseRecord> for Dense {
    type Error = GcnError;

    fn try_from(r: &DenseRecord) -> Result<Self, GcnError> {
        let rows = r.w.len();
        let cols = r.b.len();
        if rows == 0 || cols == 0 || r.w.iter().any(|row| row.len() != cols) {
            return Err(GcnError::Checkpoint("weight matrix shape does not match bias".into()));
        }
        let flat: Vec<f64> = r.w.iter().flatten().copied().collect();
        if flat.iter().chain(&r.b).any(|x| !x.is_finite()) {
            return Err(GcnError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Dense {
            w: Array2::from_shape_vec((rows, cols), flat).expect("shape checked"),
            b: Array1::from(r.b.clone()),
        })
    }
}

impl GcnModel {
    pub fn to_checkpoint_json(&self) -> String {
        let rec = CheckpointRecord {
            version: CHECKPOINT_VERSION,
            dims: self.dims(),
            n_classes: self.n_classes,
            activation: self.activation.to_string(),
            layers: self.layers.iter().map(DenseRecord::from).collect(),
            head: self.head.iter().map(DenseRecord::from).collect(),
        };
        serde_json::to_string(&rec).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, GcnError> {
        let rec: CheckpointRecord = serde_json::from_str(text).map_err(|e| GcnError::Checkpoint(e.to_string()))?;
        if rec.version != CHECKPOINT_VERSION {
            return Err(GcnError::Checkpoint(format!("unsupported version {}", rec.version)));
        }
        let layers = rec.layers.iter().map(Dense::try_from).collect::<Result<Vec<_>, _>>()?;
        let head = rec.head.iter().map(Dense::try_from).collect::<Result<Vec<_>, _>>()?;
        if head.is_empty() {
            return Err(GcnError::Checkpoint("head has no layers".into()));
        }
        let model = GcnModel {
            layers,
            head,
            n_classes: rec.n_classes,
            activation: rec.activation.parse()?,
        };
        let widths: Vec<(usize, usize)> = model.dense_layers().map(|d| (d.inputs(), d.outputs())).collect();
        if widths.windows(2).any(|w| w[0].1 != w[1].0) {
            return Err(GcnError::Checkpoint("layer dimensions do not chain".into()));
        }
        if model.head.last().map(Dense::outputs) != Some(model.n_classes) {
            return Err(GcnError::Checkpoint("head output does not match n_classes".into()));
        }
        if model.dims() != rec.dims {
            return Err(GcnError::Checkpoint("`dims` does not match the layer shapes".into()));
        }
        Ok(model)
    }
}
