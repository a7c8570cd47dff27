//! Linear probe on frozen embeddings, classification metrics and ablations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::Aggregation;
use crate::error::{Error, Result};
use crate::graph::LabeledDataset;
use crate::matrix::{axpy_slice, dot, Matrix};
use crate::trainer::{init_params, train, Model, TrainConfig, TrainHistory};

/// Candidate L2 strengths; the one with the best validation accuracy wins.
pub const L2_GRID: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Multinomial logistic regression weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeParams {
    /// `C×F'`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub l2: f64,
    pub iters: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            iters: 1000,
            learning_rate: 1.0,
        }
    }
}

impl ProbeParams {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes())
            .map(|c| dot(self.weight.row(c), x) + self.bias[c])
            .collect()
    }

    /// Arg-max class of every row; ties go to the lowest index.
    pub fn predict(&self, h: &Matrix) -> Vec<usize> {
        (0..h.rows()).map(|i| argmax(&self.logits(h.row(i)))).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Fits the probe by full-batch proximal gradient descent from zero.
///
/// Minimizes mean cross-entropy plus `l2/2 · ‖W‖²` (bias unpenalized).
/// Returns the parameters and the objective measured before each update.
pub fn fit_probe(
    h: &Matrix,
    y: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(ProbeParams, Vec<f64>)> {
    let (n, f) = h.shape();
    if y.len() != n {
        return Err(Error::Input(format!("{n} rows but {} labels", y.len())));
    }
    if n < num_classes {
        return Err(Error::Config(format!(
            "probe needs at least {num_classes} training rows, got {n}"
        )));
    }
    if let Some(bad) = y.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Input(format!("label {bad} outside 0..{num_classes}")));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(Error::Config("probe training set has a single class".into()));
    }
    if !(cfg.l2 >= 0.0 && cfg.learning_rate > 0.0) {
        return Err(Error::Config("probe needs l2 >= 0 and learning_rate > 0".into()));
    }

    let mut p = ProbeParams {
        weight: Matrix::zeros(num_classes, f),
        bias: vec![0.0; num_classes],
    };
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut gw = Matrix::zeros(num_classes, f);
    let mut gb = vec![0.0; num_classes];
    let inv_n = 1.0 / n as f64;
    for _ in 0..cfg.iters {
        gw.as_mut_slice().fill(0.0);
        gb.fill(0.0);
        let mut ce = 0.0;
        for i in 0..n {
            let x = h.row(i);
            let mut prob = p.logits(x);
            softmax_in_place(&mut prob);
            ce -= prob[y[i]].max(f64::MIN_POSITIVE).ln();
            prob[y[i]] -= 1.0;
            for (c, &d) in prob.iter().enumerate() {
                gb[c] += d * inv_n;
                axpy_slice(gw.row_mut(c), d * inv_n, x);
            }
        }
        let penalty: f64 = p.weight.as_slice().iter().map(|w| w * w).sum();
        trace.push(ce * inv_n + 0.5 * cfg.l2 * penalty);

        let shrink = 1.0 / (1.0 + cfg.learning_rate * cfg.l2);
        for (w, g) in p.weight.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *w = (*w - cfg.learning_rate * g) * shrink;
        }
        for (b, g) in p.bias.iter_mut().zip(&gb) {
            *b -= cfg.learning_rate * g;
        }
    }
    Ok((p, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Accuracy plus per-class and macro-averaged precision, recall and F1.
pub fn compute_metrics(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("compute_metrics"));
    }
    if let Some(bad) = pred.iter().chain(truth).find(|&&c| c >= num_classes) {
        return Err(Error::Input(format!("class {bad} outside 0..{num_classes}")));
    }
    let mut tp = vec![0; num_classes];
    let mut predicted = vec![0; num_classes];
    let mut actual = vec![0; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        predicted[p] += 1;
        actual[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let precision: Vec<f64> = (0..num_classes).map(|c| ratio(tp[c], predicted[c])).collect();
    let recall: Vec<f64> = (0..num_classes).map(|c| ratio(tp[c], actual[c])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / num_classes as f64;
    Ok(Metrics {
        accuracy: ratio(tp.iter().sum(), pred.len()),
        macro_f1: mean(&f1),
        macro_recall: mean(&recall),
        precision,
        recall,
        f1,
    })
}

/// Centers rows on the training mean and rescales so that training rows
/// have unit mean squared norm. Only training rows set the statistics.
///
/// The scale is isotropic, so the geometry of the embedding is kept while
/// the probe's step size no longer depends on the embedding's magnitude:
/// with unit mean squared norm the cross-entropy gradient is
/// 1/2-Lipschitz, so any `learning_rate` up to 2 descends monotonically.
pub fn center_and_scale(h: &Matrix, train_idx: &[usize]) -> Matrix {
    let (n, f) = h.shape();
    let mut mean = vec![0.0; f];
    for &i in train_idx {
        axpy_slice(&mut mean, 1.0, h.row(i));
    }
    mean.iter_mut().for_each(|m| *m /= train_idx.len().max(1) as f64);
    let mut sq = 0.0;
    for &i in train_idx {
        sq += h.row(i).iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
    }
    let rms = (sq / train_idx.len().max(1) as f64).sqrt();
    let scale = if rms > 1e-12 { 1.0 / rms } else { 1.0 };
    let mut out = Matrix::zeros(n, f);
    for i in 0..n {
        for (o, (x, m)) in out.row_mut(i).iter_mut().zip(h.row(i).iter().zip(&mean)) {
            *o = (x - m) * scale;
        }
    }
    out
}

fn labels_of(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Probe result on the test split.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub metrics: Metrics,
    pub l2: f64,
    pub val_accuracy: f64,
}

/// Fits the probe on the train rows of `h` (after [`center_and_scale`]), picks `l2` from [`L2_GRID`] by validation accuracy and
/// scores the test rows.
pub fn evaluate_embeddings(
    h: &Matrix,
    dataset: &LabeledDataset,
    probe: &ProbeConfig,
) -> Result<ProbeReport> {
    if h.rows() != dataset.num_nodes() {
        return Err(Error::Shape {
            op: "evaluate_embeddings",
            left: h.shape(),
            right: (dataset.num_nodes(), h.cols()),
        });
    }
    let split = &dataset.split;
    let z = center_and_scale(h, &split.train_idx);
    let train_x = z.gather_rows(&split.train_idx);
    let train_y = labels_of(&dataset.labels, &split.train_idx);
    let val_x = z.gather_rows(&split.val_idx);
    let val_y = labels_of(&dataset.labels, &split.val_idx);

    let mut best: Option<(f64, f64, ProbeParams)> = None;
    for &l2 in &L2_GRID {
        let cfg = ProbeConfig { l2, ..*probe };
        let (params, _) = fit_probe(&train_x, &train_y, dataset.num_classes, &cfg)?;
        let acc = if val_y.is_empty() {
            0.0
        } else {
            compute_metrics(&params.predict(&val_x), &val_y, dataset.num_classes)?.accuracy
        };
        if best.as_ref().map_or(true, |(a, _, _)| acc > *a) {
            best = Some((acc, l2, params));
        }
    }
    let (val_accuracy, l2, params) = best.expect("grid is not empty");
    let test_x = z.gather_rows(&split.test_idx);
    let test_y = labels_of(&dataset.labels, &split.test_idx);
    let metrics = compute_metrics(&params.predict(&test_x), &test_y, dataset.num_classes)?;
    Ok(ProbeReport {
        metrics,
        l2,
        val_accuracy,
    })
}

pub fn evaluate_model(
    model: &Model,
    dataset: &LabeledDataset,
    probe: &ProbeConfig,
) -> Result<ProbeReport> {
    let h = model.encoder.encode(&dataset.features, &dataset.graph)?;
    evaluate_embeddings(&h, dataset, probe)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMode {
    /// Attention encoder trained with the contrastive objective.
    Full,
    /// Attention encoder at its random initialization, no training.
    AttentionOnly,
    /// Contrastive training with uniform mean aggregation instead of attention.
    ContrastiveOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [Self::Full, Self::AttentionOnly, Self::ContrastiveOnly];
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::AttentionOnly => "attention_only",
            Self::ContrastiveOnly => "contrastive_only",
        })
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                Error::Input(format!(
                    "unknown mode `{s}` (expected full, attention_only or contrastive_only)"
                ))
            })
    }
}

/// Builds the model a mode calls for. `history` is `None` when nothing is trained.
pub fn ablation_model(
    mode: AblationMode,
    cfg: &TrainConfig,
    dataset: &LabeledDataset,
) -> Result<(Model, Option<TrainHistory>)> {
    match mode {
        AblationMode::Full => {
            let cfg = TrainConfig {
                aggregation: Aggregation::Attention,
                ..cfg.clone()
            };
            let (m, h) = train(&cfg, dataset)?;
            Ok((m, Some(h)))
        }
        AblationMode::AttentionOnly => {
            let cfg = TrainConfig {
                aggregation: Aggregation::Attention,
                ..cfg.clone()
            };
            Ok((init_params(&cfg, dataset.num_features())?, None))
        }
        AblationMode::ContrastiveOnly => {
            let cfg = TrainConfig {
                aggregation: Aggregation::Mean,
                ..cfg.clone()
            };
            let (m, h) = train(&cfg, dataset)?;
            Ok((m, Some(h)))
        }
    }
}

pub fn run_ablation(
    mode: AblationMode,
    cfg: &TrainConfig,
    dataset: &LabeledDataset,
    probe: &ProbeConfig,
) -> Result<ProbeReport> {
    let (model, _) = ablation_model(mode, cfg, dataset)?;
    evaluate_model(&model, dataset, probe)
}

/// One JSON line of evaluation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: String,
    pub mode: String,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
}

impl MetricsRecord {
    pub fn new(dataset: &str, mode: &str, seed: u64, m: &Metrics) -> Self {
        Self {
            dataset: dataset.to_string(),
            mode: mode.to_string(),
            seed,
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
            macro_recall: m.macro_recall,
            precision: m.precision.clone(),
            recall: m.recall.clone(),
            f1: m.f1.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
