//! Unsupervised training loop: Glorot init, one corruption per epoch,
//! Adam updates and early stopping on the training loss.

use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::contrastive::{corruption_permutation, infomax_objective, DiscriminatorParams};
use crate::encoder::{
    Aggregation, AttentionHead, EncoderLayer, EncoderParams, DEFAULT_LEAKY_SLOPE,
    INITIAL_PRELU_SLOPE,
};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, LabeledDataset};
use crate::matrix::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub leaky_slope: f64,
    /// Pass the summary vector through a sigmoid.
    pub readout_sigmoid: bool,
    pub aggregation: Aggregation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            heads: 4,
            layers: 1,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            readout_sigmoid: false,
            aggregation: Aggregation::Attention,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are
    /// skipped; unknown or repeated keys are errors. Missing keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            let bad = |e: &dyn std::fmt::Display| {
                Error::Config(format!("line {}: bad value for `{key}`: {e}", n + 1))
            };
            match key {
                "embed_dim" => cfg.embed_dim = value.parse().map_err(|e| bad(&e))?,
                "heads" => cfg.heads = value.parse().map_err(|e| bad(&e))?,
                "layers" => cfg.layers = value.parse().map_err(|e| bad(&e))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|e| bad(&e))?,
                "weight_decay" => cfg.weight_decay = value.parse().map_err(|e| bad(&e))?,
                "max_epochs" => cfg.max_epochs = value.parse().map_err(|e| bad(&e))?,
                "patience" => cfg.patience = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(&e))?,
                "leaky_slope" => cfg.leaky_slope = value.parse().map_err(|e| bad(&e))?,
                "readout_sigmoid" => cfg.readout_sigmoid = value.parse().map_err(|e| bad(&e))?,
                "aggregation" => cfg.aggregation = value.parse().map_err(|e| bad(&e))?,
                other => {
                    return Err(Error::Config(format!("line {}: unknown key `{other}`", n + 1)))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Inverse of [`TrainConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "learning_rate = {:e}", self.learning_rate);
        let _ = writeln!(s, "weight_decay = {:e}", self.weight_decay);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "leaky_slope = {:e}", self.leaky_slope);
        let _ = writeln!(s, "readout_sigmoid = {}", self.readout_sigmoid);
        let _ = writeln!(s, "aggregation = {}", self.aggregation);
        s
    }
}

/// Encoder plus discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub discriminator: DiscriminatorParams,
    pub readout_sigmoid: bool,
}

impl Model {
    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.encoder.tensors();
        out.push(("discriminator.weight".into(), &self.discriminator.weight));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.tensors_mut();
        out.push(&mut self.discriminator.weight);
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Pre-update loss of every executed epoch.
    pub losses: Vec<f64>,
    /// 1-based epoch with the lowest loss.
    pub best_epoch: usize,
    pub best_loss: f64,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.losses.len()
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Fresh Glorot-uniform parameters for `input_dim` features.
pub fn init_params(cfg: &TrainConfig, input_dim: usize) -> Result<Model> {
    cfg.validate()?;
    if input_dim == 0 {
        return Err(Error::Config("feature count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f_out = cfg.embed_dim;
    let layers = (0..cfg.layers)
        .map(|l| {
            let f_in = if l == 0 { input_dim } else { f_out };
            EncoderLayer {
                heads: (0..cfg.heads)
                    .map(|_| AttentionHead {
                        weight: glorot(&mut rng, f_in, f_out, f_in, f_out),
                        attention: glorot(&mut rng, 2 * f_out, 1, 2 * f_out, 1),
                    })
                    .collect(),
                prelu_slope: Matrix::scalar(INITIAL_PRELU_SLOPE),
            }
        })
        .collect();
    let discriminator = DiscriminatorParams {
        weight: glorot(&mut rng, f_out, f_out, f_out, f_out),
    };
    Ok(Model {
        encoder: EncoderParams {
            layers,
            leaky_slope: cfg.leaky_slope,
            aggregation: cfg.aggregation,
        },
        discriminator,
        readout_sigmoid: cfg.readout_sigmoid,
    })
}

/// Adam with bias correction and optional L2 weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: i32,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(model: &Model, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Matrix> = model
            .tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            learning_rate,
            weight_decay,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn apply(&mut self, model: &mut Model, grads: &[Matrix]) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (k, param) in model.tensors_mut().into_iter().enumerate() {
            let g = grads[k].as_slice();
            let m = self.first[k].as_mut_slice();
            let v = self.second[k].as_mut_slice();
            for (i, p) in param.as_mut_slice().iter_mut().enumerate() {
                let gi = g[i] + self.weight_decay * *p;
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
}

/// Loss and parameter gradients for one corruption of `features`.
pub fn loss_and_gradients(
    model: &Model,
    features: &FeatureMatrix,
    order: &[usize],
    graph: &Graph,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let enc = model.encoder.bind(&mut tape, true);
    let disc = model.discriminator.bind(&mut tape, true);
    let x = tape.constant_ref(features.as_matrix());
    let out = infomax_objective(&mut tape, &enc, disc, x, order, graph, model.readout_sigmoid)?;
    let loss = tape.value(out.loss).as_slice()[0];
    tape.backward(out.loss)?;
    let mut vars = enc.all();
    vars.push(disc);
    let grads = vars
        .iter()
        .map(|&v| {
            tape.grad(v).cloned().unwrap_or_else(|| {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            })
        })
        .collect();
    Ok((loss, grads))
}

/// One optimization step; returns the loss measured before the update.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut Adam,
    features: &FeatureMatrix,
    graph: &Graph,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64> {
    let order = corruption_permutation(features.num_rows(), rng.next_u64());
    let (loss, grads) = loss_and_gradients(model, features, &order, graph)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { epoch, loss });
    }
    optimizer.apply(model, &grads);
    Ok(loss)
}

/// Full training run. `on_epoch(epoch, loss)` is called after every epoch.
pub fn train_with(
    cfg: &TrainConfig,
    dataset: &LabeledDataset,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Model, TrainHistory)> {
    let mut model = init_params(cfg, dataset.num_features())?;
    if !dataset.graph.has_all_self_loops() {
        return Err(Error::Invariant("training graph must carry self-loops".into()));
    }
    let mut optimizer = Adam::new(&model, cfg.learning_rate, cfg.weight_decay);
    // separate stream from the one used for initialization
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut history = TrainHistory {
        losses: Vec::new(),
        best_epoch: 0,
        best_loss: f64::INFINITY,
    };
    let mut best_model = model.clone();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let order = corruption_permutation(dataset.num_nodes(), rng.next_u64());
        let (loss, grads) = loss_and_gradients(&model, &dataset.features, &order, &dataset.graph)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { epoch, loss });
        }
        history.losses.push(loss);
        on_epoch(epoch, loss);
        if loss < history.best_loss {
            history.best_loss = loss;
            history.best_epoch = epoch;
            best_model.clone_from(&model);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        optimizer.apply(&mut model, &grads);
    }
    Ok((best_model, history))
}

pub fn train(cfg: &TrainConfig, dataset: &LabeledDataset) -> Result<(Model, TrainHistory)> {
    train_with(cfg, dataset, |_, _| {})
}
