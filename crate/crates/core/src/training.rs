//! Optimisation: label-smoothed cross entropy, Adam with an inverse square
//! root schedule, token-count batching and resumable training state.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{count_correct, Batch, Model, ModelError};
use crate::numerics::{Binder, Checkpoint, Graph, NumericsError, ParamStore, Tensor};
use crate::pipeline::Record;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite gradient at step {step} in {param}")]
    NonFiniteGradient { step: u64, param: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Mean label-smoothed negative log-likelihood over rows with a target.
///
/// `logits` is any tensor whose last dimension is the vocabulary
/// (`B×m×V` or `B·m × V`); `targets` has one entry per row, `None` for PAD.
pub fn cross_entropy(
    logits: &Tensor,
    targets: &[Option<usize>],
    smoothing: f64,
) -> Result<f64, TrainError> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(TrainError::Config("smoothing must lie in [0, 1)".into()));
    }
    let v = *logits.shape().last().unwrap_or(&0);
    let rows = logits.len().checked_div(v).unwrap_or(0);
    let mut g = Graph::new();
    let x = g.input(Tensor::matrix(rows, v, logits.data().to_vec()));
    let loss = g.cross_entropy(x, targets, smoothing)?;
    Ok(g.value(loss).data()[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: u64,
    pub label_smoothing: f64,
    pub batch_tokens: usize,
    pub max_steps: u64,
    pub validate_every: u64,
    pub log_every: u64,
    pub seed: u64,
    /// Stop once validation teacher-forced accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            warmup_steps: 400,
            label_smoothing: 0.1,
            batch_tokens: 1024,
            max_steps: 2000,
            validate_every: 100,
            log_every: 10,
            seed: 1,
            target_accuracy: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
    value
        .trim()
        .parse()
        .map_err(|_| TrainError::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 12] = [
        "learning_rate",
        "beta1",
        "beta2",
        "adam_eps",
        "warmup_steps",
        "label_smoothing",
        "batch_tokens",
        "max_steps",
        "validate_every",
        "log_every",
        "seed",
        "target_accuracy",
    ];

    /// Sets one field by name; `Ok(false)` for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, TrainError> {
        match key {
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam_eps = parse_num(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_num(key, value)?,
            "label_smoothing" => self.label_smoothing = parse_num(key, value)?,
            "batch_tokens" => self.batch_tokens = parse_num(key, value)?,
            "max_steps" => self.max_steps = parse_num(key, value)?,
            "validate_every" => self.validate_every = parse_num(key, value)?,
            "log_every" => self.log_every = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "target_accuracy" => {
                self.target_accuracy = match value.trim() {
                    "" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "learning_rate" => self.learning_rate.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "label_smoothing" => self.label_smoothing.to_string(),
            "batch_tokens" => self.batch_tokens.to_string(),
            "max_steps" => self.max_steps.to_string(),
            "validate_every" => self.validate_every.to_string(),
            "log_every" => self.log_every.to_string(),
            "seed" => self.seed.to_string(),
            "target_accuracy" => self
                .target_accuracy
                .map_or_else(|| "none".to_string(), |a| a.to_string()),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return fail("adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing must lie in [0, 1)");
        }
        if self.batch_tokens == 0 {
            return fail("batch_tokens must be positive");
        }
        Ok(())
    }
}

/// Linear warmup to `base` over `warmup` steps, then decay with
/// `√(warmup / step)`. `step` counts from 1; `warmup == 0` keeps `base`.
pub fn learning_rate(base: f64, warmup: u64, step: u64) -> f64 {
    if warmup == 0 {
        return base;
    }
    let (s, w) = (step.max(1) as f64, warmup as f64);
    base * (s / w).min(1.0) * (w / s.max(w)).sqrt()
}

/// Adam moments and step counter, one moment pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    pub warmup: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            base_lr: cfg.learning_rate,
            warmup: cfg.warmup_steps,
        }
    }
}

/// One bias-corrected Adam update. Returns the learning rate used. A
/// non-finite gradient rejects the step and leaves everything unchanged.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
) -> Result<f64, TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::Config("gradient count does not match parameters".into()));
    }
    for ((id, name, p), g) in params.iter().zip(grads) {
        if g.shape() != p.shape() {
            return Err(TrainError::Config(format!("gradient shape for {name}")));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                step: state.step + 1,
                param: params.name(id).to_string(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = learning_rate(state.base_lr, state.warmup, state.step);
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((x, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *x -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(lr)
}

/// Groups records into batches of at most `max_tokens` source plus target
/// tokens (EOS counted); an oversized record gets a batch of its own.
pub fn token_batches(records: &[Record], order: &[usize], max_tokens: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut tokens = 0;
    for &i in order {
        let r = &records[i];
        let t = r.src.len() + r.tgt.len() + 1;
        if !cur.is_empty() && tokens + t > max_tokens {
            out.push(std::mem::take(&mut cur));
            tokens = 0;
        }
        cur.push(i);
        tokens += t;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn epoch_batches(records: &[Record], seed: u64, epoch: u64, max_tokens: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0xA076_1D64_78BD_642F));
    order.shuffle(&mut rng);
    token_batches(records, &order, max_tokens)
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xE703_7ED1_A0B4_28DB) ^ step)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub kind: String,
    pub step: u64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tokens_per_sec: Option<f64>,
}

/// Loss and teacher-forced accuracy over a dataset, no dropout.
pub fn evaluate_records(
    model: &Model,
    records: &[Record],
    smoothing: f64,
    max_tokens: usize,
) -> Result<(f64, f64), TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let order: Vec<usize> = (0..records.len()).collect();
    let (mut loss_sum, mut correct, mut total) = (0.0, 0, 0);
    for idx in token_batches(records, &order, max_tokens) {
        let refs: Vec<&Record> = idx.iter().map(|&i| &records[i]).collect();
        let batch = Batch::new(&refs)?;
        let mut b = Binder::new(model.params());
        let (loss, logits) = model.loss_on(&mut b, &batch, model.default_structure(), smoothing, None)?;
        let tokens = batch.target_tokens();
        loss_sum += b.graph.value(loss).data()[0] * tokens as f64;
        let (c, t) = count_correct(b.graph.value(logits), &batch.tgt_out);
        correct += c;
        total += t;
    }
    Ok((loss_sum / total as f64, correct as f64 / total as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub last_loss: f64,
    pub best_valid_loss: Option<f64>,
    pub last_valid_accuracy: Option<f64>,
    pub reached_target: bool,
}

/// Model plus optimiser state; checkpoints carry both so a resumed run
/// continues exactly where it stopped.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub state: OptimizerState,
    pub config: TrainConfig,
    best: Option<(f64, ParamStore)>,
    last_valid_accuracy: Option<f64>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let state = OptimizerState::new(model.params(), &config);
        Ok(Trainer {
            model,
            state,
            config,
            best: None,
            last_valid_accuracy: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    /// Parameters with the lowest validation loss seen so far.
    pub fn best_model(&self) -> Model {
        let mut m = self.model.clone();
        if let Some((_, p)) = &self.best {
            *m.params_mut() = p.clone();
        }
        m
    }

    pub fn best_valid_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|(l, _)| *l)
    }

    /// Trains until `max_steps` (or `until`, when smaller) or the accuracy
    /// target is met. `on_log` receives every log record.
    pub fn run(
        &mut self,
        train: &[Record],
        valid: &[Record],
        until: Option<u64>,
        on_log: &mut dyn FnMut(&LogRecord),
    ) -> Result<TrainSummary, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let cfg = self.config.clone();
        let end = until.map_or(cfg.max_steps, |u| u.min(cfg.max_steps));
        let structure = self.model.default_structure();

        // locate the current step inside the deterministic epoch sequence
        let mut epoch = 0;
        let mut batches = epoch_batches(train, cfg.seed, epoch, cfg.batch_tokens);
        let mut skip = self.state.step;
        while skip >= batches.len() as u64 {
            skip -= batches.len() as u64;
            epoch += 1;
            batches = epoch_batches(train, cfg.seed, epoch, cfg.batch_tokens);
        }
        let mut pos = skip as usize;

        let mut last_loss = f64::NAN;
        let mut reached = false;
        let mut window = (0.0, 0usize, Instant::now());
        while self.state.step < end {
            if pos == batches.len() {
                epoch += 1;
                batches = epoch_batches(train, cfg.seed, epoch, cfg.batch_tokens);
                pos = 0;
            }
            let refs: Vec<&Record> = batches[pos].iter().map(|&i| &train[i]).collect();
            pos += 1;
            let batch = Batch::new(&refs)?;
            let mut rng = step_rng(cfg.seed, self.state.step + 1);
            let grads = {
                let mut b = Binder::new(self.model.params());
                let (loss, _) = self.model.loss_on(
                    &mut b,
                    &batch,
                    structure,
                    cfg.label_smoothing,
                    Some(&mut rng),
                )?;
                last_loss = b.graph.value(loss).data()[0];
                b.gradients(loss)
            };
            let lr = adam_step(self.model.params_mut(), &grads, &mut self.state)?;
            window.0 += last_loss;
            window.1 += batch.target_tokens() + batch.src.len();
            let step = self.state.step;
            if cfg.log_every > 0 && step.is_multiple_of(cfg.log_every) {
                let secs = window.2.elapsed().as_secs_f64().max(1e-9);
                on_log(&LogRecord {
                    kind: "train".into(),
                    step,
                    loss: last_loss,
                    accuracy: None,
                    learning_rate: Some(lr),
                    tokens_per_sec: Some(window.1 as f64 / secs),
                });
                window = (0.0, 0, Instant::now());
            }
            if cfg.validate_every > 0 && step.is_multiple_of(cfg.validate_every) && !valid.is_empty() {
                let (loss, acc) =
                    evaluate_records(&self.model, valid, cfg.label_smoothing, cfg.batch_tokens)?;
                on_log(&LogRecord {
                    kind: "valid".into(),
                    step,
                    loss,
                    accuracy: Some(acc),
                    learning_rate: None,
                    tokens_per_sec: None,
                });
                self.last_valid_accuracy = Some(acc);
                if self.best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    self.best = Some((loss, self.model.params().clone()));
                }
                if cfg.target_accuracy.is_some_and(|t| acc >= t) {
                    reached = true;
                    break;
                }
            }
        }
        Ok(TrainSummary {
            steps: self.state.step,
            last_loss,
            best_valid_loss: self.best_valid_loss(),
            last_valid_accuracy: self.last_valid_accuracy,
            reached_target: reached,
        })
    }

    /// Model, optimiser moments, step, best parameters and both configs.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        for ((_, name, _), (m, v)) in self
            .model
            .params()
            .iter()
            .zip(self.state.m.iter().zip(&self.state.v))
        {
            ck.tensors.insert(format!("adam.m.{name}"), m.clone());
            ck.tensors.insert(format!("adam.v.{name}"), v.clone());
        }
        if let Some((loss, best)) = &self.best {
            for (_, name, t) in best.iter() {
                ck.tensors.insert(format!("best.{name}"), t.clone());
            }
            ck.metadata
                .insert("train.best_valid_loss".into(), format!("{:e}", loss));
        }
        ck.metadata.insert("train.step".into(), self.state.step.to_string());
        for k in TrainConfig::KEYS {
            ck.metadata
                .insert(format!("train.{k}"), self.config.get(k).expect("known key"));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let model = Model::from_checkpoint(ck)?;
        let mut config = TrainConfig::default();
        for k in TrainConfig::KEYS {
            if let Some(v) = ck.metadata.get(&format!("train.{k}")) {
                config.set(k, v)?;
            }
        }
        let mut t = Trainer::new(model, config)?;
        let missing = |n: &str| TrainError::Checkpoint(format!("missing {n}"));
        t.state.step = ck
            .metadata
            .get("train.step")
            .ok_or_else(|| missing("train.step"))?
            .parse()
            .map_err(|_| TrainError::Checkpoint("bad train.step".into()))?;
        let names: Vec<String> = t.model.params().iter().map(|(_, n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            let get = |key: String| ck.tensors.get(&key).cloned().ok_or_else(|| missing(&key));
            t.state.m[i] = get(format!("adam.m.{name}"))?;
            t.state.v[i] = get(format!("adam.v.{name}"))?;
        }
        if let Some(loss) = ck.metadata.get("train.best_valid_loss") {
            let loss: f64 = loss
                .parse()
                .map_err(|_| TrainError::Checkpoint("bad best loss".into()))?;
            let map: BTreeMap<String, Tensor> = names
                .iter()
                .map(|n| {
                    ck.tensors
                        .get(&format!("best.{n}"))
                        .cloned()
                        .map(|t| (n.clone(), t))
                        .ok_or_else(|| missing(n))
                })
                .collect::<Result<_, _>>()?;
            let mut best = t.model.params().clone();
            best.load_map(&map)?;
            t.best = Some((loss, best));
        }
        Ok(t)
    }
}
