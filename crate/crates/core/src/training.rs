//! Supervised training with binary cross-entropy over candidate labels,
//! scenario-level dataset splits and k-fold cross-validation.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extended::{ExtendedGraph, Instance};
use crate::metrics::{sweep, MetricsError};
use crate::model::{forward_tape, ModelDims, ModelError, ModelInput, ModelParams, ParamVars};
use crate::numeric::{bce_value, Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("instance {0} has unlabelled candidates")]
    UnlabeledInstance(usize),
    #[error("{k} folds requested but only {scenarios} scenarios")]
    TooFewScenarios { k: usize, scenarios: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Train, validation and test fractions over scenarios.
    pub split: [f64; 3],
    pub k_folds: usize,
    pub positive_weight: f64,
    pub early_stop_patience: usize,
    pub model: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            split: [0.70, 0.20, 0.10],
            k_folds: 3,
            positive_weight: 1.0,
            early_stop_patience: 20,
            model: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|&s| s < 0.0) {
            return bad("split fractions must be non-negative and sum to 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return bad("learning_rate must be non-negative");
        }
        if self.k_folds < 2 {
            return bad("k_folds must be at least 2");
        }
        if self.positive_weight.is_nan() || self.positive_weight <= 0.0 {
            return bad("positive_weight must be positive");
        }
        Ok(())
    }
}

/// Mean weighted binary cross-entropy with probabilities clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(y_hat: &[f64], y: &[f64], positive_weight: f64) -> Result<f64, TrainError> {
    if y_hat.is_empty() || y_hat.len() != y.len() {
        return Err(TrainError::EmptyBatch);
    }
    Ok(bce_value(y_hat, y, positive_weight))
}

/// An instance flattened for the model, with its labels.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario_id: u64,
    pub input: ModelInput,
    pub labels: Vec<f64>,
}

impl Prepared {
    pub fn new(index: usize, inst: &Instance) -> Result<Self, TrainError> {
        let labels = inst
            .ext
            .labels()
            .ok_or(TrainError::UnlabeledInstance(index))?;
        Ok(Self {
            scenario_id: inst.scenario_id,
            input: ModelInput::from_extended(&inst.ext),
            labels,
        })
    }
}

pub fn prepare(dataset: &[Instance]) -> Result<Vec<Prepared>, TrainError> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, inst)| Prepared::new(i, inst))
        .collect()
}

/// Loss and per-tensor gradients for one instance.
pub fn loss_and_grad(
    params: &ModelParams,
    p: &Prepared,
    positive_weight: f64,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    if p.labels.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, params, true);
    let f = forward_tape(&mut tape, &pv, &p.input)?;
    let l = tape
        .bce(f.y_hat, &p.labels, positive_weight)
        .map_err(ModelError::from)?;
    tape.backward(l).map_err(ModelError::from)?;
    let grads = pv
        .0
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    Ok((tape.data(l)[0], grads))
}

pub fn instance_loss(params: &ModelParams, p: &Prepared, positive_weight: f64) -> Result<f64, TrainError> {
    let y = crate::model::forward(params, &p.input)?;
    bce_loss(&y, &p.labels, positive_weight)
}

/// Mean per-instance loss, summed in dataset order.
pub fn mean_loss(params: &ModelParams, data: &[&Prepared], positive_weight: f64) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut s = 0.0;
    for p in data {
        s += instance_loss(params, p, positive_weight)?;
    }
    Ok(s / data.len() as f64)
}

/// Candidate probabilities for each graph.
pub fn predict(params: &ModelParams, graphs: &[ExtendedGraph]) -> Result<Vec<Vec<f64>>, TrainError> {
    graphs
        .iter()
        .map(|g| Ok(crate::model::forward(params, &ModelInput::from_extended(g))?))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (t, g) in params.tensors.iter_mut().zip(grads) {
                    for (w, gi) in t.data.iter_mut().zip(g) {
                        *w -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for ((t, g), (m, v)) in params
                    .tensors
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for (k, w) in t.data.iter_mut().enumerate() {
                        let gi = g[k];
                        m[k] = b1 * m[k] + (1.0 - b1) * gi;
                        v[k] = b2 * v[k] + (1.0 - b2) * gi * gi;
                        let mh = m[k] / c1;
                        let vh = v[k] / c2;
                        *w -= self.lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

/// Scenario ids assigned to each split, each list sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl DatasetSplit {
    fn select<'a>(ids: &[u64], data: &'a [Prepared]) -> Vec<&'a Prepared> {
        let set: BTreeSet<u64> = ids.iter().copied().collect();
        data.iter().filter(|p| set.contains(&p.scenario_id)).collect()
    }
}

/// Shuffles the distinct scenario ids with `seed` and cuts them by
/// `fractions`, rounding the train and validation counts.
pub fn split_scenarios(ids: &[u64], fractions: [f64; 3], seed: u64) -> DatasetSplit {
    let mut uniq: Vec<u64> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniq.shuffle(&mut rng);
    let n = uniq.len();
    let n_train = ((n as f64 * fractions[0]).round() as usize).min(n);
    let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
    let sorted = |s: &[u64]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    DatasetSplit {
        train: sorted(&uniq[..n_train]),
        val: sorted(&uniq[n_train..n_train + n_val]),
        test: sorted(&uniq[n_train + n_val..]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub split: DatasetSplit,
}

impl TrainLog {
    /// `epoch,train_loss,val_loss` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }
}

struct FitResult {
    params: ModelParams,
    epochs: Vec<EpochRecord>,
    best_epoch: usize,
    best_val_loss: f64,
    stopped_early: bool,
}

/// Per-instance stepping in a seeded shuffled order. Validation loss
/// falls back to the training loss when there is no validation data.
fn fit(
    init: ModelParams,
    train: &[&Prepared],
    val: &[&Prepared],
    cfg: &TrainConfig,
) -> Result<FitResult, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = init;
    let mut opt = Optimizer::new(cfg, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = vec![0.0; train.len()];
    let mut best: Option<(f64, ModelParams, usize)> = None;
    let mut epochs = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (l, g) = loss_and_grad(&params, train[i], cfg.positive_weight)?;
            losses[i] = l;
            opt.step(&mut params, &g);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss(&params, val, cfg.positive_weight)?
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, params.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_val_loss, params, best_epoch) = match best {
        Some(b) => b,
        None => (f64::NAN, params, 0),
    };
    Ok(FitResult {
        params,
        epochs,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}

/// Trains on the scenario-level train split and early-stops on the
/// validation split. The test split is left untouched.
pub fn train(dataset: &[Instance], cfg: &TrainConfig) -> Result<(ModelParams, TrainLog), TrainError> {
    let data = prepare(dataset)?;
    train_prepared(&data, cfg)
}

pub fn train_prepared(data: &[Prepared], cfg: &TrainConfig) -> Result<(ModelParams, TrainLog), TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let ids: Vec<u64> = data.iter().map(|p| p.scenario_id).collect();
    let split = split_scenarios(&ids, cfg.split, cfg.seed);
    let train = DatasetSplit::select(&split.train, data);
    let val = DatasetSplit::select(&split.val, data);
    let init = ModelParams::init(cfg.model, cfg.seed);
    let r = fit(init, &train, &val, cfg)?;
    Ok((
        r.params,
        TrainLog {
            epochs: r.epochs,
            best_epoch: r.best_epoch,
            best_val_loss: r.best_val_loss,
            stopped_early: r.stopped_early,
            split,
        },
    ))
}

/// Instances whose scenario lies in `ids`, in dataset order.
pub fn select_scenarios<'a>(data: &'a [Prepared], ids: &[u64]) -> Vec<&'a Prepared> {
    DatasetSplit::select(ids, data)
}

/// Fold sizes for `n` items in `k` folds, larger folds first.
pub fn fold_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_scenarios: usize,
    pub val_scenarios: usize,
    pub test_scenarios: usize,
    pub best_epoch: usize,
    pub val_loss: f64,
    pub test_loss: f64,
    /// Maximum F1 over thresholds on the held-out fold.
    pub test_f1: f64,
    /// F1 at the Youden threshold on the held-out fold.
    pub test_f1_youden: f64,
    pub test_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldSummary {
    pub folds: Vec<FoldReport>,
    pub mean_val_loss: f64,
    pub std_val_loss: f64,
    pub mean_test_f1: f64,
    pub std_test_f1: f64,
    pub mean_test_auc: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Trains one model per fold. Each fold is held out as the test set in
/// turn; the remaining scenarios are split into train and validation in
/// the configured train:validation ratio.
pub fn k_fold_evaluate(dataset: &[Instance], cfg: &TrainConfig) -> Result<KFoldSummary, TrainError> {
    let data = prepare(dataset)?;
    k_fold_prepared(&data, cfg, |c| ModelParams::init(c.model, c.seed))
}

pub fn k_fold_prepared(
    data: &[Prepared],
    cfg: &TrainConfig,
    init: impl Fn(&TrainConfig) -> ModelParams + Sync,
) -> Result<KFoldSummary, TrainError> {
    cfg.validate()?;
    let mut ids: Vec<u64> = data
        .iter()
        .map(|p| p.scenario_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < cfg.k_folds {
        return Err(TrainError::TooFewScenarios {
            k: cfg.k_folds,
            scenarios: ids.len(),
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut folds = Vec::new();
    let mut off = 0;
    for size in fold_sizes(ids.len(), cfg.k_folds) {
        folds.push(ids[off..off + size].to_vec());
        off += size;
    }
    let tv = cfg.split[0] + cfg.split[1];
    let inner = [cfg.split[0] / tv, cfg.split[1] / tv, 0.0];

    let reports: Result<Vec<FoldReport>, TrainError> = (0..folds.len())
        .into_par_iter()
        .map(|f| {
            let rest: Vec<u64> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            let fold_cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(f as u64 + 1),
                ..cfg.clone()
            };
            let sp = split_scenarios(&rest, inner, fold_cfg.seed);
            let train = DatasetSplit::select(&sp.train, data);
            let val = DatasetSplit::select(&sp.val, data);
            let test = DatasetSplit::select(&folds[f], data);
            let r = fit(init(&fold_cfg), &train, &val, &fold_cfg)?;
            let (mut scores, mut labels) = (Vec::new(), Vec::new());
            for p in &test {
                scores.extend(crate::model::forward(&r.params, &p.input)?);
                labels.extend_from_slice(&p.labels);
            }
            let test_loss = mean_loss(&r.params, &test, cfg.positive_weight)?;
            let ev = sweep(&scores, &labels)?;
            Ok(FoldReport {
                fold: f,
                train_scenarios: sp.train.len(),
                val_scenarios: sp.val.len(),
                test_scenarios: folds[f].len(),
                best_epoch: r.best_epoch,
                val_loss: r.best_val_loss,
                test_loss,
                test_f1: ev.best_f1,
                test_f1_youden: ev.f1,
                test_auc: ev.auc,
            })
        })
        .collect();
    let folds = reports?;
    let (mean_val_loss, std_val_loss) = mean_std(&folds.iter().map(|r| r.val_loss).collect::<Vec<_>>());
    let (mean_test_f1, std_test_f1) = mean_std(&folds.iter().map(|r| r.test_f1).collect::<Vec<_>>());
    let (mean_test_auc, _) = mean_std(&folds.iter().map(|r| r.test_auc).collect::<Vec<_>>());
    Ok(KFoldSummary {
        folds,
        mean_val_loss,
        std_val_loss,
        mean_test_f1,
        std_test_f1,
        mean_test_auc,
    })
}

/// Parameters with every entry zero: the triple scorer then outputs 0.5
/// everywhere.
pub fn zero_params(dims: ModelDims) -> ModelParams {
    let mut p = ModelParams::init(dims, 0);
    for t in &mut p.tensors {
        *t = Tensor::zeros(t.shape.clone());
    }
    p
}
