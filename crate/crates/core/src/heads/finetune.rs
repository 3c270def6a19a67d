use ndgrad::{Graph, Optimizer, OptimizerKind};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ner::{ner_decode, ner_loss};
use super::{ner_emissions, tc_forward, Init, ModelConfig, TaskModel, TokenBatch};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::labels::{NerLabelSet, TcLabelSet};
use crate::metrics::{evaluate_ner, evaluate_tc, MetricsReport, NerCounting, TaskKind};
use crate::rng;
use crate::tokenize::{encode, Tokenizer, Vocabulary};

const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub counting: NerCounting,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            counting: NerCounting::ExactSpan,
        }
    }
}

impl TrainParams {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::config("train.lr", "must be non-negative"));
        }
        Ok(())
    }
}

/// A labeled dataset as vocabulary ids.
#[derive(Clone, Debug, PartialEq)]
pub enum EncodedData {
    Tc { ids: Vec<Vec<usize>>, labels: Vec<usize> },
    Ner { ids: Vec<Vec<usize>>, tags: Vec<Vec<usize>> },
}

impl EncodedData {
    /// TC texts go through `tokenizer`; NER tokens are looked up as given.
    pub fn encode(data: &LabeledDataset, tokenizer: &Tokenizer, vocab: &Vocabulary) -> Result<Self> {
        match data {
            LabeledDataset::Tc(ex) => {
                let c = TcLabelSet::new().len();
                if let Some(e) = ex.iter().find(|e| e.label >= c) {
                    return Err(Error::LabelMismatch(format!("label id {} outside the {c} categories", e.label)));
                }
                Ok(EncodedData::Tc {
                    ids: ex.iter().map(|e| encode(&tokenizer.tokenize(&e.text), vocab)).collect(),
                    labels: ex.iter().map(|e| e.label).collect(),
                })
            }
            LabeledDataset::Ner(sents) => {
                let t = NerLabelSet::NUM_TAGS;
                for s in sents {
                    if s.tags.len() != s.tokens.len() {
                        return Err(Error::LabelMismatch(format!(
                            "{} tags for {} tokens",
                            s.tags.len(),
                            s.tokens.len()
                        )));
                    }
                    if let Some(bad) = s.tags.iter().find(|&&g| g >= t) {
                        return Err(Error::LabelMismatch(format!("tag id {bad} outside the {t} tags")));
                    }
                }
                Ok(EncodedData::Ner {
                    ids: sents.iter().map(|s| encode(&s.tokens, vocab)).collect(),
                    tags: sents.iter().map(|s| s.tags.clone()).collect(),
                })
            }
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            EncodedData::Tc { .. } => TaskKind::Tc,
            EncodedData::Ner { .. } => TaskKind::Ner,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EncodedData::Tc { ids, .. } | EncodedData::Ner { ids, .. } => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ids(&self) -> &[Vec<usize>] {
        match self {
            EncodedData::Tc { ids, .. } | EncodedData::Ner { ids, .. } => ids,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    /// Weights from the epoch with the highest validation weighted F1.
    pub model: TaskModel,
    /// Validation weighted F1 after each epoch.
    pub val_series: Vec<f64>,
    /// Mean training loss of each epoch.
    pub train_losses: Vec<f64>,
    /// 1-based epoch of the returned weights.
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

fn batch_for(model: &TaskModel, ids: &[Vec<usize>], idx: &[usize]) -> TokenBatch {
    let rows: Vec<&[usize]> = idx.iter().map(|&i| ids[i].as_slice()).collect();
    TokenBatch::pad(&rows, model.config.padding)
}

fn check_task(model: &TaskModel, data: &EncodedData) -> Result<()> {
    if model.config.kind.task() != data.task() {
        return Err(Error::LabelMismatch(format!(
            "{} model given {} data",
            model.config.kind,
            data.task().as_str()
        )));
    }
    Ok(())
}

/// Predicted class per example.
pub fn predict_tc(model: &TaskModel, ids: &[Vec<usize>]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ids.len());
    let all: Vec<usize> = (0..ids.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let x = batch_for(model, ids, chunk);
        let mut g = Graph::<f32>::new();
        let y = tc_forward(&mut g, &model.params, &model.config, &x)?;
        let c = g.shape(y)[1];
        for row in g.value(y).data().chunks(c) {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Predicted tags per sentence, full length; tokens past the model's
/// capacity are tagged O.
pub fn predict_ner(model: &TaskModel, ids: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(ids.len());
    let all: Vec<usize> = (0..ids.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let x = batch_for(model, ids, chunk);
        let mut g = Graph::<f32>::new();
        let em = ner_emissions(&mut g, &model.params, &model.config, &x)?;
        for (mut tags, &i) in ner_decode(&g, em, &model.params, &model.config, &x)?.into_iter().zip(chunk) {
            tags.resize(ids[i].len(), 0);
            out.push(tags);
        }
    }
    Ok(out)
}

pub fn evaluate_model(model: &TaskModel, data: &EncodedData, counting: NerCounting) -> Result<MetricsReport> {
    check_task(model, data)?;
    match data {
        EncodedData::Tc { ids, labels } => evaluate_tc(&predict_tc(model, ids)?, labels),
        EncodedData::Ner { ids, tags } => evaluate_ner(&predict_ner(model, ids)?, tags, counting),
    }
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(step as u64)
}

/// Adam on the trainable weights of `model`, validating after every epoch
/// and keeping the best epoch (the earliest on ties).
pub fn train_model(mut model: TaskModel, train: &EncodedData, val: &EncodedData, tp: &TrainParams) -> Result<TrainedModel> {
    tp.validate()?;
    check_task(&model, train)?;
    check_task(&model, val)?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut opt = Optimizer::new(OptimizerKind::Adam, tp.lr, &model.params, |n| model.is_trainable(n));
    let mut shuffle = rng::stream(tp.seed, "shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ndgrad::Params<f32>)> = None;
    let (mut val_series, mut train_losses) = (Vec::new(), Vec::new());
    let mut step = 0;
    for epoch in 1..=tp.epochs {
        order.shuffle(&mut shuffle);
        let (mut sum, mut n) = (0.0, 0usize);
        for idx in order.chunks(tp.batch_size) {
            let x = batch_for(&model, train.ids(), idx);
            let mut g = Graph::training(step_seed(tp.seed, step));
            step += 1;
            let loss = match train {
                EncodedData::Tc { labels, .. } => {
                    let y = tc_forward(&mut g, &model.params, &model.config, &x)?;
                    let targets: Vec<Option<usize>> = idx.iter().map(|&i| Some(labels[i])).collect();
                    g.cross_entropy(y, &targets)?
                }
                EncodedData::Ner { tags, .. } => {
                    let gold: Vec<Vec<usize>> = idx.iter().map(|&i| tags[i].clone()).collect();
                    ner_loss(&mut g, &model.params, &model.config, &x, &gold)?
                }
            };
            let l = g.value(loss).item() as f64;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("training loss became {l} in epoch {epoch}")));
            }
            sum += l;
            n += 1;
            g.backward(loss)?;
            opt.step(&mut model.params, &g.param_grads())?;
        }
        train_losses.push(sum / n as f64);
        let f1 = evaluate_model(&model, val, tp.counting)?.weighted_f1;
        val_series.push(f1);
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, epoch, model.params.clone()));
        }
    }
    let (best_val_f1, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainedModel {
        model,
        val_series,
        train_losses,
        best_epoch,
        best_val_f1,
    })
}

/// Builds a model from `init` and trains it on `train`, selecting by `val`.
pub fn fine_tune(
    config: ModelConfig,
    init: Init<'_>,
    vocab: &Vocabulary,
    train: &EncodedData,
    val: &EncodedData,
    tp: &TrainParams,
) -> Result<TrainedModel> {
    let model = TaskModel::build(config, init, vocab)?;
    train_model(model, train, val, tp)
}
