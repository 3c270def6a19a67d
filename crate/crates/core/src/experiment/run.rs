use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Layout};
use super::report::{round4, ExperimentReport, ReportCell, ReportFormat, ReportRow};
use crate::dataset::{load_ner, load_tc, split_dataset, LabeledDataset, SplitSpec};
use crate::encoder::EncoderCheckpoint;
use crate::error::{Error, Result};
use crate::heads::{char_inventory, fine_tune, EncodedData, Init, ModelConfig, ModelKind, NerKind, TrainParams};
use crate::metrics::{NerCounting, TaskKind};
use crate::sgns::EmbeddingTable;
use crate::tokenize::{token_counts, SegmenterDict, TokenMode, Tokenizer, Vocabulary};

pub const REPORT_TSV: &str = "report.tsv";
pub const REPORT_TEXT: &str = "report.txt";
pub const TRIALS_JSON: &str = "trials.json";
/// Wall-clock times are kept apart so the other outputs are reproducible.
pub const TIMINGS: &str = "timings.tsv";
pub const TRIALS_DIR: &str = "trials";

/// One fine-tuning run at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub id: String,
    pub model: ModelKind,
    pub source: String,
    pub lr: f64,
    pub seed: u64,
    /// Validation weighted F1 after each epoch.
    pub val_series: Vec<f64>,
    pub train_losses: Vec<f64>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_weighted_f1: f64,
    pub model_config: ModelConfig,
    pub train: TrainParams,
    /// Saved weights of the best epoch, relative to the output directory.
    pub checkpoint: PathBuf,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Highest `best_weighted_f1`; ties go to the smaller learning rate, then
/// the earlier best epoch.
pub fn grid_select(trials: &[TrialResult]) -> Result<&TrialResult> {
    trials
        .iter()
        .min_by(|a, b| {
            b.best_weighted_f1
                .partial_cmp(&a.best_weighted_f1)
                .unwrap_or(Ordering::Equal)
                .then(a.lr.partial_cmp(&b.lr).unwrap_or(Ordering::Equal))
                .then(a.best_epoch.cmp(&b.best_epoch))
        })
        .ok_or(Error::Empty("trial list"))
}

pub fn trial_id(model: ModelKind, source: &str, lr: f64) -> String {
    format!("{}.{source}.lr{lr:e}", model.name())
}

fn lr_label(lr: f64) -> String {
    format!("{lr:e}")
}

enum Source {
    Random,
    Table(EmbeddingTable),
    Encoder(EncoderCheckpoint),
}

impl Source {
    fn init(&self) -> Init<'_> {
        match self {
            Source::Random => Init::Random,
            Source::Table(t) => Init::Table(t),
            Source::Encoder(c) => Init::Encoder(c),
        }
    }
}

fn load_dataset(task: TaskKind, path: &Path) -> Result<LabeledDataset> {
    Ok(match task {
        TaskKind::Tc => LabeledDataset::Tc(load_tc(path)?),
        TaskKind::Ner => LabeledDataset::Ner(load_ner(path)?),
    })
}

fn dataset_vocab(data: &LabeledDataset, tk: &Tokenizer) -> Vocabulary {
    let counts = match data {
        LabeledDataset::Tc(v) => token_counts(&v.iter().map(|e| e.text.clone()).collect::<Vec<_>>(), tk),
        LabeledDataset::Ner(v) => {
            let mut c = HashMap::new();
            for t in v.iter().flat_map(|s| &s.tokens) {
                *c.entry(t.clone()).or_insert(0) += 1;
            }
            c
        }
    };
    Vocabulary::from_counts(&counts, 1)
}

struct Prepared {
    vocab: Vocabulary,
    sources: Vec<Source>,
    train: EncodedData,
    val: EncodedData,
    chars: Vec<char>,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let tk = match config.token_mode {
        TokenMode::Char => Tokenizer::Char,
        TokenMode::Word => {
            let path = config.dict.as_ref().ok_or_else(|| Error::config("dict", "word mode requires a segmentation dictionary"))?;
            Tokenizer::new(TokenMode::Word, Some(SegmenterDict::load(path)?))?
        }
    };
    let data = load_dataset(config.task, &config.dataset)?;
    let mut sources = Vec::with_capacity(config.sources.len());
    for s in &config.sources {
        sources.push(match (&s.embeddings, &s.checkpoint) {
            (Some(p), _) => Source::Table(EmbeddingTable::load(p)?),
            (None, Some(p)) => Source::Encoder(EncoderCheckpoint::load(p)?),
            (None, None) => Source::Random,
        });
    }
    let vocab = match &config.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => sources
            .iter()
            .find_map(|s| match s {
                Source::Table(t) => Some(t.vocab.clone()),
                _ => None,
            })
            .unwrap_or_else(|| dataset_vocab(&data, &tk)),
    };
    // One split per experiment, shared by every grid point.
    let spec = SplitSpec {
        seed: config.seed,
        ..config.split
    };
    let (train, val) = split_dataset(&data, &spec)?;
    let chars = if config.token_mode == TokenMode::Word { char_inventory(&vocab) } else { Vec::new() };
    Ok(Prepared {
        train: EncodedData::encode(&train, &tk, &vocab)?,
        val: EncodedData::encode(&val, &tk, &vocab)?,
        vocab,
        sources,
        chars,
    })
}

#[derive(Clone, Debug)]
struct TrialSpec {
    model: ModelKind,
    source: usize,
    lr: f64,
}

fn run_trial(config: &ExperimentConfig, prep: &Prepared, spec: &TrialSpec, out: &Path) -> Result<TrialResult> {
    let source = &config.sources[spec.source];
    let id = trial_id(spec.model, &source.name, spec.lr);
    let mut mc = ModelConfig {
        kind: spec.model,
        source: source.name.clone(),
        padding: config.padding,
        seed: config.seed,
        ..config.model.clone()
    };
    if spec.model == ModelKind::Ner(NerKind::BilstmCnnCrf) && mc.chars.is_empty() {
        mc.chars = prep.chars.clone();
    }
    let tp = TrainParams {
        lr: spec.lr,
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        counting: config.counting,
    };
    let start = Instant::now();
    let trained = fine_tune(mc, prep.sources[spec.source].init(), &prep.vocab, &prep.train, &prep.val, &tp)
        .map_err(|e| annotate(e, &id))?;
    let checkpoint = Path::new(TRIALS_DIR).join(&id);
    trained.model.save(
        out.join(&checkpoint),
        serde_json::json!({
            "lr": spec.lr,
            "best_epoch": trained.best_epoch,
            "best_weighted_f1": trained.best_val_f1,
        }),
    )?;
    Ok(TrialResult {
        id,
        model: spec.model,
        source: source.name.clone(),
        lr: spec.lr,
        seed: config.seed,
        val_series: trained.val_series,
        train_losses: trained.train_losses,
        best_epoch: trained.best_epoch,
        best_weighted_f1: trained.best_val_f1,
        model_config: trained.model.config,
        train: tp,
        checkpoint,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Prefixes the trial id onto errors that carry free text.
fn annotate(e: Error, id: &str) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("trial {id}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("trial {id}: {m}")),
        Error::Config { field, msg } => Error::Config {
            field,
            msg: format!("{msg} (trial {id})"),
        },
        other => other,
    }
}

/// Builds the result table from trials in grid order.
pub fn assemble_report(config: &ExperimentConfig, trials: &[TrialResult]) -> Result<ExperimentReport> {
    let kinds = config.model_kinds()?;
    let cell = |t: &TrialResult| ReportCell {
        weighted_f1: round4(t.best_weighted_f1),
        trial: t.id.clone(),
        lr: t.lr,
        best_epoch: t.best_epoch,
    };
    let matching = |k: ModelKind, s: &str| -> Vec<TrialResult> {
        trials.iter().filter(|t| t.model == k && t.source == s).cloned().collect()
    };
    let (columns, rows) = match config.layout {
        Layout::ModelsBySources => {
            let columns = config.sources.iter().map(|s| s.name.clone()).collect();
            let mut rows = Vec::new();
            for &k in &kinds {
                let cells = config
                    .sources
                    .iter()
                    .map(|s| grid_select(&matching(k, &s.name)).map(cell))
                    .collect::<Result<_>>()?;
                rows.push(ReportRow {
                    label: k.name().to_string(),
                    cells,
                });
            }
            (columns, rows)
        }
        Layout::LrByModels => {
            let pairs: Vec<(ModelKind, &str)> = kinds
                .iter()
                .flat_map(|&k| config.sources.iter().map(move |s| (k, s.name.as_str())))
                .collect();
            let columns = pairs
                .iter()
                .map(|(k, s)| if kinds.len() == 1 { s.to_string() } else { format!("{}/{s}", k.name()) })
                .collect();
            let mut rows = Vec::new();
            for &lr in &config.lr_grid {
                let cells = pairs
                    .iter()
                    .map(|&(k, s)| {
                        trials
                            .iter()
                            .find(|t| t.model == k && t.source == s && t.lr == lr)
                            .map(cell)
                            .ok_or(Error::Empty("trial for a report cell"))
                    })
                    .collect::<Result<_>>()?;
                rows.push(ReportRow { label: lr_label(lr), cells });
            }
            (columns, rows)
        }
    };
    Ok(ExperimentReport {
        name: config.name.clone(),
        task: config.task,
        layout: config.layout,
        counting: if config.task == TaskKind::Ner { config.counting } else { NerCounting::default() },
        columns,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    /// In grid order: model, then source, then learning rate.
    pub trials: Vec<TrialResult>,
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Runs every (model, source, lr) trial of `config` and writes the report,
/// the trial list, timings and each trial's best weights under
/// `config.output`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let kinds = config.model_kinds()?;
    let prep = prepare(config)?;
    let out = &config.output;
    std::fs::create_dir_all(out.join(TRIALS_DIR)).map_err(|e| Error::io(out, e))?;

    let mut specs = Vec::new();
    for &model in &kinds {
        for source in 0..config.sources.len() {
            for &lr in &config.lr_grid {
                specs.push(TrialSpec { model, source, lr });
            }
        }
    }
    let threads = config.threads.min(specs.len());
    let mut results: Vec<Option<Result<TrialResult>>> = (0..specs.len()).map(|_| None).collect();
    if threads <= 1 {
        for (slot, spec) in results.iter_mut().zip(&specs) {
            *slot = Some(run_trial(config, &prep, spec, out));
        }
    } else {
        // Worker w takes trials w, w + threads, ...; results land by index.
        let finished: Vec<Vec<(usize, Result<TrialResult>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let (prep, specs) = (&prep, &specs);
                    scope.spawn(move || {
                        (w..specs.len())
                            .step_by(threads)
                            .map(|i| (i, run_trial(config, prep, &specs[i], out)))
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("trial worker panicked")).collect()
        });
        for (i, r) in finished.into_iter().flatten() {
            results[i] = Some(r);
        }
    }
    let trials: Vec<TrialResult> = results.into_iter().map(|r| r.expect("every trial ran")).collect::<Result<_>>()?;

    let report = assemble_report(config, &trials)?;
    report.emit(out.join(REPORT_TSV), ReportFormat::Tsv)?;
    report.emit(out.join(REPORT_TEXT), ReportFormat::Text)?;
    let json = serde_json::to_string_pretty(&trials).map_err(|e| Error::InvalidInput(e.to_string()))?;
    write(out.join(TRIALS_JSON), &(json + "\n"))?;
    let mut timings = String::from("trial\tseconds\n");
    for t in &trials {
        timings.push_str(&format!("{}\t{:.3}\n", t.id, t.wall_time_secs));
    }
    write(out.join(TIMINGS), &timings)?;
    Ok(ExperimentOutcome { report, trials })
}
