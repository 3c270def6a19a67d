use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use domir::corpus::{clean_corpus, corpus_stats, ingest_corpus, CleaningRules, Corpus, SourceTag};
use domir::dataset::{load_ner, load_tc, LabeledDataset};
use domir::encoder::{further_pretrain, pretrain, EncoderCheckpoint, EncoderConfig, PretrainConfig};
use domir::experiment::{run_experiment, ExperimentConfig, ExperimentReport, Protocol, ReportFormat, Template, REPORT_TSV};
use domir::heads::{evaluate_model, EncodedData, TaskModel};
use domir::metrics::{NerCounting, TaskKind};
use domir::sgns::{nearest_neighbors, train_embeddings, EmbeddingConfig, EmbeddingTable};
use domir::tokenize::{build_vocab_multi, SegmenterDict, TokenMode, Tokenizer, Vocabulary};
use domir::{Error, Result};

#[derive(Parser)]
#[command(name = "domir", version, about = "Domain-adaptive transfer learning for regulatory text")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a tenth of the configured epochs.
    #[arg(long, global = true, conflicts_with = "paper_protocol")]
    desk: bool,
    /// Run the configured epochs (the default).
    #[arg(long, global = true)]
    paper_protocol: bool,
}

#[derive(Args)]
struct TokenOpts {
    /// `char` or `word`.
    #[arg(long, default_value = "char")]
    mode: TokenMode,
    /// Segmentation dictionary, one word per line; required in word mode.
    #[arg(long)]
    dict: Option<PathBuf>,
}

impl TokenOpts {
    fn tokenizer(&self) -> Result<Tokenizer> {
        let dict = self.dict.as_ref().map(SegmenterDict::load).transpose()?;
        Tokenizer::new(self.mode, dict)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics and cleaning.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Vocabulary construction.
    #[command(subcommand)]
    Vocab(VocabCmd),
    /// Static skip-gram embeddings.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Pretrain an encoder from scratch with MLM and NSP.
    Pretrain(PretrainArgs),
    /// Continue pretraining a checkpoint on a domain corpus.
    FurtherPretrain(FurtherArgs),
    /// Fine-tune one model at one grid point of an experiment config.
    Finetune(FinetuneArgs),
    /// Score a saved task model on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Experiment grids.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Re-render a saved experiment report.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Line and character counts per file and in total.
    Stats {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Apply cleaning rules (from --config) and write the cleaned corpus.
    Clean {
        input: PathBuf,
        #[arg(long, default_value = "general")]
        tag: SourceTag,
    },
}

#[derive(Subcommand)]
enum VocabCmd {
    Build {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        tokens: TokenOpts,
        #[arg(long, default_value_t = 1)]
        min_count: u64,
    },
}

#[derive(Subcommand)]
enum EmbedCmd {
    /// Train a table on one or more corpora (config: an embedding config).
    Train {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Vocabulary file; built from the inputs when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[command(flatten)]
        tokens: TokenOpts,
    },
    /// Nearest tokens by cosine similarity.
    Neighbors {
        #[arg(long)]
        embeddings: PathBuf,
        token: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    tokens: TokenOpts,
    /// Overrides `pretrain.steps`.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct FurtherArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    tokens: TokenOpts,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Model kind; defaults to the first in the config.
    #[arg(long)]
    model: Option<String>,
    /// Source name; defaults to the first in the config.
    #[arg(long)]
    source: Option<String>,
    /// Learning rate; defaults to the first of the grid.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Saved task model directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    tokens: TokenOpts,
    #[arg(long, default_value = "exact_span")]
    counting: String,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run every trial of a grid and write its report.
    Run {
        /// Start from a built-in template (exp1..exp4) instead of --config.
        #[arg(long)]
        template: Option<Template>,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// An experiment output directory or a report TSV.
    input: PathBuf,
    /// `text` or `tsv`.
    #[arg(long, default_value = "text")]
    format: ReportFormat,
}

/// Pretraining config file: `[encoder]` and `[pretrain]` tables.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PretrainFile {
    encoder: EncoderConfig,
    pretrain: PretrainConfig,
}

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.message().to_string()))
}

fn output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn required_out(common: &Common) -> Result<&Path> {
    common.out.as_deref().ok_or_else(|| Error::config("--out", "this command needs an output path"))
}

fn corpora(paths: &[PathBuf], tag: SourceTag) -> Result<Vec<Corpus>> {
    paths.iter().map(|p| ingest_corpus(p, tag)).collect()
}

fn experiment_config(common: &Common, template: Option<Template>) -> Result<ExperimentConfig> {
    let mut c = match (&common.config, template) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(t)) => ExperimentConfig::template(t),
        (Some(_), Some(_)) => return Err(Error::config("--template", "use either --config or --template")),
        (None, None) => return Err(Error::config("--config", "an experiment config is required")),
    };
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(o) = &common.out {
        c.output = o.clone();
    }
    c.apply_protocol(if common.desk { Protocol::Desk } else { Protocol::Paper });
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Corpus(CorpusCmd::Stats { inputs }) => {
            let mut text = String::from("file\tlines\tchars\tcjk_chars\tdistinct_chars\n");
            let all = corpora(&inputs, SourceTag::General)?;
            for c in &all {
                let s = corpus_stats(c);
                text += &format!("{}\t{}\t{}\t{}\t{}\n", c.provenance, s.line_count, s.total_chars, s.cjk_chars, s.distinct_tokens);
            }
            let joined = all.iter().skip(1).fold(all[0].clone(), |acc, c| acc.concat(c));
            let s = corpus_stats(&joined);
            text += &format!("TOTAL\t{}\t{}\t{}\t{}\n", s.line_count, s.total_chars, s.cjk_chars, s.distinct_tokens);
            output(common.out.as_deref(), &text)
        }
        Command::Corpus(CorpusCmd::Clean { input, tag }) => {
            let rules: CleaningRules = read_toml(common.config.as_deref())?;
            let cleaned = clean_corpus(&ingest_corpus(&input, tag)?, &rules);
            let mut text = cleaned.lines.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            output(Some(required_out(common)?), &text)
        }
        Command::Vocab(VocabCmd::Build { inputs, tokens, min_count }) => {
            let cs = corpora(&inputs, SourceTag::General)?;
            let refs: Vec<&Corpus> = cs.iter().collect();
            let v = build_vocab_multi(&refs, &tokens.tokenizer()?, min_count)?;
            v.save(required_out(common)?)?;
            eprintln!("{} tokens, fingerprint {}", v.len(), v.fingerprint());
            Ok(())
        }
        Command::Embed(EmbedCmd::Train { inputs, vocab, tokens }) => {
            let mut config: EmbeddingConfig = read_toml(common.config.as_deref())?;
            if let Some(s) = common.seed {
                config.seed = s;
            }
            let tk = tokens.tokenizer()?;
            let cs = corpora(&inputs, SourceTag::General)?;
            let refs: Vec<&Corpus> = cs.iter().collect();
            let v = match vocab {
                Some(p) => Vocabulary::load(p)?,
                None => build_vocab_multi(&refs, &tk, config.min_count)?,
            };
            let run = train_embeddings(&refs, &tk, &v, &config)?;
            for (i, l) in run.epoch_losses.iter().enumerate() {
                eprintln!("epoch {}\tloss {l:.6}", i + 1);
            }
            run.table.save(required_out(common)?)
        }
        Command::Embed(EmbedCmd::Neighbors { embeddings, token, k }) => {
            let table = EmbeddingTable::load(embeddings)?;
            let text: String = nearest_neighbors(&table, &token, k)?
                .into_iter()
                .map(|(t, c)| format!("{t}\t{c:.4}\n"))
                .collect();
            output(common.out.as_deref(), &text)
        }
        Command::Pretrain(a) => {
            let mut f: PretrainFile = read_toml(common.config.as_deref())?;
            if let Some(s) = common.seed {
                f.encoder.seed = s;
                f.pretrain.seed = s;
            }
            if let Some(n) = a.steps {
                f.pretrain.steps = n;
            }
            let cs = corpora(&a.inputs, SourceTag::General)?;
            let corpus = cs.iter().skip(1).fold(cs[0].clone(), |acc, c| acc.concat(c));
            let v = Vocabulary::load(&a.vocab)?;
            let ck = pretrain(&corpus, &a.tokens.tokenizer()?, &v, f.encoder, &f.pretrain)?;
            ck.save(required_out(common)?)
        }
        Command::FurtherPretrain(a) => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct FurtherFile {
                pretrain: PretrainConfig,
            }
            impl Default for FurtherFile {
                fn default() -> Self {
                    Self {
                        pretrain: PretrainConfig::further(0, 0),
                    }
                }
            }
            let mut f: FurtherFile = read_toml(common.config.as_deref())?;
            if let Some(s) = common.seed {
                f.pretrain.seed = s;
            }
            if let Some(n) = a.steps {
                f.pretrain.steps = n;
            }
            let base = EncoderCheckpoint::load(&a.checkpoint)?;
            let cs = corpora(&a.inputs, SourceTag::InDomain)?;
            let corpus = cs.iter().skip(1).fold(cs[0].clone(), |acc, c| acc.concat(c));
            let v = Vocabulary::load(&a.vocab)?;
            let ck = further_pretrain(&base, &corpus, &a.tokens.tokenizer()?, &v, &f.pretrain)?;
            ck.save(required_out(common)?)
        }
        Command::Finetune(a) => {
            let mut c = experiment_config(common, None)?;
            let kinds = c.model_kinds()?;
            let model = match &a.model {
                Some(m) => {
                    let i = (0..kinds.len())
                        .find(|&i| c.models[i] == *m || kinds[i].to_string() == *m || kinds[i].name() == m)
                        .ok_or_else(|| Error::config("--model", format!("`{m}` is not among the config's models")))?;
                    c.models[i].clone()
                }
                None => c.models[0].clone(),
            };
            let source = match &a.source {
                Some(s) => c
                    .sources
                    .iter()
                    .find(|x| &x.name == s)
                    .cloned()
                    .ok_or_else(|| Error::config("--source", format!("`{s}` is not among the config's sources")))?,
                None => c.sources[0].clone(),
            };
            c.models = vec![model];
            c.sources = vec![source];
            c.lr_grid = vec![a.lr.unwrap_or(c.lr_grid[0])];
            let outcome = run_experiment(&c)?;
            let t = &outcome.trials[0];
            println!("{}\tbest_epoch {}\tweighted_f1 {:.4}", t.id, t.best_epoch, t.best_weighted_f1);
            Ok(())
        }
        Command::Evaluate(a) => {
            let counting: NerCounting = match a.counting.as_str() {
                "exact_span" => NerCounting::ExactSpan,
                "token" => NerCounting::Token,
                other => return Err(Error::config("--counting", format!("expected `exact_span` or `token`, got `{other}`"))),
            };
            let (model, _) = TaskModel::load(&a.model)?;
            let v = Vocabulary::load(&a.vocab)?;
            model.check_vocab(&v)?;
            let data = match model.config.kind.task() {
                TaskKind::Tc => LabeledDataset::Tc(load_tc(&a.dataset)?),
                TaskKind::Ner => LabeledDataset::Ner(load_ner(&a.dataset)?),
            };
            let encoded = EncodedData::encode(&data, &a.tokens.tokenizer()?, &v)?;
            let report = evaluate_model(&model, &encoded, counting)?;
            output(common.out.as_deref(), &report.to_tsv())
        }
        Command::Experiment(ExperimentCmd::Run { template }) => {
            let c = experiment_config(common, template)?;
            let outcome = run_experiment(&c)?;
            print!("{}", outcome.report.to_text());
            eprintln!("{} trials written to {}", outcome.trials.len(), c.output.display());
            Ok(())
        }
        Command::Report(a) => {
            let path = if a.input.is_dir() { a.input.join(REPORT_TSV) } else { a.input };
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let report = ExperimentReport::parse_tsv(&text)?;
            output(common.out.as_deref(), &report.render(a.format))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
