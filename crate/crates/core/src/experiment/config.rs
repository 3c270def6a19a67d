use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::read_utf8;
use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::heads::{ModelConfig, ModelKind, NerKind, TcKind};
use crate::metrics::{NerCounting, TaskKind};
use crate::tokenize::TokenMode;

/// Shape of the result table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Rows are models, columns are initialization sources; each cell is the
    /// best trial over the learning-rate grid.
    #[default]
    ModelsBySources,
    /// Rows are learning rates, columns are model/source pairs; each cell is
    /// one trial.
    LrByModels,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::ModelsBySources => "models_by_sources",
            Layout::LrByModels => "lr_by_models",
        }
    }

    pub fn corner(self) -> &'static str {
        match self {
            Layout::ModelsBySources => "Model/Word embedding",
            Layout::LrByModels => "Lr/model",
        }
    }
}

/// One initialization source: a static embedding table, an encoder
/// checkpoint, or neither (random initialization).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl SourceSpec {
    fn new(name: &str, embeddings: Option<&str>, checkpoint: Option<&str>) -> Self {
        Self {
            name: name.into(),
            embeddings: embeddings.map(PathBuf::from),
            checkpoint: checkpoint.map(PathBuf::from),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
}

impl Template {
    pub const ALL: [Template; 4] = [Template::Exp1, Template::Exp2, Template::Exp3, Template::Exp4];

    pub fn as_str(self) -> &'static str {
        match self {
            Template::Exp1 => "exp1",
            Template::Exp2 => "exp2",
            Template::Exp3 => "exp3",
            Template::Exp4 => "exp4",
        }
    }
}

impl std::str::FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config("template", format!("unknown template `{s}`, expected exp1..exp4")))
    }
}

/// Epoch budget: the configured values, or a tenth of them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Protocol {
    #[default]
    Paper,
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: TaskKind,
    pub layout: Layout,
    /// Model kinds, with or without the `tc/` or `ner/` prefix.
    pub models: Vec<String>,
    pub sources: Vec<SourceSpec>,
    pub lr_grid: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub padding: usize,
    /// Only `train_ratio` is read; the split stream is seeded by `seed`.
    pub split: SplitSpec,
    /// Seeds the split, weight init, shuffling and dropout streams.
    pub seed: u64,
    pub counting: NerCounting,
    pub token_mode: TokenMode,
    /// Segmentation dictionary, required in word mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dict: Option<PathBuf>,
    /// Labeled data: `label<TAB>text` lines for tc, CoNLL for ner.
    pub dataset: PathBuf,
    /// Vocabulary file. Without one, the vocabulary of the first embedding
    /// source is used, or one is built from the dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    pub output: PathBuf,
    /// Trials run concurrently; results do not depend on it.
    pub threads: usize,
    /// Architecture settings shared by every trial. `kind`, `source`,
    /// `padding` and `seed` are set per trial.
    pub model: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            task: TaskKind::Tc,
            layout: Layout::ModelsBySources,
            models: Vec::new(),
            sources: Vec::new(),
            lr_grid: Vec::new(),
            epochs: 100,
            batch_size: 16,
            padding: 64,
            split: SplitSpec::default(),
            seed: 0,
            counting: NerCounting::ExactSpan,
            token_mode: TokenMode::Char,
            dict: None,
            dataset: PathBuf::new(),
            vocab: None,
            output: PathBuf::from("runs"),
            threads: 1,
            model: ModelConfig::default(),
        }
    }
}

fn names(kinds: impl IntoIterator<Item = &'static str>) -> Vec<String> {
    kinds.into_iter().map(String::from).collect()
}

impl ExperimentConfig {
    /// The documented defaults of each experiment. Paths are relative to the
    /// config file and follow the layout the CLI writes.
    pub fn template(t: Template) -> Self {
        let embedding_sources = || {
            vec![
                SourceSpec::new("general", Some("embeddings/general.vec"), None),
                SourceSpec::new("in_domain", Some("embeddings/in_domain.vec"), None),
                SourceSpec::new("close_domain", Some("embeddings/close_domain.vec"), None),
            ]
        };
        let checkpoint_sources = || {
            vec![
                SourceSpec::new("general", None, Some("checkpoints/general")),
                SourceSpec::new("in_domain", None, Some("checkpoints/in_domain")),
                SourceSpec::new("close_domain", None, Some("checkpoints/close_domain")),
            ]
        };
        let encoder_grid = vec![1e-5, 3e-5, 5e-5, 7e-5];
        let base = Self {
            name: t.as_str().into(),
            vocab: Some("vocab.txt".into()),
            output: PathBuf::from("runs").join(t.as_str()),
            ..Self::default()
        };
        match t {
            Template::Exp1 => Self {
                task: TaskKind::Tc,
                models: names(TcKind::ALL[..6].iter().map(|k| k.as_str())),
                sources: embedding_sources(),
                lr_grid: vec![0.001, 0.0005, 0.00025, 0.0001],
                epochs: 100,
                dataset: "data/tc.tsv".into(),
                ..base
            },
            Template::Exp2 => Self {
                task: TaskKind::Ner,
                models: names(NerKind::ALL[..4].iter().map(|k| k.as_str())),
                sources: embedding_sources(),
                lr_grid: vec![0.015, 0.01, 0.005, 0.001],
                epochs: 1000,
                batch_size: 20,
                dataset: "data/ner.conll".into(),
                ..base
            },
            Template::Exp3 => Self {
                task: TaskKind::Tc,
                layout: Layout::LrByModels,
                models: names([TcKind::EncoderFt.as_str()]),
                sources: checkpoint_sources(),
                lr_grid: encoder_grid,
                epochs: 100,
                dataset: "data/tc.tsv".into(),
                ..base
            },
            Template::Exp4 => Self {
                task: TaskKind::Ner,
                layout: Layout::LrByModels,
                models: names([NerKind::EncoderTokenFt.as_str()]),
                sources: checkpoint_sources(),
                lr_grid: encoder_grid,
                epochs: 30,
                batch_size: 16,
                dataset: "data/ner.conll".into(),
                ..base
            },
        }
    }

    /// Parses TOML. A top-level `template = "expN"` key starts from that
    /// template; the remaining keys override it, with tables merged one
    /// level deep.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        let table = match user.remove("template") {
            Some(toml::Value::String(name)) => {
                let mut base = toml::Table::try_from(Self::template(name.parse()?))
                    .map_err(|e| Error::config("template", e.to_string()))?;
                for (k, v) in user {
                    match (base.get_mut(&k), v) {
                        (Some(toml::Value::Table(b)), toml::Value::Table(u)) => b.extend(u),
                        (_, v) => {
                            base.insert(k, v);
                        }
                    }
                }
                base
            }
            Some(_) => return Err(Error::config("template", "must be a string")),
            None => user,
        };
        let config: Self = table.try_into().map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths in it are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut c = Self::from_toml(&read_utf8(path)?)?;
        if let Some(dir) = path.parent() {
            c.rebase(dir);
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    /// Prefixes every relative path with `dir`.
    pub fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.output);
        self.vocab.as_mut().map(fix);
        self.dict.as_mut().map(fix);
        for s in &mut self.sources {
            s.embeddings.as_mut().map(fix);
            s.checkpoint.as_mut().map(fix);
        }
    }

    pub fn apply_protocol(&mut self, p: Protocol) {
        if p == Protocol::Desk {
            self.epochs = (self.epochs / 10).max(1);
        }
    }

    pub fn model_kinds(&self) -> Result<Vec<ModelKind>> {
        self.models
            .iter()
            .map(|m| {
                let full = if m.contains('/') { m.clone() } else { format!("{}/{m}", self.task.as_str()) };
                let kind: ModelKind = full.parse().map_err(|_| Error::config("models", format!("unknown model kind `{m}`")))?;
                if kind.task() != self.task {
                    return Err(Error::config("models", format!("{kind} does not match task {}", self.task.as_str())));
                }
                Ok(kind)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty() {
            return Err(Error::config("lr_grid", "must list at least one learning rate"));
        }
        if let Some(lr) = self.lr_grid.iter().find(|lr| !(**lr >= 0.0 && lr.is_finite())) {
            return Err(Error::config("lr_grid", format!("invalid learning rate {lr}")));
        }
        for (field, v) in [("epochs", self.epochs), ("batch_size", self.batch_size), ("padding", self.padding), ("threads", self.threads)] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.lr_grid.iter().enumerate().any(|(i, a)| self.lr_grid[..i].contains(a)) {
            return Err(Error::config("lr_grid", "learning rates must be distinct"));
        }
        let kinds = self.model_kinds()?;
        if kinds.is_empty() {
            return Err(Error::config("models", "must list at least one model"));
        }
        if kinds.iter().enumerate().any(|(i, k)| kinds[..i].contains(k)) {
            return Err(Error::config("models", "model kinds must be distinct"));
        }
        if self.sources.is_empty() {
            return Err(Error::config("sources", "must list at least one source"));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.sources {
            if s.name.is_empty() || s.name.contains(['\t', '\n', '/']) {
                return Err(Error::config("sources.name", format!("`{}` is not a usable source name", s.name)));
            }
            if !seen.insert(&s.name) {
                return Err(Error::config("sources.name", format!("duplicate source `{}`", s.name)));
            }
            if s.embeddings.is_some() && s.checkpoint.is_some() {
                return Err(Error::config("sources", format!("source `{}` sets both embeddings and checkpoint", s.name)));
            }
        }
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::config("dataset", "a dataset path is required"));
        }
        self.split.split_indices(2).map(|_| ())
    }
}
