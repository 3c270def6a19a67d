//! Line-oriented text corpora: ingestion, cleaning and statistics.

use std::collections::HashSet;
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    General,
    InDomain,
    CloseDomain,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::General => "general",
            SourceTag::InDomain => "in_domain",
            SourceTag::CloseDomain => "close_domain",
        }
    }
}

impl std::str::FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "general" => Ok(SourceTag::General),
            "in_domain" => Ok(SourceTag::InDomain),
            "close_domain" => Ok(SourceTag::CloseDomain),
            other => Err(Error::config("source_tag", format!("unknown source `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub tag: SourceTag,
    pub lines: Vec<String>,
    pub provenance: String,
}

impl Corpus {
    /// Builds a corpus from in-memory lines. Any embedded line break splits
    /// the line so the no-newline invariant holds.
    pub fn from_lines<I, S>(tag: SourceTag, lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let lines = lines
            .into_iter()
            .flat_map(|l| {
                l.as_ref()
                    .split('\n')
                    .map(|s| s.strip_suffix('\r').unwrap_or(s).replace('\r', " "))
                    .collect::<Vec<_>>()
            })
            .collect();
        Self {
            tag,
            lines,
            provenance: "in-memory".to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Concatenation of two corpora; keeps `self`'s tag.
    pub fn concat(&self, other: &Corpus) -> Corpus {
        let mut lines = self.lines.clone();
        lines.extend(other.lines.iter().cloned());
        Corpus {
            tag: self.tag,
            lines,
            provenance: format!("{} + {}", self.provenance, other.provenance),
        }
    }
}

/// Reads a UTF-8 text file, one corpus line per text line. Both LF and CRLF
/// endings are accepted; a trailing newline does not produce an empty line.
pub fn ingest_corpus(path: impl AsRef<Path>, tag: SourceTag) -> Result<Corpus> {
    let path = path.as_ref();
    let text = read_utf8(path)?;
    let lines = text_lines(&text);
    Ok(Corpus {
        tag,
        lines,
        provenance: path.display().to_string(),
    })
}

pub(crate) fn read_utf8(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

pub(crate) fn text_lines(text: &str) -> Vec<String> {
    text.lines().map(str::to_string).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningRules {
    /// Lines with fewer characters (after stripping, if enabled) are dropped.
    pub min_chars: usize,
    pub strip_whitespace: bool,
    /// Drops a line equal to the last kept line.
    pub drop_duplicates: bool,
    /// When nonempty, a line survives only if it contains one of these.
    pub keep_keywords: Vec<String>,
    /// A line containing any of these is dropped.
    pub drop_patterns: Vec<String>,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self {
            min_chars: 2,
            strip_whitespace: true,
            drop_duplicates: true,
            keep_keywords: Vec::new(),
            drop_patterns: Vec::new(),
        }
    }
}

impl CleaningRules {
    fn keeps(&self, line: &str) -> bool {
        if line.chars().count() < self.min_chars.max(1) {
            return false;
        }
        if !self.keep_keywords.is_empty() && !self.keep_keywords.iter().any(|k| line.contains(k.as_str())) {
            return false;
        }
        !self.drop_patterns.iter().any(|p| !p.is_empty() && line.contains(p.as_str()))
    }
}

/// Applies `rules` line by line, preserving order. Empty lines never survive,
/// whatever `min_chars` says.
pub fn clean_corpus(corpus: &Corpus, rules: &CleaningRules) -> Corpus {
    let mut out: Vec<String> = Vec::with_capacity(corpus.lines.len());
    for raw in &corpus.lines {
        let line = if rules.strip_whitespace { raw.trim() } else { raw.as_str() };
        if !rules.keeps(line) {
            continue;
        }
        if rules.drop_duplicates && out.last().is_some_and(|prev| prev == line) {
            continue;
        }
        out.push(line.to_string());
    }
    Corpus {
        tag: corpus.tag,
        lines: out,
        provenance: corpus.provenance.clone(),
    }
}

/// Code points in the CJK Unified Ideographs blocks (base block, extensions
/// A through I, and the compatibility ideographs).
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EE5F
        | 0x30000..=0x323AF
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub line_count: usize,
    pub total_chars: usize,
    pub cjk_chars: usize,
    /// Distinct characters.
    pub distinct_tokens: usize,
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    /// Component-wise sum. `distinct_tokens` is summed as well, matching the
    /// additivity law for corpora with disjoint character sets.
    fn add(self, o: CorpusStats) -> CorpusStats {
        CorpusStats {
            line_count: self.line_count + o.line_count,
            total_chars: self.total_chars + o.total_chars,
            cjk_chars: self.cjk_chars + o.cjk_chars,
            distinct_tokens: self.distinct_tokens + o.distinct_tokens,
        }
    }
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut distinct = HashSet::new();
    let mut s = CorpusStats {
        line_count: corpus.lines.len(),
        ..Default::default()
    };
    for line in &corpus.lines {
        for c in line.chars() {
            s.total_chars += 1;
            if is_cjk(c) {
                s.cjk_chars += 1;
            }
            distinct.insert(c);
        }
    }
    s.distinct_tokens = distinct.len();
    s
}
