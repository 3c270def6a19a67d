//! Character tokenization, dictionary maximum-match segmentation and the
//! token vocabulary.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{read_utf8, Corpus};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

fn is_run_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || (matches!(c, '\u{00C0}'..='\u{024F}') && c != '\u{00D7}' && c != '\u{00F7}')
}

/// Splits text into CJK characters, maximal runs of Latin letters and
/// digits, and single other characters. Whitespace is dropped.
pub fn char_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if is_run_char(c) {
            run.push(c);
            continue;
        }
        if !run.is_empty() {
            out.push(std::mem::take(&mut run));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SegmenterDict {
    entries: HashSet<String>,
    max_chars: usize,
}

impl SegmenterDict {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut d = Self::default();
        for w in words {
            d.insert(w.into());
        }
        d
    }

    /// Empty strings are ignored.
    pub fn insert(&mut self, word: String) {
        let n = word.chars().count();
        if n == 0 {
            return;
        }
        self.max_chars = self.max_chars.max(n);
        self.entries.insert(word);
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One word per line; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = read_utf8(path.as_ref())?;
        Ok(Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from)))
    }
}

/// Greedy forward longest-prefix matching. A character that starts no
/// dictionary entry becomes a one-character word.
pub fn max_match_segment(text: &str, dict: &SegmenterDict) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |(b, _)| *b);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let longest = (2..=dict.max_chars.min(chars.len() - i))
            .rev()
            .find(|&n| dict.contains(&text[byte_at(i)..byte_at(i + n)]))
            .unwrap_or(1);
        out.push(text[byte_at(i)..byte_at(i + longest)].to_string());
        i += longest;
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    #[default]
    Char,
    Word,
}

impl std::str::FromStr for TokenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(TokenMode::Char),
            "word" => Ok(TokenMode::Word),
            other => Err(Error::config("token_mode", format!("expected `char` or `word`, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tokenizer {
    Char,
    Word(SegmenterDict),
}

impl Tokenizer {
    pub fn new(mode: TokenMode, dict: Option<SegmenterDict>) -> Result<Self> {
        match (mode, dict) {
            (TokenMode::Char, _) => Ok(Tokenizer::Char),
            (TokenMode::Word, Some(d)) => Ok(Tokenizer::Word(d)),
            (TokenMode::Word, None) => Err(Error::config("dict", "word mode requires a segmentation dictionary")),
        }
    }

    pub fn mode(&self) -> TokenMode {
        match self {
            Tokenizer::Char => TokenMode::Char,
            Tokenizer::Word(_) => TokenMode::Word,
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Char => char_tokenize(text),
            Tokenizer::Word(d) => max_match_segment(text, d)
                .into_iter()
                .filter(|w| !w.chars().all(char::is_whitespace))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    /// Build-time frequency per id (0 for specials and for loaded vocabularies).
    counts: Vec<u64>,
    pub min_count: u64,
}

impl Vocabulary {
    fn with_specials() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            counts: Vec::new(),
            min_count: 1,
        };
        for s in SPECIAL_TOKENS {
            v.push(s.to_string(), 0);
        }
        v
    }

    fn push(&mut self, token: String, count: u64) {
        self.token_to_id.insert(token.clone(), self.id_to_token.len());
        self.id_to_token.push(token);
        self.counts.push(count);
    }

    /// Specials first, then tokens with count ≥ `min_count` by
    /// (count desc, token asc).
    pub fn from_counts(counts: &HashMap<String, u64>, min_count: u64) -> Self {
        let mut kept: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(t, c)| **c >= min_count && !SPECIAL_TOKENS.contains(&t.as_str()))
            .map(|(t, c)| (t, *c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut v = Self::with_specials();
        v.min_count = min_count;
        for (t, c) in kept {
            v.push(t.clone(), c);
        }
        v
    }

    /// Vocabulary with the given tokens in order after the specials.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::with_specials();
        for t in tokens {
            let t = t.into();
            if v.token_to_id.contains_key(&t) {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token `{t}`")));
            }
            v.push(t, 0);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIALS
    }

    /// One token per line; line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.id_to_token.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS || lines[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(Error::InvalidInput(format!(
                "vocabulary file must start with {}",
                SPECIAL_TOKENS.join(", ")
            )));
        }
        Self::from_tokens(lines[NUM_SPECIALS..].iter().map(|s| s.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_utf8(path.as_ref())?)
    }

    /// SHA-256 (hex) of the vocabulary file contents.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn token_counts<'a>(lines: impl IntoIterator<Item = &'a String>, tokenizer: &Tokenizer) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for line in lines {
        for t in tokenizer.tokenize(line) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    counts
}

pub fn build_vocab(corpus: &Corpus, tokenizer: &Tokenizer, min_count: u64) -> Result<Vocabulary> {
    build_vocab_multi(&[corpus], tokenizer, min_count)
}

/// One vocabulary over several corpora (counts are pooled).
pub fn build_vocab_multi(corpora: &[&Corpus], tokenizer: &Tokenizer, min_count: u64) -> Result<Vocabulary> {
    if corpora.iter().all(|c| c.is_empty()) {
        return Err(Error::Empty("corpus for vocabulary"));
    }
    let counts = token_counts(corpora.iter().flat_map(|c| c.lines.iter()), tokenizer);
    Ok(Vocabulary::from_counts(&counts, min_count))
}

pub fn encode(tokens: &[String], vocab: &Vocabulary) -> Vec<usize> {
    tokens.iter().map(|t| vocab.id(t).unwrap_or(UNK)).collect()
}

pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Result<Vec<String>> {
    ids.iter()
        .map(|&id| {
            vocab.token(id).map(str::to_string).ok_or(Error::IdOutOfRange {
                id,
                size: vocab.len(),
            })
        })
        .collect()
}
