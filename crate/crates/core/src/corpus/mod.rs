//! Tokenization, vocabularies and train/dev/test splits.
//!
//! Tokenization is lowercase + whitespace split. Ids 0..4 are reserved for
//! PAD, BOS, EOS and UNK; the remaining ids are assigned by descending corpus
//! frequency with lexicographic tie-breaking, so a vocabulary does not depend
//! on line order.

mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{permutation, SeededRng};

pub use synthetic::templated_grammar;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: usize = 4;
pub const RESERVED_SURFACE: [&str; RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Default cap on sequence length, BOS and EOS included.
pub const DEFAULT_MAX_LEN: usize = 32;
pub const MAX_SUPPORTED_LEN: usize = 100;

const VOCAB_HEADER: &str = "#ltg-vocab v1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("line is empty after normalization")]
    EmptyLine,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),
    #[error("malformed vocabulary file: {0}")]
    MalformedVocab(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Lowercases and splits on whitespace.
pub fn normalize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

/// A sentence framed by BOS/EOS, with no interior PAD.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    /// Validates the framing invariants.
    pub fn new(ids: Vec<u32>, max_len: usize) -> Result<Self, CorpusError> {
        if ids.len() < 2 {
            return Err(CorpusError::InvalidSequence("needs at least BOS and EOS".into()));
        }
        if ids[0] != BOS || *ids.last().unwrap() != EOS {
            return Err(CorpusError::InvalidSequence("must begin with BOS and end with EOS".into()));
        }
        if ids.len() > max_len {
            return Err(CorpusError::InvalidSequence(format!("length {} exceeds {max_len}", ids.len())));
        }
        if ids[1..ids.len() - 1].iter().any(|&t| t == PAD || t == BOS || t == EOS) {
            return Err(CorpusError::InvalidSequence("interior PAD/BOS/EOS".into()));
        }
        Ok(Self { ids })
    }

    /// Frames `words` with BOS/EOS without a length check.
    pub fn from_words(words: &[u32]) -> Self {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(words);
        ids.push(EOS);
        Self { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Number of ids, BOS and EOS included.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_count() == 0
    }

    /// Interior ids (no BOS/EOS).
    pub fn words(&self) -> &[u32] {
        &self.ids[1..self.ids.len() - 1]
    }

    pub fn word_count(&self) -> usize {
        self.ids.len() - 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    min_count: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index, min_count }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.get(token).is_some_and(|&i| i as usize >= RESERVED)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    /// Encodes a line; lines longer than `max_len` are truncated and keep
    /// their final EOS.
    pub fn encode(&self, line: &str, max_len: usize) -> Result<TokenSequence, CorpusError> {
        if max_len < 3 {
            return Err(CorpusError::InvalidSequence("max_len must be at least 3".into()));
        }
        let words = normalize(line);
        if words.is_empty() {
            return Err(CorpusError::EmptyLine);
        }
        let mut ids: Vec<u32> = words.iter().take(max_len - 2).map(|w| self.id(w).unwrap_or(UNK)).collect();
        // Reserved surface forms typed into the text become UNK, never control ids.
        for id in &mut ids {
            if *id < RESERVED as u32 {
                *id = UNK;
            }
        }
        Ok(TokenSequence::from_words(&ids))
    }

    /// Space-joined surface tokens, BOS/EOS/PAD stripped.
    pub fn decode(&self, seq: &TokenSequence) -> Result<String, CorpusError> {
        self.decode_ids(seq.ids())
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<String, CorpusError> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or(CorpusError::IdOutOfRange { id, size: self.len() })?;
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            out.push(tok);
        }
        Ok(out.join(" "))
    }

    /// Hash of the id→token table, stored in checkpoints.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        crate::diffcore::hex_digest(&h.finalize())
    }

    /// Text form: one header line, then one non-reserved token per line;
    /// line `k` after the header holds id `k + 4`.
    pub fn to_text(&self) -> String {
        let mut s = format!("{VOCAB_HEADER} offset={RESERVED} min_count={}\n", self.min_count);
        for t in self.words() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| CorpusError::MalformedVocab("missing header".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("#ltg-vocab") || fields.next() != Some("v1") {
            return Err(CorpusError::MalformedVocab(format!("bad header `{header}`")));
        }
        let mut offset = None;
        let mut min_count = 1;
        for f in fields {
            match f.split_once('=') {
                Some(("offset", v)) => offset = v.parse::<usize>().ok(),
                Some(("min_count", v)) => {
                    min_count = v.parse().map_err(|_| CorpusError::MalformedVocab(format!("bad min_count `{v}`")))?
                }
                _ => return Err(CorpusError::MalformedVocab(format!("unknown header field `{f}`"))),
            }
        }
        if offset != Some(RESERVED) {
            return Err(CorpusError::MalformedVocab("offset must be 4".into()));
        }
        let mut tokens: Vec<String> = RESERVED_SURFACE.iter().map(|s| s.to_string()).collect();
        for (k, line) in lines.enumerate() {
            if line.is_empty() || line.chars().any(char::is_whitespace) || tokens.contains(&line.to_string()) {
                return Err(CorpusError::MalformedVocab(format!("bad token on line {}", k + 2)));
            }
            tokens.push(line.to_string());
        }
        Ok(Self::from_tokens(tokens, min_count))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_text()).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        Self::from_text(&text)
    }
}

/// Builds a vocabulary from raw lines.
pub fn build_vocab<S: AsRef<str>>(lines: &[S], min_count: usize) -> Result<Vocabulary, CorpusError> {
    if min_count < 1 {
        return Err(CorpusError::InvalidMinCount);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for w in normalize(line.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_count && !RESERVED_SURFACE.contains(&w.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = RESERVED_SURFACE.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(w, _)| w));
    Ok(Vocabulary::from_tokens(tokens, min_count))
}

pub fn encode_text(v: &Vocabulary, line: &str, max_len: usize) -> Result<TokenSequence, CorpusError> {
    v.encode(line, max_len)
}

pub fn decode_tokens(v: &Vocabulary, seq: &TokenSequence) -> Result<String, CorpusError> {
    v.decode(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub count: usize,
    /// Mean number of words per sentence (BOS/EOS excluded).
    pub mean_length: f64,
}

impl SplitStats {
    pub fn of(seqs: &[TokenSequence]) -> Self {
        let count = seqs.len();
        let total: usize = seqs.iter().map(TokenSequence::word_count).sum();
        let mean_length = if count == 0 { 0.0 } else { total as f64 / count as f64 };
        Self { count, mean_length }
    }
}

impl fmt::Display for SplitStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} sentences, mean length {:.2}", self.count, self.mean_length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplits {
    pub train: Vec<TokenSequence>,
    pub dev: Vec<TokenSequence>,
    pub test: Vec<TokenSequence>,
    pub provenance: String,
}

impl CorpusSplits {
    pub fn new(
        train: Vec<TokenSequence>,
        dev: Vec<TokenSequence>,
        test: Vec<TokenSequence>,
        provenance: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        if train.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Self { train, dev, test, provenance: provenance.into() })
    }

    pub fn stats(&self) -> [SplitStats; 3] {
        [SplitStats::of(&self.train), SplitStats::of(&self.dev), SplitStats::of(&self.test)]
    }

    /// Encodes three sets of raw lines; blank lines are skipped.
    pub fn encode<S: AsRef<str>>(
        vocab: &Vocabulary,
        train: &[S],
        dev: &[S],
        test: &[S],
        max_len: usize,
        provenance: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let enc = |lines: &[S]| -> Result<Vec<TokenSequence>, CorpusError> {
            lines
                .iter()
                .filter(|l| !l.as_ref().trim().is_empty())
                .map(|l| vocab.encode(l.as_ref(), max_len))
                .collect()
        };
        Self::new(enc(train)?, enc(dev)?, enc(test)?, provenance)
    }
}

/// Shuffles `lines` and cuts them into disjoint train/dev/test partitions.
pub fn split_lines<S: Clone>(
    lines: &[S],
    dev_fraction: f64,
    test_fraction: f64,
    rng: &mut SeededRng,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let n = lines.len();
    let order = permutation(rng, n);
    let n_dev = ((n as f64) * dev_fraction).round() as usize;
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_test = n_test.min(n.saturating_sub(n_dev));
    let pick = |range: std::ops::Range<usize>| range.map(|i| lines[order[i]].clone()).collect::<Vec<_>>();
    let dev = pick(0..n_dev);
    let test = pick(n_dev..n_dev + n_test);
    let train = pick(n_dev + n_test..n);
    (train, dev, test)
}

/// Reads a UTF-8 file with one sentence per line, skipping blank lines.
pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}
