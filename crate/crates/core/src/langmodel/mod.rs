//! Trigram language model over label sequences with interpolated modified
//! Kneser-Ney smoothing, and search for the most likely order of a label set.

mod order;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use order::{order_labels, render_name, Convention, OrderingResult, DEFAULT_STEP_CAP, MAX_LABELS};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

const LM_MAGIC: &[u8; 8] = b"BLXLM\0\0\0";
pub const LM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("training corpus has {0} distinct tokens; smoothing needs at least 2")]
    TooFewTokens(usize),
    #[error("cannot score an empty sequence")]
    EmptySequence,
    #[error("label set of size {0} is outside 1..={max}", max = MAX_LABELS)]
    LabelCount(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognized format: {0}")]
    Format(String),
}

/// Count-of-count statistics of one context's continuations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
struct ContextStats {
    total: u64,
    n1: u64,
    n2: u64,
    n3plus: u64,
}

impl ContextStats {
    fn add(&mut self, count: u64) {
        self.total += count;
        match count {
            1 => self.n1 += 1,
            2 => self.n2 += 1,
            _ => self.n3plus += 1,
        }
    }
}

/// Discounts `D1`, `D2`, `D3+` of one order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discounts {
    pub d1: f64,
    pub d2: f64,
    pub d3plus: f64,
}

impl Discounts {
    /// Estimates from the number of n-grams seen exactly once..four times:
    /// `Y = n1 / (n1 + 2 n2)`, `D1 = 1 - 2Y n2/n1`, `D2 = 2 - 3Y n3/n2`,
    /// `D3+ = 3 - 4Y n4/n3`. Undefined or out-of-range values fall back
    /// into `[0, k]` for `Dk` so every discounted count stays non-negative.
    pub fn from_count_of_counts(n: [u64; 4]) -> Discounts {
        let [n1, n2, n3, n4] = n.map(|v| v as f64);
        let y = n1 / (n1 + 2.0 * n2);
        let est = |k: f64, num: f64, den: f64, fallback: f64| {
            let d = k - (k + 1.0) * y * num / den;
            if d.is_finite() {
                d.clamp(0.0, k)
            } else {
                fallback
            }
        };
        Discounts { d1: est(1.0, n2, n1, 0.5), d2: est(2.0, n3, n2, 1.0), d3plus: est(3.0, n4, n3, 1.5) }
    }

    fn of(&self, count: u64) -> f64 {
        match count {
            0 => 0.0,
            1 => self.d1,
            2 => self.d2,
            _ => self.d3plus,
        }
    }

    fn mass(&self, s: &ContextStats) -> f64 {
        self.d1 * s.n1 as f64 + self.d2 * s.n2 as f64 + self.d3plus * s.n3plus as f64
    }
}

fn count_of_counts<'a>(counts: impl Iterator<Item = &'a u64>) -> [u64; 4] {
    let mut n = [0u64; 4];
    for &c in counts {
        if (1..=4).contains(&c) {
            n[c as usize - 1] += 1;
        }
    }
    n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigramLm {
    /// Token strings by id: `<s>`, `</s>`, `<unk>`, then words sorted.
    vocab: Vec<String>,
    trigrams: BTreeMap<(u32, u32, u32), u64>,
    trigram_contexts: BTreeMap<(u32, u32), ContextStats>,
    /// Distinct left extensions of each bigram, `N1+(. v w)`.
    bigram_continuations: BTreeMap<(u32, u32), u64>,
    bigram_contexts: BTreeMap<u32, ContextStats>,
    /// Distinct left extensions of each token, `N1+(. w)`.
    unigram_continuations: Vec<u64>,
    unigram_stats: ContextStats,
    /// Discounts for orders 1, 2, 3.
    pub discounts: [Discounts; 3],
    #[serde(skip)]
    index: HashMap<String, u32>,
}

/// Trains on token sequences (one per function name). Empty sequences are
/// skipped; `<s>` and `</s>` are added around each sequence.
pub fn train_lm<S: AsRef<str>>(sequences: &[Vec<S>]) -> Result<TrigramLm, LmError> {
    let mut words: Vec<String> = sequences.iter().flatten().map(|s| s.as_ref().to_string()).collect();
    words.sort();
    words.dedup();
    words.retain(|w| w != BOS && w != EOS && w != UNK);
    if words.len() < 2 {
        return Err(LmError::TooFewTokens(words.len()));
    }
    let mut vocab: Vec<String> = [BOS, EOS, UNK].map(String::from).to_vec();
    vocab.extend(words);
    let index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();

    let mut trigrams: BTreeMap<(u32, u32, u32), u64> = BTreeMap::new();
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        let mut ids = vec![BOS_ID, BOS_ID];
        ids.extend(seq.iter().map(|w| index[w.as_ref()]));
        ids.push(EOS_ID);
        for w in ids.windows(3) {
            *trigrams.entry((w[0], w[1], w[2])).or_insert(0) += 1;
        }
    }

    let mut trigram_contexts: BTreeMap<(u32, u32), ContextStats> = BTreeMap::new();
    let mut bigram_continuations: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (&(u, v, w), &c) in &trigrams {
        trigram_contexts.entry((u, v)).or_default().add(c);
        *bigram_continuations.entry((v, w)).or_insert(0) += 1;
    }
    let mut bigram_contexts: BTreeMap<u32, ContextStats> = BTreeMap::new();
    let mut unigram_continuations = vec![0u64; vocab.len()];
    for (&(v, w), &c) in &bigram_continuations {
        bigram_contexts.entry(v).or_default().add(c);
        unigram_continuations[w as usize] += 1;
    }
    let mut unigram_stats = ContextStats::default();
    for &c in unigram_continuations.iter().filter(|&&c| c > 0) {
        unigram_stats.add(c);
    }
    let discounts = [
        Discounts::from_count_of_counts(count_of_counts(unigram_continuations.iter())),
        Discounts::from_count_of_counts(count_of_counts(bigram_continuations.values())),
        Discounts::from_count_of_counts(count_of_counts(trigrams.values())),
    ];
    Ok(TrigramLm {
        vocab,
        trigrams,
        trigram_contexts,
        bigram_continuations,
        bigram_contexts,
        unigram_continuations,
        unigram_stats,
        discounts,
        index,
    })
}

impl TrigramLm {
    /// Number of predictable tokens: every word plus `</s>` and `<unk>`.
    pub fn predictable(&self) -> usize {
        self.vocab.len() - 1
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vocab[3..].iter().map(String::as_str)
    }

    /// Token id; unknown strings map to `<unk>`.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    fn p_unigram(&self, w: u32) -> f64 {
        let d = &self.discounts[0];
        let s = &self.unigram_stats;
        let uniform = 1.0 / self.predictable() as f64;
        if s.total == 0 {
            return uniform;
        }
        let c = self.unigram_continuations[w as usize];
        let total = s.total as f64;
        (c as f64 - d.of(c)).max(0.0) / total + d.mass(s) / total * uniform
    }

    fn p_bigram(&self, v: u32, w: u32) -> f64 {
        let lower = self.p_unigram(w);
        let Some(s) = self.bigram_contexts.get(&v) else { return lower };
        let d = &self.discounts[1];
        let c = self.bigram_continuations.get(&(v, w)).copied().unwrap_or(0);
        let total = s.total as f64;
        (c as f64 - d.of(c)).max(0.0) / total + d.mass(s) / total * lower
    }

    fn p_trigram(&self, u: u32, v: u32, w: u32) -> f64 {
        let lower = self.p_bigram(v, w);
        let Some(s) = self.trigram_contexts.get(&(u, v)) else { return lower };
        let d = &self.discounts[2];
        let c = self.trigrams.get(&(u, v, w)).copied().unwrap_or(0);
        let total = s.total as f64;
        (c as f64 - d.of(c)).max(0.0) / total + d.mass(s) / total * lower
    }

    /// `P(w | u v)` for token strings; `<s>` is a valid context token.
    pub fn prob(&self, u: &str, v: &str, w: &str) -> f64 {
        self.p_trigram(self.id(u), self.id(v), self.id(w))
    }

    pub(crate) fn log_prob_ids(&self, u: u32, v: u32, w: u32) -> f64 {
        self.p_trigram(u, v, w).ln()
    }

    /// Natural-log probability of `sequence` framed by `<s> <s>` and `</s>`.
    pub fn score<S: AsRef<str>>(&self, sequence: &[S]) -> Result<f64, LmError> {
        let (mut total, u, v) = self.prefix(sequence)?;
        total += self.log_prob_ids(u, v, EOS_ID);
        Ok(total)
    }

    /// Log probability of `sequence` as the start of a name, without the
    /// end-of-name transition. Extending a prefix always lowers it.
    pub fn score_prefix<S: AsRef<str>>(&self, sequence: &[S]) -> Result<f64, LmError> {
        Ok(self.prefix(sequence)?.0)
    }

    fn prefix<S: AsRef<str>>(&self, sequence: &[S]) -> Result<(f64, u32, u32), LmError> {
        if sequence.is_empty() {
            return Err(LmError::EmptySequence);
        }
        let (mut u, mut v) = (BOS_ID, BOS_ID);
        let mut total = 0.0;
        for w in sequence {
            let w = self.id(w.as_ref());
            total += self.log_prob_ids(u, v, w);
            (u, v) = (v, w);
        }
        Ok((total, u, v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = LM_MAGIC.to_vec();
        out.extend_from_slice(&LM_FORMAT_VERSION.to_le_bytes());
        out.extend(bincode::serialize(self).expect("language model serializes"));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrigramLm, LmError> {
        if bytes.len() < 12 || &bytes[..8] != LM_MAGIC {
            return Err(LmError::Format("not a binlabel language model (bad header)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
        if version != LM_FORMAT_VERSION {
            return Err(LmError::Format(format!("language model version {version} is not supported")));
        }
        let mut lm: TrigramLm =
            bincode::deserialize(&bytes[12..]).map_err(|e| LmError::Format(format!("corrupt language model: {e}")))?;
        lm.index = lm.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Ok(lm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrigramLm, LmError> {
        TrigramLm::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests;
