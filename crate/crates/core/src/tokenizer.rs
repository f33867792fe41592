//! Symbol-name tokenizer producing canonical token sets.
//!
//! A name goes through four steps: decoration stripping, splitting on
//! separators / digit boundaries / camel case, abbreviation expansion, and a
//! dictionary-driven segmentation of each remaining alphabetic segment.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_CONFIG: &str = include_str!("../data/tokenizer.toml");
const BUNDLED_WORDS: &str = include_str!("../data/words.txt");

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid tokenizer config: {0}")]
    Config(String),
    #[error("decoration pattern {pattern:?} does not compile: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Deserialize)]
struct ConfigFile {
    #[serde(default)]
    patterns: Vec<String>,
    #[serde(default)]
    abbreviations: BTreeMap<String, Vec<String>>,
    dictionary_path: Option<PathBuf>,
    min_word_len: Option<usize>,
}

/// Tokenizer settings. Immutable once compiled into a [`Tokenizer`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenizerConfig {
    pub decoration_patterns: Vec<String>,
    pub abbreviation_map: BTreeMap<String, Vec<String>>,
    pub dictionary: BTreeSet<String>,
    pub min_word_len: usize,
}

impl TokenizerConfig {
    /// The configuration shipped with the crate.
    pub fn bundled() -> TokenizerConfig {
        Self::from_toml(BUNDLED_CONFIG, None).expect("bundled tokenizer config is valid")
    }

    /// Reads a TOML config; `dictionary_path` is resolved relative to the
    /// config file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<TokenizerConfig, TokenizerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| TokenizerError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path.parent())
    }

    fn from_toml(text: &str, base: Option<&Path>) -> Result<TokenizerConfig, TokenizerError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| TokenizerError::Config(e.to_string()))?;
        let dictionary = match file.dictionary_path {
            Some(p) => {
                let p = base.map(|b| b.join(&p)).unwrap_or(p);
                let words = fs::read_to_string(&p).map_err(|source| TokenizerError::Io { path: p, source })?;
                parse_word_list(&words)
            }
            None => parse_word_list(BUNDLED_WORDS),
        };
        Ok(TokenizerConfig {
            decoration_patterns: file.patterns,
            abbreviation_map: file.abbreviations,
            dictionary,
            min_word_len: file.min_word_len.unwrap_or(2),
        })
    }

    /// Stable digest of the configuration, used for cache keys and
    /// `version` output.
    pub fn digest(&self) -> String {
        crate::hashing::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// The canonical token set of one name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanonicalTokenSet(pub BTreeSet<String>);

impl CanonicalTokenSet {
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }
}

impl<S: Into<String>> FromIterator<S> for CanonicalTokenSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        CanonicalTokenSet(iter.into_iter().map(Into::into).collect())
    }
}

/// A compiled tokenizer.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    config: TokenizerConfig,
    patterns: Vec<Regex>,
    words: HashSet<String>,
    max_word_len: usize,
}

impl Tokenizer {
    pub fn new(config: TokenizerConfig) -> Result<Tokenizer, TokenizerError> {
        if config.dictionary.is_empty() {
            return Err(TokenizerError::Config("dictionary is empty".to_string()));
        }
        for (abbr, expansion) in &config.abbreviation_map {
            let ok = !expansion.is_empty()
                && expansion.iter().all(|t| !t.is_empty() && t.bytes().all(|b| b.is_ascii_lowercase()));
            if !ok {
                return Err(TokenizerError::Config(format!(
                    "expansion of {abbr:?} must be non-empty lowercase alphabetic tokens, got {expansion:?}"
                )));
            }
        }
        let patterns = config
            .decoration_patterns
            .iter()
            .map(|p| Regex::new(p).map_err(|source| TokenizerError::Pattern { pattern: p.clone(), source }))
            .collect::<Result<Vec<_>, _>>()?;
        let words: HashSet<String> = config
            .dictionary
            .iter()
            .filter(|w| w.len() >= config.min_word_len.max(1) && w.bytes().all(|b| b.is_ascii_lowercase()))
            .cloned()
            .collect();
        let max_word_len = words.iter().map(String::len).max().unwrap_or(0);
        Ok(Tokenizer { config, patterns, words, max_word_len })
    }

    pub fn bundled() -> Tokenizer {
        Tokenizer::new(TokenizerConfig::bundled()).expect("bundled tokenizer config compiles")
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn is_word(&self, w: &str) -> bool {
        self.words.contains(w)
    }

    /// Removes decoration matches until none remain, taking the longest
    /// match (leftmost, then first pattern, on ties) each round.
    pub fn strip_decorations(&self, name: &str) -> String {
        let mut current = name.to_string();
        loop {
            let best = self
                .patterns
                .iter()
                .filter_map(|re| re.find(&current))
                .filter(|m| !m.is_empty())
                .fold(None::<(usize, usize)>, |best, m| match best {
                    Some((s, e)) if (e - s) > m.len() || ((e - s) == m.len() && s <= m.start()) => best,
                    _ => Some((m.start(), m.end())),
                });
            match best {
                Some((s, e)) => current.replace_range(s..e, ""),
                None => return current,
            }
        }
    }

    /// Replaces whole tokens found in the abbreviation map. Single pass.
    pub fn expand_abbreviations(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .flat_map(|t| match self.config.abbreviation_map.get(t) {
                Some(exp) => exp.clone(),
                None => vec![t.clone()],
            })
            .collect()
    }

    /// Segments a lowercase alphabetic string into dictionary words,
    /// maximising covered characters and then preferring fewer words.
    /// Uncovered runs are kept as tokens of their own.
    pub fn best_split(&self, segment: &str) -> Vec<String> {
        let bytes = segment.as_bytes();
        let n = bytes.len();
        if n == 0 {
            return Vec::new();
        }
        if !segment.is_ascii() {
            return vec![segment.to_string()];
        }
        // best[i] = (covered, words) for the suffix starting at i.
        // step[i] = length of the word taken at i, 0 meaning "skip a char".
        let mut best = vec![(0usize, 0usize); n + 1];
        let mut step = vec![0usize; n + 1];
        for i in (0..n).rev() {
            let mut key = best[i + 1];
            let mut choice = 0;
            let longest = self.max_word_len.min(n - i);
            let mut candidate: Option<((usize, usize), usize)> = None;
            for len in (1..=longest).rev() {
                if self.words.contains(&segment[i..i + len]) {
                    let (c, w) = best[i + len];
                    let k = (c + len, w + 1);
                    if candidate.map_or(true, |(ck, _)| better(k, ck)) {
                        candidate = Some((k, len));
                    }
                }
            }
            // A word starting here wins ties against skipping the character.
            if let Some((k, len)) = candidate {
                if !better(key, k) {
                    key = k;
                    choice = len;
                }
            }
            best[i] = key;
            step[i] = choice;
        }

        let mut out = Vec::new();
        let mut residue = String::new();
        let mut i = 0;
        while i < n {
            if step[i] == 0 {
                residue.push(bytes[i] as char);
                i += 1;
            } else {
                if !residue.is_empty() {
                    out.push(std::mem::take(&mut residue));
                }
                out.push(segment[i..i + step[i]].to_string());
                i += step[i];
            }
        }
        if !residue.is_empty() {
            out.push(residue);
        }
        out
    }

    /// Ordered token sequence for `name`, duplicates removed (first
    /// occurrence kept) and digit-only tokens dropped.
    pub fn ordered_tokens(&self, name: &str) -> Vec<String> {
        let stripped = self.strip_decorations(name);
        let segments = split_segments(&stripped);
        let expanded = self.expand_abbreviations(&segments);
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for seg in expanded {
            if seg.bytes().all(|b| b.is_ascii_digit()) {
                continue;
            }
            for tok in self.best_split(&seg) {
                if seen.insert(tok.clone()) {
                    out.push(tok);
                }
            }
        }
        out
    }

    /// The canonical token set of `name`. May be empty.
    pub fn canonical_tokens(&self, name: &str) -> CanonicalTokenSet {
        self.ordered_tokens(name).into_iter().collect()
    }
}

fn better(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Splits on non-alphanumeric characters, separates digit runs from letter
/// runs, then splits camel case. Output is lowercase.
pub fn split_segments(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in name.split(|c: char| !c.is_ascii_alphanumeric()) {
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        for i in 1..=chars.len() {
            if i == chars.len() || chars[i].is_ascii_digit() != chars[i - 1].is_ascii_digit() {
                let run = &chars[start..i];
                if run[0].is_ascii_digit() {
                    out.push(run.iter().collect());
                } else {
                    out.extend(split_camel(run));
                }
                start = i;
            }
        }
    }
    out
}

fn split_camel(run: &[char]) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..run.len() {
        let lower_to_upper = run[i - 1].is_ascii_lowercase() && run[i].is_ascii_uppercase();
        let acronym_end = run[i - 1].is_ascii_uppercase()
            && run[i].is_ascii_uppercase()
            && run.get(i + 1).is_some_and(|c| c.is_ascii_lowercase());
        if lower_to_upper || acronym_end {
            out.push(run[start..i].iter().collect::<String>().to_ascii_lowercase());
            start = i;
        }
    }
    if start < run.len() {
        out.push(run[start..].iter().collect::<String>().to_ascii_lowercase());
    }
    out
}
