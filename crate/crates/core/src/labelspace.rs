//! Bounded label spaces, ground-truth projection and label propensities.
//!
//! Propensities follow the sigmoid model in log label frequency:
//!
//! ```text
//! p = 1 / (1 + C * exp(-A * ln(N_l + B)))      C = (ln N - 1) * (B + 1)^A
//! ```
//!
//! where `N_l` counts training functions whose name contains the label and
//! `N` is the number of training functions.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::hashing::sha256_hex;
use crate::tokenizer::Tokenizer;

pub const DEFAULT_A: f64 = 0.5;
pub const DEFAULT_B: f64 = 0.425;

#[derive(Debug, Error)]
pub enum LabelSpaceError {
    #[error("label space size must be at least 1")]
    ZeroSize,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("label id {id} out of range for a label space of {len} labels")]
    OutOfRange { id: usize, len: usize },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed label space file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    labels: Vec<String>,
    counts: Vec<u64>,
    total_points: u64,
    a: f64,
    b: f64,
    c: f64,
    propensities: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

/// Sigmoid propensity of a label seen in `count` of `total` data points.
///
/// Clamped into `(0, 1]`: for `total < e` the constant `C` is not positive
/// and the raw formula would exceed one.
pub fn propensity_value(count: u64, total: u64, a: f64, b: f64) -> f64 {
    let c = propensity_constant(total, a, b);
    let p = 1.0 / (1.0 + c * (-a * (count as f64 + b).ln()).exp());
    if p.is_finite() && p > 0.0 {
        p.min(1.0)
    } else {
        1.0
    }
}

pub fn propensity_constant(total: u64, a: f64, b: f64) -> f64 {
    ((total as f64).ln() - 1.0) * (b + 1.0).powf(a)
}

impl LabelSpace {
    /// Builds a label space from ordered `(label, count)` pairs.
    pub fn from_counts(pairs: Vec<(String, u64)>, total_points: u64, a: f64, b: f64) -> LabelSpace {
        let (labels, counts): (Vec<String>, Vec<u64>) = pairs.into_iter().unzip();
        let propensities = counts.iter().map(|&n| propensity_value(n, total_points, a, b)).collect();
        let mut ls = LabelSpace {
            labels,
            counts,
            total_points,
            a,
            b,
            c: propensity_constant(total_points, a, b),
            propensities,
            index: HashMap::new(),
        };
        ls.reindex();
        ls
    }

    fn reindex(&mut self) {
        self.index = self.labels.iter().enumerate().map(|(i, l)| (l.clone(), i as u32)).collect();
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn total_points(&self) -> u64 {
        self.total_points
    }

    pub fn params(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.c)
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    pub fn propensity(&self, id: usize) -> Result<f64, LabelSpaceError> {
        self.propensities.get(id).copied().ok_or(LabelSpaceError::OutOfRange { id, len: self.len() })
    }

    /// Inverse-propensity weight `1 / p`.
    pub fn weight(&self, id: u32) -> f64 {
        1.0 / self.propensities[id as usize]
    }

    /// Copy of this label space with propensities recomputed for new
    /// hyper-parameters.
    pub fn with_params(&self, a: f64, b: f64) -> LabelSpace {
        LabelSpace::from_counts(
            self.labels.iter().cloned().zip(self.counts.iter().copied()).collect(),
            self.total_points,
            a,
            b,
        )
    }

    /// Digest over labels, counts and parameters; embedded in saved models.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("label space serializes"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LabelSpaceError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("label space serializes");
        fs::write(path, text + "\n").map_err(|source| LabelSpaceError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LabelSpace, LabelSpaceError> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|source| LabelSpaceError::Io { path: path.to_path_buf(), source })?;
        let mut ls: LabelSpace = serde_json::from_str(&text)
            .map_err(|e| LabelSpaceError::Format { path: path.to_path_buf(), message: e.to_string() })?;
        if ls.labels.len() != ls.counts.len() || ls.labels.len() != ls.propensities.len() {
            return Err(LabelSpaceError::Format {
                path: path.to_path_buf(),
                message: "labels, counts and propensities differ in length".to_string(),
            });
        }
        ls.reindex();
        Ok(ls)
    }
}

/// Counts, per token, the training functions whose canonical set contains it.
pub fn token_counts(train: &Corpus, tokenizer: &Tokenizer) -> BTreeMap<String, u64> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for rec in train.iter() {
        for tok in tokenizer.canonical_tokens(&rec.name).0 {
            *counts.entry(tok).or_default() += 1;
        }
    }
    counts
}

/// Keeps the `n` most frequent tokens of the training names (ties broken
/// lexicographically) and computes their propensities.
pub fn build_label_space(
    train: &Corpus,
    tokenizer: &Tokenizer,
    n: usize,
    a: f64,
    b: f64,
) -> Result<LabelSpace, LabelSpaceError> {
    if n == 0 {
        return Err(LabelSpaceError::ZeroSize);
    }
    if train.is_empty() {
        return Err(LabelSpaceError::EmptyCorpus);
    }
    let mut pairs: Vec<(String, u64)> = token_counts(train, tokenizer).into_iter().collect();
    // BTreeMap iteration is lexicographic, so a stable sort keeps ties in
    // lexicographic order.
    pairs.sort_by(|x, y| y.1.cmp(&x.1));
    if pairs.len() < n {
        log::warn!("requested {n} labels but training names only contain {} distinct tokens", pairs.len());
    }
    pairs.truncate(n);
    Ok(LabelSpace::from_counts(pairs, train.len() as u64, a, b))
}

/// Per-function label ids, `canonical(name) ∩ labels`, sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ids: Vec<String>,
    pub labels: Vec<Vec<u32>>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of functions whose projection is empty.
    pub fn empty_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_empty()).count()
    }
}

pub fn project_labels(name: &str, ls: &LabelSpace, tokenizer: &Tokenizer) -> Vec<u32> {
    let mut ids: Vec<u32> = tokenizer.canonical_tokens(name).iter().filter_map(|t| ls.id(t)).collect();
    ids.sort_unstable();
    ids
}

pub fn project_ground_truth(corpus: &Corpus, ls: &LabelSpace, tokenizer: &Tokenizer) -> GroundTruth {
    let mut gt = GroundTruth::default();
    for rec in corpus.iter() {
        gt.ids.push(rec.id());
        gt.labels.push(project_labels(&rec.name, ls, tokenizer));
    }
    let empty = gt.empty_count();
    if empty > 0 {
        log::info!("{empty} of {} functions have no label in the label space", gt.len());
    }
    gt
}

/// Result of [`fit_propensity_params`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropensityFit {
    pub a: f64,
    pub b: f64,
    pub squared_error: f64,
}

/// Grid search for `A` and `B` so that the propensity curve over `ln N_l`
/// tracks the empirical cumulative distribution of `ln N_l` across labels.
pub fn fit_propensity_params(ls: &LabelSpace, a_grid: &[f64], b_grid: &[f64]) -> Option<PropensityFit> {
    if ls.is_empty() {
        return None;
    }
    let mut sorted = ls.counts().to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let ecdf = |count: u64| sorted.partition_point(|&c| c <= count) as f64 / n;
    let targets: Vec<f64> = ls.counts().iter().map(|&c| ecdf(c)).collect();

    let mut best: Option<PropensityFit> = None;
    for &a in a_grid {
        for &b in b_grid {
            let err: f64 = ls
                .counts()
                .iter()
                .zip(&targets)
                .map(|(&c, &t)| (propensity_value(c, ls.total_points(), a, b) - t).powi(2))
                .sum();
            if best.map_or(true, |f| err < f.squared_error) {
                best = Some(PropensityFit { a, b, squared_error: err });
            }
        }
    }
    best
}

/// Default search grid for [`fit_propensity_params`].
pub fn default_param_grid() -> (Vec<f64>, Vec<f64>) {
    let a = (1..=30).map(|i| i as f64 * 0.05).collect();
    let b = (0..=40).map(|i| i as f64 * 0.125).collect();
    (a, b)
}
