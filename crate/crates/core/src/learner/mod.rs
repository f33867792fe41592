//! Propensity-scored tree ensemble for extreme multi-label ranking.
//!
//! Every tree routes an embedding to a leaf holding label scores; the
//! ensemble averages them. Labels seen in few training functions also get
//! a one-vs-all logistic scorer trained with inverse-propensity weights,
//! mixed in as `s = alpha * tree + (1 - alpha) * sigmoid(scorer)`.

pub mod linear;
pub mod threshold;
pub mod tree;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurizer::{EmbeddingTable, FEATURE_LAYOUT_VERSION};
use crate::labelspace::{GroundTruth, LabelSpace};
use crate::metrics::{ndcg_at_k, RelevanceVector};

pub use linear::{sigmoid, SparseLinear};
pub use threshold::{calibrate_threshold, predict_set, Calibration};
pub use tree::{Node, Tree};

/// Leading bytes of every saved model.
pub const MODEL_MAGIC: &[u8; 8] = b"BLXMODEL";
/// Version of the model container; bump on any layout change.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid hyper-parameters: {0}")]
    Params(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("embedding width {found} does not match model width {expected}")]
    Width { expected: usize, found: usize },
    #[error("no embedding for function {0}")]
    MissingEmbedding(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognized format: {0}")]
    Format(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model was trained on a different label space (digest {model}, given {given})")]
    DigestMismatch { model: String, given: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub trees: usize,
    /// Nodes with at most this many points become leaves.
    pub max_leaf: usize,
    /// Ranking depth used by the split objective and model selection.
    pub k: usize,
    /// Weight of the tree score when mixing with rare-label scorers.
    pub alpha: f64,
    /// Exponent on inverse propensity for rare-label sample weights.
    pub gamma: f64,
    pub max_split_iters: usize,
    /// Labels with at most this many training functions get a scorer.
    pub rarity_cutoff: u64,
    /// Labels kept per leaf.
    pub leaf_top: usize,
    /// L1 penalty of separators and scorers.
    pub l1: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            trees: 50,
            max_leaf: 10,
            k: 5,
            alpha: 0.8,
            gamma: 1.0,
            max_split_iters: 20,
            rarity_cutoff: 5,
            leaf_top: 100,
            l1: 1e-3,
            epochs: 100,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let fail = |m: &str| Err(LearnError::Params(m.to_string()));
        if self.trees == 0 {
            return fail("trees must be at least 1");
        }
        if self.max_leaf == 0 {
            return fail("max_leaf must be at least 1");
        }
        if self.k == 0 || self.leaf_top == 0 {
            return fail("k and leaf_top must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must lie in [0, 1]");
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return fail("gamma must be positive");
        }
        if self.l1.is_nan() || self.l1 < 0.0 {
            return fail("l1 must be non-negative");
        }
        Ok(())
    }

    /// Applies `key=value` overrides separated by commas, such as
    /// `trees=10,alpha=0.5`.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<(), LearnError> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| LearnError::Params(format!("expected key=value, got {item:?}")))?;
            let value = value.trim();
            match key.trim() {
                "trees" | "T" => self.trees = parse(key, value)?,
                "max_leaf" => self.max_leaf = parse(key, value)?,
                "k" => self.k = parse(key, value)?,
                "alpha" => self.alpha = parse(key, value)?,
                "gamma" => self.gamma = parse(key, value)?,
                "max_split_iters" => self.max_split_iters = parse(key, value)?,
                "rarity_cutoff" => self.rarity_cutoff = parse(key, value)?,
                "leaf_top" => self.leaf_top = parse(key, value)?,
                "l1" => self.l1 = parse(key, value)?,
                "epochs" => self.epochs = parse(key, value)?,
                "seed" => self.seed = parse(key, value)?,
                other => return Err(LearnError::Params(format!("unknown hyper-parameter {other:?}"))),
            }
        }
        self.validate()
    }

    fn fit_options(&self) -> linear::FitOptions {
        linear::FitOptions { l1: self.l1, max_epochs: self.epochs, ..Default::default() }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, LearnError> {
    value.parse().map_err(|_| LearnError::Params(format!("bad value for {key}: {value:?}")))
}

/// Scores for every label, best first; ties by ascending label id.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRanking {
    pub entries: Vec<(u32, f64)>,
}

impl LabelRanking {
    pub fn from_scores(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        LabelRanking { entries }
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn top(&self, k: usize) -> &[(u32, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RareScorer {
    pub label: u32,
    pub scorer: SparseLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub hp: HyperParams,
    pub width: usize,
    pub label_count: usize,
    pub label_space_digest: String,
    pub feature_layout_version: u32,
    /// Per-dimension `(mean, 1 / std)` applied before routing.
    pub scaling: Vec<(f64, f64)>,
    pub trees: Vec<Tree>,
    /// Sorted by label id.
    pub rare: Vec<RareScorer>,
    pub threshold: f64,
}

fn standardization(x: &[Vec<f64>], width: usize) -> Vec<(f64, f64)> {
    let n = x.len() as f64;
    (0..width)
        .map(|j| {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let inv = if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 };
            (mean, inv)
        })
        .collect()
}

/// Trains a model on embeddings `x` with label ids `y`.
pub fn train(x: &[Vec<f64>], y: &[Vec<u32>], ls: &LabelSpace, hp: &HyperParams) -> Result<Model, LearnError> {
    hp.validate()?;
    if x.len() != y.len() {
        return Err(LearnError::Data(format!("{} embeddings but {} label sets", x.len(), y.len())));
    }
    if x.is_empty() || x.len() < hp.max_leaf {
        return Err(LearnError::Data(format!("{} training points, need at least max_leaf = {}", x.len(), hp.max_leaf)));
    }
    let width = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != width) {
        return Err(LearnError::Width { expected: width, found: row.len() });
    }
    if let Some(l) = y.iter().flatten().find(|&&l| l as usize >= ls.len()) {
        return Err(LearnError::Data(format!("label id {l} outside label space of {}", ls.len())));
    }
    let y: Vec<Vec<u32>> = y
        .iter()
        .map(|l| {
            let mut l = l.clone();
            l.sort_unstable();
            l.dedup();
            l
        })
        .collect();

    let scaling = standardization(x, width);
    let z: Vec<Vec<f64>> = x.iter().map(|r| scale_row(&scaling, r)).collect();
    let label_weights: Vec<f64> = (0..ls.len() as u32).map(|l| ls.weight(l)).collect();

    let ctx = tree::GrowContext {
        x: &z,
        y: &y,
        label_weights: &label_weights,
        k: hp.k,
        max_leaf: hp.max_leaf,
        max_split_iters: hp.max_split_iters,
        leaf_top: hp.leaf_top,
        fit: hp.fit_options(),
    };
    let trees: Vec<Tree> = (0..hp.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ t as u64);
            tree::grow(&ctx, (0..z.len()).collect(), &mut rng)
        })
        .collect();

    let rare = if hp.alpha < 1.0 { train_rare(&z, &y, ls, hp) } else { Vec::new() };

    Ok(Model {
        hp: hp.clone(),
        width,
        label_count: ls.len(),
        label_space_digest: ls.digest(),
        feature_layout_version: FEATURE_LAYOUT_VERSION,
        scaling,
        trees,
        rare,
        threshold: 0.5,
    })
}

fn train_rare(z: &[Vec<f64>], y: &[Vec<u32>], ls: &LabelSpace, hp: &HyperParams) -> Vec<RareScorer> {
    let rows: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
    let rare: Vec<u32> = (0..ls.len() as u32).filter(|&l| ls.count(l) <= hp.rarity_cutoff).collect();
    rare.into_par_iter()
        .filter_map(|l| {
            let targets: Vec<bool> = y.iter().map(|ys| ys.binary_search(&l).is_ok()).collect();
            if !targets.iter().any(|&t| t) {
                log::warn!("rare label {} has no positive training point; scorer skipped", ls.label(l));
                return None;
            }
            let w = ls.weight(l).powf(hp.gamma);
            let weights: Vec<f64> = targets.iter().map(|&t| if t { w } else { 1.0 }).collect();
            let scorer = linear::fit_logistic(&rows, &targets, Some(&weights), &hp.fit_options());
            Some(RareScorer { label: l, scorer })
        })
        .collect()
}

fn scale_row(scaling: &[(f64, f64)], x: &[f64]) -> Vec<f64> {
    x.iter().zip(scaling).map(|(v, (m, s))| (v - m) * s).collect()
}

/// Embeddings and label sets aligned by function id.
pub fn align(table: &EmbeddingTable, gt: &GroundTruth) -> Result<(Vec<Vec<f64>>, Vec<Vec<u32>>), LearnError> {
    let mut x = Vec::with_capacity(gt.len());
    for id in &gt.ids {
        let row = table.get(id).ok_or_else(|| LearnError::MissingEmbedding(id.clone()))?;
        x.push(row.to_vec());
    }
    Ok((x, gt.labels.clone()))
}

impl Model {
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        scale_row(&self.scaling, x)
    }

    /// Mean leaf distribution over all trees, one score per label.
    pub fn tree_scores(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        if x.len() != self.width {
            return Err(LearnError::Width { expected: self.width, found: x.len() });
        }
        let z = self.standardize(x);
        let mut scores = vec![0.0; self.label_count];
        for t in &self.trees {
            for &(l, s) in t.leaf_scores(&z) {
                scores[l as usize] += s;
            }
        }
        let n = self.trees.len() as f64;
        scores.iter_mut().for_each(|s| *s /= n);
        Ok(scores)
    }

    pub fn predict(&self, x: &[f64]) -> Result<LabelRanking, LearnError> {
        let mut scores = self.tree_scores(x)?;
        if !self.rare.is_empty() {
            let z = self.standardize(x);
            let a = self.hp.alpha;
            for r in &self.rare {
                let s = &mut scores[r.label as usize];
                *s = a * *s + (1.0 - a) * sigmoid(r.scorer.eval(&z));
            }
        }
        Ok(LabelRanking::from_scores(scores.into_iter().enumerate().map(|(l, s)| (l as u32, s)).collect()))
    }

    pub fn predict_many(&self, x: &[Vec<f64>]) -> Result<Vec<LabelRanking>, LearnError> {
        x.par_iter().map(|r| self.predict(r)).collect()
    }

    /// Labels scoring above the calibrated threshold, in rank order.
    pub fn predict_set(&self, x: &[f64]) -> Result<Vec<u32>, LearnError> {
        Ok(predict_set(&self.predict(x)?, self.threshold))
    }

    /// Sets the threshold that maximises micro-F1 on validation data.
    pub fn calibrate(&mut self, x: &[Vec<f64>], y: &[Vec<u32>]) -> Result<Calibration, LearnError> {
        if x.is_empty() {
            return Err(LearnError::Data("calibration needs at least one validation point".into()));
        }
        let rankings = self.predict_many(x)?;
        let sorted: Vec<Vec<u32>> = y
            .iter()
            .map(|l| {
                let mut l = l.clone();
                l.sort_unstable();
                l
            })
            .collect();
        let c = calibrate_threshold(&rankings, &sorted);
        self.threshold = c.threshold;
        Ok(c)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend(bincode::serialize(self).expect("model serializes"));
        out
    }

    /// Parses a model. When `ls` is given, its digest must match the one
    /// recorded at training time.
    pub fn from_bytes(bytes: &[u8], ls: Option<&LabelSpace>) -> Result<Model, LearnError> {
        let version = read_header(bytes)?;
        if version != MODEL_FORMAT_VERSION {
            return Err(LearnError::Version { found: version, expected: MODEL_FORMAT_VERSION });
        }
        let model: Model =
            bincode::deserialize(&bytes[12..]).map_err(|e| LearnError::Format(format!("corrupt model body: {e}")))?;
        if let Some(ls) = ls {
            let given = ls.digest();
            if given != model.label_space_digest {
                return Err(LearnError::DigestMismatch { model: model.label_space_digest, given });
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LearnError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, ls: Option<&LabelSpace>) -> Result<Model, LearnError> {
        Model::from_bytes(&fs::read(path)?, ls)
    }
}

/// Checks the magic bytes and returns the container version.
pub fn read_header(bytes: &[u8]) -> Result<u32, LearnError> {
    if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
        return Err(LearnError::Format("not a binlabel model (bad header)".into()));
    }
    Ok(u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes")))
}

/// Mean nDCG@k over points with a non-empty ground truth.
pub fn mean_ndcg(rankings: &[LabelRanking], truth: &[Vec<u32>], k: usize) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (r, t) in rankings.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        let ids: Vec<u32> = r.top(k).iter().map(|e| e.0).collect();
        total += ndcg_at_k(&RelevanceVector::from_ranking(&ids, t, k), k);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Outcome of [`grid_search`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: HyperParams,
    /// Validation nDCG@k of every grid entry, in grid order.
    pub scores: Vec<f64>,
}

/// Trains one model per grid entry and keeps the one with the best mean
/// validation nDCG@k; the first entry wins ties.
pub fn grid_search(
    grid: &[HyperParams],
    train_x: &[Vec<f64>],
    train_y: &[Vec<u32>],
    valid_x: &[Vec<f64>],
    valid_y: &[Vec<u32>],
    ls: &LabelSpace,
) -> Result<GridResult, LearnError> {
    if grid.is_empty() {
        return Err(LearnError::Params("empty hyper-parameter grid".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best = 0;
    for (i, hp) in grid.iter().enumerate() {
        let model = train(train_x, train_y, ls, hp)?;
        let score = mean_ndcg(&model.predict_many(valid_x)?, valid_y, hp.k);
        log::info!("grid entry {i}: nDCG@{} = {score:.4}", hp.k);
        if score > scores.get(best).copied().unwrap_or(f64::NEG_INFINITY) {
            best = i;
        }
        scores.push(score);
    }
    Ok(GridResult { best: grid[best].clone(), scores })
}

/// Grid over `alpha` and `gamma` around a base setting.
pub fn alpha_gamma_grid(base: &HyperParams, alphas: &[f64], gammas: &[f64]) -> Vec<HyperParams> {
    alphas
        .iter()
        .flat_map(|&alpha| gammas.iter().map(move |&gamma| HyperParams { alpha, gamma, ..base.clone() }))
        .collect()
}
