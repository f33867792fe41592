//! Per-function feature vectors, call-graph and binary context, and
//! fixed-width embeddings.
//!
//! A function's own vector `f = [ln(1 + q), c]` joins the quantitative
//! slots (log-scaled) with the hashed categorical evidence. Its context
//! is `g`, the mean of `f` over resolvable callers and callees (zero when
//! there are none), and `h`, the mean of `f` over its binary. The embedding
//! is a seeded random projection of `[f, g, h]`.

pub mod categorical;
pub mod embed;
pub mod quantitative;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::hashing::derive_seed;

pub use categorical::{categorical_features, minhash_signature, opcode_shingles, CategoricalVector};
pub use embed::{load_external_embeddings, project, EmbeddingTable, Provenance, SparseVector};
pub use quantitative::{quantitative_features, reach, Reach, QUANT_WIDTH};

/// Bumped whenever the layout of `f` changes; stored in saved models.
pub const FEATURE_LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("embedding for {id} has width {found}, expected {expected}")]
    Width { id: String, expected: usize, found: usize },
    #[error("embedding for unknown function {0}")]
    UnknownId(String),
    #[error("invalid feature configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Categorical hash width D; a power of two.
    pub hash_width: usize,
    pub minhash_perms: usize,
    pub shingle_len: usize,
    /// Embedding width E.
    pub embed_width: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hash_width: categorical::DEFAULT_HASH_WIDTH,
            minhash_perms: categorical::DEFAULT_MINHASH_PERMS,
            shingle_len: categorical::DEFAULT_SHINGLE_LEN,
            embed_width: embed::DEFAULT_EMBED_WIDTH,
            seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !self.hash_width.is_power_of_two() {
            return Err(FeatureError::Config(format!("hash width {} is not a power of two", self.hash_width)));
        }
        if self.embed_width == 0 || self.shingle_len == 0 {
            return Err(FeatureError::Config("embedding width and shingle length must be positive".into()));
        }
        Ok(())
    }

    /// Width of `f` (and of `g` and `h`).
    pub fn function_dim(&self) -> usize {
        QUANT_WIDTH + self.hash_width
    }

    fn categorical_seed(&self) -> u64 {
        derive_seed(self.seed, "categorical")
    }

    fn projection_seed(&self) -> u64 {
        derive_seed(self.seed, "projection")
    }
}

/// `f`, `g` and `h` of one function; all three share one layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionFeatures {
    pub f: SparseVector,
    pub g: SparseVector,
    pub h: SparseVector,
}

impl FunctionFeatures {
    /// The concatenation `[f, g, h]`.
    pub fn full(&self) -> SparseVector {
        SparseVector::concat(&[&self.f, &self.g, &self.h])
    }
}

/// `f` for every record, in corpus order.
pub fn function_vectors(corpus: &Corpus, cfg: &FeatureConfig) -> Vec<SparseVector> {
    let seed = cfg.categorical_seed();
    (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let rec = &corpus.records()[i];
            let r = reach(corpus, i);
            let q: Vec<f64> = quantitative_features(rec, &r).into_iter().map(f64::ln_1p).collect();
            let tokens = categorical::categorical_tokens(rec, &r.known_names, cfg.minhash_perms, cfg.shingle_len, seed);
            let c = categorical::hash_tokens(&tokens, cfg.hash_width, seed);
            let mut v = SparseVector::from_dense(&q);
            v.entries.extend(c.entries.iter().map(|&(j, x)| (QUANT_WIDTH as u32 + j, x as f64)));
            v.dim = cfg.function_dim();
            v
        })
        .collect()
}

/// Positions of the resolvable callers and callees of record `i`.
pub fn context_members(corpus: &Corpus, i: usize) -> Vec<usize> {
    let rec = &corpus.records()[i];
    let set: BTreeSet<usize> = rec
        .callers
        .iter()
        .chain(&rec.callees)
        .filter_map(|r| corpus.resolve(&rec.binary_id, r))
        .collect();
    set.into_iter().collect()
}

/// `(g, h)` for every record given the per-record vectors `f`.
pub fn context_vectors(corpus: &Corpus, f: &[SparseVector]) -> Vec<(SparseVector, SparseVector)> {
    assert_eq!(f.len(), corpus.len(), "one function vector per record");
    let dim = f.first().map_or(0, |v| v.dim);
    let binary_means: std::collections::BTreeMap<&str, SparseVector> = corpus
        .binaries()
        .map(|b| {
            let members: Vec<&SparseVector> = corpus.binary_members(b).iter().map(|&j| &f[j]).collect();
            (b, SparseVector::mean(dim, &members))
        })
        .collect();
    (0..corpus.len())
        .map(|i| {
            let ctx: Vec<&SparseVector> = context_members(corpus, i).into_iter().map(|j| &f[j]).collect();
            let g = SparseVector::mean(dim, &ctx);
            let h = binary_means[corpus.records()[i].binary_id.as_str()].clone();
            (g, h)
        })
        .collect()
}

pub fn function_features(corpus: &Corpus, cfg: &FeatureConfig) -> Vec<FunctionFeatures> {
    let f = function_vectors(corpus, cfg);
    let ctx = context_vectors(corpus, &f);
    f.into_iter().zip(ctx).map(|(f, (g, h))| FunctionFeatures { f, g, h }).collect()
}

/// Projects `[f, g, h]` to `width` dimensions.
pub fn embed(features: &FunctionFeatures, width: usize, seed: u64) -> Vec<f64> {
    project(&features.full(), width, seed)
}

/// Embeds every record of the corpus.
///
/// Uses linearity: the projection of a mean is the mean of projections, so
/// each `f` is projected once per block instead of once per context it
/// appears in. Agrees with [`embed`] on [`function_features`] up to
/// floating-point rounding.
pub fn embed_corpus(corpus: &Corpus, cfg: &FeatureConfig) -> Result<EmbeddingTable, FeatureError> {
    cfg.validate()?;
    let f = function_vectors(corpus, cfg);
    let width = cfg.embed_width;
    let seed = cfg.projection_seed();
    let dim = cfg.function_dim() as u64;
    let blocks: Vec<[Vec<f64>; 3]> = f
        .par_iter()
        .map(|v| {
            std::array::from_fn(|b| {
                let mut out = vec![0.0; width];
                embed::project_into(&mut out, &v.entries, b as u64 * dim, seed);
                out
            })
        })
        .collect();
    let mean_of = |members: &[usize], block: usize| -> Vec<f64> {
        let mut out = vec![0.0; width];
        if members.is_empty() {
            return out;
        }
        for &j in members {
            for (o, x) in out.iter_mut().zip(&blocks[j][block]) {
                *o += x;
            }
        }
        let n = members.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    };
    let mut table = EmbeddingTable::new(Provenance::Projected, width);
    let binary_part: std::collections::BTreeMap<&str, Vec<f64>> =
        corpus.binaries().map(|b| (b, mean_of(corpus.binary_members(b), 2))).collect();
    for (i, rec) in corpus.iter().enumerate() {
        let g = mean_of(&context_members(corpus, i), 1);
        let h = &binary_part[rec.binary_id.as_str()];
        let row: Vec<f64> = (0..width).map(|r| blocks[i][0][r] + g[r] + h[r]).collect();
        table.rows.insert(rec.id(), row);
    }
    Ok(table)
}

/// Seed used by [`embed_corpus`] for the projection; exposed so callers
/// can reproduce a single embedding with [`embed`].
pub fn projection_seed(cfg: &FeatureConfig) -> u64 {
    cfg.projection_seed()
}
