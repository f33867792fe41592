//! Predicts name tokens ("labels") for functions in binaries and turns
//! predicted label sets back into readable function names.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`corpus`] loads and splits function records,
//! 2. [`tokenizer`] turns symbol names into canonical token sets,
//! 3. [`labelspace`] bounds the label vocabulary and computes propensities,
//! 4. [`featurizer`] builds per-function feature vectors and embeddings,
//! 5. [`learner`] trains the propensity-scored tree ensemble,
//! 6. [`metrics`] scores rankings and label sets,
//! 7. [`langmodel`] orders predicted labels into a name,
//! 8. [`pipeline`] wires the stages together with content-hash caching.

pub mod corpus;
pub mod featurizer;
pub mod hashing;
pub mod labelspace;
pub mod langmodel;
pub mod learner;
pub mod metrics;
pub mod pipeline;
pub mod tokenizer;

pub use corpus::{Corpus, FunctionRecord, SplitSpec};
pub use labelspace::{GroundTruth, LabelSpace};
pub use learner::{HyperParams, LabelRanking, Model};
pub use tokenizer::{CanonicalTokenSet, Tokenizer, TokenizerConfig};

/// Crate version, as reported by `binlabel version`.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
