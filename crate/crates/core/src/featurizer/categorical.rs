//! Sparse categorical features: evidence tokens signed-hashed into a fixed
//! number of buckets.

use std::collections::BTreeMap;

use crate::corpus::FunctionRecord;
use crate::hashing::{hash_bytes, hash_pair, sha256_hex};

pub const DEFAULT_HASH_WIDTH: usize = 1 << 18;
pub const DEFAULT_MINHASH_PERMS: usize = 64;
pub const DEFAULT_SHINGLE_LEN: usize = 4;

const SIGN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Signed-hash vector; entries sorted by index, zeros never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CategoricalVector {
    pub width: usize,
    pub entries: Vec<(u32, i32)>,
}

impl CategoricalVector {
    pub fn get(&self, index: u32) -> i32 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Hashes each window of `len` consecutive opcodes. Sequences shorter than
/// `len` form a single shingle; an empty sequence has none.
pub fn opcode_shingles(opcodes: &[String], len: usize) -> Vec<u64> {
    if opcodes.is_empty() {
        return Vec::new();
    }
    let len = len.max(1).min(opcodes.len());
    let mut out: Vec<u64> = opcodes
        .windows(len)
        .map(|w| hash_bytes(0, w.join(" ").as_bytes()))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// One minimum per seeded hash function over the shingle set.
pub fn minhash_signature(shingles: &[u64], perms: usize, seed: u64) -> Vec<u64> {
    (0..perms as u64)
        .map(|i| {
            let s = hash_pair(seed, i, 0);
            shingles.iter().map(|&x| hash_pair(s, x, 1)).min().unwrap_or(u64::MAX)
        })
        .collect()
}

/// Evidence tokens for one record, in emission order.
pub fn categorical_tokens(
    rec: &FunctionRecord,
    known_names: &[String],
    minhash_perms: usize,
    shingle_len: usize,
    seed: u64,
) -> Vec<String> {
    let mut tokens = Vec::new();
    if !rec.opcodes.is_empty() {
        tokens.push(format!("opseq:{}", sha256_hex(rec.opcodes.join("\n").as_bytes())));
        let shingles = opcode_shingles(&rec.opcodes, shingle_len);
        for (i, v) in minhash_signature(&shingles, minhash_perms, seed).into_iter().enumerate() {
            tokens.push(format!("minhash:{i}:{v:x}"));
        }
    }
    tokens.extend(rec.constants.iter().map(|c| format!("const:{c}")));
    tokens.extend(rec.dynamic_callees.iter().map(|n| format!("dyn:{n}")));
    tokens.extend(known_names.iter().map(|n| format!("reach:{n}")));
    tokens.extend(rec.taint.dynamic_callees.iter().map(|n| format!("taint:{n}")));
    tokens
}

/// Signed feature hashing of a token list. `width` must be a power of two.
pub fn hash_tokens(tokens: &[String], width: usize, seed: u64) -> CategoricalVector {
    assert!(width.is_power_of_two(), "hash width must be a power of two");
    let mask = width as u64 - 1;
    let mut acc: BTreeMap<u32, i32> = BTreeMap::new();
    for t in tokens {
        let index = (hash_bytes(seed, t.as_bytes()) & mask) as u32;
        let sign = if hash_bytes(seed ^ SIGN_SALT, t.as_bytes()) & 1 == 0 { 1 } else { -1 };
        *acc.entry(index).or_insert(0) += sign;
    }
    CategoricalVector { width, entries: acc.into_iter().filter(|&(_, v)| v != 0).collect() }
}

/// Categorical vector of one record. `known_names` are the imported names
/// reachable through the call graph (empty for an isolated record).
pub fn categorical_features(rec: &FunctionRecord, known_names: &[String], width: usize, seed: u64) -> CategoricalVector {
    let tokens = categorical_tokens(rec, known_names, DEFAULT_MINHASH_PERMS, DEFAULT_SHINGLE_LEN, seed);
    hash_tokens(&tokens, width, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Constant;

    fn ops(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn distinct_ops(n: usize, tag: &str) -> Vec<String> {
        (0..n).map(|i| format!("{tag}{i}")).collect()
    }

    /// Two-sided 99% acceptance interval of Binomial(n, p), from the exact pmf.
    fn binomial_bounds(n: usize, p: f64) -> (usize, usize) {
        let mut pmf = vec![0.0; n + 1];
        for k in 0..=n {
            let mut ln_c = 0.0;
            for i in 0..k {
                ln_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
            }
            pmf[k] = (ln_c + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
        }
        let mut cdf = 0.0;
        let mut lo = 0;
        for (k, v) in pmf.iter().enumerate() {
            cdf += v;
            if cdf >= 0.005 {
                lo = k;
                break;
            }
        }
        cdf = 0.0;
        let mut hi = n;
        for k in (0..=n).rev() {
            cdf += pmf[k];
            if cdf >= 0.005 {
                hi = k;
                break;
            }
        }
        (lo, hi)
    }

    fn matches(a: &[u64], b: &[u64]) -> usize {
        a.iter().zip(b).filter(|(x, y)| x == y).count()
    }

    #[test]
    fn identical_opcodes_give_identical_tokens() {
        let mut a = FunctionRecord::new("b", "f", 0, 4);
        a.opcodes = ops(&["push", "mov", "call", "pop", "ret"]);
        let mut b = FunctionRecord::new("c", "g", 0, 4);
        b.opcodes = a.opcodes.clone();
        let ta = categorical_tokens(&a, &[], 64, 4, 1);
        let tb = categorical_tokens(&b, &[], 64, 4, 1);
        assert_eq!(ta, tb);
        assert_eq!(ta.len(), 1 + 64);
        assert!(ta[0].starts_with("opseq:"));
        assert_eq!(categorical_features(&a, &[], 1 << 12, 3), categorical_features(&b, &[], 1 << 12, 3));
    }

    #[test]
    fn minhash_match_rate_tracks_jaccard() {
        // 7 opcodes give 4 shingles; the first 6 give 3 of them: J = 3/4.
        let (lo, hi) = binomial_bounds(64, 0.75);
        let mut inside = 0;
        for seed in 0..20u64 {
            let a = distinct_ops(7, &format!("s{seed}_"));
            let sa = opcode_shingles(&a, 4);
            let sb = opcode_shingles(&a[..6], 4);
            assert_eq!((sa.len(), sb.len()), (4, 3));
            let m = matches(&minhash_signature(&sa, 64, seed), &minhash_signature(&sb, 64, seed));
            if (lo..=hi).contains(&m) {
                inside += 1;
            }
        }
        // Each trial misses with probability <= 1%; allow one miss in 20.
        assert!(inside >= 19, "{inside}/20 trials inside [{lo}, {hi}]");
    }

    #[test]
    fn minhash_converges_at_512_hashes() {
        for &(shared, only_a, only_b) in &[(30usize, 10usize, 0usize), (20, 10, 10), (5, 15, 0)] {
            let j = shared as f64 / (shared + only_a + only_b) as f64;
            let a: Vec<u64> = (0..shared as u64).chain(1000..1000 + only_a as u64).collect();
            let b: Vec<u64> = (0..shared as u64).chain(2000..2000 + only_b as u64).collect();
            let m = matches(&minhash_signature(&a, 512, 11), &minhash_signature(&b, 512, 11));
            let rate = m as f64 / 512.0;
            assert!((rate - j).abs() <= 0.05, "J={j} rate={rate}");
        }
    }

    #[test]
    fn only_opcode_tokens_without_constants_or_callees() {
        let mut r = FunctionRecord::new("b", "f", 0, 4);
        r.opcodes = ops(&["mov", "ret"]);
        let t = categorical_tokens(&r, &[], 8, 4, 0);
        assert!(t.iter().all(|t| t.starts_with("opseq:") || t.starts_with("minhash:")));
        assert_eq!(t.len(), 9);
    }

    #[test]
    fn every_evidence_kind_is_emitted() {
        let mut r = FunctionRecord::new("b", "f", 0, 4);
        r.constants = vec![Constant::Int(-1), Constant::Str("usage".into())];
        r.dynamic_callees = vec!["malloc".into()];
        r.taint.dynamic_callees = vec!["free".into()];
        let t = categorical_tokens(&r, &["printf".to_string()], 8, 4, 0);
        assert_eq!(t, ["const:-1", "const:\"usage\"", "dyn:malloc", "reach:printf", "taint:free"]);
    }

    #[test]
    fn hashed_entries_are_unique_sorted_and_bounded() {
        let tokens: Vec<String> = (0..500).map(|i| format!("t{}", i % 300)).collect();
        let v = hash_tokens(&tokens, 64, 9);
        assert!(v.entries.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(v.entries.iter().all(|&(i, c)| (i as usize) < 64 && c != 0));
        let total: i32 = v.entries.iter().map(|e| e.1.abs()).sum();
        assert!(total <= 500);
    }
}
