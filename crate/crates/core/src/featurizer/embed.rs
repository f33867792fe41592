//! Sparse vectors, the hashed random projection and embedding files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Corpus;
use crate::hashing::hash_pair;

use super::FeatureError;

pub const DEFAULT_EMBED_WIDTH: usize = 512;

/// Sparse real vector; entries sorted by index, no explicit zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        SparseVector { dim, entries: Vec::new() }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, &v)| (i as u32, v))
            .collect();
        SparseVector { dim: values.len(), entries }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(index as u32), |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Concatenates vectors end to end.
    pub fn concat(parts: &[&SparseVector]) -> SparseVector {
        let mut out = SparseVector::zeros(0);
        for p in parts {
            let offset = out.dim as u32;
            out.entries.extend(p.entries.iter().map(|&(i, v)| (i + offset, v)));
            out.dim += p.dim;
        }
        out
    }

    /// Element-wise mean; the zero vector of width `dim` when `vectors` is empty.
    pub fn mean(dim: usize, vectors: &[&SparseVector]) -> SparseVector {
        if vectors.is_empty() {
            return SparseVector::zeros(dim);
        }
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for v in vectors {
            assert_eq!(v.dim, dim, "vector width mismatch");
            for &(i, x) in &v.entries {
                *acc.entry(i).or_insert(0.0) += x;
            }
        }
        let n = vectors.len() as f64;
        let entries = acc.into_iter().filter(|&(_, s)| s != 0.0).map(|(i, s)| (i, s / n)).collect();
        SparseVector { dim, entries }
    }
}

/// Random ±1 signs of one projection column, 64 per word.
fn column_signs(seed: u64, column: u64, words: usize, buf: &mut Vec<u64>) {
    buf.clear();
    let mut state = hash_pair(seed, column, 0x5eed);
    for _ in 0..words {
        // splitmix64
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        buf.push(z ^ (z >> 31));
    }
}

/// Adds the projection of `entries` (with column indices shifted by
/// `offset`) into `out`. The projection matrix has entries ±1/√E with
/// E = `out.len()` and is never materialised.
pub fn project_into(out: &mut [f64], entries: &[(u32, f64)], offset: u64, seed: u64) {
    let width = out.len();
    let scale = 1.0 / (width as f64).sqrt();
    let words = width.div_ceil(64);
    let mut signs = Vec::with_capacity(words);
    for &(j, v) in entries {
        column_signs(seed, offset + j as u64, words, &mut signs);
        let x = v * scale;
        for (r, o) in out.iter_mut().enumerate() {
            if (signs[r / 64] >> (r % 64)) & 1 == 0 {
                *o += x;
            } else {
                *o -= x;
            }
        }
    }
}

/// Projects a sparse vector to `width` dimensions.
pub fn project(v: &SparseVector, width: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; width];
    project_into(&mut out, &v.entries, 0, seed);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Projected,
    External,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Projected => "projected",
            Provenance::External => "external",
        })
    }
}

/// Function id → fixed-width embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub provenance: Provenance,
    pub width: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(provenance: Provenance, width: usize) -> Self {
        EmbeddingTable { provenance, width, rows: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    /// Writes a header line followed by `id<TAB>v1 v2 ... vE` rows.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(w, "# binlabel embeddings provenance={} width={}", self.provenance, self.width)?;
        for (id, row) in &self.rows {
            write!(w, "{id}\t")?;
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    w.write_all(b" ")?;
                }
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an embedding file. The width comes from the header when
    /// `width` is `None`.
    pub fn load(path: impl AsRef<Path>, width: Option<usize>) -> Result<Self, FeatureError> {
        read_table(path.as_ref(), width, None)
    }
}

fn parse_header(line: &str) -> (Option<Provenance>, Option<usize>) {
    let mut provenance = None;
    let mut width = None;
    for field in line.trim_start_matches('#').split_whitespace() {
        if let Some(v) = field.strip_prefix("provenance=") {
            provenance = match v {
                "projected" => Some(Provenance::Projected),
                "external" => Some(Provenance::External),
                _ => None,
            };
        } else if let Some(v) = field.strip_prefix("width=") {
            width = v.parse().ok();
        }
    }
    (provenance, width)
}

fn read_table(path: &Path, width: Option<usize>, known: Option<&Corpus>) -> Result<EmbeddingTable, FeatureError> {
    let reader = BufReader::new(File::open(path)?);
    let mut table = EmbeddingTable::new(Provenance::External, width.unwrap_or(0));
    let mut width_known = width.is_some();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            let (p, w) = parse_header(trimmed);
            if let Some(p) = p {
                table.provenance = p;
            }
            if let (Some(w), false) = (w, width_known) {
                table.width = w;
                width_known = true;
            }
            continue;
        }
        let (id, rest) = match line.split_once('\t') {
            Some((id, rest)) => (id.to_string(), rest),
            None => {
                let mut it = trimmed.splitn(2, char::is_whitespace);
                (it.next().unwrap_or_default().to_string(), it.next().unwrap_or_default())
            }
        };
        let values = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| FeatureError::Parse { line: lineno, message: format!("{id}: {e}") })?;
        if !width_known {
            table.width = values.len();
            width_known = true;
        }
        if values.len() != table.width {
            return Err(FeatureError::Width { id, expected: table.width, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Parse { line: lineno, message: format!("{id}: non-finite value") });
        }
        if let Some(corpus) = known {
            if corpus.get(&id).is_none() {
                return Err(FeatureError::UnknownId(id));
            }
        }
        if table.rows.insert(id.clone(), values).is_some() {
            return Err(FeatureError::Parse { line: lineno, message: format!("duplicate id {id}") });
        }
    }
    Ok(table)
}

/// Loads embeddings computed by an external tool. Every row must have
/// `width` values; when `corpus` is given, every id must name one of its
/// functions.
pub fn load_external_embeddings(
    path: impl AsRef<Path>,
    width: usize,
    corpus: Option<&Corpus>,
) -> Result<EmbeddingTable, FeatureError> {
    let mut table = read_table(path.as_ref(), Some(width), corpus)?;
    table.provenance = Provenance::External;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FunctionRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, dim: usize, nnz: usize) -> SparseVector {
        let mut acc = BTreeMap::new();
        for _ in 0..nnz {
            acc.insert(rng.gen_range(0..dim as u32), rng.gen_range(-3.0..3.0));
        }
        SparseVector { dim, entries: acc.into_iter().collect() }
    }

    fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    fn sq(a: &[f64]) -> f64 {
        a.iter().map(|x| x * x).sum()
    }

    #[test]
    fn zero_vector_projects_to_zero() {
        assert!(project(&SparseVector::zeros(1000), 512, 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_sparse(&mut rng, 10_000, 50);
        let y = random_sparse(&mut rng, 10_000, 50);
        let sum = SparseVector::mean(10_000, &[&x, &y]);
        let doubled = SparseVector { dim: sum.dim, entries: sum.entries.iter().map(|&(i, v)| (i, 2.0 * v)).collect() };
        let px = project(&x, 512, 1);
        let py = project(&y, 512, 1);
        let pxy = project(&doubled, 512, 1);
        for r in 0..512 {
            assert!((pxy[r] - (px[r] + py[r])).abs() < 1e-9);
        }
    }

    #[test]
    fn columns_have_unit_norm() {
        let e = SparseVector { dim: 100, entries: vec![(42, 1.0)] };
        assert!((sq(&project(&e, 512, 9)) - 1.0).abs() < 1e-12);
    }

    /// Largest relative squared-distance distortion over 100 random pairs,
    /// for the fixed seeds below.
    const DISTORTION_FIXTURE: f64 = 0.160_153_683_480_880_5;

    #[test]
    fn pairwise_distances_are_roughly_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut worst: f64 = 0.0;
        let mut total = 0.0;
        for _ in 0..100 {
            let x = random_sparse(&mut rng, 1 << 20, 200);
            let y = random_sparse(&mut rng, 1 << 20, 200);
            let full = sq(&sub(&x.to_dense(), &y.to_dense()));
            let proj = sq(&sub(&project(&x, 512, 23), &project(&y, 512, 23)));
            let d = (proj / full - 1.0).abs();
            worst = worst.max(d);
            total += proj / full;
        }
        // With E = 512 the ratio has standard deviation about sqrt(2/E) ≈ 0.0625.
        assert!(worst < 0.3, "worst distortion {worst}");
        assert!((total / 100.0 - 1.0).abs() < 0.05);
        assert!((worst - DISTORTION_FIXTURE).abs() < 1e-9, "worst distortion {worst:.16}");
    }

    #[test]
    fn table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.tsv");
        let mut t = EmbeddingTable::new(Provenance::Projected, 3);
        t.rows.insert("b::f".into(), vec![0.1, -2.5, 1e-17]);
        t.rows.insert("b::g".into(), vec![0.0, 1.0 / 3.0, 7.0]);
        t.save(&path).unwrap();
        assert_eq!(EmbeddingTable::load(&path, None).unwrap(), t);
    }

    #[test]
    fn external_widths_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("safe.txt");
        let row = |id: &str, n: usize| format!("{id} {}\n", vec!["0.5"; n].join(" "));
        std::fs::write(&path, row("b::f", 100) + &row("b::g", 100)).unwrap();
        let t = load_external_embeddings(&path, 100, None).unwrap();
        assert_eq!((t.len(), t.width, t.provenance), (2, 100, Provenance::External));

        std::fs::write(&path, row("b::f", 100) + &row("b::g", 99)).unwrap();
        match load_external_embeddings(&path, 100, None) {
            Err(FeatureError::Width { id, expected: 100, found: 99 }) => assert_eq!(id, "b::g"),
            other => panic!("unexpected {other:?}"),
        }

        std::fs::write(&path, "").unwrap();
        assert!(load_external_embeddings(&path, 100, None).unwrap().is_empty());
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        std::fs::write(&path, "b::missing 1 2\n").unwrap();
        let corpus = Corpus::from_records(vec![FunctionRecord::new("b", "f", 0, 4)]).unwrap();
        assert!(matches!(
            load_external_embeddings(&path, 2, Some(&corpus)),
            Err(FeatureError::UnknownId(id)) if id == "b::missing"
        ));
    }
}
