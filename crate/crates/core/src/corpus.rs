//! Function-record corpus: line-delimited JSON ingestion, validation and
//! deterministic train/valid/test splitting.
//!
//! One record per line. A function is identified by `binary_id::name`;
//! caller and callee lists may use either a bare name (resolved inside the
//! same binary) or a full identifier. References that resolve to nothing
//! are treated as external functions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator between binary id and symbol name in a function identifier.
pub const ID_SEPARATOR: &str = "::";

const KNOWN_FIELDS: &[&str] = &[
    "binary_id",
    "name",
    "vaddr",
    "size",
    "opcodes",
    "operand_kinds",
    "callers",
    "callees",
    "dynamic_callees",
    "constants",
    "stack_bytes",
    "heap_bytes",
    "tls_bytes",
    "num_args",
    "local_bytes",
    "taint",
    "cfg_nodes",
    "cfg_edges",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperandKind {
    #[serde(alias = "reg")]
    Register,
    #[serde(alias = "imm")]
    Immediate,
    #[serde(alias = "mem")]
    Memory,
}

/// A constant referenced by a function body.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Constant {
    Int(i64),
    UInt(u64),
    Str(String),
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constant::Int(v) => write!(f, "{v}"),
            Constant::UInt(v) => write!(f, "{v}"),
            Constant::Str(s) => write!(f, "{s:?}"),
        }
    }
}

/// Counts produced by an upstream taint analysis. All zero when absent.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Taint {
    /// Tainted-register counts, one slot per register class.
    pub register_types: Vec<u64>,
    pub heap_bytes: u64,
    pub stack_bytes: u64,
    pub argument_bytes: u64,
    pub conditional_jumps: u64,
    pub flows: u64,
    /// Dynamic callees (optionally suffixed with the tainted argument
    /// register, e.g. `memcpy:rdi`) that receive tainted data.
    pub dynamic_callees: Vec<String>,
}

impl Taint {
    fn is_empty(&self) -> bool {
        *self == Taint::default()
    }
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub binary_id: String,
    pub name: String,
    pub vaddr: u64,
    pub size: u64,
    #[serde(default)]
    pub opcodes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub operand_kinds: Vec<Vec<OperandKind>>,
    #[serde(default)]
    pub callers: Vec<String>,
    #[serde(default)]
    pub callees: Vec<String>,
    #[serde(default)]
    pub dynamic_callees: Vec<String>,
    #[serde(default)]
    pub constants: Vec<Constant>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub stack_bytes: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub heap_bytes: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub tls_bytes: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub num_args: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub local_bytes: u64,
    #[serde(default, skip_serializing_if = "Taint::is_empty")]
    pub taint: Taint,
    #[serde(default)]
    pub cfg_nodes: u64,
    #[serde(default)]
    pub cfg_edges: u64,
}

impl FunctionRecord {
    /// Minimal record with every optional field empty.
    pub fn new(binary_id: impl Into<String>, name: impl Into<String>, vaddr: u64, size: u64) -> Self {
        FunctionRecord {
            binary_id: binary_id.into(),
            name: name.into(),
            vaddr,
            size,
            opcodes: Vec::new(),
            operand_kinds: Vec::new(),
            callers: Vec::new(),
            callees: Vec::new(),
            dynamic_callees: Vec::new(),
            constants: Vec::new(),
            stack_bytes: 0,
            heap_bytes: 0,
            tls_bytes: 0,
            num_args: 0,
            local_bytes: 0,
            taint: Taint::default(),
            cfg_nodes: 0,
            cfg_edges: 0,
        }
    }

    pub fn id(&self) -> String {
        format!("{}{}{}", self.binary_id, ID_SEPARATOR, self.name)
    }

    fn end(&self) -> u64 {
        self.vaddr.saturating_add(self.size)
    }

    /// Checks the per-record invariants, returning every violation found.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.size == 0 {
            out.push("size is zero (pseudo functions of size zero are excluded)".to_string());
        }
        if self.name.trim().is_empty() {
            out.push("name is empty".to_string());
        } else if self.name.chars().any(char::is_whitespace) {
            out.push(format!("name {:?} contains whitespace", self.name));
        }
        if self.binary_id.is_empty() || self.binary_id.chars().any(char::is_whitespace) {
            out.push(format!("binary_id {:?} is empty or contains whitespace", self.binary_id));
        }
        if !self.operand_kinds.is_empty() && self.operand_kinds.len() != self.opcodes.len() {
            out.push(format!(
                "operand_kinds has {} entries but opcodes has {}",
                self.operand_kinds.len(),
                self.opcodes.len()
            ));
        }
        out
    }
}

/// A problem found while loading, tied to a 1-based line number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} invalid record(s): {}", .0.len(), join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("duplicate function identifier {id} on line {line} (first seen on line {first_line})")]
    DuplicateId { id: String, first_line: usize, line: usize },
    #[error("invalid split: {0}")]
    Split(String),
}

fn join_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Non-fatal findings from loading a corpus.
#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub warnings: Vec<Diagnostic>,
    /// Records dropped because their address range overlaps another
    /// function of the same binary.
    pub dropped_overlapping: usize,
}

/// Validated, immutable set of function records.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    records: Vec<FunctionRecord>,
    by_id: HashMap<String, usize>,
    by_binary: BTreeMap<String, Vec<usize>>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Corpus {
    /// Builds a corpus from in-memory records, applying the same checks as
    /// [`load_corpus`]. Record positions stand in for line numbers.
    pub fn from_records(records: Vec<FunctionRecord>) -> Result<Corpus, CorpusError> {
        let numbered = records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
        Self::build(numbered).map(|(c, _)| c)
    }

    fn build(numbered: Vec<(usize, FunctionRecord)>) -> Result<(Corpus, LoadReport), CorpusError> {
        let mut report = LoadReport::default();

        let diagnostics: Vec<Diagnostic> = numbered
            .iter()
            .flat_map(|(line, rec)| {
                rec.violations().into_iter().map(move |message| Diagnostic { line: *line, message })
            })
            .collect();
        if !diagnostics.is_empty() {
            return Err(CorpusError::Invalid(diagnostics));
        }

        let mut first_seen: HashMap<String, usize> = HashMap::new();
        for (line, rec) in &numbered {
            if let Some(&first_line) = first_seen.get(&rec.id()) {
                return Err(CorpusError::DuplicateId { id: rec.id(), first_line, line: *line });
            }
            first_seen.insert(rec.id(), *line);
        }

        let overlapping = overlapping_positions(&numbered);
        for &pos in &overlapping {
            let (line, rec) = &numbered[pos];
            report.warnings.push(Diagnostic {
                line: *line,
                message: format!("dropping {}: address range overlaps another function", rec.id()),
            });
        }
        report.dropped_overlapping = overlapping.len();

        let records: Vec<FunctionRecord> = numbered
            .into_iter()
            .enumerate()
            .filter(|(pos, _)| !overlapping.contains(pos))
            .map(|(_, (_, rec))| rec)
            .collect();
        Ok((Corpus::index(records), report))
    }

    fn index(records: Vec<FunctionRecord>) -> Corpus {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut by_binary: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            by_id.insert(rec.id(), i);
            by_binary.entry(rec.binary_id.clone()).or_default().push(i);
        }
        Corpus { records, by_id, by_binary }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FunctionRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FunctionRecord> {
        self.records.iter()
    }

    pub fn get(&self, id: &str) -> Option<&FunctionRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Binary ids in lexicographic order.
    pub fn binaries(&self) -> impl Iterator<Item = &str> {
        self.by_binary.keys().map(String::as_str)
    }

    /// Positions of all records belonging to `binary_id`.
    pub fn binary_members(&self, binary_id: &str) -> &[usize] {
        self.by_binary.get(binary_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Resolves a caller/callee reference made from inside `binary_id`.
    /// Returns `None` for external functions.
    pub fn resolve(&self, binary_id: &str, reference: &str) -> Option<usize> {
        if reference.contains(ID_SEPARATOR) {
            if let Some(&i) = self.by_id.get(reference) {
                return Some(i);
            }
        }
        self.by_id.get(&format!("{binary_id}{ID_SEPARATOR}{reference}")).copied()
    }

    fn subset(&self, positions: &[usize]) -> Corpus {
        Corpus::index(positions.iter().map(|&i| self.records[i].clone()).collect())
    }
}

/// Positions (into `numbered`) of records whose address range overlaps
/// another record of the same binary.
fn overlapping_positions(numbered: &[(usize, FunctionRecord)]) -> BTreeSet<usize> {
    let mut per_binary: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (pos, (_, rec)) in numbered.iter().enumerate() {
        per_binary.entry(rec.binary_id.as_str()).or_default().push(pos);
    }
    let mut out = BTreeSet::new();
    for mut members in per_binary.into_values() {
        members.sort_by_key(|&p| (numbered[p].1.vaddr, numbered[p].1.end()));
        // Sweep with the furthest end seen so far and who owns it.
        let mut reach: Option<(u64, usize)> = None;
        for &p in &members {
            let rec = &numbered[p].1;
            if let Some((end, owner)) = reach {
                if rec.vaddr < end {
                    out.insert(p);
                    out.insert(owner);
                }
                if rec.end() > end {
                    reach = Some((rec.end(), p));
                }
            } else {
                reach = Some((rec.end(), p));
            }
        }
    }
    out
}

/// Loads and validates a corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    load_corpus_with_report(path).map(|(c, _)| c)
}

/// Like [`load_corpus`] but also returns the non-fatal warnings.
pub fn load_corpus_with_report(path: impl AsRef<Path>) -> Result<(Corpus, LoadReport), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut numbered = Vec::new();
    let mut diagnostics = Vec::new();
    let mut unknown_warnings = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok((rec, unknown)) => {
                if !unknown.is_empty() {
                    unknown_warnings.push(Diagnostic {
                        line: line_no,
                        message: format!("ignoring unknown field(s): {}", unknown.join(", ")),
                    });
                }
                numbered.push((line_no, rec));
            }
            Err(message) => diagnostics.push(Diagnostic { line: line_no, message }),
        }
    }
    if !diagnostics.is_empty() {
        return Err(CorpusError::Invalid(diagnostics));
    }
    let (corpus, mut report) = Corpus::build(numbered)?;
    unknown_warnings.append(&mut report.warnings);
    report.warnings = unknown_warnings;
    for w in &report.warnings {
        log::warn!("{}: {}", path.display(), w);
    }
    Ok((corpus, report))
}

fn parse_record(line: &str) -> Result<(FunctionRecord, Vec<String>), String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    let unknown = match &value {
        serde_json::Value::Object(map) => {
            map.keys().filter(|k| !KNOWN_FIELDS.contains(&k.as_str())).cloned().collect()
        }
        _ => return Err("malformed record: expected an object".to_string()),
    };
    let rec = serde_json::from_value(value).map_err(|e| format!("malformed record: {e}"))?;
    Ok((rec, unknown))
}

/// Writes a corpus in the line-delimited format read by [`load_corpus`].
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for rec in corpus.iter() {
        let line = serde_json::to_string(rec).expect("records always serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    ByFunction,
    ByBinary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, valid and test fractions.
    pub ratios: [f64; 3],
    pub grouping: Grouping,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { ratios: [0.9, 0.05, 0.05], grouping: Grouping::ByFunction, seed: 0 }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(CorpusError::Split(format!("ratios must be positive, got {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Split(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Train/valid/test partition of a corpus.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

/// Partitions `corpus` according to `spec`. Records keep their original
/// relative order inside each partition.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<Split, CorpusError> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(CorpusError::Split("corpus is empty".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    match spec.grouping {
        Grouping::ByFunction => {
            let n = corpus.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let n_train = ((spec.ratios[0] * n as f64).round() as usize).min(n);
            let n_valid = ((spec.ratios[1] * n as f64).round() as usize).min(n - n_train);
            parts[0] = order[..n_train].to_vec();
            parts[1] = order[n_train..n_train + n_valid].to_vec();
            parts[2] = order[n_train + n_valid..].to_vec();
        }
        Grouping::ByBinary => {
            let mut binaries: Vec<&str> = corpus.binaries().collect();
            if binaries.len() < 3 {
                return Err(CorpusError::Split(format!(
                    "by-binary split needs at least 3 binaries, corpus has {}",
                    binaries.len()
                )));
            }
            binaries.shuffle(&mut rng);
            let mut groups: [Vec<&str>; 3] = Default::default();
            let total = corpus.len() as f64;
            let cut_train = spec.ratios[0] * total;
            let cut_valid = (spec.ratios[0] + spec.ratios[1]) * total;
            let mut seen = 0.0;
            for b in binaries {
                let size = corpus.binary_members(b).len() as f64;
                let mid = seen + size / 2.0;
                seen += size;
                let g = if mid < cut_train {
                    0
                } else if mid < cut_valid {
                    1
                } else {
                    2
                };
                groups[g].push(b);
            }
            // Every partition gets at least one binary; borrow from the
            // partition holding the most binaries.
            for g in 0..3 {
                if groups[g].is_empty() {
                    let donor = (0..3).max_by_key(|&d| (groups[d].len(), d)).expect("three groups");
                    let b = groups[donor].pop().expect("donor has at least two binaries");
                    groups[g].push(b);
                }
            }
            for (g, bins) in groups.iter().enumerate() {
                parts[g] = bins.iter().flat_map(|b| corpus.binary_members(b).iter().copied()).collect();
            }
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(Split { train: corpus.subset(&parts[0]), valid: corpus.subset(&parts[1]), test: corpus.subset(&parts[2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn rec(bin: &str, name: &str, vaddr: u64) -> FunctionRecord {
        FunctionRecord::new(bin, name, vaddr, 16)
    }

    fn corpus_of(binaries: usize, per_binary: usize) -> Corpus {
        let mut recs = Vec::new();
        for b in 0..binaries {
            for f in 0..per_binary {
                recs.push(rec(&format!("bin{b}"), &format!("fn{f}"), 0x1000 + 0x100 * f as u64));
            }
        }
        Corpus::from_records(recs).unwrap()
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let f = write_lines(&[]);
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.len(), 0);
    }

    #[test]
    fn single_record_is_indexed_by_binary() {
        let line = r#"{"binary_id":"ls","name":"main","vaddr":4096,"size":10,"opcodes":["push","ret"]}"#;
        let f = write_lines(&[line.to_string()]);
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.binary_members("ls"), &[0]);
        assert_eq!(c.get("ls::main").unwrap().opcodes, vec!["push", "ret"]);
        assert_eq!(c.records()[0].taint, Taint::default());
    }

    #[test]
    fn zero_size_record_is_rejected_with_line_number() {
        let lines = vec![
            r#"{"binary_id":"a","name":"ok","vaddr":0,"size":4}"#.to_string(),
            r#"{"binary_id":"a","name":"bad","vaddr":8,"size":0}"#.to_string(),
        ];
        let f = write_lines(&lines);
        match load_corpus(f.path()) {
            Err(CorpusError::Invalid(d)) => {
                assert_eq!(d.len(), 1);
                assert_eq!(d[0].line, 2);
                assert!(d[0].message.contains("size zero"));
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn malformed_and_invalid_lines_are_all_reported() {
        let lines = vec![
            "{not json".to_string(),
            r#"{"binary_id":"a","name":"  ","vaddr":0,"size":4}"#.to_string(),
            r#"{"binary_id":"a","name":"f","vaddr":0,"size":4,"opcodes":["nop"],"operand_kinds":[[],[]]}"#.to_string(),
        ];
        let f = write_lines(&lines);
        let Err(CorpusError::Invalid(d)) = load_corpus(f.path()) else { panic!("expected failure") };
        // The JSON error stops record-level validation.
        assert_eq!(d.iter().map(|d| d.line).collect::<Vec<_>>(), vec![1]);

        let f = write_lines(&lines[1..]);
        let Err(CorpusError::Invalid(d)) = load_corpus(f.path()) else { panic!("expected failure") };
        assert_eq!(d.iter().map(|d| d.line).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let l = r#"{"binary_id":"a","name":"f","vaddr":0,"size":4}"#.to_string();
        let l2 = r#"{"binary_id":"a","name":"f","vaddr":64,"size":4}"#.to_string();
        let f = write_lines(&[l, l2]);
        assert!(matches!(load_corpus(f.path()), Err(CorpusError::DuplicateId { first_line: 1, line: 2, .. })));
    }

    #[test]
    fn unknown_fields_warn_but_load() {
        let l = r#"{"binary_id":"a","name":"f","vaddr":0,"size":4,"backend":"r2 5.8"}"#.to_string();
        let f = write_lines(&[l]);
        let (c, report) = load_corpus_with_report(f.path()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].message.contains("backend"));
    }

    #[test]
    fn overlapping_functions_are_dropped() {
        let recs = vec![
            FunctionRecord::new("a", "f", 0, 32),
            FunctionRecord::new("a", "g", 16, 32),
            FunctionRecord::new("a", "h", 64, 8),
            FunctionRecord::new("b", "f", 0, 32),
        ];
        let c = Corpus::from_records(recs).unwrap();
        let ids: Vec<String> = c.iter().map(FunctionRecord::id).collect();
        assert_eq!(ids, vec!["a::h", "b::f"]);
    }

    #[test]
    fn references_resolve_within_binary() {
        let mut f = rec("a", "f", 0);
        f.callees = vec!["g".into(), "puts".into()];
        let c = Corpus::from_records(vec![f, rec("a", "g", 64), rec("b", "g", 0)]).unwrap();
        assert_eq!(c.resolve("a", "g"), Some(1));
        assert_eq!(c.resolve("a", "b::g"), Some(2));
        assert_eq!(c.resolve("a", "puts"), None);
    }

    #[test]
    fn save_then_load_round_trips() {
        let mut r = rec("bin", "do_work", 0x400);
        r.opcodes = vec!["mov".into(), "call".into(), "ret".into()];
        r.operand_kinds = vec![
            vec![OperandKind::Register, OperandKind::Immediate],
            vec![OperandKind::Immediate],
            vec![],
        ];
        r.constants = vec![Constant::Int(-1), Constant::UInt(u64::MAX), Constant::Str("%s\n".into())];
        r.taint.flows = 3;
        r.taint.dynamic_callees = vec!["memcpy:rdi".into()];
        r.stack_bytes = 64;
        let c = Corpus::from_records(vec![r, rec("bin", "other", 0x800)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        save_corpus(&c, &p).unwrap();
        assert_eq!(load_corpus(&p).unwrap(), c);
    }

    #[test]
    fn by_function_split_sizes_follow_ratios() {
        let c = corpus_of(1, 100);
        let s = split(&c, &SplitSpec { ratios: [0.9, 0.05, 0.05], grouping: Grouping::ByFunction, seed: 7 }).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (90, 5, 5));
    }

    #[test]
    fn by_binary_split_keeps_binaries_whole() {
        let c = corpus_of(10, 10);
        let spec = SplitSpec { ratios: [0.8, 0.1, 0.1], grouping: Grouping::ByBinary, seed: 3 };
        let s = split(&c, &spec).unwrap();
        let mut owner: HashMap<String, usize> = HashMap::new();
        for (p, part) in [&s.train, &s.valid, &s.test].into_iter().enumerate() {
            assert!(!part.is_empty());
            for r in part.iter() {
                let prev = owner.insert(r.binary_id.clone(), p);
                assert!(prev.is_none() || prev == Some(p), "binary {} split across partitions", r.binary_id);
            }
        }
        assert_eq!(s.train.len() + s.valid.len() + s.test.len(), 100);
        assert_eq!(s.train.len(), 80);
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus_of(4, 25);
        let spec = SplitSpec { ratios: [0.7, 0.2, 0.1], grouping: Grouping::ByFunction, seed: 11 };
        let a = split(&c, &spec).unwrap();
        let b = split(&c, &spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.valid, b.valid);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn split_rejects_bad_specs() {
        let c = corpus_of(2, 10);
        let bad_sum = SplitSpec { ratios: [0.5, 0.3, 0.1], grouping: Grouping::ByFunction, seed: 0 };
        assert!(matches!(split(&c, &bad_sum), Err(CorpusError::Split(_))));
        let too_few = SplitSpec { ratios: [0.8, 0.1, 0.1], grouping: Grouping::ByBinary, seed: 0 };
        assert!(matches!(split(&c, &too_few), Err(CorpusError::Split(_))));
        let empty = Corpus::default();
        assert!(split(&empty, &SplitSpec::default()).is_err());
    }
}
