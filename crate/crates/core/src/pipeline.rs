//! End-to-end pipeline: split → label space → embeddings → train and
//! calibrate → predict → evaluate → language model → names.
//!
//! Every stage reads its inputs from and writes its outputs to the output
//! directory. A manifest records, per stage, a key over the stage
//! parameters and the content hashes of its inputs, plus the hashes of the
//! outputs it wrote. A stage whose key is unchanged and whose outputs are
//! intact is skipped.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{self, Corpus, Grouping, SplitSpec};
use crate::featurizer::{embed_corpus, EmbeddingTable, FeatureConfig, FEATURE_LAYOUT_VERSION};
use crate::hashing::{derive_seed, sha256_hex};
use crate::labelspace::{self, LabelSpace, DEFAULT_A, DEFAULT_B};
use crate::langmodel::{self, order_labels, render_name, Convention, TrigramLm, DEFAULT_STEP_CAP};
use crate::learner::{self, read_header, HyperParams, LabelRanking, Model, MODEL_FORMAT_VERSION};
use crate::metrics::{self, LabelSpaceReport, PointPrediction};
use crate::tokenizer::{Tokenizer, TokenizerConfig};

/// Stage names, in execution order.
pub const STAGES: [&str; 8] = ["split", "labelspace", "featurize", "train", "predict", "evaluate", "lm", "names"];

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: String,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: impl Into<String>, message: impl ToString) -> Self {
        PipelineError { stage: stage.into(), message: message.to_string() }
    }
}

fn at<E: ToString>(stage: &str) -> impl Fn(E) -> PipelineError + '_ {
    move |e| PipelineError::new(stage, e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub grouping: Grouping,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let d = SplitSpec::default();
        SplitConfig { ratios: d.ratios, grouping: d.grouping }
    }
}

/// Seed of one stage, derived from the run seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    derive_seed(seed, stage)
}

/// Everything a pipeline run needs. The top-level `seed` overrides the
/// seeds inside `features` and `hp`: each stage gets its own seed derived
/// from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Tokenizer config; the bundled one when absent.
    pub tokenizer: Option<PathBuf>,
    /// Extra names (one per line) for the language model. Training-split
    /// names are always used.
    pub lm_names: Option<PathBuf>,
    pub label_space_size: usize,
    pub propensity_a: f64,
    pub propensity_b: f64,
    pub seed: u64,
    pub split: SplitConfig,
    pub convention: Convention,
    /// Ranking depth of the evaluation metrics.
    pub k: usize,
    /// Label:score pairs written per function in rankings and names.
    pub topk: usize,
    pub lm_step_cap: u64,
    pub features: FeatureConfig,
    pub hp: HyperParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            out_dir: PathBuf::from("binlabel-out"),
            tokenizer: None,
            lm_names: None,
            label_space_size: 1024,
            propensity_a: DEFAULT_A,
            propensity_b: DEFAULT_B,
            seed: 0,
            split: SplitConfig::default(),
            convention: Convention::Snake,
            k: metrics::DEFAULT_K,
            topk: 5,
            lm_step_cap: DEFAULT_STEP_CAP,
            features: FeatureConfig::default(),
            hp: HyperParams::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML config. Relative paths are resolved against the
    /// directory holding the file.
    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::new("config", format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| PipelineError::new("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.corpus.as_mut().map(resolve);
        cfg.tokenizer.as_mut().map(resolve);
        cfg.lm_names.as_mut().map(resolve);
        resolve(&mut cfg.out_dir);
        Ok(cfg)
    }

    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { ratios: self.split.ratios, grouping: self.split.grouping, seed: stage_seed(self.seed, "split") }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig { seed: stage_seed(self.seed, "featurize"), ..self.features.clone() }
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams { seed: stage_seed(self.seed, "train"), ..self.hp.clone() }
    }

    pub fn load_tokenizer(&self) -> Result<Tokenizer, PipelineError> {
        let cfg = match &self.tokenizer {
            Some(p) => TokenizerConfig::from_file(p).map_err(at("tokenizer"))?,
            None => TokenizerConfig::bundled(),
        };
        Tokenizer::new(cfg).map_err(at("tokenizer"))
    }
}

/// Paths of the artifacts written into the output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub labelspace: PathBuf,
    pub embeddings: PathBuf,
    pub model: PathBuf,
    pub rankings: PathBuf,
    pub report: PathBuf,
    pub report_json: PathBuf,
    pub plot: PathBuf,
    pub lm: PathBuf,
    pub names: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Artifacts {
        Artifacts {
            train: dir.join("train.jsonl"),
            valid: dir.join("valid.jsonl"),
            test: dir.join("test.jsonl"),
            labelspace: dir.join("labelspace.json"),
            embeddings: dir.join("embeddings.tsv"),
            model: dir.join("model.bin"),
            rankings: dir.join("rankings.tsv"),
            report: dir.join("report.tsv"),
            report_json: dir.join("report.json"),
            plot: dir.join("plot.tsv"),
            lm: dir.join("lm.bin"),
            names: dir.join("names.tsv"),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct StageRecord {
    key: String,
    outputs: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub artifacts: Artifacts,
    pub stages: Vec<(&'static str, StageStatus)>,
}

impl PipelineOutcome {
    pub fn all_skipped(&self) -> bool {
        self.stages.iter().all(|(_, s)| *s == StageStatus::Skipped)
    }
}

fn file_hash(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

struct Runner {
    dir: PathBuf,
    manifest: BTreeMap<String, StageRecord>,
    stages: Vec<(&'static str, StageStatus)>,
}

impl Runner {
    fn open(dir: &Path) -> Result<Runner, PipelineError> {
        fs::create_dir_all(dir).map_err(|e| PipelineError::new("setup", format!("{}: {e}", dir.display())))?;
        let manifest = fs::read(dir.join(MANIFEST))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        Ok(Runner { dir: dir.to_path_buf(), manifest, stages: Vec::new() })
    }

    fn save_manifest(&self) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(self.dir.join(MANIFEST), text).map_err(at("setup"))
    }

    /// Runs `work` unless the recorded key and output hashes still match.
    fn stage(
        &mut self,
        name: &'static str,
        params: serde_json::Value,
        inputs: &[&Path],
        outputs: &[&Path],
        work: impl FnOnce() -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let mut key_src = json!({ "stage": name, "params": params });
        let mut input_hashes = Vec::new();
        for p in inputs {
            let h = file_hash(p)
                .ok_or_else(|| PipelineError::new(name, format!("missing input {}", p.display())))?;
            input_hashes.push(h);
        }
        key_src["inputs"] = json!(input_hashes);
        let key = sha256_hex(key_src.to_string().as_bytes());
        let up_to_date = self.manifest.get(name).is_some_and(|rec| {
            rec.key == key
                && outputs.iter().all(|p| {
                    let fname = p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
                    rec.outputs.get(&fname).is_some_and(|h| file_hash(p).as_ref() == Some(h))
                })
        });
        if up_to_date {
            log::info!("{name}: up to date");
            self.stages.push((name, StageStatus::Skipped));
            return Ok(());
        }
        log::info!("{name}: running");
        work()?;
        let mut rec = StageRecord { key, outputs: BTreeMap::new() };
        for p in outputs {
            let h = file_hash(p)
                .ok_or_else(|| PipelineError::new(name, format!("stage did not write {}", p.display())))?;
            rec.outputs.insert(p.file_name().expect("artifact paths have file names").to_string_lossy().into_owned(), h);
        }
        self.manifest.insert(name.to_string(), rec);
        self.save_manifest()?;
        self.stages.push((name, StageStatus::Ran));
        Ok(())
    }
}

fn load_split(path: &Path, stage: &str) -> Result<Corpus, PipelineError> {
    corpus::load_corpus(path).map_err(at(stage))
}

/// Marks the test functions whose canonical token set is not the token set
/// of any training function.
pub fn unseen_mask(train: &Corpus, test: &Corpus, tokenizer: &Tokenizer) -> Vec<bool> {
    let seen: HashSet<_> = train.iter().map(|r| tokenizer.canonical_tokens(&r.name)).collect();
    test.iter().map(|r| !seen.contains(&tokenizer.canonical_tokens(&r.name))).collect()
}

/// One line per function: id, then the top `topk` `label:score` pairs.
pub fn format_rankings(ids: &[String], rankings: &[LabelRanking], ls: &LabelSpace, topk: usize) -> String {
    let mut out = String::new();
    for (id, r) in ids.iter().zip(rankings) {
        out.push_str(id);
        for &(l, s) in r.top(topk) {
            let _ = write!(out, "\t{}:{s}", ls.label(l));
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`format_rankings`]: function id and `(label, score)` pairs.
pub fn parse_rankings(text: &str) -> Result<Vec<(String, Vec<(String, f64)>)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_string();
        let mut pairs = Vec::new();
        for f in fields {
            let (label, score) = f.rsplit_once(':').ok_or_else(|| format!("line {}: malformed pair {f:?}", n + 1))?;
            let score: f64 = score.parse().map_err(|_| format!("line {}: bad score in {f:?}", n + 1))?;
            pairs.push((label.to_string(), score));
        }
        out.push((id, pairs));
    }
    Ok(out)
}

/// A synthesized name: the thresholded labels of a ranking, ordered by the
/// language model. Empty when no label clears the threshold.
pub fn synthesize_name(
    lm: &TrigramLm,
    ls: &LabelSpace,
    predicted: &[u32],
    convention: Convention,
    step_cap: u64,
) -> Result<String, langmodel::LmError> {
    if predicted.is_empty() {
        return Ok(String::new());
    }
    let labels: Vec<&str> = predicted.iter().take(langmodel::MAX_LABELS).map(|&l| ls.label(l)).collect();
    let r = order_labels(lm, &labels, step_cap)?;
    Ok(render_name(&r.sequence, convention))
}

/// Evaluates `model` on `test`, optionally with the unseen-name slice
/// relative to `train`.
pub fn evaluate_model(
    model: &Model,
    ls: &LabelSpace,
    table: &EmbeddingTable,
    test: &Corpus,
    train: Option<&Corpus>,
    tokenizer: &Tokenizer,
    k: usize,
) -> Result<LabelSpaceReport, learner::LearnError> {
    let gt = labelspace::project_ground_truth(test, ls, tokenizer);
    let (x, _) = learner::align(table, &gt)?;
    let rankings = model.predict_many(&x)?;
    let preds: Vec<PointPrediction> = rankings
        .iter()
        .map(|r| PointPrediction { ranking: r.ids(), predicted: learner::predict_set(r, model.threshold) })
        .collect();
    let mask = train.map(|t| unseen_mask(t, test, tokenizer));
    Ok(metrics::evaluate_predictions(&preds, &gt, ls, k, model.threshold, mask.as_deref()))
}

/// Runs every stage in order, skipping up-to-date ones.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    let corpus_path = cfg.corpus.clone().ok_or_else(|| PipelineError::new("split", "no corpus path configured"))?;
    if !corpus_path.exists() {
        return Err(PipelineError::new("split", format!("corpus {} does not exist", corpus_path.display())));
    }
    let tokenizer = cfg.load_tokenizer()?;
    let tok_digest = tokenizer.config().digest();
    let art = Artifacts::new(&cfg.out_dir);
    let mut run = Runner::open(&cfg.out_dir)?;

    let spec = cfg.split_spec();
    run.stage("split", json!(spec), &[&corpus_path], &[&art.train, &art.valid, &art.test], || {
        let c = load_split(&corpus_path, "split")?;
        let parts = corpus::split(&c, &spec).map_err(at("split"))?;
        log::info!("split: {} train, {} valid, {} test", parts.train.len(), parts.valid.len(), parts.test.len());
        corpus::save_corpus(&parts.train, &art.train).map_err(at("split"))?;
        corpus::save_corpus(&parts.valid, &art.valid).map_err(at("split"))?;
        corpus::save_corpus(&parts.test, &art.test).map_err(at("split"))
    })?;

    let ls_params = json!({
        "n": cfg.label_space_size, "a": cfg.propensity_a, "b": cfg.propensity_b, "tokenizer": tok_digest,
    });
    run.stage("labelspace", ls_params, &[&art.train], &[&art.labelspace], || {
        let train = load_split(&art.train, "labelspace")?;
        let ls = labelspace::build_label_space(&train, &tokenizer, cfg.label_space_size, cfg.propensity_a, cfg.propensity_b)
            .map_err(at("labelspace"))?;
        ls.save(&art.labelspace).map_err(at("labelspace"))
    })?;

    // Featurization depends only on the corpus, so it is shared by every
    // label-space size.
    let fcfg = cfg.feature_config();
    let fparams = json!({ "features": fcfg, "layout": FEATURE_LAYOUT_VERSION });
    run.stage("featurize", fparams, &[&corpus_path], &[&art.embeddings], || {
        let c = load_split(&corpus_path, "featurize")?;
        let table = embed_corpus(&c, &fcfg).map_err(at("featurize"))?;
        table.save(&art.embeddings).map_err(at("featurize"))
    })?;

    let hp = cfg.hyper_params();
    let train_params = json!({ "hp": hp, "tokenizer": tok_digest, "format": MODEL_FORMAT_VERSION });
    run.stage("train", train_params, &[&art.train, &art.valid, &art.labelspace, &art.embeddings], &[&art.model], || {
        let ls = LabelSpace::load(&art.labelspace).map_err(at("train"))?;
        let table = EmbeddingTable::load(&art.embeddings, None).map_err(at("train"))?;
        let train = load_split(&art.train, "train")?;
        let gt = labelspace::project_ground_truth(&train, &ls, &tokenizer);
        let (x, y) = learner::align(&table, &gt).map_err(at("train"))?;
        let mut model = learner::train(&x, &y, &ls, &hp).map_err(at("train"))?;
        let valid = load_split(&art.valid, "train")?;
        let (vx, vy) = if valid.is_empty() {
            log::warn!("train: validation split is empty; calibrating the threshold on training data");
            (x, y)
        } else {
            learner::align(&table, &labelspace::project_ground_truth(&valid, &ls, &tokenizer)).map_err(at("train"))?
        };
        let c = model.calibrate(&vx, &vy).map_err(at("train"))?;
        log::info!("train: threshold {} (validation micro-F1 {:.4})", c.threshold, c.f1);
        model.save(&art.model).map_err(at("train"))
    })?;

    let ids_and_rankings = |stage: &str| -> Result<(Model, LabelSpace, Corpus, EmbeddingTable, Vec<String>, Vec<LabelRanking>), PipelineError> {
        let ls = LabelSpace::load(&art.labelspace).map_err(at(stage))?;
        let model = Model::load(&art.model, Some(&ls)).map_err(at(stage))?;
        let table = EmbeddingTable::load(&art.embeddings, None).map_err(at(stage))?;
        let test = load_split(&art.test, stage)?;
        let ids: Vec<String> = test.iter().map(|r| r.id()).collect();
        let x = ids
            .iter()
            .map(|id| table.get(id).map(<[f64]>::to_vec).ok_or_else(|| PipelineError::new(stage, format!("no embedding for {id}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let rankings = model.predict_many(&x).map_err(at(stage))?;
        Ok((model, ls, test, table, ids, rankings))
    };

    let topk = json!({ "topk": cfg.topk });
    run.stage("predict", topk, &[&art.model, &art.labelspace, &art.embeddings, &art.test], &[&art.rankings], || {
        let (_, ls, _, _, ids, rankings) = ids_and_rankings("predict")?;
        fs::write(&art.rankings, format_rankings(&ids, &rankings, &ls, cfg.topk)).map_err(at("predict"))
    })?;

    let eval_params = json!({ "k": cfg.k, "tokenizer": tok_digest });
    run.stage(
        "evaluate",
        eval_params,
        &[&art.model, &art.labelspace, &art.embeddings, &art.test, &art.train],
        &[&art.report, &art.report_json, &art.plot],
        || {
            let ls = LabelSpace::load(&art.labelspace).map_err(at("evaluate"))?;
            let model = Model::load(&art.model, Some(&ls)).map_err(at("evaluate"))?;
            let table = EmbeddingTable::load(&art.embeddings, None).map_err(at("evaluate"))?;
            let test = load_split(&art.test, "evaluate")?;
            let train = load_split(&art.train, "evaluate")?;
            let report =
                evaluate_model(&model, &ls, &table, &test, Some(&train), &tokenizer, cfg.k).map_err(at("evaluate"))?;
            let reports = [report];
            fs::write(&art.report, metrics::report_rows(&reports)).map_err(at("evaluate"))?;
            fs::write(&art.plot, metrics::plot_rows(&reports)).map_err(at("evaluate"))?;
            let text = serde_json::to_string_pretty(&reports[0]).expect("report serializes");
            fs::write(&art.report_json, text).map_err(at("evaluate"))
        },
    )?;

    let mut lm_inputs: Vec<&Path> = vec![&art.train];
    if let Some(p) = &cfg.lm_names {
        lm_inputs.push(p);
    }
    run.stage("lm", json!({ "tokenizer": tok_digest }), &lm_inputs, &[&art.lm], || {
        let train = load_split(&art.train, "lm")?;
        let mut names: Vec<String> = train.iter().map(|r| r.name.clone()).collect();
        if let Some(p) = &cfg.lm_names {
            let text = fs::read_to_string(p).map_err(|e| PipelineError::new("lm", format!("{}: {e}", p.display())))?;
            names.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
        }
        let sequences: Vec<Vec<String>> =
            names.iter().map(|n| tokenizer.ordered_tokens(n)).filter(|s| !s.is_empty()).collect();
        let lm = langmodel::train_lm(&sequences).map_err(at("lm"))?;
        lm.save(&art.lm).map_err(at("lm"))
    })?;

    let names_params = json!({ "convention": cfg.convention, "topk": cfg.topk, "cap": cfg.lm_step_cap });
    run.stage(
        "names",
        names_params,
        &[&art.model, &art.labelspace, &art.embeddings, &art.test, &art.lm],
        &[&art.names],
        || {
            let (model, ls, _, _, ids, rankings) = ids_and_rankings("names")?;
            let lm = TrigramLm::load(&art.lm).map_err(at("names"))?;
            let mut out = String::new();
            for (id, r) in ids.iter().zip(&rankings) {
                let predicted = learner::predict_set(r, model.threshold);
                let name = synthesize_name(&lm, &ls, &predicted, cfg.convention, cfg.lm_step_cap).map_err(at("names"))?;
                let _ = write!(out, "{id}\t{name}");
                for &(l, s) in r.top(cfg.topk) {
                    let _ = write!(out, "\t{}:{s}", ls.label(l));
                }
                out.push('\n');
            }
            fs::write(&art.names, out).map_err(at("names"))
        },
    )?;

    Ok(PipelineOutcome { artifacts: art, stages: run.stages })
}

/// Tool version, model and feature format versions, and optionally the
/// config digest and the format version recorded in a model file.
pub fn version_info(config: Option<&PipelineConfig>, model: Option<&Path>) -> Result<String, PipelineError> {
    let mut out = format!(
        "binlabel {}\nmodel format {MODEL_FORMAT_VERSION}\nfeature layout {FEATURE_LAYOUT_VERSION}\nlm format {}\n",
        crate::VERSION,
        langmodel::LM_FORMAT_VERSION
    );
    if let Some(cfg) = config {
        let _ = writeln!(out, "config digest {}", cfg.digest());
    }
    if let Some(path) = model {
        let bytes = fs::read(path).map_err(|e| PipelineError::new("version", format!("{}: {e}", path.display())))?;
        let v = read_header(&bytes).map_err(at("version"))?;
        let _ = writeln!(out, "model file {} format {v}", path.display());
    }
    Ok(out)
}
