use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use binlabel::corpus::{self, Grouping, SplitSpec};
use binlabel::featurizer::{embed_corpus, EmbeddingTable, FeatureConfig};
use binlabel::labelspace::{self, default_param_grid, fit_propensity_params, LabelSpace, DEFAULT_A, DEFAULT_B};
use binlabel::langmodel::{self, order_labels, render_name, Convention, TrigramLm, DEFAULT_STEP_CAP};
use binlabel::learner::{self, HyperParams, Model};
use binlabel::metrics;
use binlabel::pipeline::{self, stage_seed, PipelineConfig};
use binlabel::tokenizer::{Tokenizer, TokenizerConfig};
use clap::{Args, Parser, Subcommand};

/// Function-name label prediction for binaries.
#[derive(Parser)]
#[command(name = "binlabel", version)]
struct Cli {
    /// Run seed; every randomized stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate or split a corpus file.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Print the canonical token set of a function name, one token per line.
    Tokenize {
        name: String,
        #[command(flatten)]
        tok: TokenizerArg,
    },
    /// Build a label space.
    #[command(subcommand)]
    Labelspace(LabelspaceCmd),
    /// Compute an embedding for every function of a corpus.
    Featurize {
        corpus: PathBuf,
        /// Embedding width.
        #[arg(long = "E", default_value_t = FeatureConfig::default().embed_width)]
        embed_width: usize,
        /// Categorical hash width (power of two).
        #[arg(long = "D", default_value_t = FeatureConfig::default().hash_width)]
        hash_width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and calibrate its threshold.
    Train(TrainArgs),
    /// Write top-k label rankings for every function with an embedding.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labelspace: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Only predict functions of this corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model on a test corpus.
    Evaluate(EvaluateArgs),
    /// Train or query the name language model.
    #[command(subcommand)]
    Lm(LmCmd),
    /// Run every stage from the config, skipping up-to-date ones.
    Pipeline {
        /// Override the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print tool and format versions.
    Version {
        /// Also report the format version stored in this model file.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TokenizerArg {
    /// Tokenizer config (TOML); the bundled one by default.
    #[arg(long = "tokenizer")]
    tokenizer: Option<PathBuf>,
}

impl TokenizerArg {
    fn load(&self) -> Result<Tokenizer> {
        let cfg = match &self.tokenizer {
            Some(p) => TokenizerConfig::from_file(p)?,
            None => TokenizerConfig::bundled(),
        };
        Ok(Tokenizer::new(cfg)?)
    }
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Check every record and report problems.
    Validate { path: PathBuf },
    /// Write train/valid/test partitions.
    Split {
        path: PathBuf,
        #[arg(long, default_value = "0.9,0.05,0.05")]
        ratios: String,
        /// Never split a binary across partitions.
        #[arg(long)]
        by_binary: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum LabelspaceCmd {
    Build {
        /// Training corpus.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long = "A", default_value_t = DEFAULT_A)]
        a: f64,
        #[arg(long = "B", default_value_t = DEFAULT_B)]
        b: f64,
        /// Fit A and B by grid search instead of using the given values.
        #[arg(long)]
        fit: bool,
        #[command(flatten)]
        tok: TokenizerArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (for ground-truth names).
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus for threshold calibration; the training corpus when absent.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    labelspace: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Hyper-parameter overrides, e.g. `trees=10,max_leaf=4`.
    #[arg(long, default_value = "")]
    hp: String,
    #[command(flatten)]
    tok: TokenizerArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model file; repeat together with --labelspace to compare label spaces.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    #[arg(long, required = true)]
    labelspace: Vec<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Training corpus; enables the unseen-name slice.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = metrics::DEFAULT_K)]
    k: usize,
    /// Write per-k curves for plotting to this file.
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
    #[command(flatten)]
    tok: TokenizerArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LmCmd {
    /// Train on a file of function names, one per line.
    Train {
        names: PathBuf,
        #[command(flatten)]
        tok: TokenizerArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Order a label set into a name.
    Order {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated labels.
        #[arg(long)]
        labels: String,
        #[arg(long, default_value = "snake")]
        convention: Convention,
        #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
        step_cap: u64,
    },
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>()
        .with_context(|| format!("ratios {s:?} are not numbers"))?;
    match parts[..] {
        [a, b, c] => Ok([a, b, c]),
        _ => bail!("expected three ratios, got {s:?}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref().map(PipelineConfig::load).transpose()?;
    let seed = cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
    match cli.command {
        Command::Corpus(CorpusCmd::Validate { path }) => {
            let (c, report) = corpus::load_corpus_with_report(&path)?;
            for w in &report.warnings {
                println!("warning: {w}");
            }
            println!(
                "{}: {} records in {} binaries, {} warnings, {} overlapping dropped",
                path.display(),
                c.len(),
                c.binaries().count(),
                report.warnings.len(),
                report.dropped_overlapping
            );
        }
        Command::Corpus(CorpusCmd::Split { path, ratios, by_binary, out_dir }) => {
            let c = corpus::load_corpus(&path)?;
            let grouping = if by_binary { Grouping::ByBinary } else { Grouping::ByFunction };
            let spec = SplitSpec { ratios: parse_ratios(&ratios)?, grouping, seed: stage_seed(seed, "split") };
            let parts = corpus::split(&c, &spec)?;
            fs::create_dir_all(&out_dir)?;
            for (name, part) in [("train", &parts.train), ("valid", &parts.valid), ("test", &parts.test)] {
                corpus::save_corpus(part, out_dir.join(format!("{name}.jsonl")))?;
                println!("{name}\t{}", part.len());
            }
        }
        Command::Tokenize { name, tok } => {
            for t in tok.load()?.canonical_tokens(&name).iter() {
                println!("{t}");
            }
        }
        Command::Labelspace(LabelspaceCmd::Build { corpus: path, n, a, b, fit, tok, out }) => {
            let c = corpus::load_corpus(&path)?;
            let mut ls = labelspace::build_label_space(&c, &tok.load()?, n, a, b)?;
            if fit {
                let (ag, bg) = default_param_grid();
                let f = fit_propensity_params(&ls, &ag, &bg).context("label space is empty")?;
                log::info!("fitted A = {}, B = {} (squared error {})", f.a, f.b, f.squared_error);
                ls = ls.with_params(f.a, f.b);
            }
            ls.save(&out)?;
            let (a, b, c) = ls.params();
            println!("{} labels, A = {a}, B = {b}, C = {c}", ls.len());
        }
        Command::Featurize { corpus: path, embed_width, hash_width, out } => {
            let c = corpus::load_corpus(&path)?;
            let base = config.as_ref().map(|c| c.features.clone()).unwrap_or_default();
            let cfg = FeatureConfig { embed_width, hash_width, seed: stage_seed(seed, "featurize"), ..base };
            let table = embed_corpus(&c, &cfg)?;
            table.save(&out)?;
            println!("{} embeddings of width {}", table.len(), table.width);
        }
        Command::Train(args) => {
            let tokenizer = args.tok.load()?;
            let ls = LabelSpace::load(&args.labelspace)?;
            let table = EmbeddingTable::load(&args.embeddings, None)?;
            let mut hp = config.as_ref().map(|c| c.hp.clone()).unwrap_or_else(HyperParams::default);
            hp.seed = stage_seed(seed, "train");
            hp.apply_overrides(&args.hp)?;
            let train = corpus::load_corpus(&args.corpus)?;
            let (x, y) = learner::align(&table, &labelspace::project_ground_truth(&train, &ls, &tokenizer))?;
            let mut model = learner::train(&x, &y, &ls, &hp)?;
            let cal = match &args.valid {
                Some(p) => {
                    let valid = corpus::load_corpus(p)?;
                    let (vx, vy) = learner::align(&table, &labelspace::project_ground_truth(&valid, &ls, &tokenizer))?;
                    model.calibrate(&vx, &vy)?
                }
                None => model.calibrate(&x, &y)?,
            };
            model.save(&args.out)?;
            println!("{} trees, {} rare-label scorers, threshold {} (micro-F1 {:.4})", model.trees.len(), model.rare.len(), cal.threshold, cal.f1);
        }
        Command::Predict { model, labelspace, embeddings, corpus: only, topk, out } => {
            let ls = LabelSpace::load(&labelspace)?;
            let model = Model::load(&model, Some(&ls))?;
            let table = EmbeddingTable::load(&embeddings, None)?;
            let ids: Vec<String> = match only {
                Some(p) => corpus::load_corpus(&p)?.iter().map(|r| r.id()).collect(),
                None => table.rows.keys().cloned().collect(),
            };
            let x = ids
                .iter()
                .map(|id| table.get(id).map(<[f64]>::to_vec).with_context(|| format!("no embedding for {id}")))
                .collect::<Result<Vec<_>>>()?;
            let rankings = model.predict_many(&x)?;
            write_output(out.as_deref(), &pipeline::format_rankings(&ids, &rankings, &ls, topk))?;
        }
        Command::Evaluate(args) => {
            if args.model.len() != args.labelspace.len() {
                bail!("give one --labelspace per --model ({} models, {} label spaces)", args.model.len(), args.labelspace.len());
            }
            let tokenizer = args.tok.load()?;
            let table = EmbeddingTable::load(&args.embeddings, None)?;
            let test = corpus::load_corpus(&args.test)?;
            let train = args.train.as_ref().map(corpus::load_corpus).transpose()?;
            let mut reports = Vec::new();
            for (m, l) in args.model.iter().zip(&args.labelspace) {
                let ls = LabelSpace::load(l)?;
                let model = Model::load(m, Some(&ls))?;
                let r = pipeline::evaluate_model(&model, &ls, &table, &test, train.as_ref(), &tokenizer, args.k)?;
                if r.unseen_is_empty() {
                    log::warn!("unseen-name slice for label space {} is empty", r.label_space_size);
                }
                reports.push(r);
            }
            if let Some(p) = &args.emit_plot_data {
                fs::write(p, metrics::plot_rows(&reports)).with_context(|| format!("writing {}", p.display()))?;
            }
            write_output(args.out.as_deref(), &metrics::report_rows(&reports))?;
        }
        Command::Lm(LmCmd::Train { names, tok, out }) => {
            let tokenizer = tok.load()?;
            let text = fs::read_to_string(&names).with_context(|| format!("reading {}", names.display()))?;
            let sequences: Vec<Vec<String>> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|n| tokenizer.ordered_tokens(n))
                .filter(|s| !s.is_empty())
                .collect();
            let lm = langmodel::train_lm(&sequences)?;
            lm.save(&out)?;
            println!("{} sequences, {} words", sequences.len(), lm.words().count());
        }
        Command::Lm(LmCmd::Order { model, labels, convention, step_cap }) => {
            let lm = TrigramLm::load(&model)?;
            let labels: Vec<&str> = labels.split(',').map(str::trim).filter(|l| !l.is_empty()).collect();
            let r = order_labels(&lm, &labels, step_cap)?;
            if !r.optimal {
                log::warn!("step cap reached after {} steps; order may not be optimal", r.steps);
            }
            println!("{}\t{}", render_name(&r.sequence, convention), r.log_score);
        }
        Command::Pipeline { out_dir } => {
            let mut cfg = config.context("pipeline: no --config given")?;
            cfg.seed = seed;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let outcome = pipeline::run_pipeline(&cfg)?;
            for (stage, status) in &outcome.stages {
                println!("{stage}\t{status:?}");
            }
            println!("names written to {}", outcome.artifacts.names.display());
        }
        Command::Version { model } => {
            print!("{}", pipeline::version_info(config.as_ref(), model.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
