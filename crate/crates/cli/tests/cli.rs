use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn binlabel(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binlabel")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn tokenize_prints_one_token_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = binlabel(&["tokenize", "make_smooth_colormap"], dir.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o), "color\nmake\nmap\nsmooth\n");
}

#[test]
fn version_and_corrupt_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = binlabel(&["version"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).starts_with(&format!("binlabel {}\n", env!("CARGO_PKG_VERSION"))));
    fs::write(dir.path().join("bad.bin"), b"BLXMODEX\x01\0\0\0").unwrap();
    let o = binlabel(&["version", "--model", "bad.bin"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unrecognized format"), "{}", stderr(&o));
}

#[test]
fn invalid_corpus_is_rejected_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.jsonl"),
        "{\"binary_id\":\"b\",\"name\":\"f\",\"vaddr\":0,\"size\":4}\n{\"binary_id\":\"b\",\"name\":\"g\",\"vaddr\":8,\"size\":0}\n",
    )
    .unwrap();
    let o = binlabel(&["corpus", "validate", "c.jsonl"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn split_writes_three_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus200.jsonl");
    let args = ["--seed", "4", "corpus", "split", corpus.to_str().unwrap(), "--ratios", "0.8,0.1,0.1", "--by-binary", "--out-dir", "p"];
    let o = binlabel(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let total: usize = ["train", "valid", "test"]
        .iter()
        .map(|s| fs::read_to_string(dir.path().join(format!("p/{s}.jsonl"))).unwrap().lines().count())
        .sum();
    assert_eq!(total, 200);
}

#[test]
fn stage_by_stage_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = fixture("corpus200.jsonl");
    let corpus = corpus.to_str().unwrap();
    let run = |args: &[&str]| {
        let o = binlabel(args, d);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        stdout(&o)
    };
    run(&["-q", "labelspace", "build", "--corpus", corpus, "--n", "32", "--out", "ls.json"]);
    run(&["-q", "featurize", corpus, "--E", "32", "--D", "4096", "--out", "emb.tsv"]);
    run(&["-q", "train", "--corpus", corpus, "--labelspace", "ls.json", "--embeddings", "emb.tsv", "--hp", "trees=3,max_leaf=4", "--out", "m.bin"]);
    let ranks = run(&["predict", "--model", "m.bin", "--labelspace", "ls.json", "--embeddings", "emb.tsv", "--topk", "3"]);
    assert_eq!(ranks.lines().count(), 200);
    for line in ranks.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 4, "{line}");
        let scores: Vec<f64> = fields[1..].iter().map(|f| f.rsplit_once(':').unwrap().1.parse().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{line}");
    }
    let report = run(&[
        "evaluate", "--model", "m.bin", "--labelspace", "ls.json", "--embeddings", "emb.tsv", "--test", corpus,
        "--emit-plot-data", "plot.tsv",
    ]);
    assert!(report.starts_with("metric\tlabel_space_size\tvalue\n"));
    assert!(report.contains("ndcg@5\t32\t"));
    assert_eq!(fs::read_to_string(d.join("plot.tsv")).unwrap().lines().count(), 6);

    // A label space other than the one the model was trained on is refused.
    run(&["-q", "labelspace", "build", "--corpus", corpus, "--n", "16", "--out", "other.json"]);
    let o = binlabel(&["predict", "--model", "m.bin", "--labelspace", "other.json", "--embeddings", "emb.tsv"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("different label space"));
}

#[test]
fn lm_train_and_order() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("names.txt"), "mcx_realloc\nmcx_alloc\nmcx_free\nget_value\nset_value\n").unwrap();
    let o = binlabel(&["-q", "lm", "train", "names.txt", "--out", "lm.bin"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = binlabel(&["lm", "order", "--model", "lm.bin", "--labels", "realloc,mcx"], dir.path());
    assert!(stdout(&o).starts_with("mcx_realloc\t"));
    let o = binlabel(&["lm", "order", "--model", "lm.bin", "--labels", "value,get", "--convention", "camel"], dir.path());
    assert!(stdout(&o).starts_with("getValue\t"));
}

fn write_config(dir: &Path, corpus: Option<&Path>) -> PathBuf {
    let mut text = String::new();
    if let Some(c) = corpus {
        text += &format!("corpus = {:?}\n", c.to_str().unwrap());
    }
    text += "out_dir = \"out\"\nlabel_space_size = 64\n[split]\nratios = [0.8, 0.1, 0.1]\n[features]\nembed_width = 64\n[hp]\ntrees = 4\nmax_leaf = 4\n";
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn pipeline_runs_then_skips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), Some(&fixture("corpus200.jsonl")));
    let args = ["--config", cfg.to_str().unwrap(), "--seed", "5", "pipeline"];
    let first = binlabel(&args, dir.path());
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("train\tRan"));
    let names = fs::read_to_string(dir.path().join("out/names.tsv")).unwrap();
    assert_eq!(names.lines().count(), 20);
    let second = binlabel(&args, dir.path());
    assert!(second.status.success());
    assert!(!stdout(&second).contains("Ran"), "{}", stdout(&second));
    // A different seed invalidates the seeded stages.
    let third = binlabel(&["--config", cfg.to_str().unwrap(), "--seed", "6", "pipeline"], dir.path());
    assert!(stdout(&third).contains("split\tRan"));
}

#[test]
fn pipeline_without_corpus_fails_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), None);
    let o = binlabel(&["--config", cfg.to_str().unwrap(), "pipeline"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error: split: no corpus path configured"), "{}", stderr(&o));
}
