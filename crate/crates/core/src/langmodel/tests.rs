use super::*;
use std::collections::HashMap;

fn seqs(names: &[&str]) -> Vec<Vec<String>> {
    names.iter().map(|n| n.split('_').map(String::from).collect()).collect()
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

/// Exhaustive argmax of `score` with lexicographic tie-breaking.
fn brute_force(lm: &TrigramLm, labels: &[String]) -> (Vec<String>, f64) {
    let mut best: Option<(Vec<String>, f64)> = None;
    for p in permutations(labels) {
        let s = lm.score(&p).unwrap();
        let better = match &best {
            None => true,
            Some((bp, bs)) => s > *bs || (s == *bs && p < *bp),
        };
        if better {
            best = Some((p, s));
        }
    }
    best.unwrap()
}

fn corpus() -> Vec<Vec<String>> {
    seqs(&[
        "mcx_realloc",
        "mcx_alloc",
        "mcx_free",
        "mcx_log_set_file",
        "mcx_io_err",
        "get_item",
        "set_item",
        "set_item_value",
        "make_color_map",
        "make_random_color_map",
        "color_map_free",
        "is_window_open",
        "open_window",
        "check_range",
        "audio_range_check",
        "get_audio_range",
    ])
}

#[test]
fn direct_evidence_dominates() {
    let lm = train_lm(&vec![vec!["a", "b"]; 5]).unwrap();
    assert!(lm.score(&["a", "b"]).unwrap() > lm.score(&["b", "a"]).unwrap());
}

#[test]
fn needs_two_distinct_tokens() {
    assert!(matches!(train_lm(&[vec!["a", "a"]]), Err(LmError::TooFewTokens(1))));
    assert!(matches!(train_lm::<&str>(&[]), Err(LmError::TooFewTokens(0))));
}

#[test]
fn conditionals_are_normalised() {
    let lm = train_lm(&corpus()).unwrap();
    let tokens: Vec<String> = lm.vocab[1..].to_vec();
    let mut contexts: Vec<(u32, u32)> = lm.trigram_contexts.keys().copied().collect();
    // Unseen contexts back off and must still normalise.
    contexts.push((lm.id("window"), lm.id("mcx")));
    contexts.push((UNK_ID, UNK_ID));
    for (u, v) in contexts {
        let total: f64 = tokens.iter().map(|w| lm.p_trigram(u, v, lm.id(w))).sum();
        assert!((total - 1.0).abs() < 1e-9, "context ({u}, {v}) sums to {total}");
    }
    for v in 0..lm.vocab.len() as u32 {
        let total: f64 = tokens.iter().map(|w| lm.p_bigram(v, lm.id(w))).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
    assert!(tokens.iter().all(|w| lm.prob("mcx", "free", w) > 0.0));
}

/// Count-of-counts taken straight from the padded sequences.
fn literal_discounts(sequences: &[Vec<String>]) -> [Discounts; 3] {
    let mut tri: HashMap<Vec<String>, u64> = HashMap::new();
    for s in sequences {
        let mut padded = vec!["<s>".to_string(), "<s>".to_string()];
        padded.extend(s.iter().cloned());
        padded.push("</s>".to_string());
        for w in padded.windows(3) {
            *tri.entry(w.to_vec()).or_default() += 1;
        }
    }
    let mut bi: HashMap<Vec<String>, u64> = HashMap::new();
    for k in tri.keys() {
        *bi.entry(k[1..].to_vec()).or_default() += 1;
    }
    let mut uni: HashMap<String, u64> = HashMap::new();
    for k in bi.keys() {
        *uni.entry(k[1].clone()).or_default() += 1;
    }
    let coc = |counts: Vec<u64>| -> [u64; 4] {
        let mut n = [0; 4];
        for c in counts {
            if (1..=4).contains(&c) {
                n[c as usize - 1] += 1;
            }
        }
        n
    };
    let formula = |n: [u64; 4]| {
        let [n1, n2, n3, n4] = n.map(|v| v as f64);
        let y = n1 / (n1 + 2.0 * n2);
        Discounts { d1: 1.0 - 2.0 * y * n2 / n1, d2: 2.0 - 3.0 * y * n3 / n2, d3plus: 3.0 - 4.0 * y * n4 / n3 }
    };
    [
        formula(coc(uni.into_values().collect())),
        formula(coc(bi.into_values().collect())),
        formula(coc(tri.into_values().collect())),
    ]
}

#[test]
fn discounts_match_literal_formulas() {
    let fixture = seqs(&[
        "get_value",
        "get_value",
        "get_value",
        "get_value",
        "get_name",
        "get_name",
        "get_name",
        "set_value",
        "set_value",
        "set_name",
    ]);
    let lm = train_lm(&fixture).unwrap();
    let expected = literal_discounts(&fixture);
    for order in 0..3 {
        let (a, b) = (lm.discounts[order], expected[order]);
        for (x, y, k) in [(a.d1, b.d1, 1.0), (a.d2, b.d2, 2.0), (a.d3plus, b.d3plus, 3.0)] {
            if y.is_finite() && (0.0..=k).contains(&y) {
                assert!((x - y).abs() < 1e-12, "order {} discount {x} vs {y}", order + 1);
            }
        }
    }
    // The trigram order of this fixture has n1..n4 all positive, so every
    // trigram discount is the unclamped formula value.
    let t = expected[2];
    assert!(t.d1.is_finite() && t.d2.is_finite() && t.d3plus.is_finite());
}

#[test]
fn score_matches_hand_interpolation() {
    // One sequence "a b": trigrams (<s> <s> a), (<s> a b), (a b </s>), each once.
    let lm = train_lm(&[vec!["a", "b"]]).unwrap();
    // Every count of every order is 1, so n2 = 0, Y = 1 and D1 = 1: all
    // observed mass is discounted away and the model is uniform over the
    // four predictable tokens {</s>, <unk>, a, b}.
    for d in lm.discounts {
        assert_eq!(d.d1, 1.0);
    }
    let expected = 3.0 * (0.25f64).ln();
    assert!((lm.score(&["a", "b"]).unwrap() - expected).abs() < 1e-9);

    // Two copies of "a b" and one "b a": hand-rolled interpolation.
    let lm = train_lm(&[vec!["a", "b"], vec!["a", "b"], vec!["b", "a"]]).unwrap();
    let d = lm.discounts;
    // Unigram continuation counts N1+(. w): a <- {<s>, b}, b <- {a, <s>}, </s> <- {b, a}.
    let v = 4.0;
    let uni_total = 6.0;
    let uni_mass = d[0].d2 * 3.0; // three tokens with count 2
    let p1 = |c: f64| (c - d[0].d2).max(0.0) / uni_total + uni_mass / uni_total / v;
    let p_uni_a = p1(2.0);
    // Bigram continuations N1+(. v w): (<s> a) <- {<s>}, (a b) <- {<s>},
    // (b </s>) <- {a}, (<s> b) <- {<s>}, (b a) <- {<s>}, (a </s>) <- {b}.
    // Context <s>: {a: 1, b: 1}, total 2, n1 = 2.
    let p2_s_a = (1.0 - d[1].d1) / 2.0 + d[1].d1 * 2.0 / 2.0 * p_uni_a;
    // Trigram context (<s> <s>): a twice, b once; total 3.
    let p3 = (2.0 - d[2].d2) / 3.0 + (d[2].d1 + d[2].d2) / 3.0 * p2_s_a;
    assert!((lm.prob("<s>", "<s>", "a") - p3).abs() < 1e-12);
}

#[test]
fn scores_are_finite_and_prefixes_decrease() {
    let lm = train_lm(&corpus()).unwrap();
    let labels: Vec<String> = ["color", "map", "make", "random"].map(String::from).to_vec();
    for p in permutations(&labels) {
        assert!(lm.score(&p).unwrap().is_finite());
        for len in 1..p.len() {
            assert!(lm.score_prefix(&p[..len + 1]).unwrap() < lm.score_prefix(&p[..len]).unwrap());
        }
    }
    assert!(lm.score(&["never", "seen"]).unwrap().is_finite());
    assert!(matches!(lm.score::<&str>(&[]), Err(LmError::EmptySequence)));
}

#[test]
fn orders_realloc_example() {
    let lm = train_lm(&corpus()).unwrap();
    let r = order_labels(&lm, &["realloc", "mcx"], DEFAULT_STEP_CAP).unwrap();
    assert_eq!(r.sequence, ["mcx", "realloc"]);
    assert!(r.optimal);
    assert_eq!(render_name(&r.sequence, Convention::Snake), "mcx_realloc");
}

#[test]
fn singleton_and_guard() {
    let lm = train_lm(&corpus()).unwrap();
    let r = order_labels(&lm, &["x"], DEFAULT_STEP_CAP).unwrap();
    assert_eq!((r.sequence, r.optimal), (vec!["x".to_string()], true));
    assert!(matches!(order_labels::<&str>(&lm, &[], 10), Err(LmError::LabelCount(0))));
    let many: Vec<String> = (0..33).map(|i| format!("t{i}")).collect();
    assert!(matches!(order_labels(&lm, &many, 10), Err(LmError::LabelCount(33))));
}

#[test]
fn branch_and_bound_matches_exhaustive_search() {
    let lm = train_lm(&corpus()).unwrap();
    let pool: Vec<String> = lm.words().map(String::from).collect();
    let mut state = 12345u64;
    for _ in 0..60 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let size = 1 + (state >> 33) as usize % 6;
        let mut labels: Vec<String> = Vec::new();
        while labels.len() < size {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let w = &pool[(state >> 33) as usize % pool.len()];
            if !labels.contains(w) {
                labels.push(w.clone());
            }
        }
        let r = order_labels(&lm, &labels, u64::MAX).unwrap();
        let mut sorted = labels.clone();
        sorted.sort();
        let (best, score) = brute_force(&lm, &sorted);
        assert_eq!(r.sequence, best, "labels {labels:?}");
        assert_eq!(r.log_score, score);
        assert!(r.optimal);
    }
}

#[test]
fn step_cap_returns_best_so_far() {
    let lm = train_lm(&corpus()).unwrap();
    let labels: Vec<String> = lm.words().take(9).map(String::from).collect();
    assert_eq!(labels.len(), 9);
    let full = order_labels(&lm, &labels, u64::MAX).unwrap();
    assert!(full.optimal && full.steps > 50);
    let r = order_labels(&lm, &labels, 50).unwrap();
    assert!(r.log_score <= full.log_score);
    assert!(!r.optimal);
    assert_eq!(r.steps, 50);
    let mut got = r.sequence.clone();
    got.sort();
    let mut want = labels.clone();
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn rendering_conventions() {
    assert_eq!(render_name(&["make", "random", "color", "map"], Convention::Snake), "make_random_color_map");
    assert_eq!(render_name(&["is", "window", "open"], Convention::Camel), "isWindowOpen");
    assert_eq!("camel".parse::<Convention>().unwrap(), Convention::Camel);
    assert!("kebab".parse::<Convention>().is_err());
}

#[test]
fn save_load_round_trip() {
    let lm = train_lm(&corpus()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.bin");
    lm.save(&path).unwrap();
    let back = TrigramLm::load(&path).unwrap();
    assert_eq!(back, lm);
    assert_eq!(back.score(&["mcx", "free"]).unwrap(), lm.score(&["mcx", "free"]).unwrap());
    std::fs::write(&path, b"garbage").unwrap();
    assert!(TrigramLm::load(&path).unwrap_err().to_string().contains("unrecognized format"));
}
