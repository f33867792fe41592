//! Ranking and multi-label metrics, and the evaluation report built on them.
//!
//! Relevance is binary throughout. Rank metrics are averaged over points
//! with a non-empty ground truth; micro-averaged precision/recall/F1 count
//! every point, so predictions for unlabeled points are false positives.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::labelspace::{GroundTruth, LabelSpace, LabelSpaceError};

pub const DEFAULT_K: usize = 5;

/// Binary relevance of a ranked list against `n` true labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelevanceVector {
    pub rel: Vec<bool>,
    pub n: usize,
}

impl RelevanceVector {
    pub fn new(rel: Vec<bool>, n: usize) -> RelevanceVector {
        debug_assert!(rel.iter().filter(|&&r| r).count() <= n);
        RelevanceVector { rel, n }
    }

    /// Relevance of the first `k` entries of `ranked` against `truth`.
    pub fn from_ranking(ranked: &[u32], truth: &[u32], k: usize) -> RelevanceVector {
        let truth: HashSet<u32> = truth.iter().copied().collect();
        let rel = ranked.iter().take(k).map(|l| truth.contains(l)).collect();
        RelevanceVector { rel, n: truth.len() }
    }
}

fn discount(position: usize) -> f64 {
    // position is 0-based; rank i = position + 1 is discounted by log2(i + 1)
    1.0 / ((position + 2) as f64).log2()
}

pub fn cg_at_k(rel: &RelevanceVector, k: usize) -> f64 {
    rel.rel.iter().take(k).filter(|&&r| r).count() as f64
}

pub fn dcg_at_k(rel: &RelevanceVector, k: usize) -> f64 {
    rel.rel.iter().take(k).enumerate().filter(|(_, &r)| r).map(|(i, _)| discount(i)).sum()
}

/// Best achievable DCG@k for `n` relevant labels.
pub fn ideal_dcg(n: usize, k: usize) -> f64 {
    (0..n.min(k)).map(discount).sum()
}

/// nDCG@k; zero when the point has no true labels.
pub fn ndcg_at_k(rel: &RelevanceVector, k: usize) -> f64 {
    if rel.n == 0 {
        return 0.0;
    }
    dcg_at_k(rel, k) / ideal_dcg(rel.n, k)
}

/// Propensity-scored DCG@k: each hit is up-weighted by `1 / p` of the
/// label at that rank.
pub fn psdcg_at_k(
    rel: &RelevanceVector,
    ranked: &[u32],
    ls: &LabelSpace,
    k: usize,
) -> Result<f64, LabelSpaceError> {
    let mut total = 0.0;
    for (i, (&r, &label)) in rel.rel.iter().zip(ranked).take(k).enumerate() {
        if r {
            total += discount(i) / ls.propensity(label as usize)?;
        }
    }
    Ok(total)
}

/// Per-label true/false positive and false negative counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MicroCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl MicroCounts {
    pub fn new(labels: usize) -> MicroCounts {
        MicroCounts { tp: vec![0; labels], fp: vec![0; labels], fn_: vec![0; labels] }
    }

    /// Adds one point's predicted set against its true set.
    pub fn add(&mut self, predicted: &[u32], truth: &[u32]) {
        let p: HashSet<u32> = predicted.iter().copied().collect();
        let t: HashSet<u32> = truth.iter().copied().collect();
        for &l in &p {
            if t.contains(&l) {
                self.tp[l as usize] += 1;
            } else {
                self.fp[l as usize] += 1;
            }
        }
        for &l in t.difference(&p) {
            self.fn_[l as usize] += 1;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Micro-averaged precision, recall and F1; `0/0` is taken as 0.
pub fn micro_prf(counts: &MicroCounts) -> Prf {
    let tp: u64 = counts.tp.iter().sum();
    let fp: u64 = counts.fp.iter().sum();
    let fn_: u64 = counts.fn_.iter().sum();
    prf_from_totals(tp, fp, fn_)
}

pub fn prf_from_totals(tp: u64, fp: u64, fn_: u64) -> Prf {
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Prf { precision, recall, f1 }
}

/// What a model (or a baseline tool) produced for one point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointPrediction {
    /// Label ids in rank order. May be shorter than the label space.
    pub ranking: Vec<u32>,
    /// Thresholded label set.
    pub predicted: Vec<u32>,
}

/// Label ids ordered by descending training frequency (ties by id), used
/// to pad rankings shorter than `k`.
pub fn frequency_order(ls: &LabelSpace) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..ls.len() as u32).collect();
    ids.sort_by(|&a, &b| ls.count(b).cmp(&ls.count(a)).then(a.cmp(&b)));
    ids
}

/// Extends `ranking` to at least `k` entries from `padding`, skipping
/// labels already present.
pub fn pad_ranking(ranking: &[u32], padding: &[u32], k: usize) -> Vec<u32> {
    let mut out = ranking.to_vec();
    if out.len() >= k {
        return out;
    }
    let mut seen: HashSet<u32> = out.iter().copied().collect();
    for &l in padding {
        if out.len() >= k {
            break;
        }
        if seen.insert(l) {
            out.push(l);
        }
    }
    out
}

/// Aggregate metrics over one set of points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub points: usize,
    /// Points with a non-empty ground truth (the rank-metric denominator).
    pub ranked_points: usize,
    pub cg: f64,
    pub dcg: f64,
    pub ndcg: f64,
    pub psdcg: f64,
    pub prf: Prf,
}

/// Scores `preds` against `truth`. Rankings shorter than `k` are padded
/// with the label space's frequency order.
pub fn summarize(preds: &[PointPrediction], truth: &[Vec<u32>], ls: &LabelSpace, k: usize) -> EvalSummary {
    assert_eq!(preds.len(), truth.len(), "one prediction per ground-truth entry");
    let padding = frequency_order(ls);
    let mut counts = MicroCounts::new(ls.len());
    let mut s = EvalSummary { points: preds.len(), ..Default::default() };
    for (p, t) in preds.iter().zip(truth) {
        counts.add(&p.predicted, t);
        if t.is_empty() {
            continue;
        }
        let ranking = pad_ranking(&p.ranking, &padding, k);
        let rel = RelevanceVector::from_ranking(&ranking, t, k);
        s.ranked_points += 1;
        s.cg += cg_at_k(&rel, k);
        s.dcg += dcg_at_k(&rel, k);
        s.ndcg += ndcg_at_k(&rel, k);
        s.psdcg += psdcg_at_k(&rel, &ranking, ls, k).expect("ranked ids come from the label space");
    }
    if s.ranked_points > 0 {
        let n = s.ranked_points as f64;
        s.cg /= n;
        s.dcg /= n;
        s.ndcg /= n;
        s.psdcg /= n;
    }
    s.prf = micro_prf(&counts);
    s
}

/// Evaluation of one model on one label space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpaceReport {
    pub label_space_size: usize,
    pub k: usize,
    pub threshold: f64,
    pub overall: EvalSummary,
    /// Restricted to names whose token set never occurs in training.
    /// `None` when no slice was requested; an empty summary when the slice
    /// has no points.
    pub unseen: Option<EvalSummary>,
    /// Per-k nDCG/DCG/CG curves (k = 1..=k) for plotting.
    pub curves: Vec<(usize, EvalSummary)>,
}

impl LabelSpaceReport {
    pub fn unseen_is_empty(&self) -> bool {
        self.unseen.as_ref().is_some_and(|u| u.points == 0)
    }
}

/// Evaluates a model's predictions. `unseen_mask`, when given, marks the
/// points belonging to the unseen-name slice.
pub fn evaluate_predictions(
    preds: &[PointPrediction],
    truth: &GroundTruth,
    ls: &LabelSpace,
    k: usize,
    threshold: f64,
    unseen_mask: Option<&[bool]>,
) -> LabelSpaceReport {
    let overall = summarize(preds, &truth.labels, ls, k);
    let unseen = unseen_mask.map(|mask| {
        let (p, t): (Vec<PointPrediction>, Vec<Vec<u32>>) = preds
            .iter()
            .zip(&truth.labels)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((p, t), _)| (p.clone(), t.clone()))
            .unzip();
        if p.is_empty() {
            log::warn!("unseen-name slice is empty: every test name also occurs in training");
        }
        summarize(&p, &t, ls, k)
    });
    let curves = (1..=k).map(|kk| (kk, summarize(preds, &truth.labels, ls, kk))).collect();
    LabelSpaceReport { label_space_size: ls.len(), k, threshold, overall, unseen, curves }
}

/// Renders reports as `metric<TAB>label_space_size<TAB>value` rows.
pub fn report_rows(reports: &[LabelSpaceReport]) -> String {
    let mut out = String::from("metric\tlabel_space_size\tvalue\n");
    for r in reports {
        let n = r.label_space_size;
        let mut emit = |prefix: &str, s: &EvalSummary| {
            let k = r.k;
            for (name, v) in [
                (format!("{prefix}cg@{k}"), s.cg),
                (format!("{prefix}dcg@{k}"), s.dcg),
                (format!("{prefix}ndcg@{k}"), s.ndcg),
                (format!("{prefix}psdcg@{k}"), s.psdcg),
                (format!("{prefix}precision"), s.prf.precision),
                (format!("{prefix}recall"), s.prf.recall),
                (format!("{prefix}f1"), s.prf.f1),
                (format!("{prefix}points"), s.points as f64),
            ] {
                let _ = writeln!(out, "{name}\t{n}\t{v}");
            }
        };
        emit("", &r.overall);
        if let Some(u) = &r.unseen {
            emit("unseen_", u);
        }
        let _ = writeln!(out, "threshold\t{n}\t{}", r.threshold);
    }
    out
}

/// Per-k curves as `label_space_size<TAB>k<TAB>cg<TAB>dcg<TAB>ndcg` rows.
pub fn plot_rows(reports: &[LabelSpaceReport]) -> String {
    let mut out = String::from("label_space_size\tk\tcg\tdcg\tndcg\n");
    for r in reports {
        for (k, s) in &r.curves {
            let _ = writeln!(out, "{}\t{k}\t{}\t{}\t{}", r.label_space_size, s.cg, s.dcg, s.ndcg);
        }
    }
    out
}
