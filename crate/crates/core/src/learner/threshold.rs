//! Turning rankings into label sets: the score threshold and its
//! calibration on held-out data.

use super::LabelRanking;

/// Labels whose score is strictly above `threshold`, in rank order.
pub fn predict_set(ranking: &LabelRanking, threshold: f64) -> Vec<u32> {
    ranking.entries.iter().take_while(|e| e.1 > threshold).map(|e| e.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    /// Micro-F1 reached at `threshold` on the calibration data.
    pub f1: f64,
}

/// Chooses the threshold maximising micro-F1 of the thresholded sets.
///
/// Candidates sit halfway between consecutive distinct scores, so each one
/// realises a different cut, plus one just below the lowest score when that
/// stays positive. Ties in F1 go to the larger threshold.
pub fn calibrate_threshold(rankings: &[LabelRanking], truth: &[Vec<u32>]) -> Calibration {
    assert_eq!(rankings.len(), truth.len(), "one ranking per ground-truth entry");
    let total_true: usize = truth.iter().map(Vec::len).sum();
    let mut pairs: Vec<(f64, bool)> = rankings
        .iter()
        .zip(truth)
        .flat_map(|(r, t)| r.entries.iter().map(move |&(l, s)| (s, t.contains(&l))))
        .collect();
    if pairs.is_empty() {
        log::warn!("no scores to calibrate on; keeping threshold 0.5");
        return Calibration { threshold: 0.5, f1: 0.0 };
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let f1 = |tp: usize, predicted: usize| {
        let denom = predicted + total_true;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };

    let mut best: Option<Calibration> = None;
    let mut consider = |threshold: f64, value: f64| {
        if best.is_none_or(|b| value > b.f1) {
            best = Some(Calibration { threshold, f1: value });
        }
    };

    let mut tp = 0;
    let mut i = 0;
    let mut distinct = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            tp += pairs[i].1 as usize;
            i += 1;
        }
        distinct += 1;
        if i < pairs.len() {
            consider((v + pairs[i].0) / 2.0, f1(tp, i));
        } else {
            let below = v - v.abs().max(1.0) * f64::EPSILON;
            if below > 0.0 || distinct == 1 {
                if distinct == 1 {
                    log::warn!("all scores equal {v}; threshold set just below it");
                }
                consider(below, f1(tp, i));
            }
        }
    }
    best.expect("at least one candidate when there are scores")
}
