//! Most likely order of a label set under the trigram model.
//!
//! Ordering is a longest-path search over permutations. A greedy pass gives
//! the initial incumbent; depth-first branch and bound then explores
//! partial orders most-likely-first and prunes any whose score plus an
//! optimistic completion cannot beat the incumbent.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{LmError, TrigramLm, BOS_ID, EOS_ID};

/// Node-expansion budget for one query.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000;
/// Largest label set accepted by [`order_labels`].
pub const MAX_LABELS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    pub sequence: Vec<String>,
    pub log_score: f64,
    /// Partial orders expanded by the search.
    pub steps: u64,
    /// False when the step cap stopped the search early.
    pub optimal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Snake,
    Camel,
}

impl std::str::FromStr for Convention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "snake" => Ok(Convention::Snake),
            "camel" => Ok(Convention::Camel),
            other => Err(format!("unknown naming convention {other:?} (expected snake or camel)")),
        }
    }
}

/// Joins tokens into an identifier.
pub fn render_name<S: AsRef<str>>(sequence: &[S], convention: Convention) -> String {
    match convention {
        Convention::Snake => sequence.iter().map(|s| s.as_ref().to_lowercase()).collect::<Vec<_>>().join("_"),
        Convention::Camel => {
            let mut out = String::new();
            for (i, tok) in sequence.iter().enumerate() {
                let tok = tok.as_ref().to_lowercase();
                if i == 0 {
                    out.push_str(&tok);
                } else {
                    let mut chars = tok.chars();
                    if let Some(first) = chars.next() {
                        out.extend(first.to_uppercase());
                        out.push_str(chars.as_str());
                    }
                }
            }
            out
        }
    }
}

/// Transition table over the labels of one query. Slot `n` stands for
/// `<s>` as a context and for `</s>` as a successor.
struct Table {
    n: usize,
    /// `logp[(u * (n + 1) + v) * (n + 1) + w]`
    logp: Vec<f64>,
    /// Best incoming log probability of each successor over all contexts.
    best_in: Vec<f64>,
}

impl Table {
    fn new(lm: &TrigramLm, ids: &[u32]) -> Table {
        let n = ids.len();
        let m = n + 1;
        let ctx_id = |i: usize| if i == n { BOS_ID } else { ids[i] };
        let next_id = |i: usize| if i == n { EOS_ID } else { ids[i] };
        let mut logp = vec![0.0; m * m * m];
        let mut best_in = vec![f64::NEG_INFINITY; m];
        for u in 0..m {
            for v in 0..m {
                for w in 0..m {
                    let lp = lm.log_prob_ids(ctx_id(u), ctx_id(v), next_id(w));
                    logp[(u * m + v) * m + w] = lp;
                    // `<s>` may precede `<s>` only as the very first context.
                    if !(u != n && v == n) {
                        best_in[w] = best_in[w].max(lp);
                    }
                }
            }
        }
        Table { n, logp, best_in }
    }

    fn at(&self, u: usize, v: usize, w: usize) -> f64 {
        let m = self.n + 1;
        self.logp[(u * m + v) * m + w]
    }
}

struct Search<'a> {
    table: &'a Table,
    labels: &'a [String],
    cap: u64,
    steps: u64,
    capped: bool,
    best: Vec<usize>,
    best_score: f64,
    path: Vec<usize>,
    used: Vec<bool>,
}

/// Lexicographic comparison of two orders by label string.
fn lex(labels: &[String], a: &[usize], b: &[usize]) -> Ordering {
    a.iter().map(|&i| &labels[i]).cmp(b.iter().map(|&i| &labels[i]))
}

impl Search<'_> {
    fn remaining_bound(&self) -> f64 {
        let t = self.table;
        let mut b = t.best_in[t.n];
        for (i, used) in self.used.iter().enumerate() {
            if !used {
                b += t.best_in[i];
            }
        }
        b
    }

    fn offer(&mut self, score: f64) {
        let better = score > self.best_score
            || (score == self.best_score && lex(self.labels, &self.path, &self.best) == Ordering::Less);
        if better {
            self.best_score = score;
            self.best = self.path.clone();
        }
    }

    fn dfs(&mut self, u: usize, v: usize, score: f64) {
        if self.capped {
            return;
        }
        if self.steps >= self.cap {
            self.capped = true;
            return;
        }
        self.steps += 1;
        let t = self.table;
        if self.path.len() == t.n {
            self.offer(score + t.at(u, v, t.n));
            return;
        }
        // The bound is summed in a different order than real scores, so a
        // tight bound can round below an equal-scoring completion. Slack
        // keeps such ties explorable.
        let slack = 1e-9 * (1.0 + self.best_score.abs());
        if score + self.remaining_bound() < self.best_score - slack {
            return;
        }
        let mut children: Vec<(usize, f64)> =
            (0..t.n).filter(|&w| !self.used[w]).map(|w| (w, t.at(u, v, w))).collect();
        children.sort_by(|a, b| b.1.total_cmp(&a.1).then(self.labels[a.0].cmp(&self.labels[b.0])));
        for (w, lp) in children {
            self.used[w] = true;
            self.path.push(w);
            self.dfs(v, w, score + lp);
            self.path.pop();
            self.used[w] = false;
        }
    }
}

fn greedy(table: &Table, labels: &[String]) -> (Vec<usize>, f64) {
    let n = table.n;
    let (mut u, mut v) = (n, n);
    let mut used = vec![false; n];
    let mut path = Vec::with_capacity(n);
    let mut score = 0.0;
    for _ in 0..n {
        let w = (0..n)
            .filter(|&w| !used[w])
            .max_by(|&a, &b| table.at(u, v, a).total_cmp(&table.at(u, v, b)).then(labels[b].cmp(&labels[a])))
            .expect("an unused label remains");
        score += table.at(u, v, w);
        used[w] = true;
        path.push(w);
        (u, v) = (v, w);
    }
    score += table.at(u, v, n);
    (path, score)
}

/// Orders `labels` to maximise the model's sequence score. Duplicates are
/// removed; equal scores resolve to the lexicographically smaller order.
pub fn order_labels<S: AsRef<str>>(lm: &TrigramLm, labels: &[S], step_cap: u64) -> Result<OrderingResult, LmError> {
    let mut labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
    labels.sort();
    labels.dedup();
    if labels.is_empty() || labels.len() > MAX_LABELS {
        return Err(LmError::LabelCount(labels.len()));
    }
    let ids: Vec<u32> = labels.iter().map(|l| lm.id(l)).collect();
    let table = Table::new(lm, &ids);
    let (seed, seed_score) = greedy(&table, &labels);
    let n = labels.len();
    let mut search = Search {
        table: &table,
        labels: &labels,
        cap: step_cap,
        steps: 0,
        capped: false,
        best: seed,
        best_score: seed_score,
        path: Vec::with_capacity(n),
        used: vec![false; n],
    };
    search.dfs(n, n, 0.0);
    Ok(OrderingResult {
        sequence: search.best.iter().map(|&i| labels[i].clone()).collect(),
        log_score: search.best_score,
        steps: search.steps,
        optimal: !search.capped,
    })
}
