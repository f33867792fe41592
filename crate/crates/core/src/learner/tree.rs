//! Growth of one label-ranking tree.
//!
//! Each internal node splits its points in two steps. First an alternating
//! minimisation assigns every point to the side whose aggregate top-k label
//! ranking scores it higher under propensity-weighted nDCG@k, starting from
//! a seeded random partition. Then a sparse logistic separator is fitted to
//! that assignment, and the children receive the points the separator
//! routes to them, so training and prediction follow the same path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linear::{fit_logistic, FitOptions, SparseLinear};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { separator: SparseLinear, left: u32, right: u32 },
    /// Label scores in `[0, 1]`, sorted by descending score then label id.
    Leaf { scores: Vec<(u32, f64)> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Index of the leaf that `x` reaches: right when `w · x + b > 0`.
    pub fn route(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { separator, left, right } => {
                    i = if separator.eval(x) > 0.0 { *right as usize } else { *left as usize };
                }
            }
        }
    }

    pub fn leaf_scores(&self, x: &[f64]) -> &[(u32, f64)] {
        match &self.nodes[self.route(x)] {
            Node::Leaf { scores } => scores,
            Node::Split { .. } => unreachable!("route ends at a leaf"),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Inputs shared by every node of one tree.
pub struct GrowContext<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [Vec<u32>],
    /// Inverse-propensity weight per label.
    pub label_weights: &'a [f64],
    pub k: usize,
    pub max_leaf: usize,
    pub max_split_iters: usize,
    pub leaf_top: usize,
    pub fit: FitOptions,
}

fn discount(pos: usize) -> f64 {
    1.0 / ((pos + 2) as f64).log2()
}

/// Propensity-weighted empirical label scores of a set of points.
///
/// For a label held by `c` of the `n` points, with inverse propensity `w`,
/// the score is `c·w / (c·w + n − c)`: the fraction of holders after
/// up-weighting each holder by `w`. It is 1 when every point holds the label
/// and grows whenever another holder is added.
pub fn leaf_distribution(points: &[usize], y: &[Vec<u32>], label_weights: &[f64], top: usize) -> Vec<(u32, f64)> {
    let mut counts: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
    for &i in points {
        for &l in &y[i] {
            *counts.entry(l).or_insert(0) += 1;
        }
    }
    let n = points.len();
    let mut scores: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(l, c)| {
            let held = c as f64 * label_weights[l as usize];
            (l, held / (held + (n - c) as f64))
        })
        .collect();
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.truncate(top);
    scores
}

/// Ideal propensity-weighted DCG@k of one label set.
fn ideal_psdcg(labels: &[u32], weights: &[f64], k: usize) -> f64 {
    let mut w: Vec<f64> = labels.iter().map(|&l| weights[l as usize]).collect();
    w.sort_by(|a, b| b.total_cmp(a));
    w.iter().take(k).enumerate().map(|(i, v)| v * discount(i)).sum()
}

/// Top-k labels of one side, ranked by summed normalised contributions.
fn side_ranking(members: impl Iterator<Item = usize>, ctx: &GrowContext, norms: &[f64]) -> Vec<u32> {
    let mut acc: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
    for i in members {
        if norms[i] == 0.0 {
            continue;
        }
        for &l in &ctx.y[i] {
            *acc.entry(l).or_insert(0.0) += ctx.label_weights[l as usize] / norms[i];
        }
    }
    let mut ranked: Vec<(u32, f64)> = acc.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(ctx.k).map(|(l, _)| l).collect()
}

/// Propensity-weighted DCG of `labels` under a top-k ranking. Labels are
/// sorted, so membership is a binary search.
fn psdcg(labels: &[u32], ranking: &[u32], weights: &[f64]) -> f64 {
    ranking
        .iter()
        .enumerate()
        .filter(|(_, l)| labels.binary_search(l).is_ok())
        .map(|(pos, &l)| weights[l as usize] * discount(pos))
        .sum()
}

/// Alternating minimisation over side assignments. Stops early rather
/// than accept an assignment that leaves one side empty.
fn assign_sides(points: &[usize], ctx: &GrowContext, norms: &[f64], rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n = points.len();
    let mut right: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    if right.iter().all(|&r| r) || right.iter().all(|&r| !r) {
        let flip = rng.gen_range(0..n);
        right[flip] = !right[flip];
    }
    for _ in 0..ctx.max_split_iters {
        let rank_r = side_ranking(points.iter().zip(&right).filter(|(_, &r)| r).map(|(&i, _)| i), ctx, norms);
        let rank_l = side_ranking(points.iter().zip(&right).filter(|(_, &r)| !r).map(|(&i, _)| i), ctx, norms);
        let mut next = right.clone();
        for (slot, &i) in points.iter().enumerate() {
            let sr = psdcg(&ctx.y[i], &rank_r, ctx.label_weights);
            let sl = psdcg(&ctx.y[i], &rank_l, ctx.label_weights);
            if sr > sl {
                next[slot] = true;
            } else if sl > sr {
                next[slot] = false;
            }
        }
        if next.iter().all(|&r| r) || next.iter().all(|&r| !r) {
            break;
        }
        if next == right {
            break;
        }
        right = next;
    }
    right
}

fn all_equal<T: PartialEq>(items: impl Iterator<Item = T>) -> bool {
    let mut it = items;
    match it.next() {
        None => true,
        Some(first) => it.all(|v| v == first),
    }
}

/// Grows one tree over `points` (indices into the context's rows).
pub fn grow(ctx: &GrowContext, points: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
    let norms: Vec<f64> = ctx.y.iter().map(|l| ideal_psdcg(l, ctx.label_weights, ctx.k)).collect();
    let mut tree = Tree::default();
    // Work stack of (node slot, points); slots are filled depth-first with
    // the left child before the right, so node order is deterministic.
    tree.nodes.push(Node::Leaf { scores: Vec::new() });
    let mut stack = vec![(0usize, points)];
    while let Some((slot, pts)) = stack.pop() {
        let split = if pts.len() <= ctx.max_leaf
            || all_equal(pts.iter().map(|&i| &ctx.y[i]))
            || all_equal(pts.iter().map(|&i| &ctx.x[i]))
        {
            None
        } else {
            split_node(ctx, &pts, &norms, rng)
        };
        match split {
            None => {
                tree.nodes[slot] = Node::Leaf { scores: leaf_distribution(&pts, ctx.y, ctx.label_weights, ctx.leaf_top) };
            }
            Some((separator, left_pts, right_pts)) => {
                let left = tree.nodes.len();
                tree.nodes.push(Node::Leaf { scores: Vec::new() });
                let right = tree.nodes.len();
                tree.nodes.push(Node::Leaf { scores: Vec::new() });
                tree.nodes[slot] = Node::Split { separator, left: left as u32, right: right as u32 };
                stack.push((right, right_pts));
                stack.push((left, left_pts));
            }
        }
    }
    tree
}

type SplitResult = (SparseLinear, Vec<usize>, Vec<usize>);

fn split_node(ctx: &GrowContext, pts: &[usize], norms: &[f64], rng: &mut ChaCha8Rng) -> Option<SplitResult> {
    let sides = assign_sides(pts, ctx, norms, rng);
    let rows: Vec<&[f64]> = pts.iter().map(|&i| ctx.x[i].as_slice()).collect();
    let separator = fit_logistic(&rows, &sides, None, &ctx.fit);
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for (&i, row) in pts.iter().zip(&rows) {
        if separator.eval(row) > 0.0 {
            right.push(i);
        } else {
            left.push(i);
        }
    }
    if left.is_empty() || right.is_empty() {
        return None;
    }
    Some((separator, left, right))
}
