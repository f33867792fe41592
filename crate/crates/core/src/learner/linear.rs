//! L1-regularised logistic regression by cyclic coordinate descent.

use serde::{Deserialize, Serialize};

/// Sparse linear function `w · x + b`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseLinear {
    /// Non-zero weights, sorted by feature index.
    pub weights: Vec<(u32, f64)>,
    pub bias: f64,
}

impl SparseLinear {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().map(|&(j, w)| w * x[j as usize]).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// L1 penalty on the weighted-mean log loss.
    pub l1: f64,
    pub max_epochs: usize,
    /// Stop once no weight moves by more than this in an epoch.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { l1: 1e-3, max_epochs: 100, tolerance: 1e-6 }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits `P(target) = σ(w · x + b)` on the rows `x`, with per-row sample
/// weights. Each coordinate step minimises the quadratic upper bound of the
/// loss (curvature ≤ 1/4) plus the L1 term, so the objective never rises.
pub fn fit_logistic(x: &[&[f64]], targets: &[bool], sample_weights: Option<&[f64]>, opts: &FitOptions) -> SparseLinear {
    let n = x.len();
    assert_eq!(targets.len(), n);
    if n == 0 {
        return SparseLinear::default();
    }
    let dim = x[0].len();
    let s: Vec<f64> = match sample_weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    let total: f64 = s.iter().sum();
    let t: Vec<f64> = targets.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    // Column-major copy with the sample weight folded into the curvature.
    let cols: Vec<Vec<f64>> = (0..dim).map(|j| x.iter().map(|row| row[j]).collect()).collect();
    let curvature: Vec<f64> = cols
        .iter()
        .map(|c| 0.25 * c.iter().zip(&s).map(|(v, si)| si * v * v).sum::<f64>() / total)
        .collect();

    let mut w = vec![0.0; dim];
    let mut bias = 0.0;
    let mut margin = vec![0.0; n];
    let mut resid: Vec<f64> = (0..n).map(|i| sigmoid(0.0) - t[i]).collect();

    for _ in 0..opts.max_epochs {
        let mut max_step: f64 = 0.0;

        let g: f64 = (0..n).map(|i| s[i] * resid[i]).sum::<f64>() / total;
        let step = -g / 0.25;
        if step != 0.0 {
            bias += step;
            for i in 0..n {
                margin[i] += step;
                resid[i] = sigmoid(margin[i]) - t[i];
            }
            max_step = max_step.max(step.abs());
        }

        for j in 0..dim {
            let h = curvature[j];
            if h <= 1e-12 {
                continue;
            }
            let col = &cols[j];
            let g: f64 = (0..n).map(|i| s[i] * resid[i] * col[i]).sum::<f64>() / total;
            let z = w[j] - g / h;
            let shrink = opts.l1 / h;
            let new = if z > shrink {
                z - shrink
            } else if z < -shrink {
                z + shrink
            } else {
                0.0
            };
            let delta = new - w[j];
            if delta != 0.0 {
                w[j] = new;
                for i in 0..n {
                    if col[i] != 0.0 {
                        margin[i] += delta * col[i];
                        resid[i] = sigmoid(margin[i]) - t[i];
                    }
                }
                max_step = max_step.max(delta.abs());
            }
        }
        if max_step < opts.tolerance {
            break;
        }
    }
    SparseLinear {
        weights: w.into_iter().enumerate().filter(|&(_, v)| v != 0.0).map(|(j, v)| (j as u32, v)).collect(),
        bias,
    }
}
