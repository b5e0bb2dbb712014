//! Linear SVM trained by stochastic subgradient descent on the hinge loss.
//!
//! The objective is `penalty(w) + C * sum_i hinge(y_i (w.x_i + b))`, scaled
//! by `1 / (C n)` so the per-step regularisation weight is `lambda = 1/(C n)`.
//! The step size follows `eta_t = 1 / (lambda (t + n))`, starting at one and
//! decaying over the epochs. The bias is not regularised.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use crate::random;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Inverse regularisation strength.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            epochs: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub penalty: Penalty,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn dot(w: &[f64], x: &FeatureVector) -> f64 {
    x.entries()
        .iter()
        .filter(|(f, _)| (*f as usize) < w.len())
        .map(|&(f, c)| w[f as usize] * c as f64)
        .sum()
}

fn soft_threshold(w: f64, by: f64) -> f64 {
    w.signum() * (w.abs() - by).max(0.0)
}

impl LinearSvm {
    pub fn fit(docs: &[FeatureVector], labels: &[bool], n_features: usize, penalty: Penalty, params: &SvmParams) -> Self {
        let n = docs.len();
        let lambda = 1.0 / (params.c * n as f64);
        let mut rng = random::substream(params.seed, "svm");
        let mut order: Vec<usize> = (0..n).collect();

        // w = scale * v keeps the L2 shrink O(1) per step.
        let mut v = vec![0.0; n_features];
        let mut scale = 1.0;
        let mut bias = 0.0;
        // Lazy L1 proximal steps: total threshold issued and the part each
        // feature has already absorbed.
        let mut issued = 0.0;
        let mut absorbed = vec![0.0; n_features];

        let mut t = 0usize;
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let eta = 1.0 / (lambda * (t + n) as f64);
                let x = &docs[i];
                let y = if labels[i] { 1.0 } else { -1.0 };
                if penalty == Penalty::L1 {
                    for &(f, _) in x.entries() {
                        let f = f as usize;
                        v[f] = soft_threshold(v[f], issued - absorbed[f]);
                        absorbed[f] = issued;
                    }
                }
                let margin = y * (scale * dot(&v, x) + bias);
                if penalty == Penalty::L2 {
                    scale *= 1.0 - eta * lambda;
                    if scale < 1e-9 {
                        v.iter_mut().for_each(|w| *w *= scale);
                        scale = 1.0;
                    }
                }
                if margin < 1.0 {
                    for &(f, c) in x.entries() {
                        v[f as usize] += eta * y * c as f64 / scale;
                    }
                    bias += eta * y;
                }
                if penalty == Penalty::L1 {
                    issued += eta * lambda;
                }
                t += 1;
            }
        }
        let weights = match penalty {
            Penalty::L2 => v.iter().map(|w| w * scale).collect(),
            Penalty::L1 => v
                .iter()
                .zip(&absorbed)
                .map(|(w, a)| soft_threshold(*w, issued - a))
                .collect(),
        };
        LinearSvm { penalty, weights, bias }
    }

    pub fn decision(&self, x: &FeatureVector) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}
