//! Gaussian and Bernoulli naive Bayes over sparse count features.

use serde::{Deserialize, Serialize};

use super::features::FeatureVector;

/// Floor applied to every per-class feature variance.
pub const VARIANCE_FLOOR: f64 = 1e-9;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn class_priors(labels: &[bool]) -> [f64; 2] {
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let n = labels.len() as f64;
    [((n - pos) / n).ln(), (pos / n).ln()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianClass {
    pub log_prior: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Log-likelihood of the all-zero document.
    zero_loglik: f64,
}

impl GaussianClass {
    fn log_density(&self, f: usize, x: f64) -> f64 {
        let (m, v) = (self.mean[f], self.var[f]);
        -0.5 * (LN_2PI + v.ln()) - (x - m) * (x - m) / (2.0 * v)
    }

    fn joint_loglik(&self, x: &FeatureVector) -> f64 {
        let mut ll = self.log_prior + self.zero_loglik;
        for &(f, c) in x.entries() {
            let f = f as usize;
            if f < self.mean.len() {
                ll += self.log_density(f, c as f64) - self.log_density(f, 0.0);
            }
        }
        ll
    }
}

/// Per-class mean and (maximum-likelihood) variance for each feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    /// Index 0 is the negative class, 1 the positive class.
    pub classes: [GaussianClass; 2],
}

impl GaussianNb {
    pub fn fit(docs: &[FeatureVector], labels: &[bool], n_features: usize) -> Self {
        let priors = class_priors(labels);
        let fit_class = |class: bool, log_prior: f64| {
            let mut sum = vec![0.0; n_features];
            let mut sumsq = vec![0.0; n_features];
            let mut n = 0.0;
            for (x, _) in docs.iter().zip(labels).filter(|(_, &y)| y == class) {
                n += 1.0;
                for &(f, c) in x.entries() {
                    let c = c as f64;
                    sum[f as usize] += c;
                    sumsq[f as usize] += c * c;
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
            let var: Vec<f64> = sumsq
                .iter()
                .zip(&mean)
                .map(|(ss, m)| (ss / n - m * m).max(VARIANCE_FLOOR))
                .collect();
            let mut class = GaussianClass {
                log_prior,
                mean,
                var,
                zero_loglik: 0.0,
            };
            class.zero_loglik = (0..n_features).map(|f| class.log_density(f, 0.0)).sum();
            class
        };
        GaussianNb {
            classes: [fit_class(false, priors[0]), fit_class(true, priors[1])],
        }
    }

    /// Positive minus negative joint log-likelihood.
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        self.classes[1].joint_loglik(x) - self.classes[0].joint_loglik(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliClass {
    pub log_prior: f64,
    /// Log presence probability per feature, add-one smoothed.
    pub log_p: Vec<f64>,
    pub log_not_p: Vec<f64>,
    absent_loglik: f64,
}

impl BernoulliClass {
    fn joint_loglik(&self, x: &FeatureVector) -> f64 {
        let mut ll = self.log_prior + self.absent_loglik;
        for &(f, _) in x.entries() {
            let f = f as usize;
            if f < self.log_p.len() {
                ll += self.log_p[f] - self.log_not_p[f];
            }
        }
        ll
    }
}

/// Feature presence model with Laplace smoothing `(df + 1) / (n + 2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliNb {
    pub classes: [BernoulliClass; 2],
}

impl BernoulliNb {
    pub fn fit(docs: &[FeatureVector], labels: &[bool], n_features: usize) -> Self {
        let priors = class_priors(labels);
        let fit_class = |class: bool, log_prior: f64| {
            let mut df = vec![0.0; n_features];
            let mut n = 0.0;
            for (x, _) in docs.iter().zip(labels).filter(|(_, &y)| y == class) {
                n += 1.0;
                for &(f, _) in x.entries() {
                    df[f as usize] += 1.0;
                }
            }
            let p: Vec<f64> = df.iter().map(|d| (d + 1.0) / (n + 2.0)).collect();
            let log_not_p: Vec<f64> = p.iter().map(|p| (1.0 - p).ln()).collect();
            BernoulliClass {
                log_prior,
                log_p: p.iter().map(|p| p.ln()).collect(),
                absent_loglik: log_not_p.iter().sum(),
                log_not_p,
            }
        };
        BernoulliNb {
            classes: [fit_class(false, priors[0]), fit_class(true, priors[1])],
        }
    }

    pub fn decision(&self, x: &FeatureVector) -> f64 {
        self.classes[1].joint_loglik(x) - self.classes[0].joint_loglik(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(entries: &[(u32, u32)]) -> FeatureVector {
        FeatureVector::from_entries(entries.to_vec())
    }

    #[test]
    fn sparse_gaussian_matches_dense_sum() {
        let docs = vec![fv(&[(0, 2), (1, 1)]), fv(&[(1, 3)]), fv(&[(2, 1)]), fv(&[(0, 1), (2, 2)])];
        let labels = vec![true, true, false, false];
        let nb = GaussianNb::fit(&docs, &labels, 3);
        let x = fv(&[(0, 1), (1, 2)]);
        let dense = |c: &GaussianClass| {
            let xs = [1.0, 2.0, 0.0];
            c.log_prior + (0..3).map(|f| c.log_density(f, xs[f])).sum::<f64>()
        };
        let expect = dense(&nb.classes[1]) - dense(&nb.classes[0]);
        assert!((nb.decision(&x) - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn variance_floor_applies_to_constant_features() {
        let docs = vec![fv(&[(0, 1)]), fv(&[(0, 1)]), fv(&[])];
        let nb = GaussianNb::fit(&docs, &[true, true, false], 1);
        assert_eq!(nb.classes[1].var[0], VARIANCE_FLOOR);
        assert!(nb.decision(&fv(&[(0, 1)])).is_finite());
    }

    #[test]
    fn bernoulli_smoothing() {
        let docs = vec![fv(&[(0, 5)]), fv(&[(1, 1)])];
        let nb = BernoulliNb::fit(&docs, &[true, false], 2);
        assert!((nb.classes[1].log_p[0] - (2.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((nb.classes[1].log_p[1] - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!(nb.decision(&fv(&[(0, 1)])) > 0.0);
        assert!(nb.decision(&fv(&[(1, 1)])) < 0.0);
    }

    fn corpus() -> impl Strategy<Value = (Vec<FeatureVector>, Vec<bool>)> {
        prop::collection::vec(
            (prop::collection::vec((0u32..12, 1u32..4), 0..5), any::<bool>()),
            4..20,
        )
        .prop_filter("both classes", |docs| docs.iter().any(|d| d.1) && docs.iter().any(|d| !d.1))
        .prop_map(|docs| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (mut e, y) in docs {
                e.sort();
                e.dedup_by_key(|p| p.0);
                xs.push(FeatureVector::from_entries(e));
                ys.push(y);
            }
            (xs, ys)
        })
    }

    proptest! {
        #[test]
        fn gaussian_duplication_invariant((xs, ys) in corpus(), probe in prop::collection::vec((0u32..12, 1u32..4), 0..5)) {
            let mut probe = probe;
            probe.sort();
            probe.dedup_by_key(|p| p.0);
            let probe = FeatureVector::from_entries(probe);
            let once = GaussianNb::fit(&xs, &ys, 12);
            let xs2: Vec<_> = xs.iter().chain(&xs).cloned().collect();
            let ys2: Vec<_> = ys.iter().chain(&ys).copied().collect();
            let twice = GaussianNb::fit(&xs2, &ys2, 12);
            let (a, b) = (once.decision(&probe), twice.decision(&probe));
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{} vs {}", a, b);
        }
    }
}
