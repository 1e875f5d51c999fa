//! Feature-only baseline: multinomial logistic regression on the four
//! standardized channel statistics. Stands in for classifiers that see only
//! summary statistics rather than the full response.

use crate::channelgen::{Dataset, FeatureStats, StatFeatures};
use crate::error::{Error, Result};
use crate::numcore::softmax_slice;
use crate::pipeline::argmax;

const FEATURES: usize = 4;
const INPUTS: usize = FEATURES + 1; // four features plus bias

/// Trained logistic weights and the standardization stats they were fit with.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    /// Row-major [num_classes, 5]: four feature weights and a bias.
    weights: Vec<f64>,
    num_classes: usize,
    stats: FeatureStats,
}

impl BaselineModel {
    /// Class logits for one feature vector; features are standardized with
    /// the stats frozen at training time.
    fn logits(&self, feats: &StatFeatures) -> Vec<f64> {
        let z = self.stats.standardize(feats);
        (0..self.num_classes)
            .map(|c| {
                let row = &self.weights[c * INPUTS..(c + 1) * INPUTS];
                let mut acc = row[FEATURES]; // bias
                for k in 0..FEATURES {
                    acc += row[k] * z[k];
                }
                acc
            })
            .collect()
    }

    pub fn posterior(&self, feats: &StatFeatures) -> Vec<f64> {
        softmax_slice(&self.logits(feats))
    }
}

/// Predicted label: argmax of the linear logits over the four features.
pub fn baseline_classify(feats: &StatFeatures, model: &BaselineModel) -> usize {
    argmax(&model.logits(feats))
}

/// Fit the baseline on the training split by full-batch gradient descent on
/// the softmax cross-entropy (convex; the run is deterministic and converges
/// to the unique optimum regardless of sample order).
pub fn train_baseline(dataset: &Dataset) -> Result<BaselineModel> {
    let train_idx = dataset.train_indices()?;
    let feats = dataset
        .features
        .as_ref()
        .ok_or_else(|| Error::Contract("baseline: features not extracted".into()))?;
    let stats = dataset
        .feature_stats
        .as_ref()
        .ok_or_else(|| Error::Contract("baseline: missing standardization statistics".into()))?
        .clone();
    let num_classes = dataset.num_scenarios;
    if train_idx.is_empty() {
        return Err(Error::Contract("baseline: empty training split".into()));
    }

    let rows: Vec<([f64; FEATURES], usize)> = train_idx
        .iter()
        .map(|&i| (stats.standardize(&feats[i]), dataset.samples[i].label))
        .collect();

    let mut weights = vec![0.0; num_classes * INPUTS];
    let lr = 0.5;
    let iters = 600;
    let n = rows.len() as f64;
    let mut logits = vec![0.0; num_classes];
    for _ in 0..iters {
        let mut grad = vec![0.0; num_classes * INPUTS];
        for (z, label) in &rows {
            for (c, logit) in logits.iter_mut().enumerate() {
                let row = &weights[c * INPUTS..(c + 1) * INPUTS];
                let mut acc = row[FEATURES];
                for k in 0..FEATURES {
                    acc += row[k] * z[k];
                }
                *logit = acc;
            }
            let probs = softmax_slice(&logits);
            for c in 0..num_classes {
                let err = probs[c] - if c == *label { 1.0 } else { 0.0 };
                let g = &mut grad[c * INPUTS..(c + 1) * INPUTS];
                for k in 0..FEATURES {
                    g[k] += err * z[k];
                }
                g[FEATURES] += err;
            }
        }
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= lr * g / n;
        }
    }
    Ok(BaselineModel { weights, num_classes, stats })
}

/// Accuracy of the baseline over a set of dataset sample indices.
pub fn baseline_accuracy(dataset: &Dataset, model: &BaselineModel, indices: &[usize]) -> Result<f64> {
    let feats = dataset
        .features
        .as_ref()
        .ok_or_else(|| Error::Contract("baseline: features not extracted".into()))?;
    let hits = indices
        .iter()
        .filter(|&&i| baseline_classify(&feats[i], model) == dataset.samples[i].label)
        .count();
    Ok(hits as f64 / indices.len().max(1) as f64)
}
