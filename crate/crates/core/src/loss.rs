//! Softmax and the classification cross-entropy minimized by the representation trainer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are raised to it before taking the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-6;

/// A discrete distribution over `n` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDistribution {
    probs: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptySet("probability distribution over zero classes"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Config(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    /// The degenerate distribution putting all mass on `class`.
    pub fn one_hot(class: usize, n: usize) -> Result<Self> {
        if class >= n {
            return Err(Error::Config(format!("class {class} out of range for {n} classes")));
        }
        let mut probs = vec![0.0; n];
        probs[class] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `-Σ target_i · ln(predicted_i)`, with predictions floored at [`PROBABILITY_FLOOR`].
pub fn cross_entropy(predicted: &ProbabilityDistribution, target: &ProbabilityDistribution) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::dim(target.len(), predicted.len()));
    }
    let loss: f64 = predicted
        .probs
        .iter()
        .zip(&target.probs)
        .filter(|(_, t)| **t > 0.0)
        .map(|(p, t)| -t * p.max(PROBABILITY_FLOOR).ln())
        .sum();
    // -0.0 for a perfect prediction
    Ok(loss.max(0.0))
}

/// Numerically stable softmax over raw class scores.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(scores)` against the one-hot vector for `label`,
/// computed via log-sum-exp.
pub fn softmax_cross_entropy(scores: &[f64], label: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
    log_sum - scores[label]
}

/// Gradient of [`softmax_cross_entropy`] with respect to the scores:
/// `softmax(scores) - one_hot(label)`.
pub fn softmax_cross_entropy_grad(scores: &[f64], label: usize) -> Vec<f64> {
    let mut grad = softmax(scores);
    grad[label] -= 1.0;
    grad
}
