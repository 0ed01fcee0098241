//! Desk-scale representation learning: train a linear projection plus a
//! softmax classifier, then drop the classifier and use the projection as a
//! feature extractor.

use std::collections::BTreeSet;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{normalize, FaceEmbedding};
use crate::error::{Error, Result};
use crate::loss::{softmax_cross_entropy, softmax_cross_entropy_grad};
use crate::synthetic;

#[derive(Debug, Clone)]
pub struct ToyTrainingConfig {
    pub embedding_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ToyTrainingConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 8,
            epochs: 200,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn at(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    /// `xᵀ · self` for a row vector `x` of length `rows`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, xr) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xr * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRepresentationModel {
    /// `input_dim × embedding_dim` feature extractor.
    pub projection: Matrix,
    /// `embedding_dim × classes` final classification layer.
    pub classifier: Matrix,
    pub classes: usize,
    /// Mean training cross-entropy before the first update and after every epoch.
    pub loss_history: Vec<f64>,
}

/// Parameter gradients of the mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub projection: Matrix,
    pub classifier: Matrix,
}

impl ToyRepresentationModel {
    pub fn input_dim(&self) -> usize {
        self.projection.rows
    }

    pub fn embedding_dim(&self) -> usize {
        self.projection.cols
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.loss_history.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    /// Class scores before the softmax.
    pub fn scores(&self, input: &[f64]) -> Vec<f64> {
        self.classifier.left_mul(&self.projection.left_mul(input))
    }

    /// Mean cross-entropy over `samples`.
    pub fn loss(&self, samples: &[(Vec<f64>, usize)]) -> f64 {
        let total: f64 = samples
            .iter()
            .map(|(x, y)| softmax_cross_entropy(&self.scores(x), *y))
            .sum();
        total / samples.len() as f64
    }

    /// Mean loss and its gradient with respect to both weight matrices.
    pub fn loss_and_gradients(&self, samples: &[(Vec<f64>, usize)]) -> (f64, Gradients) {
        let n = samples.len() as f64;
        let mut grads = Gradients {
            projection: Matrix::zeros(self.projection.rows, self.projection.cols),
            classifier: Matrix::zeros(self.classifier.rows, self.classifier.cols),
        };
        let mut loss = 0.0;
        for (x, y) in samples {
            let hidden = self.projection.left_mul(x);
            let scores = self.classifier.left_mul(&hidden);
            loss += softmax_cross_entropy(&scores, *y);
            let d_scores = softmax_cross_entropy_grad(&scores, *y);

            let mut d_hidden = vec![0.0; hidden.len()];
            for (j, h) in hidden.iter().enumerate() {
                for (c, ds) in d_scores.iter().enumerate() {
                    *grads.classifier.at(j, c) += h * ds / n;
                    d_hidden[j] += self.classifier.get(j, c) * ds;
                }
            }
            for (i, xi) in x.iter().enumerate() {
                for (j, dh) in d_hidden.iter().enumerate() {
                    *grads.projection.at(i, j) += xi * dh / n;
                }
            }
        }
        (loss / n, grads)
    }
}

/// Full-batch gradient descent on softmax cross-entropy.
pub fn train_toy_representation(
    samples: &[(Vec<f64>, usize)],
    config: &ToyTrainingConfig,
) -> Result<ToyRepresentationModel> {
    let labels: BTreeSet<usize> = samples.iter().map(|(_, y)| *y).collect();
    if labels.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes to train, got {}",
            labels.len()
        )));
    }
    let classes = labels.last().copied().unwrap_or(0) + 1;
    if labels.len() != classes {
        return Err(Error::Config("class labels must be contiguous from 0".into()));
    }
    for class in 0..classes {
        if samples.iter().filter(|(_, y)| *y == class).count() < 2 {
            return Err(Error::Config(format!("class {class} has fewer than 2 samples")));
        }
    }
    if config.embedding_dim == 0 || config.learning_rate <= 0.0 {
        return Err(Error::Config("embedding_dim and learning_rate must be positive".into()));
    }
    let input_dim = samples[0].0.len();
    if let Some((x, _)) = samples.iter().find(|(x, _)| x.len() != input_dim) {
        return Err(Error::dim(input_dim, x.len()));
    }

    let mut rng = synthetic::rng(config.seed);
    let init = Normal::new(0.0, 0.1).expect("valid normal");
    let mut random_matrix = |rows, cols| Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| init.sample(&mut rng)).collect(),
    };
    let mut model = ToyRepresentationModel {
        projection: random_matrix(input_dim, config.embedding_dim),
        classifier: random_matrix(config.embedding_dim, classes),
        classes,
        loss_history: Vec::with_capacity(config.epochs + 1),
    };

    for _ in 0..config.epochs {
        let (loss, grads) = model.loss_and_gradients(samples);
        model.loss_history.push(loss);
        for (w, g) in model.projection.data.iter_mut().zip(&grads.projection.data) {
            *w -= config.learning_rate * g;
        }
        for (w, g) in model.classifier.data.iter_mut().zip(&grads.classifier.data) {
            *w -= config.learning_rate * g;
        }
    }
    let final_loss = model.loss(samples);
    model.loss_history.push(final_loss);
    Ok(model)
}

/// Applies the trained projection only; the classifier never participates.
pub fn extract_features(model: &ToyRepresentationModel, input: &[f64]) -> Result<FaceEmbedding> {
    if input.len() != model.input_dim() {
        return Err(Error::dim(model.input_dim(), input.len()));
    }
    normalize(&model.projection.left_mul(input))
}
