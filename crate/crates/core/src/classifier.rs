//! Softmax single-layer perceptron on code vectors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SslcaError};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlpConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for SlpConfig {
    fn default() -> Self {
        SlpConfig {
            epochs: 50,
            lr: 0.1,
            batch: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlpModel {
    /// `features × classes`.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl SlpModel {
    pub fn n_features(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.tr_mul_vec(x);
        for (a, b) in z.iter_mut().zip(&self.biases) {
            *a += b;
        }
        z
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = k;
        }
    }
    best
}

fn softmax_in_place(z: &mut [f64]) {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - mx).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Trained model and any warnings about the training data.
pub fn slp_train(
    features: &[Vec<f64>],
    labels: &[u8],
    n_classes: usize,
    cfg: &SlpConfig,
) -> Result<(SlpModel, Vec<String>)> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(SslcaError::Config(format!(
            "classifier needs matching, non-empty features ({}) and labels ({})",
            features.len(),
            labels.len()
        )));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(SslcaError::Dimension {
            expected: format!("features of length {d}"),
            got: "ragged feature rows".into(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(SslcaError::Data(format!("label {l} outside {n_classes} classes")));
    }
    let mut warnings = Vec::new();
    if labels.iter().all(|&l| l == labels[0]) {
        warnings.push(format!("degenerate training set: every label is {}", labels[0]));
    }
    let mut model = SlpModel {
        weights: Matrix::zeros(d, n_classes),
        biases: vec![0.0; n_classes],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let batch = cfg.batch.max(1);
    let mut gw = Matrix::zeros(d, n_classes);
    let mut gb = vec![0.0; n_classes];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            gw.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            gb.iter_mut().for_each(|v| *v = 0.0);
            for &k in chunk {
                let x = &features[k];
                let mut p = model.logits(x);
                softmax_in_place(&mut p);
                p[labels[k] as usize] -= 1.0;
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (c, &pc) in p.iter().enumerate() {
                        gw.set(i, c, gw.get(i, c) + xi * pc);
                    }
                }
                for (g, &pc) in gb.iter_mut().zip(&p) {
                    *g += pc;
                }
            }
            let step = cfg.lr / chunk.len() as f64;
            for (w, g) in model.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *w -= step * g;
            }
            for (b, g) in model.biases.iter_mut().zip(&gb) {
                *b -= step * g;
            }
        }
    }
    Ok((model, warnings))
}

pub fn slp_eval(model: &SlpModel, features: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(SslcaError::Config("evaluation set is empty or mislabeled".into()));
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(x, &l)| model.predict(x) == l as usize)
        .count();
    Ok(correct as f64 / features.len() as f64)
}
