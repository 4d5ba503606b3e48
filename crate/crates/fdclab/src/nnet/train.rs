//! SGD with classical momentum, the epoch loop, and evaluation.

use super::network::{
    argmax, batch_loss_and_gradients, batch_spans, forward_image, Gradients, ImageSource, Layer,
    NetworkModel, Workspace,
};
use super::scalar::Scalar;
use super::spec::N_CLASSES;
use crate::error::{Error, Result};
use crate::rng::{mix, stream_rng};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            momentum: 0.90,
            batch_size: 100,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed as a no-update diagnostic configuration.
        if !(self.lr >= 0.0) {
            return Err(Error::invalid(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Classical (heavy-ball) momentum update:
/// `v ← μ·v + g`, `w ← w − lr·v`.
pub fn sgd_step<T: Scalar>(model: &mut NetworkModel<T>, grads: &Gradients<T>, cfg: &TrainConfig) {
    let lr = T::from_f64(cfg.lr);
    let mu = T::from_f64(cfg.momentum);
    for (li, layer) in model.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.per_layer[li];
        let (vw, vb) = &mut model.velocity[li];
        match layer {
            Layer::Conv { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                for ((w, v), &g) in weight.data.iter_mut().zip(vw.iter_mut()).zip(gw.iter()) {
                    *v = mu * *v + g;
                    *w = *w - lr * *v;
                }
                for ((b, v), &g) in bias.data.iter_mut().zip(vb.iter_mut()).zip(gb.iter()) {
                    *v = mu * *v + g;
                    *b = *b - lr * *v;
                }
            }
            Layer::MaxPool { .. } => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// Mean of the last up-to-five test accuracies, the per-run summary
    /// statistic.
    pub fn last5_test_accuracy(&self) -> Option<f64> {
        let accs: Vec<f64> = self
            .epochs
            .iter()
            .filter_map(|e| e.test_accuracy)
            .collect();
        if accs.is_empty() {
            return None;
        }
        let tail = &accs[accs.len().saturating_sub(5)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Runs seeded mini-batch SGD. Shuffling derives from `(seed, epoch)`, so a
/// fixed config reproduces the identical history; when `eval` is given the
/// held-out accuracy is recorded every epoch.
pub fn train(
    model: &mut NetworkModel<f32>,
    data: &dyn ImageSource,
    eval: Option<&dyn ImageSource>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("empty training dataset"));
    }

    let mut history = TrainHistory::default();
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(mix(cfg.seed, 0x7E), epoch as u64);
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            let result = batch_loss_and_gradients(model, data, batch)?;
            loss_sum += result.loss * batch.len() as f64;
            correct += result.correct;
            sgd_step(model, &result.grads, cfg);
        }

        let test_accuracy = match eval {
            Some(set) => Some(evaluate(model, set)?.accuracy_pct),
            None => None,
        };
        history.epochs.push(EpochStats {
            loss: loss_sum / n as f64,
            train_accuracy: 100.0 * correct as f64 / n as f64,
            test_accuracy,
        });
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percentage of correct argmax predictions.
    pub accuracy_pct: f64,
    /// Rows are true labels, columns predictions.
    pub confusion: [[u64; N_CLASSES]; N_CLASSES],
}

impl EvalReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.confusion[i][i]).sum()
    }
}

/// Argmax evaluation over a whole source.
pub fn evaluate(model: &NetworkModel<f32>, data: &dyn ImageSource) -> Result<EvalReport> {
    let indices: Vec<usize> = (0..data.len()).collect();
    evaluate_indexed(model, data, &indices)
}

/// Argmax evaluation over chosen indices.
pub fn evaluate_indexed(
    model: &NetworkModel<f32>,
    data: &dyn ImageSource,
    indices: &[usize],
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::invalid("empty evaluation dataset"));
    }
    let spans = batch_spans(indices.len(), model.param_count());
    let partials: Vec<Result<[[u64; N_CLASSES]; N_CLASSES]>> = spans
        .par_iter()
        .map(|span| {
            let mut ws = Workspace::new(model);
            let mut fbuf = vec![0.0f32; model.input_len()];
            let mut confusion = [[0u64; N_CLASSES]; N_CLASSES];
            for &idx in &indices[span.clone()] {
                data.write_image(idx, &mut fbuf);
                forward_image(model, &mut ws, &fbuf)?;
                let pred = argmax(ws.logits());
                confusion[data.label(idx) as usize][pred] += 1;
            }
            Ok(confusion)
        })
        .collect();

    let mut confusion = [[0u64; N_CLASSES]; N_CLASSES];
    for p in partials {
        let p = p?;
        for (dst, src) in confusion.iter_mut().zip(p.iter()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += s;
            }
        }
    }
    let report = EvalReport {
        accuracy_pct: 0.0,
        confusion,
    };
    let total = report.total();
    Ok(EvalReport {
        accuracy_pct: 100.0 * report.trace() as f64 / total as f64,
        confusion,
    })
}
