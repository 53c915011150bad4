//! Role-masked next-token cross-entropy.
//!
//! For one sequence the masked loss is `-sum_t M_t * log P(y_t | y_<t, x)`.
//! Over a batch, [`LossOutput::sum`] adds these sums and
//! [`LossOutput::mean`] divides by the number of active positions, so the
//! value does not depend on batch size or on how many positions are masked
//! out. Gradients are those of the mean.

use thiserror::Error;

use crate::model::{softmax, ModelError, TinyLm};
use crate::MaskedSequence;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("sequence {index}: {reason}")]
    Malformed { index: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Unnormalized masked sum over the whole batch.
    pub sum: f64,
    /// `sum / n_active`; 0 when nothing is active.
    pub mean: f64,
    pub n_active: usize,
    /// Gradient of `mean` with respect to every parameter.
    pub grads: Vec<f64>,
    /// Gradient of `mean` with respect to the logits, one `[T x V]` block per
    /// sequence.
    pub logit_grads: Vec<Vec<f64>>,
    /// Set when every mask entry in the batch was 0.
    pub empty_mask: bool,
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn check_batch(batch: &[MaskedSequence]) -> Result<(), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    for (index, s) in batch.iter().enumerate() {
        s.check().map_err(|reason| LossError::Malformed { index, reason })?;
    }
    Ok(())
}

pub fn masked_loss(model: &TinyLm, batch: &[MaskedSequence]) -> Result<LossOutput, LossError> {
    check_batch(batch)?;
    let v = model.config().vocab_size;
    let n_active: usize = batch.iter().map(MaskedSequence::active).sum();
    let empty_mask = n_active == 0;
    if empty_mask {
        log::warn!("masked loss: every position in the batch is masked out; loss is 0");
    }
    let inv = if empty_mask { 0.0 } else { 1.0 / n_active as f64 };
    let mut grads = vec![0.0; model.n_params()];
    let mut logit_grads = Vec::with_capacity(batch.len());
    let mut sum = 0.0;
    for seq in batch {
        let fwd = model.forward(&seq.input(), seq.first_prediction())?;
        let mut dlogits = vec![0.0; fwd.logits.len()];
        for (t, (&y, &m)) in seq.targets.iter().zip(&seq.mask).enumerate() {
            if !m {
                continue;
            }
            if y as usize >= v {
                return Err(ModelError::TokenOutOfRange(y).into());
            }
            let z = &fwd.logits[t * v..(t + 1) * v];
            sum += log_sum_exp(z) - z[y as usize];
            let row = &mut dlogits[t * v..(t + 1) * v];
            for (g, p) in row.iter_mut().zip(softmax(z)) {
                *g = p * inv;
            }
            row[y as usize] -= inv;
        }
        if seq.active() > 0 {
            model.backward(&fwd, &dlogits, &mut grads);
        }
        logit_grads.push(dlogits);
    }
    Ok(LossOutput {
        sum,
        mean: sum * inv,
        n_active,
        grads,
        logit_grads,
        empty_mask,
    })
}

/// Plain mean next-token cross-entropy over every target position,
/// ignoring masks.
pub fn cross_entropy(model: &TinyLm, batch: &[MaskedSequence]) -> Result<f64, LossError> {
    check_batch(batch)?;
    let v = model.config().vocab_size;
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in batch {
        let fwd = model.forward(&seq.input(), seq.first_prediction())?;
        for (t, &y) in seq.targets.iter().enumerate() {
            let probs = softmax(&fwd.logits[t * v..(t + 1) * v]);
            let p = *probs.get(y as usize).ok_or(ModelError::TokenOutOfRange(y))?;
            total -= p.ln();
            count += 1;
        }
    }
    Ok(total / count as f64)
}
