//! Plain minibatch SGD over masked views, one model per role.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crsim_core::corpus::{export_masked_views, CorpusError, SourceDialogue};
use crsim_core::protocol::Role;

use crate::loss::{masked_loss, LossError};
use crate::model::{ModelConfig, ModelError, TinyLm};
use crate::vocab::{Vocab, VocabError};
use crate::MaskedSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Synthetic dialogues generated for training.
    pub n_dialogues: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            n_dialogues: 2000,
            epochs: 2,
            batch_size: 16,
            learning_rate: 0.1,
            d_model: 32,
            d_ff: 128,
            n_layers: 2,
            max_len: 128,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            d_ff: self.d_ff,
            n_layers: self.n_layers,
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.n_dialogues == 0 {
            return bad("epochs, batch_size and n_dialogues must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be a positive number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("loss diverged at epoch {epoch}, step {step}: loss {loss}, gradient norm {grad_norm}")]
    DivergedLoss {
        epoch: usize,
        step: usize,
        loss: f64,
        grad_norm: f64,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training sequences")]
    NoData,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean masked loss of every minibatch, in order.
    pub step_losses: Vec<f64>,
    pub epoch_means: Vec<f64>,
    pub seconds: f64,
}

impl TrainLog {
    /// Trailing-window means of the step losses, one per full window.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.step_losses
            .chunks_exact(window.max(1))
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect()
    }
}

/// Trains one freshly initialized model on `data`.
pub fn train_model(
    data: &[MaskedSequence],
    model_config: ModelConfig,
    config: &TrainConfig,
    init_seed: u64,
    shuffle_seed: u64,
) -> Result<(TinyLm, TrainLog), TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::NoData);
    }
    let mut model = TinyLm::new(model_config, init_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut log = TrainLog::default();
    let started = Instant::now();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<MaskedSequence> = chunk.iter().map(|&i| data[i].clone()).collect();
            let out = masked_loss(&model, &batch)?;
            step += 1;
            if out.empty_mask {
                continue;
            }
            let grad_norm = out.grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !out.mean.is_finite() || !grad_norm.is_finite() {
                return Err(TrainError::DivergedLoss {
                    epoch,
                    step,
                    loss: out.mean,
                    grad_norm,
                });
            }
            for (p, g) in model.params_mut().iter_mut().zip(&out.grads) {
                *p -= config.learning_rate * g;
            }
            log.step_losses.push(out.mean);
            epoch_sum += out.mean;
            epoch_batches += 1;
        }
        let mean = epoch_sum / epoch_batches.max(1) as f64;
        log::info!("epoch {}: mean masked loss {mean:.4}", epoch + 1);
        log.epoch_means.push(mean);
    }
    log.seconds = started.elapsed().as_secs_f64();
    Ok((model, log))
}

/// Which view each model learns from. `Swapped` is the ablation: the user
/// model is trained on the recommender view and vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewAssignment {
    #[default]
    Matched,
    Swapped,
}

/// Encoded user-view and recommender-view sequences for every dialogue.
pub fn encode_corpus(
    corpus: &[SourceDialogue],
    vocab: &Vocab,
    max_len: usize,
) -> Result<(Vec<MaskedSequence>, Vec<MaskedSequence>), TrainError> {
    let mut user = Vec::with_capacity(corpus.len());
    let mut rec = Vec::with_capacity(corpus.len());
    for d in corpus {
        let (u, r) = export_masked_views(d)?;
        user.push(vocab.encode_view(&u, max_len)?);
        rec.push(vocab.encode_view(&r, max_len)?);
    }
    Ok((user, rec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolePair {
    pub user: TinyLm,
    pub rec: TinyLm,
    pub user_log: TrainLog,
    pub rec_log: TrainLog,
    pub assignment: ViewAssignment,
}

impl RolePair {
    pub fn model(&self, role: Role) -> &TinyLm {
        match role {
            Role::User => &self.user,
            Role::Recommender => &self.rec,
        }
    }
}

pub fn train_role_pair(corpus: &[SourceDialogue], vocab: &Vocab, config: &TrainConfig) -> Result<RolePair, TrainError> {
    train_role_pair_with(corpus, vocab, config, ViewAssignment::Matched)
}

/// Trains the two role models independently: separate initial weights and
/// separate shuffles, all derived from `config.seed`.
pub fn train_role_pair_with(
    corpus: &[SourceDialogue],
    vocab: &Vocab,
    config: &TrainConfig,
    assignment: ViewAssignment,
) -> Result<RolePair, TrainError> {
    config.validate()?;
    let (user_view, rec_view) = encode_corpus(corpus, vocab, config.max_len)?;
    let (user_data, rec_data) = match assignment {
        ViewAssignment::Matched => (user_view, rec_view),
        ViewAssignment::Swapped => (rec_view, user_view),
    };
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let s: [u64; 4] = seeds.gen();
    let model_config = config.model_config(vocab.len());
    let (user, user_log) = train_model(&user_data, model_config, config, s[0], s[1])?;
    let (rec, rec_log) = train_model(&rec_data, model_config, config, s[2], s[3])?;
    Ok(RolePair {
        user,
        rec,
        user_log,
        rec_log,
        assignment,
    })
}
