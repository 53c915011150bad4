//! Desk-scale role-masked training.
//!
//! A tiny causal self-attention model learns one side of synthetic
//! recommendation dialogues from a masked view: every token is input, but
//! only the trained role's tokens contribute to the loss. Two such models,
//! trained on opposite views of the same corpus, end up speaking only their
//! own role's actions.

pub mod audit;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod synth;
pub mod train;
pub mod vocab;

use serde::{Deserialize, Serialize};

pub use audit::{audit_role, AuditReport};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use loss::{cross_entropy, masked_loss, LossError, LossOutput};
pub use model::{ModelConfig, TinyLm};
pub use synth::generate_synthetic_corpus;
pub use train::{train_role_pair, RolePair, TrainConfig, TrainError};
pub use vocab::{TokenId, Vocab};

/// One training example: the model reads `context` and then predicts each
/// target token from everything before it. `mask[t]` selects which target
/// positions count towards the loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSequence {
    pub context: Vec<TokenId>,
    pub targets: Vec<TokenId>,
    pub mask: Vec<bool>,
}

impl MaskedSequence {
    /// Tokens fed to the network: the context followed by every target but
    /// the last.
    pub fn input(&self) -> Vec<TokenId> {
        let mut x = self.context.clone();
        x.extend_from_slice(&self.targets[..self.targets.len().saturating_sub(1)]);
        x
    }

    pub fn input_len(&self) -> usize {
        self.context.len() + self.targets.len().saturating_sub(1)
    }

    /// Input position whose output predicts `targets[0]`.
    pub fn first_prediction(&self) -> usize {
        self.context.len() - 1
    }

    pub fn active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn with_mask(&self, value: bool) -> MaskedSequence {
        MaskedSequence {
            mask: vec![value; self.targets.len()],
            ..self.clone()
        }
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if self.context.is_empty() {
            return Err("empty context".into());
        }
        if self.targets.is_empty() {
            return Err("no targets".into());
        }
        if self.targets.len() != self.mask.len() {
            return Err(format!(
                "{} targets but {} mask entries",
                self.targets.len(),
                self.mask.len()
            ));
        }
        Ok(())
    }
}
