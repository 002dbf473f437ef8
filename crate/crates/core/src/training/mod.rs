//! Continued MLM pretraining with a representation penalty.
//!
//! The objective for one sentence is `mlm + λ·penalty`, where `mlm` sums
//! −log p(original | masked input) over the masked positions and `penalty`
//! sums ‖f(x_j) − f₀(x_j)‖² over every content position, f₀ being a frozen
//! copy of the starting model. Batches average the per-sentence objective.

mod loss;
mod masking;
mod optim;
mod trainer;

pub use loss::{batch_gradient, batch_loss, cross_lingual_penalty, mlm_loss, total_loss, BatchLoss, LossSpec};
pub use masking::{content_positions, mask_sentence, MaskedSequence, MaskingScheme};
pub use optim::{clip_grad_norm, Adam, LinearSchedule};
pub use trainer::{
    prepare_examples, train, BaseSnapshot, TrainConfig, TrainLog, TrainObserver, TrainOutcome, TrainRecord,
};
