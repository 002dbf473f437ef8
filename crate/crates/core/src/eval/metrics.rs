use crate::error::{Error, Result};
use crate::model::{log_softmax, Mode, ModelParams};
use crate::scalar::Scalar;
use crate::tokenizer::Encoding;
use crate::training::{cross_lingual_penalty, mask_sentence, MaskedSequence, MaskingScheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How summed NLL is normalized into a log-perplexity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Σ NLL / number of masked tokens.
    #[default]
    PerToken,
    /// Σ NLL / number of sentences.
    PerSentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub repeats: usize,
    pub mask_probability: f64,
    pub masking: MaskingScheme,
    /// One per repeat.
    pub seeds: Vec<u64>,
    pub normalization: Normalization,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repeats: 3,
            mask_probability: 0.15,
            masking: MaskingScheme::PureMask,
            seeds: vec![0, 1, 2],
            normalization: Normalization::PerToken,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be ≥ 1".into()));
        }
        if self.seeds.len() != self.repeats {
            return Err(Error::Config(format!(
                "{} repeats need {} seeds, got {}",
                self.repeats,
                self.repeats,
                self.seeds.len()
            )));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("evaluation seeds must be distinct".into()));
        }
        if !(self.mask_probability > 0.0 && self.mask_probability < 1.0) {
            return Err(Error::Config(format!(
                "mask_probability must be in (0, 1), got {}",
                self.mask_probability
            )));
        }
        Ok(())
    }

    /// Masked copies of `examples` for repeat `r`. Depends only on the
    /// examples, the config and the vocabulary size, so every model scored
    /// with the same config sees the same masked inputs.
    pub fn masked(&self, examples: &[Encoding], vocab_size: usize, repeat: usize) -> Vec<MaskedSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seeds[repeat]);
        examples
            .iter()
            .filter(|e| e.len() > 2)
            .map(|e| mask_sentence(e, self.mask_probability, self.masking, vocab_size, rng.random()))
            .collect()
    }
}

/// Raw counts for one (model, dataset, repeat) cell.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MaskedScores {
    pub nll: f64,
    pub correct: usize,
    pub tokens: usize,
    pub sentences: usize,
}

impl MaskedScores {
    pub fn log_perplexity(&self, normalization: Normalization) -> f64 {
        match normalization {
            Normalization::PerToken => self.nll / self.tokens as f64,
            Normalization::PerSentence => self.nll / self.sentences as f64,
        }
    }

    /// Percentage of masked tokens whose highest-scoring prediction is the
    /// original token.
    pub fn accuracy(&self) -> f64 {
        100.0 * self.correct as f64 / self.tokens as f64
    }
}

/// First index of the maximum.
fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// NLL (natural log) and argmax hits over every masked position.
pub fn score_masked<T: Scalar>(model: &ModelParams<T>, masked: &[MaskedSequence]) -> Result<MaskedScores> {
    let mut s = MaskedScores::default();
    for m in masked {
        if m.mask_positions.is_empty() {
            continue;
        }
        let hidden = model.encode(&m.input, Mode::Eval)?;
        let logits = model.mlm_logits_rows(&hidden, &m.mask_positions);
        for (k, &target) in m.targets.iter().enumerate() {
            let t = target as usize;
            if t >= model.config().vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: t,
                    size: model.config().vocab_size,
                });
            }
            let row = logits.row(k);
            s.nll -= log_softmax(row)[t].to_f64().unwrap_or(f64::NAN);
            s.correct += usize::from(argmax(row) == t);
            s.tokens += 1;
        }
        s.sentences += 1;
    }
    if s.tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(s)
}

/// Per repeat scores of `model` on `examples`.
pub fn score_repeats<T: Scalar>(
    model: &ModelParams<T>,
    examples: &[Encoding],
    config: &EvalConfig,
) -> Result<Vec<MaskedScores>> {
    config.validate()?;
    (0..config.repeats)
        .map(|r| score_masked(model, &config.masked(examples, model.config().vocab_size, r)))
        .collect()
}

/// Log-perplexity per repeat (natural log).
pub fn log_perplexity<T: Scalar>(model: &ModelParams<T>, examples: &[Encoding], config: &EvalConfig) -> Result<Vec<f64>> {
    Ok(score_repeats(model, examples, config)?
        .iter()
        .map(|s| s.log_perplexity(config.normalization))
        .collect())
}

/// MLM accuracy in percent per repeat.
pub fn mlm_accuracy<T: Scalar>(model: &ModelParams<T>, examples: &[Encoding], config: &EvalConfig) -> Result<Vec<f64>> {
    Ok(score_repeats(model, examples, config)?.iter().map(MaskedScores::accuracy).collect())
}

/// Mean over sentences of the representation penalty between `current`
/// and `base` on unmasked inputs, at encoder layer `layer` (final layer
/// when `None`).
pub fn representation_stray<T: Scalar>(
    current: &ModelParams<T>,
    base: &ModelParams<T>,
    examples: &[Encoding],
    layer: Option<usize>,
) -> Result<f64> {
    if current.config().vocab_size != base.config().vocab_size {
        return Err(Error::VocabularyMismatch {
            checkpoint: current.config().vocab_size,
            vocabulary: base.config().vocab_size,
        });
    }
    let layer = layer.unwrap_or(current.config().num_layers - 1);
    let mut total = 0.0;
    let mut count = 0usize;
    for e in examples.iter().filter(|e| e.len() > 2) {
        let m = MaskedSequence::unmasked(e);
        let a = current.encode_to_layer(&m.input, Mode::Eval, layer)?;
        let b = base.encode_to_layer(&m.input, Mode::Eval, layer)?;
        total += cross_lingual_penalty(&a, &b, &m)?.to_f64().unwrap_or(f64::NAN);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(total / count as f64)
}
