//! Finite-difference gradient check shared by the integration tests.

use hanmlm::model::{init_params, Mode, ModelConfig, ModelParams};
use hanmlm::tokenizer::Encoding;
use hanmlm::training::{batch_gradient, batch_loss, mask_sentence, LossSpec, MaskedSequence, MaskingScheme};

pub const STEP: f64 = 1e-4;
pub const FLOOR: f64 = 1e-6;

pub fn tiny() -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        hidden_size: 8,
        num_layers: 1,
        num_heads: 2,
        intermediate_size: 16,
        max_position: 12,
        initializer_range: 0.4,
        ..ModelConfig::default()
    }
}

pub fn batch() -> Vec<MaskedSequence> {
    let sentences: [&[u32]; 3] = [&[2, 7, 8, 9, 10, 3], &[2, 11, 1, 12, 3, 13, 14, 3], &[2, 15, 3]];
    sentences
        .iter()
        .enumerate()
        .map(|(i, ids)| {
            let sep = ids.iter().position(|&t| t == 3).unwrap();
            let enc = Encoding {
                token_ids: ids.to_vec(),
                segment_ids: (0..ids.len()).map(|k| u8::from(k > sep)).collect(),
                word_starts: vec![true; ids.len()],
            };
            mask_sentence(&enc, 0.4, MaskingScheme::PureMask, 20, 100 + i as u64)
        })
        .collect()
}

/// Largest relative error over every parameter coordinate, where the
/// relative error of a coordinate is |analytic − numeric| / max(|analytic|,
/// |numeric|), taken as 0 when both are exactly 0.
pub fn max_relative_error(lambda: f64, modes: &[Mode]) -> (f64, String) {
    let current = init_params::<f64>(&tiny(), 1);
    let base = init_params::<f64>(&tiny(), 2);
    let batch = batch();
    let spec = LossSpec::new(lambda);
    let mut grads = ModelParams::zeros(&tiny());
    batch_gradient(&current, &base, &batch, modes, &spec, &mut grads).unwrap();

    let analytic: Vec<(String, Vec<f64>)> = grads
        .named_tensors()
        .into_iter()
        .map(|(name, _, m)| (name, m.as_slice().to_vec()))
        .collect();
    let mut worst = (0.0f64, String::new());
    let mut probe = current.clone();
    for (t, (name, values)) in analytic.iter().enumerate() {
        for (k, &a) in values.iter().enumerate() {
            let eval = |p: &ModelParams<f64>| batch_loss(p, &base, &batch, modes, &spec).unwrap().total;
            let orig = probe.tensors()[t].as_slice()[k];
            probe.tensors_mut()[t].as_mut_slice()[k] = orig + STEP;
            let up = eval(&probe);
            probe.tensors_mut()[t].as_mut_slice()[k] = orig - STEP;
            let down = eval(&probe);
            probe.tensors_mut()[t].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let scale = a.abs().max(numeric.abs()).max(FLOOR);
            let rel = (a - numeric).abs() / scale;
            if rel > worst.0 {
                worst = (rel, format!("{name}[{k}]: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    worst
}

