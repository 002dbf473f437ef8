use crate::model::Sequence;
use crate::tokenizer::{is_structural, Encoding, TokenId, MASK_ID, SPECIAL_TOKENS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskingScheme {
    /// Every selected position becomes `[MASK]`.
    #[default]
    PureMask,
    /// Selected positions become `[MASK]` 80% of the time, a random
    /// non-special token 10%, and stay unchanged 10%.
    #[serde(rename = "bert-80-10-10")]
    Bert801010,
}

/// One sentence after masking. `targets[k]` is the original id at
/// `mask_positions[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input: Sequence,
    pub mask_positions: Vec<usize>,
    pub targets: Vec<TokenId>,
    /// Attended, non-special positions; the ones the representation
    /// penalty sums over.
    pub content: Vec<usize>,
    pub seed: u64,
}

impl MaskedSequence {
    /// The sentence with nothing masked; used for representation stray.
    pub fn unmasked(encoding: &Encoding) -> Self {
        let input = Sequence::from(encoding);
        Self {
            content: content_positions(&input),
            input,
            mask_positions: Vec::new(),
            targets: Vec::new(),
            seed: 0,
        }
    }
}

/// Positions that are attended and not `[PAD]`/`[CLS]`/`[SEP]`/`[MASK]`.
/// `[UNK]` stands for a real word and counts as content.
pub fn content_positions(seq: &Sequence) -> Vec<usize> {
    (0..seq.len())
        .filter(|&i| seq.attention[i] && !is_structural(seq.token_ids[i]))
        .collect()
}

/// Selects each content position independently with `probability`,
/// forcing one uniformly chosen position when none is drawn, and rewrites
/// the selected positions per `scheme`. Deterministic per `seed`.
pub fn mask_sentence(
    encoding: &Encoding,
    probability: f64,
    scheme: MaskingScheme,
    vocab_size: usize,
    seed: u64,
) -> MaskedSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = Sequence::from(encoding);
    let content = content_positions(&input);
    let mut mask_positions: Vec<usize> =
        content.iter().copied().filter(|_| rng.random::<f64>() < probability).collect();
    if mask_positions.is_empty() && !content.is_empty() {
        mask_positions.push(content[rng.random_range(0..content.len())]);
    }

    let first_regular = SPECIAL_TOKENS.len() as TokenId;
    let mut targets = Vec::with_capacity(mask_positions.len());
    for &pos in &mask_positions {
        targets.push(input.token_ids[pos]);
        let replacement = match scheme {
            MaskingScheme::PureMask => MASK_ID,
            MaskingScheme::Bert801010 => {
                let r: f64 = rng.random();
                if r < 0.8 || vocab_size as TokenId <= first_regular {
                    MASK_ID
                } else if r < 0.9 {
                    rng.random_range(first_regular..vocab_size as TokenId)
                } else {
                    input.token_ids[pos]
                }
            }
        };
        input.token_ids[pos] = replacement;
    }
    MaskedSequence {
        input,
        mask_positions,
        targets,
        content,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{CLS_ID, SEP_ID, UNK_ID};
    use proptest::prelude::*;

    fn enc(content: &[TokenId]) -> Encoding {
        let mut ids = vec![CLS_ID];
        ids.extend_from_slice(content);
        ids.push(SEP_ID);
        Encoding {
            segment_ids: vec![0; ids.len()],
            word_starts: vec![true; ids.len()],
            token_ids: ids,
        }
    }

    #[test]
    fn probability_near_one_masks_everything() {
        let e = enc(&[7, 8, UNK_ID, 9]);
        let m = mask_sentence(&e, 1.0 - 1e-12, MaskingScheme::PureMask, 20, 3);
        assert_eq!(m.mask_positions, vec![1, 2, 3, 4]);
        assert_eq!(m.targets, vec![7, 8, UNK_ID, 9]);
        assert_eq!(m.input.token_ids, vec![CLS_ID, 4, 4, 4, 4, SEP_ID]);
    }

    #[test]
    fn at_least_one_position_forced() {
        let e = enc(&[7, 8, 9]);
        for seed in 0..50 {
            let m = mask_sentence(&e, 1e-9, MaskingScheme::PureMask, 20, seed);
            assert_eq!(m.mask_positions.len(), 1);
        }
        let empty = mask_sentence(&enc(&[]), 0.5, MaskingScheme::PureMask, 20, 1);
        assert!(empty.mask_positions.is_empty());
    }

    #[test]
    fn masked_fraction_is_binomial() {
        // 10,000 sentences × 20 content tokens: sd of the fraction is
        // sqrt(.15·.85/200000) ≈ 8e-4, so ±0.01 is > 10 sd. Forced
        // positions are negligible at this length.
        let e = enc(&(5..25).collect::<Vec<_>>());
        let (mut masked, mut total) = (0usize, 0usize);
        for seed in 0..10_000 {
            let m = mask_sentence(&e, 0.15, MaskingScheme::PureMask, 30, seed);
            masked += m.mask_positions.len();
            total += m.content.len();
        }
        let frac = masked as f64 / total as f64;
        assert!((frac - 0.15).abs() < 0.01, "{frac}");
    }

    #[test]
    fn bert_scheme_proportions() {
        let e = enc(&(5..25).collect::<Vec<_>>());
        let (mut mask, mut random, mut same, mut n) = (0, 0, 0, 0);
        for seed in 0..5_000 {
            let m = mask_sentence(&e, 0.15, MaskingScheme::Bert801010, 1000, seed);
            for (&pos, &t) in m.mask_positions.iter().zip(&m.targets) {
                let now = m.input.token_ids[pos];
                n += 1;
                if now == MASK_ID {
                    mask += 1;
                } else if now == t {
                    same += 1;
                } else {
                    assert!(now >= 5);
                    random += 1;
                }
            }
        }
        let f = |k: i32| k as f64 / n as f64;
        assert!((f(mask) - 0.8).abs() < 0.02);
        assert!((f(random) - 0.1).abs() < 0.02);
        assert!((f(same) - 0.1).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn specials_and_padding_never_touched(
            content in proptest::collection::vec(1u32..40, 0..30),
            p in 0.01f64..0.99,
            seed in any::<u64>(),
            bert in any::<bool>(),
        ) {
            let e = enc(&content);
            let scheme = if bert { MaskingScheme::Bert801010 } else { MaskingScheme::PureMask };
            let m = mask_sentence(&e, p, scheme, 40, seed);
            prop_assert_eq!(m.input.token_ids[0], CLS_ID);
            prop_assert_eq!(*m.input.token_ids.last().unwrap(), SEP_ID);
            prop_assert_eq!(m.mask_positions.len(), m.targets.len());
            for (&pos, &t) in m.mask_positions.iter().zip(&m.targets) {
                prop_assert!(m.content.contains(&pos));
                prop_assert_eq!(e.token_ids[pos], t);
            }
            for i in 0..e.len() {
                if !m.mask_positions.contains(&i) {
                    prop_assert_eq!(m.input.token_ids[i], e.token_ids[i]);
                }
            }
            prop_assert_eq!(m.clone(), mask_sentence(&e, p, scheme, 40, seed));
        }
    }
}
