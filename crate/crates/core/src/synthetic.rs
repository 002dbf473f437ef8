//! Seeded generator for two toy Hangul "languages" that share most of
//! their vocabulary but differ in word order and in a few words of their
//! own.
//!
//! Sentences are pre-segmented into morphemes separated by spaces:
//!
//! ```text
//! A: [adverb] subject s-particle object o-particle verb ending .
//! B: [adverb] object o-particle subject s-particle verb ending .
//! ```
//!
//! Each shared noun and verb has an agreement class in 0..4 that fixes the
//! particle or ending after it, identically in both languages. Since roles
//! are marked only by position, the particle after the first noun is a
//! subject particle in A and an object particle in B. B also uses nouns
//! and verbs of its own, written with syllables that never occur in A and
//! followed by particles and an ending that A never uses.

use crate::error::{read_utf8, write_file, Error, Result};
use std::path::Path;
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::tokenizer::{build_vocab, Encoding, Vocabulary};
use crate::training::{prepare_examples, train, TrainConfig, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Language {
    A,
    B,
}

impl Language {
    pub fn name(self) -> &'static str {
        match self {
            Language::A => "a",
            Language::B => "b",
        }
    }
}

pub const NOUNS: [&str; 24] = [
    "사과", "학교", "나무", "하늘", "바다", "도시", "기차", "음식", "친구", "노래", "그림", "편지", "공장", "농장", "신문", "시계",
    "우유", "커피", "의자", "책상", "가방", "모자", "구두", "연필",
];
pub const VERBS: [&str; 12] = ["보", "먹", "읽", "쓰", "찾", "만들", "가지", "사", "팔", "그리", "듣", "열"];
pub const SUBJECT_PARTICLES: [&str; 4] = ["이", "가", "은", "는"];
pub const OBJECT_PARTICLES: [&str; 4] = ["을", "를", "도", "만"];
pub const ENDINGS: [&str; 4] = ["다", "요", "네", "지"];
pub const ADVERBS: [&str; 4] = ["어제", "오늘", "내일", "자주"];

/// Words only language B uses.
pub const B_NOUNS: [&str; 8] = ["윁남", "췰레", "꾜또", "뙈기", "곬목", "돐상", "쏠락", "뽈대"];
pub const B_VERBS: [&str; 4] = ["뚫", "꿰", "휩", "쫓"];
pub const B_SUBJECT_PARTICLE: &str = "께";
pub const B_OBJECT_PARTICLE: &str = "로";
pub const B_ENDING: &str = "라";

/// Probability that a B noun or verb slot takes a B-only word.
const B_WORD_RATE: f64 = 0.5;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Subject,
    Object,
}

fn noun(rng: &mut ChaCha8Rng, language: Language, role: Role) -> [&'static str; 2] {
    if language == Language::B && rng.random::<f64>() < B_WORD_RATE {
        let particle = match role {
            Role::Subject => B_SUBJECT_PARTICLE,
            Role::Object => B_OBJECT_PARTICLE,
        };
        return [B_NOUNS[rng.random_range(0..B_NOUNS.len())], particle];
    }
    let i = rng.random_range(0..NOUNS.len());
    let table = match role {
        Role::Subject => &SUBJECT_PARTICLES,
        Role::Object => &OBJECT_PARTICLES,
    };
    [NOUNS[i], table[i % table.len()]]
}

fn verb(rng: &mut ChaCha8Rng, language: Language) -> [&'static str; 2] {
    if language == Language::B && rng.random::<f64>() < B_WORD_RATE {
        return [B_VERBS[rng.random_range(0..B_VERBS.len())], B_ENDING];
    }
    let i = rng.random_range(0..VERBS.len());
    [VERBS[i], ENDINGS[i % ENDINGS.len()]]
}

pub fn sentence(rng: &mut ChaCha8Rng, language: Language) -> String {
    let mut words: Vec<&str> = Vec::with_capacity(8);
    if rng.random::<f64>() < 0.5 {
        words.push(ADVERBS[rng.random_range(0..ADVERBS.len())]);
    }
    let subject = noun(rng, language, Role::Subject);
    let object = noun(rng, language, Role::Object);
    match language {
        Language::A => words.extend(subject.iter().chain(&object)),
        Language::B => words.extend(object.iter().chain(&subject)),
    }
    words.extend(verb(rng, language));
    words.push(".");
    words.join(" ")
}

/// `count` sentences of `language`, deterministic per `seed`.
pub fn generate(language: Language, count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match language {
        Language::A => 1,
        Language::B => 2,
    });
    (0..count).map(|_| sentence(&mut rng, language)).collect()
}

/// Train and test sentences of both languages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpora {
    pub a_train: Vec<String>,
    pub a_test: Vec<String>,
    pub b_train: Vec<String>,
    pub b_test: Vec<String>,
}

impl SyntheticCorpora {
    pub fn generate(train: usize, test: usize, seed: u64) -> Self {
        let split = |lang| {
            let mut all = generate(lang, train + test, seed);
            let test_part = all.split_off(train);
            (all, test_part)
        };
        let (a_train, a_test) = split(Language::A);
        let (b_train, b_test) = split(Language::B);
        Self {
            a_train,
            a_test,
            b_train,
            b_test,
        }
    }

    /// Split names paired with their sentences, in file order.
    pub fn splits(&self) -> [(&'static str, &[String]); 4] {
        [
            ("a_train", &self.a_train),
            ("a_test", &self.a_test),
            ("b_train", &self.b_train),
            ("b_test", &self.b_test),
        ]
    }

    /// Writes `<split>.txt`, one sentence per line, into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, sentences) in self.splits() {
            let mut text = sentences.join("\n");
            text.push('\n');
            write_file(&dir.join(format!("{name}.txt")), text.as_bytes())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<String>> {
            let text = read_utf8(&dir.join(format!("{name}.txt")))?;
            Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
        };
        Ok(Self {
            a_train: read("a_train")?,
            a_test: read("a_test")?,
            b_train: read("b_train")?,
            b_test: read("b_test")?,
        })
    }

    /// Every sentence, for building a shared vocabulary.
    pub fn all(&self) -> impl Iterator<Item = &str> {
        self.a_train
            .iter()
            .chain(&self.a_test)
            .chain(&self.b_train)
            .chain(&self.b_test)
            .map(String::as_str)
    }
}

/// Pinned toy-scale protocol for the forgetting experiment: pretrain on A,
/// continue on B with a chosen λ, evaluate on both test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyExperiment {
    pub corpus_seed: u64,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub vocab_target: usize,
    pub max_len: usize,
    pub model: ModelConfig,
    pub init_seed: u64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for ToyExperiment {
    fn default() -> Self {
        let max_len = 16;
        Self {
            corpus_seed: 7,
            train_sentences: 2000,
            test_sentences: 300,
            vocab_target: 1000,
            max_len,
            model: ModelConfig {
                vocab_size: 0,
                hidden_size: 32,
                num_layers: 2,
                num_heads: 4,
                intermediate_size: 64,
                max_position: max_len,
                ..ModelConfig::default()
            },
            init_seed: 1,
            pretrain: TrainConfig {
                learning_rate: 3e-3,
                batch_size: 16,
                epochs: 20,
                dropout: false,
                seed: 1,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                learning_rate: 1.5e-3,
                batch_size: 16,
                epochs: 20,
                dropout: false,
                seed: 2,
                ..TrainConfig::default()
            },
        }
    }
}

/// Encoded splits of [`SyntheticCorpora`] under a shared vocabulary.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub corpora: SyntheticCorpora,
    pub vocab: Vocabulary,
    pub a_train: Vec<Encoding>,
    pub a_test: Vec<Encoding>,
    pub b_train: Vec<Encoding>,
    pub b_test: Vec<Encoding>,
}

impl ToyData {
    /// The two test sets as named evaluation datasets.
    pub fn test_sets(&self) -> Vec<(String, Vec<Encoding>)> {
        vec![
            (Language::A.name().to_string(), self.a_test.clone()),
            (Language::B.name().to_string(), self.b_test.clone()),
        ]
    }
}

impl ToyExperiment {
    pub fn data(&self) -> Result<ToyData> {
        let corpora = SyntheticCorpora::generate(self.train_sentences, self.test_sentences, self.corpus_seed);
        let vocab = build_vocab(corpora.all(), self.vocab_target, 1)?;
        let enc = |s: &[String]| prepare_examples(s.iter().map(String::as_str), &vocab, self.max_len);
        Ok(ToyData {
            a_train: enc(&corpora.a_train),
            a_test: enc(&corpora.a_test),
            b_train: enc(&corpora.b_train),
            b_test: enc(&corpora.b_test),
            vocab,
            corpora,
        })
    }

    pub fn model_config(&self, data: &ToyData) -> ModelConfig {
        ModelConfig {
            vocab_size: data.vocab.len(),
            ..self.model.clone()
        }
    }

    /// The base model: trained on language A from a seeded initialization.
    pub fn pretrain(&self, data: &ToyData) -> Result<ModelParams<f64>> {
        let init = init_params::<f64>(&self.model_config(data), self.init_seed);
        Ok(train(&data.a_train, &init, &self.pretrain, &mut ())?.params)
    }

    /// Continues `base` on language B with regularizer weight `lambda`.
    pub fn finetune(&self, data: &ToyData, base: &ModelParams<f64>, lambda: f64) -> Result<TrainOutcome<f64>> {
        let config = TrainConfig {
            lambda,
            ..self.finetune.clone()
        };
        train(&data.b_train, base, &config, &mut ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hangul::decompose;
    use std::collections::HashSet;

    #[test]
    fn deterministic_and_distinct() {
        assert_eq!(generate(Language::A, 50, 3), generate(Language::A, 50, 3));
        assert_ne!(generate(Language::A, 50, 3), generate(Language::A, 50, 4));
        assert_ne!(generate(Language::A, 50, 3), generate(Language::B, 50, 3));
    }

    #[test]
    fn b_only_words_use_syllables_absent_from_a() {
        let a: HashSet<char> = generate(Language::A, 2000, 1).iter().flat_map(|s| s.chars().collect::<Vec<_>>()).collect();
        let b_only = B_NOUNS.iter().chain(&B_VERBS).chain(&[B_SUBJECT_PARTICLE, B_OBJECT_PARTICLE, B_ENDING]);
        for w in b_only {
            assert!(w.chars().any(|c| !a.contains(&c)), "{w}");
        }
    }

    #[test]
    fn roles_follow_word_order() {
        let first_particle = |s: &str| {
            let w: Vec<&str> = s.split(' ').filter(|w| !ADVERBS.contains(w)).collect();
            w[1].to_string()
        };
        for s in generate(Language::A, 200, 5) {
            assert!(SUBJECT_PARTICLES.contains(&first_particle(&s).as_str()), "{s}");
        }
        for s in generate(Language::B, 200, 5) {
            let p = first_particle(&s);
            assert!(OBJECT_PARTICLES.contains(&p.as_str()) || p == B_OBJECT_PARTICLE, "{s}");
        }
    }

    #[test]
    fn all_words_are_hangul_or_period() {
        for s in generate(Language::B, 200, 2) {
            for w in s.split(' ') {
                assert!(w == "." || w.chars().all(|c| decompose(c).is_some()), "{w}");
            }
        }
    }

    #[test]
    fn bundled_corpora_match_the_generator() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic");
        let exp = ToyExperiment::default();
        let fresh = SyntheticCorpora::generate(exp.train_sentences, exp.test_sentences, exp.corpus_seed);
        assert_eq!(SyntheticCorpora::load(&dir).unwrap(), fresh);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = SyntheticCorpora::generate(20, 5, 1);
        c.save(dir.path()).unwrap();
        assert_eq!(SyntheticCorpora::load(dir.path()).unwrap(), c);
    }
}
