//! Hangul syllable algebra: decomposition into jamo indices, recomposition
//! of conjoining jamo, novel-syllable detection and syllable substitution.

use crate::corpus::Corpus;
use crate::error::{read_utf8, Error, Result};
use crate::tokenizer::Vocabulary;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

pub const SYLLABLE_BASE: u32 = 0xAC00;
pub const INITIAL_COUNT: u32 = 19;
pub const MEDIAL_COUNT: u32 = 21;
pub const FINAL_COUNT: u32 = 28;
pub const SYLLABLE_COUNT: u32 = INITIAL_COUNT * MEDIAL_COUNT * FINAL_COUNT;

const LEADING_BASE: u32 = 0x1100;
const VOWEL_BASE: u32 = 0x1161;
// One below the first trailing consonant; final index 0 means "no final".
const TRAILING_BASE: u32 = 0x11A7;

/// A precomposed Hangul syllable as its (initial, medial, final) indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Syllable {
    initial: u8,
    medial: u8,
    final_: u8,
}

impl Syllable {
    pub fn new(initial: u8, medial: u8, final_: u8) -> Option<Self> {
        ((initial as u32) < INITIAL_COUNT
            && (medial as u32) < MEDIAL_COUNT
            && (final_ as u32) < FINAL_COUNT)
            .then_some(Self {
                initial,
                medial,
                final_,
            })
    }

    pub fn initial(self) -> u8 {
        self.initial
    }

    pub fn medial(self) -> u8 {
        self.medial
    }

    /// 0 when the syllable has no final consonant.
    pub fn final_(self) -> u8 {
        self.final_
    }

    pub fn codepoint(self) -> u32 {
        SYLLABLE_BASE
            + (self.initial as u32 * MEDIAL_COUNT + self.medial as u32) * FINAL_COUNT
            + self.final_ as u32
    }

    pub fn to_char(self) -> char {
        char::from_u32(self.codepoint()).expect("precomposed block is valid")
    }
}

impl fmt::Display for Syllable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

pub fn is_syllable(ch: char) -> bool {
    (ch as u32).wrapping_sub(SYLLABLE_BASE) < SYLLABLE_COUNT
}

/// `None` for anything outside the precomposed block.
pub fn decompose(ch: char) -> Option<Syllable> {
    let index = (ch as u32).checked_sub(SYLLABLE_BASE)?;
    if index >= SYLLABLE_COUNT {
        return None;
    }
    let final_ = index % FINAL_COUNT;
    let lv = index / FINAL_COUNT;
    Some(Syllable {
        initial: (lv / MEDIAL_COUNT) as u8,
        medial: (lv % MEDIAL_COUNT) as u8,
        final_: final_ as u8,
    })
}

/// Composes runs of conjoining jamo (L V [T]) into precomposed syllables,
/// including a trailing consonant appended to an already precomposed LV
/// syllable. Everything else passes through unchanged.
pub fn compose_jamo(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending: Option<char> = None;
    for ch in text.chars() {
        if let Some(last) = pending {
            let cp = ch as u32;
            if let Some(l) = (last as u32).checked_sub(LEADING_BASE).filter(|&l| l < INITIAL_COUNT) {
                if let Some(v) = cp.checked_sub(VOWEL_BASE).filter(|&v| v < MEDIAL_COUNT) {
                    let s = SYLLABLE_BASE + (l * MEDIAL_COUNT + v) * FINAL_COUNT;
                    pending = char::from_u32(s);
                    continue;
                }
            }
            if let Some(s) = (last as u32).checked_sub(SYLLABLE_BASE) {
                if s < SYLLABLE_COUNT && s % FINAL_COUNT == 0 {
                    if let Some(t) = cp.checked_sub(TRAILING_BASE).filter(|&t| t > 0 && t < FINAL_COUNT) {
                        out.push(char::from_u32(last as u32 + t).expect("valid syllable"));
                        pending = None;
                        continue;
                    }
                }
            }
            out.push(last);
        }
        pending = Some(ch);
    }
    if let Some(last) = pending {
        out.push(last);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapEntry {
    pub source: char,
    pub replacement: String,
    pub note: String,
}

/// Syllable substitution table. Construction enforces unique sources,
/// `source != replacement`, and that no replacement contains a source
/// syllable, so a single application is already a fixed point.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyllableMap {
    entries: Vec<MapEntry>,
    index: HashMap<char, usize>,
}

impl SyllableMap {
    pub fn new(entries: Vec<MapEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if !is_syllable(e.source) {
                return Err(Error::InvalidSyllableMap(format!(
                    "source {:?} is not a precomposed Hangul syllable",
                    e.source
                )));
            }
            if e.replacement.is_empty() {
                return Err(Error::InvalidSyllableMap(format!(
                    "empty replacement for {}",
                    e.source
                )));
            }
            if e.replacement.chars().eq(std::iter::once(e.source)) {
                return Err(Error::InvalidSyllableMap(format!(
                    "{} maps to itself",
                    e.source
                )));
            }
            if index.insert(e.source, i).is_some() {
                return Err(Error::InvalidSyllableMap(format!(
                    "duplicate source {}",
                    e.source
                )));
            }
        }
        for e in &entries {
            if let Some(c) = e.replacement.chars().find(|c| index.contains_key(c)) {
                return Err(Error::InvalidSyllableMap(format!(
                    "replacement {:?} for {} contains mapped syllable {}",
                    e.replacement, e.source, c
                )));
            }
        }
        Ok(Self { entries, index })
    }

    /// Parses `source<TAB>replacement<TAB>note` lines; `#` lines and blank
    /// lines are skipped. The note column is optional.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let source = cols.next().unwrap_or_default().trim();
            let replacement = cols.next().map(str::trim).unwrap_or_default();
            let note = cols.next().map(str::trim).unwrap_or_default();
            let mut chars = source.chars();
            let (Some(src), None) = (chars.next(), chars.next()) else {
                return Err(Error::InvalidSyllableMap(format!(
                    "line {}: source must be exactly one syllable",
                    n + 1
                )));
            };
            if replacement.is_empty() {
                return Err(Error::InvalidSyllableMap(format!(
                    "line {}: missing replacement",
                    n + 1
                )));
            }
            entries.push(MapEntry {
                source: src,
                replacement: replacement.to_string(),
                note: note.to_string(),
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_utf8(path)?)
    }

    /// The six published DPRK→ROK example mappings.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/syllable_map.tsv")).expect("bundled map is valid")
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.source, e.replacement, e.note));
        }
        s
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn get(&self, source: char) -> Option<&str> {
        self.index
            .get(&source)
            .map(|&i| self.entries[i].replacement.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Replaces every mapped syllable in one left-to-right pass.
pub fn apply_map(text: &str, map: &SyllableMap) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match map.get(ch) {
            Some(rep) => out.push_str(rep),
            None => out.push(ch),
        }
    }
    out
}

/// Syllables of `texts` absent from `covered`, with occurrence counts,
/// most frequent first and ties by codepoint.
pub fn count_novel_syllables<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    covered: &HashSet<char>,
) -> Vec<(char, u64)> {
    let mut counts: HashMap<char, u64> = HashMap::new();
    for text in texts {
        let normalized = compose_jamo(text);
        for ch in normalized.chars().filter(|&c| is_syllable(c)) {
            if !covered.contains(&ch) {
                *counts.entry(ch).or_default() += 1;
            }
        }
    }
    let mut out: Vec<_> = counts.into_iter().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Hangul syllables used by the corpus that occur in no vocabulary token.
pub fn find_novel_syllables(corpus: &Corpus, vocab: &Vocabulary) -> Vec<(char, u64)> {
    let covered = vocab.characters();
    count_novel_syllables(corpus.sentences(), &covered)
}
