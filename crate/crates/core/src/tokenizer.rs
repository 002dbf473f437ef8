//! WordPiece vocabulary construction and greedy subword tokenization.
//!
//! Words are whitespace-delimited with punctuation split off as single
//! character words. Inside a word, pieces after the first carry the `##`
//! continuation prefix. A word that cannot be covered by vocabulary pieces
//! becomes one `[UNK]`.

use crate::error::{read_utf8, write_file, Error, Result};
use crate::hangul::compose_jamo;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

pub type TokenId = u32;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const CLS_ID: TokenId = 2;
pub const SEP_ID: TokenId = 3;
pub const MASK_ID: TokenId = 4;

pub const CONTINUATION: &str = "##";
pub const MAX_WORD_CHARS: usize = 100;

/// Ids that are never masked or counted as content.
pub fn is_structural(id: TokenId) -> bool {
    matches!(id, PAD_ID | CLS_ID | SEP_ID | MASK_ID)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Validates that the five specials occupy ids 0–4 and nowhere else,
    /// that tokens are unique, and that no content token is empty.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::InvalidVocabulary(format!(
                "{} tokens; the five special tokens are required",
                tokens.len()
            )));
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *s {
                return Err(Error::InvalidVocabulary(format!(
                    "expected {s} at id {i}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if i >= SPECIAL_TOKENS.len() {
                if t.is_empty() || t == CONTINUATION {
                    return Err(Error::InvalidVocabulary(format!("empty token at id {i}")));
                }
                if SPECIAL_TOKENS.contains(&t.as_str()) {
                    return Err(Error::InvalidVocabulary(format!(
                        "special token {t} repeated at id {i}"
                    )));
                }
                if t.chars().any(char::is_whitespace) {
                    return Err(Error::InvalidVocabulary(format!(
                        "token at id {i} contains whitespace"
                    )));
                }
            }
            if id_of.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, id_of })
    }

    /// One token per line, line number = id.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect::<Vec<_>>();
        // A trailing blank line is tolerated; blank lines elsewhere are errors.
        let tokens = match tokens.last() {
            Some(t) if t.is_empty() => tokens[..tokens.len() - 1].to_vec(),
            _ => tokens,
        };
        Self::from_tokens(tokens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_utf8(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Characters that appear in at least one non-special token.
    pub fn characters(&self) -> HashSet<char> {
        self.tokens[SPECIAL_TOKENS.len()..]
            .iter()
            .flat_map(|t| t.strip_prefix(CONTINUATION).unwrap_or(t).chars())
            .collect()
    }

    /// Greedy longest-match-first pieces for one word, or `None` when some
    /// character cannot be matched.
    pub fn tokenize_word(&self, word: &str) -> Option<Vec<TokenId>> {
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
            return None;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::with_capacity(word.len() + 2);
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.extend(&chars[start..end]);
                if let Some(id) = self.id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            let (id, end) = found?;
            pieces.push(id);
            start = end;
        }
        Some(pieces)
    }

    pub fn tokenize(&self, text: &str) -> TokenizedSentence {
        let mut out = TokenizedSentence::default();
        for word in pre_tokenize(text) {
            match self.tokenize_word(&word) {
                Some(ids) => {
                    for (i, id) in ids.into_iter().enumerate() {
                        out.token_ids.push(id);
                        out.word_starts.push(i == 0);
                    }
                }
                None => {
                    out.token_ids.push(UNK_ID);
                    out.word_starts.push(true);
                }
            }
        }
        out
    }

    /// `[CLS] first [SEP]` when `second` is `None`, otherwise
    /// `[CLS] first [SEP] second [SEP]`. Content is trimmed one word at a
    /// time from the end of the longer side until the result fits `max_len`.
    pub fn encode_pair(&self, first: &str, second: Option<&str>, max_len: usize) -> Encoding {
        assert!(max_len >= 3, "max_len must leave room for the special tokens");
        let mut a = self.tokenize(first);
        let mut b = second.map(|s| self.tokenize(s));
        let overhead = if b.is_some() { 3 } else { 2 };
        let budget = max_len.saturating_sub(overhead);
        loop {
            let blen = b.as_ref().map_or(0, TokenizedSentence::len);
            if a.len() + blen <= budget {
                break;
            }
            if a.len() >= blen {
                a.pop();
            } else if let Some(b) = b.as_mut() {
                b.pop();
            }
        }

        let mut enc = Encoding::default();
        enc.push(CLS_ID, 0, false);
        for (&id, &ws) in a.token_ids.iter().zip(&a.word_starts) {
            enc.push(id, 0, ws);
        }
        enc.push(SEP_ID, 0, false);
        if let Some(b) = b {
            for (&id, &ws) in b.token_ids.iter().zip(&b.word_starts) {
                enc.push(id, 1, ws);
            }
            enc.push(SEP_ID, 1, false);
        }
        enc
    }

    pub fn encode(&self, text: &str, max_len: usize) -> Encoding {
        self.encode_pair(text, None, max_len)
    }

    /// Human-readable pieces for a list of ids.
    pub fn pieces(&self, ids: &[TokenId]) -> Vec<&str> {
        ids.iter().map(|&id| self.token(id).unwrap_or(UNK)).collect()
    }
}

/// Subword ids of a text, with `word_starts[i]` true when piece `i` begins
/// a source word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub token_ids: Vec<TokenId>,
    pub word_starts: Vec<bool>,
}

impl TokenizedSentence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Drops the last whole word.
    fn pop(&mut self) {
        while let Some(start) = self.word_starts.pop() {
            self.token_ids.pop();
            if start {
                break;
            }
        }
    }
}

/// Model-ready sequence with special tokens and segment ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Encoding {
    pub token_ids: Vec<TokenId>,
    pub segment_ids: Vec<u8>,
    pub word_starts: Vec<bool>,
}

impl Encoding {
    fn push(&mut self, id: TokenId, segment: u8, word_start: bool) {
        self.token_ids.push(id);
        self.segment_ids.push(segment);
        self.word_starts.push(word_start);
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '。' | '、' | '·' | '…' | '“' | '”' | '‘' | '’' | '《' | '》' | '「' | '」' | '〈' | '〉'
                | '『' | '』' | '（' | '）' | '，' | '．' | '！' | '？' | '：' | '；' | '—' | '–'
        )
}

/// Whitespace split with punctuation emitted as one-character words.
/// Conjoining jamo are composed first.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let text = compose_jamo(text);
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for c in chunk.chars() {
            if is_punctuation(c) {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
                words.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    words
}

/// Builds a WordPiece vocabulary.
///
/// The alphabet is every character with frequency ≥ `min_frequency`, each
/// in both its word-initial and `##` continuation form. Pairs of adjacent
/// pieces are then merged greedily by `count(ab) / (count(a)·count(b))`,
/// ties going to the higher pair count and then the lexicographically
/// smaller merged token, until `target_size` is reached or no pair occurs
/// at least `min_frequency` times.
pub fn build_vocab<'a>(
    sentences: impl IntoIterator<Item = &'a str>,
    target_size: usize,
    min_frequency: u64,
) -> Result<Vocabulary> {
    let min_frequency = min_frequency.max(1);
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for s in sentences {
        for w in pre_tokenize(s) {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut char_counts: BTreeMap<char, u64> = BTreeMap::new();
    for (w, &n) in &word_counts {
        for c in w.chars() {
            *char_counts.entry(c).or_default() += n;
        }
    }
    let alphabet: BTreeSet<char> = char_counts
        .iter()
        .filter(|(_, &n)| n >= min_frequency)
        .map(|(&c, _)| c)
        .collect();

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut initial: BTreeSet<String> = BTreeSet::new();
    for &c in &alphabet {
        initial.insert(c.to_string());
        initial.insert(format!("{CONTINUATION}{c}"));
    }
    let required = tokens.len() + initial.len();
    if target_size < required {
        return Err(Error::VocabularyBudget {
            target: target_size,
            required,
        });
    }
    tokens.extend(initial);
    let mut in_vocab: HashSet<String> = tokens.iter().cloned().collect();

    // Words made only of retained characters take part in merging.
    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .iter()
        .filter(|(w, _)| w.chars().all(|c| alphabet.contains(&c)))
        .map(|(w, &n)| {
            let pieces = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    }
                })
                .collect();
            (pieces, n)
        })
        .collect();

    while tokens.len() < target_size {
        let Some((left, right)) = best_pair(&words, min_frequency) else {
            break;
        };
        let merged = merge_pieces(&left, &right);
        for (pieces, _) in &mut words {
            apply_merge(pieces, &left, &right, &merged);
        }
        if in_vocab.insert(merged.clone()) {
            tokens.push(merged);
        }
    }

    Vocabulary::from_tokens(tokens)
}

pub(crate) fn merge_pieces(left: &str, right: &str) -> String {
    let mut s = left.to_string();
    s.push_str(right.strip_prefix(CONTINUATION).unwrap_or(right));
    s
}

fn apply_merge(pieces: &mut Vec<String>, left: &str, right: &str, merged: &str) {
    if pieces.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(pieces.len());
    let mut i = 0;
    while i < pieces.len() {
        if i + 1 < pieces.len() && pieces[i] == left && pieces[i + 1] == right {
            out.push(merged.to_string());
            i += 2;
        } else {
            out.push(std::mem::take(&mut pieces[i]));
            i += 1;
        }
    }
    *pieces = out;
}

fn best_pair(words: &[(Vec<String>, u64)], min_frequency: u64) -> Option<(String, String)> {
    let mut piece_counts: HashMap<&str, u64> = HashMap::new();
    let mut pair_counts: HashMap<(&str, &str), u64> = HashMap::new();
    for (pieces, n) in words {
        for p in pieces {
            *piece_counts.entry(p.as_str()).or_default() += n;
        }
        for w in pieces.windows(2) {
            *pair_counts.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
        }
    }

    let mut best: Option<((&str, &str), u64, u128, String)> = None;
    for (&(l, r), &count) in &pair_counts {
        if count < min_frequency {
            continue;
        }
        let denom = piece_counts[l] as u128 * piece_counts[r] as u128;
        let merged = merge_pieces(l, r);
        let better = match &best {
            None => true,
            Some((_, bc, bd, bm)) => {
                // count/denom vs bc/bd, compared exactly.
                let lhs = count as u128 * bd;
                let rhs = *bc as u128 * denom;
                lhs > rhs || (lhs == rhs && (count > *bc || (count == *bc && merged < *bm)))
            }
        };
        if better {
            best = Some(((l, r), count, denom, merged));
        }
    }
    best.map(|((l, r), ..)| (l.to_string(), r.to_string()))
}
