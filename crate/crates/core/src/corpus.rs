//! Document store, ingestion from JSON-lines / HTML / NLI TSV, and
//! deterministic train/validation splits.

use crate::error::{read_utf8, write_file, Error, Result};
use rayon::prelude::*;
use regex::Regex;
use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Rodong,
    Newyear,
    Nli,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub date: Option<String>,
    #[serde(default)]
    pub title: String,
    pub sentences: Vec<String>,
    #[serde(default)]
    pub source_tag: SourceTag,
}

impl Document {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.sentences.is_empty() {
            return Err("no sentences".into());
        }
        if let Some(i) = self.sentences.iter().position(|s| s.trim().is_empty()) {
            return Err(format!("sentence {i} is empty"));
        }
        if let Some(d) = &self.date {
            if !iso_date_regex().is_match(d) {
                return Err(format!("date {d:?} is not an ISO-8601 day"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    /// Fails on duplicate ids or documents violating their invariants.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &documents {
            d.validate()
                .map_err(|e| Error::Config(format!("document {:?}: {e}", d.id)))?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Config(format!("duplicate document id {:?}", d.id)));
            }
        }
        Ok(Self { documents })
    }

    /// Wraps plain sentences, one document per sentence.
    pub fn from_sentences(prefix: &str, tag: SourceTag, sentences: &[String]) -> Result<Self> {
        let docs = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| Document {
                id: format!("{prefix}-{i:06}"),
                date: None,
                title: String::new(),
                sentences: vec![s.clone()],
                source_tag: tag,
            })
            .collect();
        Self::new(docs)
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Total sentence count.
    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.documents
            .iter()
            .flat_map(|d| d.sentences.iter().map(String::as_str))
    }

    /// Applies `f` to every sentence, dropping sentences that become empty.
    pub fn map_sentences(&self, f: impl Fn(&str) -> String) -> Corpus {
        let documents = self
            .documents
            .iter()
            .filter_map(|d| {
                let sentences: Vec<String> = d
                    .sentences
                    .iter()
                    .map(|s| f(s).trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                (!sentences.is_empty()).then(|| Document {
                    sentences,
                    ..d.clone()
                })
            })
            .collect();
        Corpus { documents }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serde_json::to_string(d).expect("document serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_jsonl().as_bytes())
    }
}

/// Lines that failed to parse, 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub malformed: Vec<(usize, String)>,
}

impl IngestReport {
    pub fn is_clean(&self) -> bool {
        self.malformed.is_empty()
    }

    pub fn lines(&self) -> Vec<usize> {
        self.malformed.iter().map(|(l, _)| *l).collect()
    }
}

pub fn parse_jsonl(text: &str) -> (Corpus, IngestReport) {
    let mut docs = Vec::new();
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Document>(line)
            .map_err(|e| e.to_string())
            .and_then(|d| d.validate().map(|_| d))
            .and_then(|d| {
                if seen.contains(&d.id) {
                    Err(format!("duplicate id {:?}", d.id))
                } else {
                    Ok(d)
                }
            });
        match parsed {
            Ok(d) => {
                seen.insert(d.id.clone());
                docs.push(d);
            }
            Err(e) => report.malformed.push((i + 1, e)),
        }
    }
    (Corpus { documents: docs }, report)
}

/// Reads a JSON-lines corpus. Malformed lines are skipped and listed in
/// the report rather than failing the whole file.
pub fn ingest_jsonl(path: &Path) -> Result<(Corpus, IngestReport)> {
    Ok(parse_jsonl(&read_utf8(path)?))
}

/// Splits text after any terminator that is followed by whitespace or the
/// end of the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRule {
    pub terminators: Vec<char>,
}

impl Default for SentenceRule {
    fn default() -> Self {
        Self {
            terminators: vec!['.', '!', '?', '。'],
        }
    }
}

impl SentenceRule {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_utf8(path)?)?)
    }

    pub fn split(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            cur.push(c);
            if self.terminators.contains(&c) && chars.peek().is_none_or(|n| n.is_whitespace()) {
                push_sentence(&mut out, &cur);
                cur.clear();
            }
        }
        push_sentence(&mut out, &cur);
        out
    }
}

fn push_sentence(out: &mut Vec<String>, raw: &str) {
    let s = normalize_whitespace(raw);
    if !s.is_empty() {
        out.push(s);
    }
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// CSS selectors for pulling an article out of a page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRules {
    pub title: String,
    #[serde(default)]
    pub date: Option<String>,
    /// Each matching element is one paragraph.
    pub body: String,
    #[serde(default)]
    pub source_tag: SourceTag,
    #[serde(default)]
    pub sentence_rule: SentenceRule,
}

impl ExtractionRules {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_utf8(path)?)?)
    }

    fn selector(css: &str, field: &str) -> Result<Selector> {
        Selector::parse(css)
            .map_err(|e| Error::InvalidRules(format!("{field} selector {css:?}: {e}")))
    }
}

fn iso_date_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{4}-\d{2}-\d{2}$").expect("valid regex"))
}

fn loose_date_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(\d{4})\)?\s*[-./년]\s*(\d{1,2})\s*[-./월]\s*(\d{1,2})").expect("valid regex")
    })
}

/// Finds the first `YYYY-MM-DD`-like date (also `YYYY.MM.DD` and
/// `YYYY년 M월 D일`) and returns it in ISO form.
pub fn parse_date(text: &str) -> Option<String> {
    let caps = loose_date_regex().captures(text)?;
    let y: u32 = caps[1].parse().ok()?;
    let m: u32 = caps[2].parse().ok()?;
    let d: u32 = caps[3].parse().ok()?;
    ((1..=12).contains(&m) && (1..=31).contains(&d)).then(|| format!("{y:04}-{m:02}-{d:02}"))
}

fn element_text(el: scraper::ElementRef<'_>) -> String {
    normalize_whitespace(&el.text().collect::<String>())
}

pub fn extract_article(id: &str, html: &str, rules: &ExtractionRules) -> Result<Document> {
    let title_sel = ExtractionRules::selector(&rules.title, "title")?;
    let body_sel = ExtractionRules::selector(&rules.body, "body")?;
    let date_sel = rules
        .date
        .as_deref()
        .map(|css| ExtractionRules::selector(css, "date"))
        .transpose()?;

    let page = Html::parse_document(html);
    let title = page
        .select(&title_sel)
        .map(element_text)
        .find(|t| !t.is_empty())
        .ok_or(Error::MissingField("title"))?;

    let date = match &date_sel {
        Some(sel) => Some(
            page.select(sel)
                .find_map(|el| parse_date(&element_text(el)))
                .ok_or(Error::MissingField("date"))?,
        ),
        None => None,
    };

    let paragraphs: Vec<String> = page.select(&body_sel).map(element_text).collect();
    if paragraphs.is_empty() {
        return Err(Error::MissingField("body"));
    }
    let sentences: Vec<String> = paragraphs
        .iter()
        .filter(|p| !p.is_empty())
        .flat_map(|p| rules.sentence_rule.split(p))
        .collect();
    if sentences.is_empty() {
        return Err(Error::MissingField("body"));
    }

    Ok(Document {
        id: id.to_string(),
        date,
        title,
        sentences,
        source_tag: rules.source_tag,
    })
}

/// Extracts every `*.html` file of a directory. The document id is the file
/// stem; pages that fail extraction are reported, not fatal.
pub fn ingest_html_dir(dir: &Path, rules: &ExtractionRules) -> Result<(Corpus, Vec<(PathBuf, Error)>)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "html" || x == "htm"))
        .collect();
    paths.sort();

    let results: Vec<(PathBuf, Result<Document>)> = paths
        .into_par_iter()
        .map(|p| {
            let doc = read_utf8(&p).and_then(|html| {
                let id = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                extract_article(&id, &html, rules)
            });
            (p, doc)
        })
        .collect();

    let mut docs = Vec::new();
    let mut failures = Vec::new();
    for (p, r) in results {
        match r {
            Ok(d) => docs.push(d),
            Err(e) => failures.push((p, e)),
        }
    }
    Ok((Corpus::new(docs)?, failures))
}

/// Position of a document id in [0, 1), stable across runs and platforms.
pub fn split_key(id: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    let v = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

/// Document-level split: a document goes to train when its hashed key is
/// below `train_fraction`.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let (train, valid): (Vec<_>, Vec<_>) = corpus
        .documents
        .iter()
        .cloned()
        .partition(|d| split_key(&d.id, seed) < train_fraction);
    Ok((Corpus { documents: train }, Corpus { documents: valid }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliSplit {
    Train,
    Dev,
    Test,
}

impl NliSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            NliSplit::Train => "train",
            NliSplit::Dev => "dev",
            NliSplit::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(NliSplit::Train),
            "dev" | "valid" | "validation" => Some(NliSplit::Dev),
            "test" => Some(NliSplit::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NliRecord {
    pub premise: String,
    pub hypothesis: String,
    pub split: NliSplit,
}

/// Tab-separated with a `premise`, `hypothesis`, `split` header row.
pub fn parse_nli_tsv(text: &str) -> Result<Vec<NliRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Config(format!("NLI file lacks a {name:?} column")))
    };
    let (p, h, s) = (col("premise")?, col("hypothesis")?, col("split")?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let premise = row.get(p).unwrap_or_default().trim().to_string();
        let hypothesis = row.get(h).unwrap_or_default().trim().to_string();
        if premise.is_empty() || hypothesis.is_empty() {
            return Err(Error::Config(format!("NLI line {line}: empty premise or hypothesis")));
        }
        let split = NliSplit::parse(row.get(s).unwrap_or_default())
            .ok_or_else(|| Error::Config(format!("NLI line {line}: unknown split")))?;
        out.push(NliRecord {
            premise,
            hypothesis,
            split,
        });
    }
    Ok(out)
}

pub fn load_nli_tsv(path: &Path) -> Result<Vec<NliRecord>> {
    parse_nli_tsv(&read_utf8(path)?)
}

/// Premise and hypothesis joined by one space, in input order.
pub fn nli_to_sentences(records: &[NliRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| format!("{} {}", r.premise, r.hypothesis))
        .collect()
}

/// One document per split (`nli-dev`, `nli-test`, ...).
pub fn nli_corpus(records: &[NliRecord]) -> Result<Corpus> {
    let mut by_split: HashMap<NliSplit, Vec<NliRecord>> = HashMap::new();
    for r in records {
        by_split.entry(r.split).or_default().push(r.clone());
    }
    let mut docs = Vec::new();
    for split in [NliSplit::Train, NliSplit::Dev, NliSplit::Test] {
        if let Some(rs) = by_split.get(&split) {
            docs.push(Document {
                id: format!("nli-{}", split.as_str()),
                date: None,
                title: format!("NLI {}", split.as_str()),
                sentences: nli_to_sentences(rs),
                source_tag: SourceTag::Nli,
            });
        }
    }
    Corpus::new(docs)
}

/// Source of page bodies for [`Fetcher`].
pub trait Transport {
    fn get(&mut self, url: &str) -> Result<String>;
}

#[cfg(feature = "http")]
pub struct HttpTransport {
    user_agent: String,
}

#[cfg(feature = "http")]
impl HttpTransport {
    pub fn new(user_agent: impl Into<String>) -> Self {
        Self {
            user_agent: user_agent.into(),
        }
    }
}

#[cfg(feature = "http")]
impl Transport for HttpTransport {
    fn get(&mut self, url: &str) -> Result<String> {
        let mut resp = ureq::get(url)
            .header("User-Agent", &self.user_agent)
            .call()
            .map_err(|e| Error::Fetch(format!("{url}: {e}")))?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| Error::Fetch(format!("{url}: {e}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchSummary {
    pub fetched: usize,
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
}

/// Sequential page fetcher with a politeness delay between requests and an
/// append-only journal of completed URLs, so an interrupted crawl resumes
/// where it stopped.
pub struct Fetcher<T: Transport> {
    transport: T,
    delay: std::time::Duration,
    journal: PathBuf,
    done: HashSet<String>,
    sleep: Box<dyn FnMut(std::time::Duration) + Send>,
}

impl<T: Transport> Fetcher<T> {
    pub const DEFAULT_DELAY: std::time::Duration = std::time::Duration::from_secs(2);

    pub fn new(transport: T, journal: impl Into<PathBuf>) -> Result<Self> {
        let journal = journal.into();
        let done = match std::fs::read_to_string(&journal) {
            Ok(s) => s.lines().filter(|l| !l.is_empty()).map(str::to_string).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashSet::new(),
            Err(e) => return Err(Error::io(&journal, e)),
        };
        Ok(Self {
            transport,
            delay: Self::DEFAULT_DELAY,
            journal,
            done,
            sleep: Box::new(std::thread::sleep),
        })
    }

    pub fn with_delay(mut self, delay: std::time::Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_sleeper(mut self, sleep: impl FnMut(std::time::Duration) + Send + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    pub fn is_done(&self, url: &str) -> bool {
        self.done.contains(url)
    }

    /// Fetches each URL not yet in the journal and hands the body to
    /// `on_page`; the URL is journaled only after `on_page` succeeds.
    pub fn fetch_all<'u>(
        &mut self,
        urls: impl IntoIterator<Item = &'u str>,
        mut on_page: impl FnMut(&str, String) -> Result<()>,
    ) -> Result<FetchSummary> {
        use std::io::Write;
        let mut summary = FetchSummary::default();
        let mut first = true;
        for url in urls {
            if self.done.contains(url) {
                summary.skipped += 1;
                continue;
            }
            if !first {
                (self.sleep)(self.delay);
            }
            first = false;
            match self.transport.get(url).and_then(|body| on_page(url, body)) {
                Ok(()) => {
                    let mut f = std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&self.journal)
                        .map_err(|e| Error::io(&self.journal, e))?;
                    writeln!(f, "{url}").map_err(|e| Error::io(&self.journal, e))?;
                    self.done.insert(url.to_string());
                    summary.fetched += 1;
                }
                Err(e) => summary.failed.push((url.to_string(), e.to_string())),
            }
        }
        Ok(summary)
    }
}
