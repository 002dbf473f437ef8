use crate::args::*;
use crate::config::{self, ConfigFile};
use crate::manifest::{RunContext, StageExt};
use anyhow::{anyhow, bail, Result};
use hanmlm::corpus::{
    ingest_html_dir, ingest_jsonl, load_nli_tsv, nli_corpus, parse_jsonl, split_corpus, ExtractionRules,
};
use hanmlm::eval::{
    curves_csv, curves_svg, evaluate_models, parse_grid, sweep_lambda, Curve, EvalReport, ReportFormat, SweepTable,
};
use hanmlm::hangul::{apply_map, count_novel_syllables, SyllableMap};
use hanmlm::model::{init_params, load_checkpoint_for_vocab, save_checkpoint, ModelParams};
use hanmlm::synthetic::SyntheticCorpora;
use hanmlm::tokenizer::{build_vocab, Encoding, Vocabulary};
use hanmlm::training::{prepare_examples, train, TrainLog, TrainObserver, TrainRecord};
use serde_json::json;
use std::path::{Path, PathBuf};

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

/// Sentences of a `.jsonl` corpus, or the non-blank lines of any other
/// file. Malformed corpus lines are skipped with a warning.
pub fn read_sentences(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    if is_jsonl(path) {
        let (corpus, report) = parse_jsonl(&text);
        if !report.is_clean() {
            eprintln!("warning: {}: skipped malformed lines {:?}", path.display(), report.lines());
        }
        Ok(corpus.sentences().map(str::to_string).collect())
    } else {
        Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
    }
}

/// `name=path`, or a bare path named after its file stem (its directory
/// for files called `model.ckpt`).
fn named(spec: &str) -> (String, PathBuf) {
    if let Some((name, path)) = spec.split_once('=') {
        return (name.to_string(), PathBuf::from(path));
    }
    let path = PathBuf::from(spec);
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = if stem == "model" {
        path.parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or(stem)
    } else {
        stem
    };
    (name, path)
}

fn load_vocab(ctx: &mut RunContext, path: &Path) -> Result<Vocabulary> {
    ctx.input(path, "loading vocabulary")?;
    Vocabulary::load(path).stage("loading vocabulary")
}

fn load_model(ctx: &mut RunContext, path: &Path, vocab: &Vocabulary) -> Result<ModelParams<f64>> {
    ctx.input(path, "loading checkpoint")?;
    load_checkpoint_for_vocab(path, vocab.len()).stage("loading checkpoint")
}

fn load_datasets(
    ctx: &mut RunContext,
    specs: &[String],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<(String, Vec<Encoding>)>> {
    let mut out = Vec::new();
    for spec in specs {
        let (name, path) = named(spec);
        ctx.input(&path, "reading corpora")?;
        let sentences = read_sentences(&path).stage("reading corpora")?;
        let examples = prepare_examples(sentences.iter().map(String::as_str), vocab, max_len);
        if examples.is_empty() {
            return Err(anyhow!("{}: no usable sentences", path.display())).stage("reading corpora");
        }
        out.push((name, examples));
    }
    Ok(out)
}

fn report_format(f: Format) -> ReportFormat {
    match f {
        Format::TableText => ReportFormat::TableText,
        Format::Json => ReportFormat::Json,
        Format::Csv => ReportFormat::Csv,
    }
}

fn formats(only: Option<Format>) -> Vec<Format> {
    only.map_or_else(|| vec![Format::TableText, Format::Json, Format::Csv], |f| vec![f])
}

fn curve_field(f: CurveField) -> (&'static str, fn(&TrainRecord) -> f64) {
    match f {
        CurveField::CrossLingualL2 => ("cross-lingual L2", |r| r.cross_lingual_l2),
        CurveField::MlmLoss => ("MLM loss", |r| r.mlm_loss),
        CurveField::Penalty => ("penalty", |r| r.penalty),
        CurveField::TotalLoss => ("total loss", |r| r.total_loss),
        CurveField::Lr => ("learning rate", |r| r.lr),
    }
}

fn write_curves(
    ctx: &mut RunContext,
    dir: &Path,
    logs: &[(String, &TrainLog)],
    field: CurveField,
    by: CurveAxis,
) -> Result<()> {
    let (label, get) = curve_field(field);
    let curves: Vec<Curve> = logs
        .iter()
        .map(|(name, log)| match by {
            CurveAxis::Step => Curve::from_steps(name.clone(), log, get),
            CurveAxis::Epoch => Curve::from_epochs(name.clone(), log, get),
        })
        .collect();
    let x = match by {
        CurveAxis::Step => "step",
        CurveAxis::Epoch => "epoch",
    };
    ctx.write(&dir.join("curves.csv"), curves_csv(&curves).stage("writing outputs")?)?;
    ctx.write(&dir.join("curves.svg"), curves_svg(&curves, &format!("{label} by {x}"), x, label))
}

struct Progress {
    records_per_epoch: Vec<(f64, usize)>,
}

impl<T> TrainObserver<T> for Progress {
    fn on_step(&mut self, r: &TrainRecord) {
        if self.records_per_epoch.len() <= r.epoch {
            self.records_per_epoch.resize(r.epoch + 1, (0.0, 0));
        }
        let e = &mut self.records_per_epoch[r.epoch];
        e.0 += r.mlm_loss;
        e.1 += 1;
    }

    fn on_epoch_end(&mut self, epoch: usize, _params: &ModelParams<T>) {
        if let Some((sum, n)) = self.records_per_epoch.get(epoch) {
            eprintln!("epoch {}: mean MLM loss {:.4}", epoch + 1, sum / (*n).max(1) as f64);
        }
    }
}

pub fn ingest(ctx: &mut RunContext, a: &IngestArgs) -> Result<()> {
    ctx.input(&a.input, "reading input")?;
    let corpus = match a.format {
        IngestFormat::Jsonl => {
            let (corpus, report) = ingest_jsonl(&a.input).stage("parsing input")?;
            if !report.is_clean() {
                eprintln!("warning: skipped malformed lines {:?}", report.lines());
            }
            corpus
        }
        IngestFormat::HtmlDir => {
            let rules_path = a.rules.as_deref().ok_or_else(|| anyhow!("--rules is required for html-dir"));
            let rules_path = rules_path.stage("reading rules")?;
            ctx.input(rules_path, "reading rules")?;
            let rules = ExtractionRules::load(rules_path).stage("reading rules")?;
            let (corpus, failures) = ingest_html_dir(&a.input, &rules).stage("extracting articles")?;
            for (p, e) in &failures {
                eprintln!("warning: {}: {e}", p.display());
            }
            corpus
        }
        IngestFormat::NliTsv => {
            let records = load_nli_tsv(&a.input).stage("parsing input")?;
            nli_corpus(&records).stage("parsing input")?
        }
    };
    ctx.manifest.config = json!({ "format": format!("{:?}", a.format), "train_fraction": a.train_fraction, "split_seed": a.split_seed });
    let out = ctx.out_path(&a.out);
    match (a.train_fraction, &a.valid_out) {
        (Some(fraction), Some(valid)) => {
            ctx.manifest.seed = Some(a.split_seed);
            let (train, valid_corpus) = split_corpus(&corpus, fraction, a.split_seed).stage("splitting")?;
            ctx.write(&out, train.to_jsonl())?;
            ctx.write(&ctx.out_path(valid), valid_corpus.to_jsonl())?;
            eprintln!("{} documents: {} train, {} validation", corpus.len(), train.len(), valid_corpus.len());
        }
        _ => {
            ctx.write(&out, corpus.to_jsonl())?;
            eprintln!("{} documents, {} sentences", corpus.len(), corpus.sentence_count());
        }
    }
    Ok(())
}

fn load_map(ctx: &mut RunContext, path: Option<&Path>) -> Result<SyllableMap> {
    match path {
        Some(p) => {
            ctx.input(p, "reading input")?;
            SyllableMap::load(p).stage("loading syllable map")
        }
        None => Ok(SyllableMap::builtin()),
    }
}

pub fn map_syllables(ctx: &mut RunContext, a: &MapSyllablesArgs) -> Result<()> {
    ctx.input(&a.input, "reading input")?;
    let map = load_map(ctx, a.map.as_deref())?;
    ctx.manifest.config = json!({ "map": map.to_tsv() });
    let out = ctx.out_path(&a.out);
    if is_jsonl(&a.input) {
        let (corpus, report) = ingest_jsonl(&a.input).stage("reading input")?;
        if !report.is_clean() {
            eprintln!("warning: skipped malformed lines {:?}", report.lines());
        }
        ctx.write(&out, corpus.map_sentences(|s| apply_map(s, &map)).to_jsonl())
    } else {
        let text = std::fs::read_to_string(&a.input).map_err(|e| anyhow!("{}: {e}", a.input.display()));
        let text = text.stage("reading input")?;
        let mapped: String = text.lines().map(|l| apply_map(l, &map) + "\n").collect();
        ctx.write(&out, mapped)
    }
}

pub fn find_novel(ctx: &mut RunContext, a: &FindNovelArgs) -> Result<()> {
    ctx.input(&a.input, "reading input")?;
    let vocab = load_vocab(ctx, &a.vocab)?;
    let sentences = read_sentences(&a.input).stage("reading input")?;
    let novel = count_novel_syllables(sentences.iter().map(String::as_str), &vocab.characters());
    let tsv: String = novel.iter().map(|(c, n)| format!("{c}\t{n}\n")).collect();
    match &a.out {
        Some(p) => ctx.write(&ctx.out_path(p), tsv)?,
        None => print!("{tsv}"),
    }
    eprintln!("{} novel syllables", novel.len());
    Ok(())
}

pub fn build_vocab_cmd(ctx: &mut RunContext, a: &BuildVocabArgs) -> Result<()> {
    let mut sentences = Vec::new();
    for p in &a.input {
        ctx.input(p, "reading input")?;
        sentences.extend(read_sentences(p).stage("reading input")?);
    }
    ctx.manifest.config = json!({ "size": a.size, "min_frequency": a.min_frequency });
    let vocab = build_vocab(sentences.iter().map(String::as_str), a.size, a.min_frequency).stage("building vocabulary")?;
    ctx.write(&ctx.out_path(&a.out), vocab.to_text())?;
    eprintln!("{} tokens", vocab.len());
    Ok(())
}

pub fn tokenize(ctx: &mut RunContext, a: &TokenizeArgs) -> Result<()> {
    let vocab = load_vocab(ctx, &a.vocab)?;
    let lines = match (&a.input, &a.text) {
        (Some(p), _) => {
            ctx.input(p, "reading input")?;
            read_sentences(p).stage("reading input")?
        }
        (None, Some(t)) => vec![t.clone()],
        (None, None) => unreachable!("clap requires one of --input/--text"),
    };
    let mut out = String::new();
    for line in &lines {
        let t = vocab.tokenize(line);
        let rendered: Vec<String> = if a.ids {
            t.token_ids.iter().map(u32::to_string).collect()
        } else {
            vocab.pieces(&t.token_ids).into_iter().map(str::to_string).collect()
        };
        out.push_str(&rendered.join(" "));
        out.push('\n');
    }
    match &a.out {
        Some(p) => ctx.write(&ctx.out_path(p), out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

pub fn train_cmd(ctx: &mut RunContext, a: &TrainArgs) -> Result<()> {
    let out = ctx.out_path(&a.out);
    if let Some(c) = &a.train.config {
        ctx.input(c, "reading config")?;
    }
    let file = ConfigFile::load(a.train.config.as_deref()).stage("reading config")?;
    ctx.input(&a.corpus, "reading corpus")?;
    let vocab = load_vocab(ctx, &a.vocab)?;
    let base = match &a.base {
        Some(p) => load_model(ctx, p, &vocab)?,
        None => {
            let mc = config::model_config(&a.model, &file, vocab.len()).stage("resolving config")?;
            init_params(&mc, a.model.init_seed)
        }
    };
    let mut tc = config::train_config(&a.train, &file, a.lambda).stage("resolving config")?;
    tc.checkpoint_dir = Some(out.join("checkpoints"));
    let max_len = config::max_len(a.train.max_len, &file, base.config()).stage("resolving config")?;
    ctx.manifest.seed = Some(tc.seed);
    ctx.manifest.config = json!({
        "train": tc,
        "model": base.config(),
        "max_len": max_len,
        "init_seed": a.base.is_none().then_some(a.model.init_seed),
    });

    let sentences = read_sentences(&a.corpus).stage("reading corpus")?;
    let examples = prepare_examples(sentences.iter().map(String::as_str), &vocab, max_len);
    eprintln!(
        "training on {} sentences, λ={}, {} epochs, {} parameters",
        examples.len(),
        tc.lambda,
        tc.epochs,
        base.num_parameters()
    );
    let mut progress = Progress {
        records_per_epoch: Vec::new(),
    };
    let outcome = train(&examples, &base, &tc, &mut progress).stage("training")?;
    for c in &outcome.checkpoints {
        ctx.output(c);
    }
    let model_path = out.join("model.ckpt");
    save_checkpoint(&model_path, &outcome.params).stage("writing outputs")?;
    ctx.output(&model_path);
    ctx.write(&out.join("train_log.jsonl"), outcome.log.to_jsonl())?;
    write_curves(ctx, &out, &[("train".into(), &outcome.log)], CurveField::CrossLingualL2, CurveAxis::Step)?;
    eprintln!("model written to {}", model_path.display());
    Ok(())
}

pub fn evaluate(ctx: &mut RunContext, a: &EvaluateArgs) -> Result<()> {
    let out = ctx.out_path(&a.out);
    if let Some(c) = &a.config {
        ctx.input(c, "reading config")?;
    }
    let file = ConfigFile::load(a.config.as_deref()).stage("reading config")?;
    let ec = config::eval_config(&a.eval, &file).stage("resolving config")?;
    let vocab = load_vocab(ctx, &a.vocab)?;
    let mut models = Vec::new();
    for spec in &a.model {
        let (name, path) = named(spec);
        models.push((name, load_model(ctx, &path, &vocab)?));
    }
    let max_position = models.iter().map(|(_, m)| m.config().max_position).min().expect("at least one model");
    let max_len = a.max_len.or(file.max_len).unwrap_or(max_position);
    if max_len < 3 || max_len > max_position {
        return Err(anyhow!("max_len {max_len} must be in 3..={max_position}")).stage("resolving config");
    }
    ctx.manifest.config = json!({ "eval": ec, "max_len": max_len });
    let datasets = load_datasets(ctx, &a.corpora, &vocab, max_len)?;
    let refs: Vec<(String, &ModelParams<f64>)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    let report = evaluate_models(&refs, &datasets, &ec).stage("evaluating")?;
    for f in formats(a.format) {
        let format = report_format(f);
        let text = report.render(format).stage("writing outputs")?;
        ctx.write(&out.join(format!("report.{}", format.extension())), text)?;
    }
    print!("{}", report.to_table_text());
    Ok(())
}

pub fn sweep(ctx: &mut RunContext, a: &SweepArgs) -> Result<()> {
    let out = ctx.out_path(&a.out);
    if let Some(c) = &a.train.config {
        ctx.input(c, "reading config")?;
    }
    let file = ConfigFile::load(a.train.config.as_deref()).stage("reading config")?;
    let grid = parse_grid(&a.lambdas).stage("resolving config")?;
    let tc = config::train_config(&a.train, &file, None).stage("resolving config")?;
    let ec = config::eval_config(&a.eval, &file).stage("resolving config")?;
    ctx.input(&a.corpus, "reading corpus")?;
    let vocab = load_vocab(ctx, &a.vocab)?;
    let base = load_model(ctx, &a.base, &vocab)?;
    let max_len = config::max_len(a.train.max_len, &file, base.config()).stage("resolving config")?;
    ctx.manifest.seed = Some(tc.seed);
    ctx.manifest.config = json!({ "lambdas": grid, "train": tc, "eval": ec, "max_len": max_len });

    let sentences = read_sentences(&a.corpus).stage("reading corpus")?;
    let examples = prepare_examples(sentences.iter().map(String::as_str), &vocab, max_len);
    let datasets = load_datasets(ctx, &a.corpora, &vocab, max_len)?;
    eprintln!("sweeping {} values of λ over {} sentences", grid.len(), examples.len());
    let outcome =
        sweep_lambda(&grid, &examples, &base, &tc, &datasets, &ec, a.parallel_runs).stage("sweeping")?;
    let table: &SweepTable = &outcome.table;
    if table.rows.iter().all(|r| r.report.is_none()) {
        let first = table.rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(anyhow!("every run failed; first error: {first}")).stage("sweeping");
    }
    for r in table.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("warning: λ={} failed: {}", r.lambda, r.error.as_deref().unwrap_or(""));
    }

    ctx.write(&out.join("sweep.txt"), table.to_table_text())?;
    ctx.write(&out.join("sweep.json"), table.to_json())?;
    ctx.write(&out.join("sweep.csv"), table.to_csv().stage("writing outputs")?)?;
    let mut logs = Vec::new();
    for (lambda, log) in grid.iter().zip(&outcome.logs) {
        if let Some(log) = log {
            ctx.write(&out.join(format!("logs/lambda-{lambda}.jsonl")), log.to_jsonl())?;
            logs.push((format!("λ={lambda}"), log));
        }
    }
    write_curves(ctx, &out, &logs, CurveField::CrossLingualL2, CurveAxis::Epoch)?;
    if a.save_models {
        for (lambda, params) in grid.iter().zip(&outcome.models) {
            if let Some(p) = params {
                let path = out.join(format!("models/lambda-{lambda}.ckpt"));
                save_checkpoint(&path, p).stage("writing outputs")?;
                ctx.output(&path);
            }
        }
    }
    print!("{}", table.to_table_text());
    Ok(())
}

pub fn report(ctx: &mut RunContext, a: &ReportArgs) -> Result<()> {
    if let Some(specs) = &a.logs {
        let dir = ctx.out_path(a.out.as_deref().unwrap_or(Path::new("report")));
        let mut loaded = Vec::new();
        for spec in specs {
            let (name, path) = named(spec);
            ctx.input(&path, "reading logs")?;
            loaded.push((name, TrainLog::load(&path).stage("reading logs")?));
        }
        let refs: Vec<(String, &TrainLog)> = loaded.iter().map(|(n, l)| (n.clone(), l)).collect();
        ctx.manifest.config = json!({ "field": format!("{:?}", a.field), "by": format!("{:?}", a.by) });
        return write_curves(ctx, &dir, &refs, a.field, a.by);
    }

    let input = a.input.as_deref().expect("clap requires --input or --logs");
    ctx.input(input, "reading input")?;
    let text = std::fs::read_to_string(input).map_err(|e| anyhow!("{}: {e}", input.display()));
    let text = text.stage("reading input")?;
    let value: serde_json::Value = serde_json::from_str(&text).stage("parsing input")?;
    let rendered = if value.get("models").is_some() {
        EvalReport::from_json(&text).stage("parsing input")?.render(report_format(a.format)).stage("rendering")?
    } else if value.get("rows").is_some() {
        let t = SweepTable::from_json(&text).stage("parsing input")?;
        match a.format {
            Format::TableText => t.to_table_text(),
            Format::Json => t.to_json(),
            Format::Csv => t.to_csv().stage("rendering")?,
        }
    } else {
        bail!(crate::manifest::StageFailure {
            stage: "parsing input",
            message: format!("{} is neither an evaluation report nor a sweep table", input.display()),
        });
    };
    ctx.manifest.config = json!({ "format": format!("{:?}", a.format) });
    match &a.out {
        Some(p) => ctx.write(&ctx.out_path(p), rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

pub fn generate_synthetic(ctx: &mut RunContext, a: &GenerateArgs) -> Result<()> {
    ctx.manifest.seed = Some(a.seed);
    ctx.manifest.config = json!({ "train": a.train, "test": a.test, "seed": a.seed });
    let corpora = SyntheticCorpora::generate(a.train, a.test, a.seed);
    let dir = ctx.out_path(&a.out);
    for (name, sentences) in corpora.splits() {
        let mut text = sentences.join("\n");
        text.push('\n');
        ctx.write(&dir.join(format!("{name}.txt")), text)?;
    }
    Ok(())
}
