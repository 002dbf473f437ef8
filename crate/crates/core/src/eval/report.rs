use super::metrics::{score_repeats, EvalConfig, Normalization};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::tokenizer::Encoding;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: String,
    /// Mean over repeats.
    pub perplexity: f64,
    /// Mean over repeats, percent.
    pub accuracy: f64,
    pub perplexity_repeats: Vec<f64>,
    pub accuracy_repeats: Vec<f64>,
    pub masked_tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub vocab_size: usize,
    pub datasets: Vec<DatasetReport>,
    /// Mean of the per-dataset perplexities.
    pub average_perplexity: f64,
    /// Mean of the per-dataset accuracies.
    pub average_accuracy: f64,
}

impl ModelReport {
    pub fn new(model: String, vocab_size: usize, datasets: Vec<DatasetReport>) -> Self {
        let n = datasets.len().max(1) as f64;
        Self {
            average_perplexity: datasets.iter().map(|d| d.perplexity).sum::<f64>() / n,
            average_accuracy: datasets.iter().map(|d| d.accuracy).sum::<f64>() / n,
            model,
            vocab_size,
            datasets,
        }
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetReport> {
        self.datasets.iter().find(|d| d.dataset == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub normalization: Normalization,
    pub config: EvalConfig,
    pub models: Vec<ModelReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    TableText,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table-text" | "text" | "table" => Ok(Self::TableText),
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::TableText => "txt",
            Self::Json => "json",
            Self::Csv => "csv",
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores every model on every dataset. Each model sees the same masked
/// inputs for a given dataset and repeat.
pub fn evaluate_models<T: Scalar>(
    models: &[(String, &ModelParams<T>)],
    datasets: &[(String, Vec<Encoding>)],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let cells: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..datasets.len()).map(move |d| (m, d)))
        .collect();
    let scored: Vec<Result<DatasetReport>> = cells
        .par_iter()
        .map(|&(m, d)| {
            let (name, examples) = &datasets[d];
            let scores = score_repeats(models[m].1, examples, config).map_err(|e| match e {
                Error::EmptyCorpus => Error::Config(format!("dataset {name} has no scorable sentences")),
                other => other,
            })?;
            let perplexity_repeats: Vec<f64> = scores.iter().map(|s| s.log_perplexity(config.normalization)).collect();
            let accuracy_repeats: Vec<f64> = scores.iter().map(|s| s.accuracy()).collect();
            Ok(DatasetReport {
                dataset: name.clone(),
                perplexity: mean(&perplexity_repeats),
                accuracy: mean(&accuracy_repeats),
                masked_tokens: scores.iter().map(|s| s.tokens).collect(),
                perplexity_repeats,
                accuracy_repeats,
            })
        })
        .collect();
    let mut scored = scored.into_iter();
    let mut reports = Vec::with_capacity(models.len());
    for (name, params) in models {
        let datasets = scored.by_ref().take(datasets.len()).collect::<Result<Vec<_>>>()?;
        reports.push(ModelReport::new(name.clone(), params.config().vocab_size, datasets));
    }
    Ok(EvalReport {
        normalization: config.normalization,
        config: config.clone(),
        models: reports,
    })
}

pub(crate) fn normalization_note(n: Normalization) -> &'static str {
    match n {
        Normalization::PerToken => "log-perplexity: natural log, mean NLL per masked token; accuracy: % of masked tokens",
        Normalization::PerSentence => "log-perplexity: natural log, mean NLL per sentence; accuracy: % of masked tokens",
    }
}

pub(crate) fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

impl EvalReport {
    fn dataset_names(&self) -> Vec<String> {
        self.models
            .first()
            .map(|m| m.datasets.iter().map(|d| d.dataset.clone()).collect())
            .unwrap_or_default()
    }

    /// Fixed-width table, one row per model, values to 3 decimals.
    pub fn to_table_text(&self) -> String {
        let mut header = vec!["model".to_string()];
        for d in self.dataset_names() {
            header.push(format!("{d} ppl"));
            header.push(format!("{d} acc"));
        }
        header.extend(["avg ppl".into(), "avg acc".into(), "vocab".into()]);
        let rows: Vec<Vec<String>> = self
            .models
            .iter()
            .map(|m| {
                let mut row = vec![m.model.clone()];
                for d in &m.datasets {
                    row.push(format!("{:.3}", d.perplexity));
                    row.push(format!("{:.3}", d.accuracy));
                }
                row.push(format!("{:.3}", m.average_perplexity));
                row.push(format!("{:.3}", m.average_accuracy));
                row.push(m.vocab_size.to_string());
                row
            })
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "# {}", normalization_note(self.normalization));
        let _ = writeln!(out, "# repeats: {}, seeds: {:?}", self.config.repeats, self.config.seeds);
        out.push_str(&render_table(&header, &rows));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Columns `model, dataset, perplexity, accuracy, repeat`, one row per
    /// repeat.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "dataset", "perplexity", "accuracy", "repeat"])?;
        for m in &self.models {
            for d in &m.datasets {
                for (r, (p, a)) in d.perplexity_repeats.iter().zip(&d.accuracy_repeats).enumerate() {
                    w.write_record([m.model.clone(), d.dataset.clone(), p.to_string(), a.to_string(), r.to_string()])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::TableText => Ok(self.to_table_text()),
            ReportFormat::Json => Ok(self.to_json()),
            ReportFormat::Csv => self.to_csv(),
        }
    }

    pub fn write(&self, path: &Path, format: ReportFormat) -> Result<()> {
        crate::error::write_file(path, self.render(format)?.as_bytes())
    }
}
