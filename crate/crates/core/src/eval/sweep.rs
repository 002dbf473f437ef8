use super::metrics::{representation_stray, EvalConfig, Normalization};
use super::report::{evaluate_models, normalization_note, render_table, ModelReport};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::tokenizer::Encoding;
use crate::training::{train, TrainConfig, TrainLog};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Parses `start:end:step` (inclusive end) or a comma-separated list.
/// Values are rounded to 12 decimals so `0.1:1.0:0.1` yields exactly ten
/// tidy values.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("invalid number {s:?} in grid {spec:?}")))
    };
    let tidy = |x: f64| (x * 1e12).round() / 1e12;
    let values: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("grid {spec:?} must be start:end:step")));
        }
        let (start, end, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || end < start {
            return Err(Error::Config(format!("grid {spec:?} needs step > 0 and end ≥ start")));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| tidy(start + i as f64 * step)).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!("grid {spec:?} must hold finite values ≥ 0")));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub report: Option<ModelReport>,
    /// Representation stray from the base, per dataset, after training.
    pub stray: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub datasets: Vec<String>,
    pub normalization: Normalization,
    pub rows: Vec<SweepRow>,
    /// Row with the lowest average perplexity.
    pub best_perplexity: Option<usize>,
    /// Row with the highest average accuracy.
    pub best_accuracy: Option<usize>,
}

pub struct SweepOutcome<T> {
    pub table: SweepTable,
    /// Trained parameters per row, `None` where the run failed.
    pub models: Vec<Option<ModelParams<T>>>,
    pub logs: Vec<Option<TrainLog>>,
}

fn best_by(rows: &[SweepRow], key: impl Fn(&ModelReport) -> f64, lower: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Some(rep) = &r.report {
            let v = key(rep);
            let better = match best {
                None => true,
                Some((_, b)) => (lower && v < b) || (!lower && v > b),
            };
            if better {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Trains one model per λ from the same base and seed, then scores each on
/// every dataset. A failing run is recorded in its row; the others go on.
/// Up to `workers` runs train at once; each run is itself single-worker.
pub fn sweep_lambda<T: Scalar>(
    grid: &[f64],
    train_examples: &[Encoding],
    base: &ModelParams<T>,
    train_config: &TrainConfig,
    datasets: &[(String, Vec<Encoding>)],
    eval_config: &EvalConfig,
    workers: usize,
) -> Result<SweepOutcome<T>> {
    eval_config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<(SweepRow, Option<ModelParams<T>>, Option<TrainLog>)> = pool.install(|| {
        grid.par_iter()
            .map(|&lambda| {
                let cfg = TrainConfig {
                    lambda,
                    workers: 1,
                    checkpoint_dir: train_config.checkpoint_dir.as_ref().map(|d| d.join(format!("lambda-{lambda}"))),
                    ..train_config.clone()
                };
                let run = || -> Result<(ModelReport, Vec<f64>, ModelParams<T>, TrainLog)> {
                    let outcome = train(train_examples, base, &cfg, &mut ())?;
                    let name = format!("lambda={lambda}");
                    let report = evaluate_models(&[(name, &outcome.params)], datasets, eval_config)?;
                    let stray = datasets
                        .iter()
                        .map(|(_, ex)| representation_stray(&outcome.params, base, ex, cfg.representation_layer))
                        .collect::<Result<Vec<_>>>()?;
                    let report = report.models.into_iter().next().expect("one model");
                    Ok((report, stray, outcome.params, outcome.log))
                };
                match run() {
                    Ok((report, stray, params, log)) => (
                        SweepRow {
                            lambda,
                            report: Some(report),
                            stray,
                            error: None,
                        },
                        Some(params),
                        Some(log),
                    ),
                    Err(e) => (
                        SweepRow {
                            lambda,
                            report: None,
                            stray: Vec::new(),
                            error: Some(e.to_string()),
                        },
                        None,
                        None,
                    ),
                }
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut models = Vec::new();
    let mut logs = Vec::new();
    for (row, params, log) in runs {
        rows.push(row);
        models.push(params);
        logs.push(log);
    }
    let table = SweepTable {
        datasets: datasets.iter().map(|(n, _)| n.clone()).collect(),
        normalization: eval_config.normalization,
        best_perplexity: best_by(&rows, |r| r.average_perplexity, true),
        best_accuracy: best_by(&rows, |r| r.average_accuracy, false),
        rows,
    };
    Ok(SweepOutcome { table, models, logs })
}

impl SweepTable {
    /// One row per λ: perplexity and accuracy per dataset, then the
    /// averages. `*` marks the best average of each metric.
    pub fn to_table_text(&self) -> String {
        let mut header = vec!["lambda".to_string()];
        for d in &self.datasets {
            header.push(format!("{d} ppl"));
            header.push(format!("{d} acc"));
        }
        header.push("avg ppl".into());
        header.push("avg acc".into());
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = vec![format!("{}", r.lambda)];
                match (&r.report, &r.error) {
                    (Some(rep), _) => {
                        for d in &rep.datasets {
                            row.push(format!("{:.3}", d.perplexity));
                            row.push(format!("{:.3}", d.accuracy));
                        }
                        let mark = |best: Option<usize>| if best == Some(i) { "*" } else { "" };
                        row.push(format!("{:.3}{}", rep.average_perplexity, mark(self.best_perplexity)));
                        row.push(format!("{:.3}{}", rep.average_accuracy, mark(self.best_accuracy)));
                    }
                    (None, err) => row.push(format!("failed: {}", err.as_deref().unwrap_or("unknown error"))),
                }
                row
            })
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "# {}", normalization_note(self.normalization));
        let _ = writeln!(out, "# * marks the best average");
        out.push_str(&render_table(&header, &rows));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep table serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Columns `lambda, dataset, perplexity, accuracy, repeat`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lambda", "dataset", "perplexity", "accuracy", "repeat"])?;
        for r in &self.rows {
            let Some(rep) = &r.report else { continue };
            for d in &rep.datasets {
                for (k, (p, a)) in d.perplexity_repeats.iter().zip(&d.accuracy_repeats).enumerate() {
                    w.write_record([r.lambda.to_string(), d.dataset.clone(), p.to_string(), a.to_string(), k.to_string()])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}
