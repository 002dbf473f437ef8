use super::loss::{batch_gradient, BatchLoss, LossSpec};
use super::masking::{mask_sentence, MaskedSequence, MaskingScheme};
use super::optim::{clip_grad_norm, Adam, LinearSchedule};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Mode, ModelParams};
use crate::scalar::Scalar;
use crate::tokenizer::{Encoding, Vocabulary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the representation penalty; 0 is plain MLM training.
    pub lambda: f64,
    pub mask_probability: f64,
    pub masking: MaskingScheme,
    /// Peak learning rate.
    pub learning_rate: f64,
    /// Fraction of all steps spent warming up linearly.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    /// Sentences per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Dropout in the current model's forward pass. The frozen base model
    /// never uses it.
    pub dropout: bool,
    /// Encoder layer the penalty compares; `None` is the final layer.
    pub representation_layer: Option<usize>,
    /// A log record every this many steps (and at every epoch end).
    pub log_every: usize,
    /// Checkpoints are written here every `checkpoint_every` epochs.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Threads computing per-sentence gradients. Gradients are summed in a
    /// fixed order, but results only match the single-worker run up to
    /// floating-point reassociation.
    pub workers: usize,
    /// Stamp log records with wall-clock time. Off by default so that
    /// identical runs write identical logs.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            mask_probability: 0.15,
            masking: MaskingScheme::PureMask,
            learning_rate: 5e-5,
            warmup_fraction: 0.1,
            weight_decay: 0.0,
            max_grad_norm: None,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            dropout: true,
            representation_layer: None,
            log_every: 1,
            checkpoint_dir: None,
            checkpoint_every: 1,
            workers: 1,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.mask_probability > 0.0 && self.mask_probability < 1.0) {
            return bad(format!("mask_probability must be in (0, 1), got {}", self.mask_probability));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a finite value ≥ 0, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must be in [0, 1], got {}", self.warmup_fraction));
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be ≥ 0".into());
        }
        if self.max_grad_norm.is_some_and(|n| n <= 0.0) {
            return bad("max_grad_norm must be positive".into());
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("log_every", self.log_every),
            ("checkpoint_every", self.checkpoint_every),
            ("workers", self.workers),
        ] {
            if v == 0 {
                return bad(format!("{name} must be ≥ 1"));
            }
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            lambda: self.lambda,
            representation_layer: self.representation_layer,
        }
    }
}

/// Frozen copy of the starting model. It is only ever read, in eval mode.
#[derive(Debug, Clone)]
pub struct BaseSnapshot<T> {
    params: ModelParams<T>,
    fingerprint: String,
}

impl<T: Scalar> BaseSnapshot<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        let fingerprint = params.fingerprint();
        Self { params, fingerprint }
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// Fingerprint taken at construction.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// True while the parameters still hash to the construction-time value.
    pub fn verify(&self) -> bool {
        self.params.fingerprint() == self.fingerprint
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Optimizer steps completed.
    pub step: usize,
    pub epoch: usize,
    /// Batch mean of the per-sentence summed MLM loss.
    pub mlm_loss: f64,
    /// Batch mean of the per-sentence summed squared distance.
    pub penalty: f64,
    pub total_loss: f64,
    /// Mean ‖f(x_j) − f₀(x_j)‖ over the batch's content positions.
    pub cross_lingual_l2: f64,
    pub lr: f64,
    /// Seconds since the Unix epoch, when enabled.
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::error::write_file(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_jsonl(&crate::error::read_utf8(path)?)
    }

    /// Mean of `field` over each epoch's records, in epoch order.
    pub fn epoch_means(&self, field: impl Fn(&TrainRecord) -> f64) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += field(r);
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect()
    }
}

/// Hooks called from inside [`train`].
pub trait TrainObserver<T> {
    fn on_step(&mut self, _record: &TrainRecord) {}
    fn on_epoch_end(&mut self, _epoch: usize, _params: &ModelParams<T>) {}
}

impl<T> TrainObserver<T> for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: TrainLog,
    /// Fingerprint of the frozen base, checked unchanged after training.
    pub base_fingerprint: String,
    pub checkpoints: Vec<PathBuf>,
}

/// Encodes sentences for training, dropping those with no content tokens.
pub fn prepare_examples<'a>(
    sentences: impl IntoIterator<Item = &'a str>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<Encoding> {
    sentences
        .into_iter()
        .map(|s| vocab.encode(s, max_len))
        .filter(|e| e.len() > 2)
        .collect()
}

struct Prepared {
    masked: Vec<MaskedSequence>,
    modes: Vec<Mode>,
}

fn prepare_batch(
    examples: &[Encoding],
    indices: &[usize],
    config: &TrainConfig,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Prepared {
    let mut masked = Vec::with_capacity(indices.len());
    let mut modes = Vec::with_capacity(indices.len());
    for &i in indices {
        let mask_seed: u64 = rng.random();
        let dropout_seed: u64 = rng.random();
        masked.push(mask_sentence(&examples[i], config.mask_probability, config.masking, vocab_size, mask_seed));
        modes.push(if config.dropout { Mode::Train { dropout_seed } } else { Mode::Eval });
    }
    Prepared { masked, modes }
}

fn parallel_gradient<T: Scalar>(
    pool: &rayon::ThreadPool,
    params: &ModelParams<T>,
    base: &ModelParams<T>,
    batch: &Prepared,
    spec: &LossSpec,
    workers: usize,
    grads: &mut ModelParams<T>,
) -> Result<BatchLoss<T>> {
    use rayon::prelude::*;
    let n = batch.masked.len();
    let chunk = n.div_ceil(workers);
    let parts: Vec<Result<(BatchLoss<T>, ModelParams<T>)>> = pool.install(|| {
        batch
            .masked
            .par_chunks(chunk)
            .zip(batch.modes.par_chunks(chunk))
            .map(|(m, modes)| {
                let mut g = ModelParams::zeros(params.config());
                let loss = batch_gradient(params, base, m, modes, spec, &mut g)?;
                Ok((loss, g))
            })
            .collect()
    });
    // Each part averaged over its own sentences; re-weight by part size.
    let (mut mlm, mut penalty, mut l2_sum, mut l2_weight) = (T::zero(), T::zero(), T::zero(), T::zero());
    for part in parts {
        let (loss, g) = part?;
        let w = T::from_usize_lossy(loss.sentences) / T::from_usize_lossy(n);
        grads.axpy(w, &g);
        mlm += loss.mlm * w;
        penalty += loss.penalty * w;
        l2_sum += loss.l2 * w;
        l2_weight += w;
    }
    let lambda = T::lit(spec.lambda);
    Ok(BatchLoss {
        mlm,
        penalty,
        total: super::loss::total_loss(mlm, penalty, lambda),
        l2: l2_sum / l2_weight,
        sentences: n,
    })
}

fn now_seconds() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Continues training `base` on `examples` with the objective
/// `mlm + λ·penalty` against a frozen copy of `base`.
///
/// Epoch `e` shuffles and masks from a ChaCha8 stream keyed by
/// `(seed, e)`, so a single-worker run is a pure function of its inputs.
pub fn train<T: Scalar>(
    examples: &[Encoding],
    base: &ModelParams<T>,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let spec = config.loss_spec();
    let layers = base.config().num_layers;
    if spec.layer(layers) >= layers {
        return Err(Error::Config(format!(
            "representation layer {} out of range for {layers} layers",
            spec.layer(layers)
        )));
    }
    let usable: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].len() > 2).collect();
    if usable.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let snapshot = BaseSnapshot::new(base.clone());
    let mut params = base.clone();
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            log,
            base_fingerprint: snapshot.fingerprint().to_string(),
            checkpoints,
        });
    }

    let vocab_size = base.config().vocab_size;
    let steps_per_epoch = usable.len().div_ceil(config.batch_size);
    let schedule = LinearSchedule::new(config.learning_rate, config.warmup_fraction, steps_per_epoch * config.epochs);
    let mut adam = Adam::new(&params, config.weight_decay);
    let mut grads = ModelParams::zeros(base.config());
    let pool = if config.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order = usable.clone();
        order.shuffle(&mut rng);
        for (b, indices) in order.chunks(config.batch_size).enumerate() {
            let batch = prepare_batch(examples, indices, config, vocab_size, &mut rng);
            grads.fill_zero();
            let loss = match &pool {
                Some(pool) => {
                    parallel_gradient(pool, &params, snapshot.params(), &batch, &spec, config.workers, &mut grads)?
                }
                None => batch_gradient(&params, snapshot.params(), &batch.masked, &batch.modes, &spec, &mut grads)?,
            };
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    checkpoint: checkpoints.last().cloned(),
                });
            }
            if let Some(max) = config.max_grad_norm {
                clip_grad_norm(&mut grads, max);
            }
            let lr = schedule.rate(step);
            adam.step(&mut params, &grads, lr);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    step,
                    checkpoint: checkpoints.last().cloned(),
                });
            }
            step += 1;

            let epoch_end = b + 1 == steps_per_epoch;
            if step % config.log_every == 0 || epoch_end {
                let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
                let record = TrainRecord {
                    step,
                    epoch,
                    mlm_loss: f(loss.mlm),
                    penalty: f(loss.penalty),
                    total_loss: f(loss.total),
                    cross_lingual_l2: f(loss.l2),
                    lr,
                    timestamp: config.record_time.then(now_seconds),
                };
                observer.on_step(&record);
                log.records.push(record);
            }
        }
        observer.on_epoch_end(epoch, &params);
        if let Some(dir) = &config.checkpoint_dir {
            if (epoch + 1) % config.checkpoint_every == 0 || epoch + 1 == config.epochs {
                let path = dir.join(format!("epoch-{:03}.ckpt", epoch + 1));
                save_checkpoint(&path, &params)?;
                checkpoints.push(path);
            }
        }
    }

    if !snapshot.verify() {
        return Err(Error::Checkpoint("base snapshot changed during training".into()));
    }
    Ok(TrainOutcome {
        params,
        log,
        base_fingerprint: snapshot.fingerprint().to_string(),
        checkpoints,
    })
}
