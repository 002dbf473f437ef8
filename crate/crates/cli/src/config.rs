//! Layered configuration: built-in defaults, then the JSON config file,
//! then command-line flags.

use crate::args::{EvalFlags, ModelFlags, TrainFlags};
use anyhow::{bail, Context, Result};
use hanmlm::eval::EvalConfig;
use hanmlm::model::ModelConfig;
use hanmlm::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<Value>,
    pub train: Option<Value>,
    pub eval: Option<Value>,
    pub max_len: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config file {}", path.display()))
    }
}

/// `defaults` with the keys of `overlay` replaced. Unknown keys are
/// rejected by the target type.
fn layered<T: Serialize + DeserializeOwned>(defaults: &T, overlay: Option<&Value>, section: &str) -> Result<T> {
    let mut merged = serde_json::to_value(defaults)?;
    match overlay {
        None => {}
        Some(Value::Object(o)) => {
            let target = merged.as_object_mut().expect("config structs serialize to objects");
            for (k, v) in o {
                target.insert(k.clone(), v.clone());
            }
        }
        Some(_) => bail!("config section `{section}` must be a JSON object"),
    }
    serde_json::from_value(merged).with_context(|| format!("config section `{section}`"))
}

fn enum_from_str<T: DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    serde_json::from_value(Value::String(s.to_string())).with_context(|| format!("unknown {what} {s:?}"))
}

pub fn train_config(flags: &TrainFlags, file: &ConfigFile, lambda: Option<f64>) -> Result<TrainConfig> {
    let mut c: TrainConfig = layered(&TrainConfig::default(), file.train.as_ref(), "train")?;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = flags.$field { c.$field = v; }
        )*};
    }
    set!(epochs, seed, learning_rate, batch_size, mask_probability, warmup_fraction, weight_decay, log_every, checkpoint_every, workers);
    if let Some(l) = lambda {
        c.lambda = l;
    }
    if let Some(m) = &flags.masking {
        c.masking = enum_from_str(m, "masking scheme")?;
    }
    if flags.max_grad_norm.is_some() {
        c.max_grad_norm = flags.max_grad_norm;
    }
    if flags.representation_layer.is_some() {
        c.representation_layer = flags.representation_layer;
    }
    if flags.no_dropout {
        c.dropout = false;
    }
    c.validate()?;
    Ok(c)
}

pub fn eval_config(flags: &EvalFlags, file: &ConfigFile) -> Result<EvalConfig> {
    let mut c: EvalConfig = layered(&EvalConfig::default(), file.eval.as_ref(), "eval")?;
    let file_seeds = file.eval.as_ref().and_then(|e| e.get("seeds")).is_some();
    if let Some(r) = flags.repeats {
        c.repeats = r;
    }
    if let Some(p) = flags.eval_mask_probability {
        c.mask_probability = p;
    }
    if let Some(n) = &flags.normalization {
        c.normalization = enum_from_str(n, "normalization")?;
    }
    match &flags.seeds {
        Some(s) => c.seeds = s.clone(),
        // Seeds follow the repeat count unless they were given explicitly.
        None if !file_seeds => c.seeds = (0..c.repeats as u64).collect(),
        None => {}
    }
    c.validate()?;
    Ok(c)
}

pub fn model_config(flags: &ModelFlags, file: &ConfigFile, vocab_size: usize) -> Result<ModelConfig> {
    let mut c: ModelConfig = layered(&ModelConfig::default(), file.model.as_ref(), "model")?;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = flags.$field { c.$field = v; }
        )*};
    }
    set!(hidden_size, num_layers, num_heads, intermediate_size, max_position);
    c.vocab_size = vocab_size;
    c.validate()?;
    Ok(c)
}

pub fn max_len(flag: Option<usize>, file: &ConfigFile, model: &ModelConfig) -> Result<usize> {
    let len = flag.or(file.max_len).unwrap_or(model.max_position);
    if len < 3 || len > model.max_position {
        bail!("max_len {len} must be in 3..={}", model.max_position);
    }
    Ok(len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: ConfigFile =
            serde_json::from_str(r#"{"train": {"epochs": 3, "learning_rate": 0.01}, "max_len": 20}"#).unwrap();
        let flags = TrainFlags {
            epochs: Some(7),
            ..TrainFlags::default()
        };
        let c = train_config(&flags, &file, Some(0.3)).unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.lambda, 0.3);
    }

    #[test]
    fn unknown_keys_rejected() {
        let file: ConfigFile = serde_json::from_str(r#"{"train": {"epoch": 3}}"#).unwrap();
        assert!(train_config(&TrainFlags::default(), &file, None).is_err());
        assert!(serde_json::from_str::<ConfigFile>(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn seeds_follow_repeats() {
        let flags = EvalFlags {
            repeats: Some(5),
            ..EvalFlags::default()
        };
        assert_eq!(eval_config(&flags, &ConfigFile::default()).unwrap().seeds, vec![0, 1, 2, 3, 4]);
        let flags = EvalFlags {
            repeats: Some(2),
            seeds: Some(vec![9]),
            ..EvalFlags::default()
        };
        assert!(eval_config(&flags, &ConfigFile::default()).is_err());
    }

    #[test]
    fn enum_flags() {
        let flags = TrainFlags {
            masking: Some("bert-80-10-10".into()),
            ..TrainFlags::default()
        };
        assert!(train_config(&flags, &ConfigFile::default(), None).is_ok());
        let flags = TrainFlags {
            masking: Some("nope".into()),
            ..TrainFlags::default()
        };
        assert!(train_config(&flags, &ConfigFile::default(), None).is_err());
    }
}
