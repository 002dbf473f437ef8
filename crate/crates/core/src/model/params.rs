use super::config::ModelConfig;
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query_weight: Matrix<T>,
    pub query_bias: Matrix<T>,
    pub key_weight: Matrix<T>,
    pub key_bias: Matrix<T>,
    pub value_weight: Matrix<T>,
    pub value_bias: Matrix<T>,
    pub attn_out_weight: Matrix<T>,
    pub attn_out_bias: Matrix<T>,
    pub attn_norm_gain: Matrix<T>,
    pub attn_norm_bias: Matrix<T>,
    pub ffn_in_weight: Matrix<T>,
    pub ffn_in_bias: Matrix<T>,
    pub ffn_out_weight: Matrix<T>,
    pub ffn_out_bias: Matrix<T>,
    pub ffn_norm_gain: Matrix<T>,
    pub ffn_norm_bias: Matrix<T>,
}

/// Role of a tensor, used by initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(c: &ModelConfig) -> Self {
        let (h, i) = (c.hidden_size, c.intermediate_size);
        Self {
            query_weight: Matrix::zeros(h, h),
            query_bias: Matrix::zeros(1, h),
            key_weight: Matrix::zeros(h, h),
            key_bias: Matrix::zeros(1, h),
            value_weight: Matrix::zeros(h, h),
            value_bias: Matrix::zeros(1, h),
            attn_out_weight: Matrix::zeros(h, h),
            attn_out_bias: Matrix::zeros(1, h),
            attn_norm_gain: Matrix::zeros(1, h),
            attn_norm_bias: Matrix::zeros(1, h),
            ffn_in_weight: Matrix::zeros(h, i),
            ffn_in_bias: Matrix::zeros(1, i),
            ffn_out_weight: Matrix::zeros(i, h),
            ffn_out_bias: Matrix::zeros(1, h),
            ffn_norm_gain: Matrix::zeros(1, h),
            ffn_norm_bias: Matrix::zeros(1, h),
        }
    }

    fn named(&self) -> [(&'static str, TensorKind, &Matrix<T>); 16] {
        use TensorKind::*;
        [
            ("attention.query.weight", Weight, &self.query_weight),
            ("attention.query.bias", Bias, &self.query_bias),
            ("attention.key.weight", Weight, &self.key_weight),
            ("attention.key.bias", Bias, &self.key_bias),
            ("attention.value.weight", Weight, &self.value_weight),
            ("attention.value.bias", Bias, &self.value_bias),
            ("attention.output.weight", Weight, &self.attn_out_weight),
            ("attention.output.bias", Bias, &self.attn_out_bias),
            ("attention.norm.gain", NormGain, &self.attn_norm_gain),
            ("attention.norm.bias", NormBias, &self.attn_norm_bias),
            ("ffn.input.weight", Weight, &self.ffn_in_weight),
            ("ffn.input.bias", Bias, &self.ffn_in_bias),
            ("ffn.output.weight", Weight, &self.ffn_out_weight),
            ("ffn.output.bias", Bias, &self.ffn_out_bias),
            ("ffn.norm.gain", NormGain, &self.ffn_norm_gain),
            ("ffn.norm.bias", NormBias, &self.ffn_norm_bias),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, TensorKind, &mut Matrix<T>); 16] {
        use TensorKind::*;
        [
            ("attention.query.weight", Weight, &mut self.query_weight),
            ("attention.query.bias", Bias, &mut self.query_bias),
            ("attention.key.weight", Weight, &mut self.key_weight),
            ("attention.key.bias", Bias, &mut self.key_bias),
            ("attention.value.weight", Weight, &mut self.value_weight),
            ("attention.value.bias", Bias, &mut self.value_bias),
            ("attention.output.weight", Weight, &mut self.attn_out_weight),
            ("attention.output.bias", Bias, &mut self.attn_out_bias),
            ("attention.norm.gain", NormGain, &mut self.attn_norm_gain),
            ("attention.norm.bias", NormBias, &mut self.attn_norm_bias),
            ("ffn.input.weight", Weight, &mut self.ffn_in_weight),
            ("ffn.input.bias", Bias, &mut self.ffn_in_bias),
            ("ffn.output.weight", Weight, &mut self.ffn_out_weight),
            ("ffn.output.bias", Bias, &mut self.ffn_out_bias),
            ("ffn.norm.gain", NormGain, &mut self.ffn_norm_gain),
            ("ffn.norm.bias", NormBias, &mut self.ffn_norm_bias),
        ]
    }
}

/// Every trainable tensor of the encoder and its MLM head. The head's
/// projection is tied to `token_embeddings`; only its bias is separate.
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    pub token_embeddings: Matrix<T>,
    pub position_embeddings: Matrix<T>,
    pub segment_embeddings: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    pub output_bias: Matrix<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero tensors shaped for `config` (used for gradient buffers).
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_size;
        Self {
            config: config.clone(),
            token_embeddings: Matrix::zeros(config.vocab_size, h),
            position_embeddings: Matrix::zeros(config.max_position, h),
            segment_embeddings: Matrix::zeros(config.type_vocab_size, h),
            layers: (0..config.num_layers).map(|_| LayerParams::zeros(config)).collect(),
            output_bias: Matrix::zeros(1, config.vocab_size),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Tensors in canonical order with their checkpoint names.
    pub fn named_tensors(&self) -> Vec<(String, TensorKind, &Matrix<T>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), TensorKind::Weight, &self.token_embeddings),
            ("embeddings.position".to_string(), TensorKind::Weight, &self.position_embeddings),
            ("embeddings.segment".to_string(), TensorKind::Weight, &self.segment_embeddings),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, kind, m) in layer.named() {
                out.push((format!("layers.{i}.{name}"), kind, m));
            }
        }
        out.push(("mlm.bias".to_string(), TensorKind::Bias, &self.output_bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut Matrix<T>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), TensorKind::Weight, &mut self.token_embeddings),
            ("embeddings.position".to_string(), TensorKind::Weight, &mut self.position_embeddings),
            ("embeddings.segment".to_string(), TensorKind::Weight, &mut self.segment_embeddings),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, kind, m) in layer.named_mut() {
                out.push((format!("layers.{i}.{name}"), kind, m));
            }
        }
        out.push(("mlm.bias".to_string(), TensorKind::Bias, &mut self.output_bias));
        out
    }

    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        self.named_tensors().into_iter().map(|(_, _, m)| m).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.named_tensors_mut().into_iter().map(|(_, _, m)| m).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    pub fn fill_zero(&mut self) {
        for m in self.tensors_mut() {
            m.fill(T::zero());
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &ModelParams<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for m in self.tensors_mut() {
            m.scale(alpha);
        }
    }

    /// Flattened copy of every parameter in canonical order.
    pub fn to_flat(&self) -> Vec<T> {
        self.tensors()
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    /// SHA-256 over the config and the little-endian parameter bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        let mut buf = Vec::new();
        for (name, _, m) in self.named_tensors() {
            h.update(name.as_bytes());
            buf.clear();
            for &x in m.as_slice() {
                x.write_le(&mut buf);
            }
            h.update(&buf);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }
}

/// Weights and embeddings ~ N(0, initializer_range²); linear biases 0;
/// layer-norm gain 1 and bias 0. Deterministic per seed.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> ModelParams<T> {
    let mut params = ModelParams::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = config.initializer_range;
    for (_, kind, m) in params.named_tensors_mut() {
        match kind {
            TensorKind::Weight => {
                if std > 0.0 {
                    for x in m.as_mut_slice() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *x = T::lit(z * std);
                    }
                }
            }
            TensorKind::NormGain => m.fill(T::one()),
            TensorKind::Bias | TensorKind::NormBias => {}
        }
    }
    params
}
