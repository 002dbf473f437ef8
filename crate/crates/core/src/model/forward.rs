use super::params::{LayerParams, ModelParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tokenizer::{Encoding, TokenId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One model input: token ids, segment ids, and which positions are real
/// tokens (`false` = padding, excluded as attention keys).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub token_ids: Vec<TokenId>,
    pub segment_ids: Vec<u8>,
    pub attention: Vec<bool>,
}

impl Sequence {
    /// No padding, single segment.
    pub fn new(token_ids: Vec<TokenId>) -> Self {
        let n = token_ids.len();
        Self {
            token_ids,
            segment_ids: vec![0; n],
            attention: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

impl From<&Encoding> for Sequence {
    fn from(encoding: &Encoding) -> Self {
        Self {
            token_ids: encoding.token_ids.clone(),
            segment_ids: encoding.segment_ids.clone(),
            attention: vec![true; encoding.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// Final encoder layer, seq_len × hidden.
    pub hidden: Matrix<T>,
    /// MLM head scores, seq_len × vocab.
    pub logits: Matrix<T>,
}

pub(crate) struct NormCache<T> {
    pub normalized: Matrix<T>,
    pub inv_std: Vec<T>,
}

pub(crate) struct LayerCache<T> {
    pub input: Matrix<T>,
    pub query: Matrix<T>,
    pub key: Matrix<T>,
    pub value: Matrix<T>,
    /// Per head attention probabilities before dropout.
    pub probs: Vec<Matrix<T>>,
    /// Per head dropout multipliers (0 or 1/(1-p)).
    pub probs_dropout: Vec<Option<Matrix<T>>>,
    pub context: Matrix<T>,
    pub attn_dropout: Option<Matrix<T>>,
    pub norm1: NormCache<T>,
    pub after_attn: Matrix<T>,
    pub ffn_pre: Matrix<T>,
    pub ffn_act: Matrix<T>,
    pub ffn_dropout: Option<Matrix<T>>,
    pub norm2: NormCache<T>,
}

pub(crate) struct ForwardCache<T> {
    pub layers: Vec<LayerCache<T>>,
    pub hidden: Matrix<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Output of layer `k`.
    pub fn layer_output(&self, k: usize) -> &Matrix<T> {
        match self.layers.get(k + 1) {
            Some(next) => &next.input,
            None => &self.hidden,
        }
    }
}

struct Dropout {
    rng: ChaCha8Rng,
    hidden_p: f64,
    attention_p: f64,
}

impl Dropout {
    fn mask<T: Scalar>(&mut self, rows: usize, cols: usize, p: f64) -> Option<Matrix<T>> {
        if p <= 0.0 {
            return None;
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let data = (0..rows * cols)
            .map(|_| if self.rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        Some(Matrix::from_vec(rows, cols, data))
    }
}

fn apply_mask<T: Scalar>(m: &mut Matrix<T>, mask: &Option<Matrix<T>>) {
    if let Some(mask) = mask {
        for (x, &k) in m.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *x *= k;
        }
    }
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

fn layer_norm<T: Scalar>(x: &Matrix<T>, gain: &[T], bias: &[T], eps: T) -> (Matrix<T>, NormCache<T>) {
    let (rows, cols) = x.shape();
    let n = T::from_usize_lossy(cols);
    let mut out = Matrix::zeros(rows, cols);
    let mut normalized = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        let nrow = normalized.row_mut(r);
        for (c, &v) in row.iter().enumerate() {
            nrow[c] = (v - mean) * inv;
        }
        let orow = out.row_mut(r);
        for c in 0..cols {
            orow[c] = gain[c] * normalized.get(r, c) + bias[c];
        }
    }
    (out, NormCache { normalized, inv_std })
}

pub(crate) fn softmax_rows_in_place<T: Scalar>(m: &mut Matrix<T>) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Log-softmax of one row, numerically stable.
pub fn log_softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
    let lse = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

impl<T: Scalar> ModelParams<T> {
    /// Rejects inputs the embedding tables cannot represent.
    pub fn check_input(&self, seq: &Sequence) -> Result<()> {
        let c = self.config();
        let n = seq.len();
        if seq.segment_ids.len() != n || seq.attention.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "sequence has {n} tokens, {} segment ids, {} attention flags",
                seq.segment_ids.len(),
                seq.attention.len()
            )));
        }
        if n == 0 || !seq.attention.iter().any(|&a| a) {
            return Err(Error::ShapeMismatch("sequence has no attended positions".into()));
        }
        if n > c.max_position {
            return Err(Error::SequenceTooLong {
                len: n,
                max: c.max_position,
            });
        }
        if let Some(&id) = seq.token_ids.iter().find(|&&id| id as usize >= c.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: id as usize,
                size: c.vocab_size,
            });
        }
        if let Some(&s) = seq.segment_ids.iter().find(|&&s| s as usize >= c.type_vocab_size) {
            return Err(Error::ShapeMismatch(format!(
                "segment id {s} out of range for type_vocab_size {}",
                c.type_vocab_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, seq: &Sequence, mode: Mode) -> Result<ForwardOutput<T>> {
        let (hidden, _) = self.encode_impl(seq, mode, None, false)?;
        let logits = self.mlm_logits(&hidden);
        Ok(ForwardOutput { hidden, logits })
    }

    /// Final-layer hidden states only, skipping the MLM head.
    pub fn encode(&self, seq: &Sequence, mode: Mode) -> Result<Matrix<T>> {
        Ok(self.encode_impl(seq, mode, None, false)?.0)
    }

    /// Output of encoder layer `layer` (0-based); later layers are skipped.
    pub fn encode_to_layer(&self, seq: &Sequence, mode: Mode, layer: usize) -> Result<Matrix<T>> {
        if layer >= self.config().num_layers {
            return Err(Error::Config(format!(
                "representation layer {layer} out of range for {} layers",
                self.config().num_layers
            )));
        }
        Ok(self.encode_impl(seq, mode, Some(layer + 1), false)?.0)
    }

    /// Final hidden states plus everything backpropagation needs.
    pub(crate) fn forward_cached(&self, seq: &Sequence, mode: Mode) -> Result<ForwardCache<T>> {
        let (_, cache) = self.encode_impl(seq, mode, None, true)?;
        Ok(cache.expect("cache requested"))
    }

    /// Logits for the listed positions only, `rows.len()` × vocab.
    pub fn mlm_logits_rows(&self, hidden: &Matrix<T>, rows: &[usize]) -> Matrix<T> {
        let mut picked = Matrix::zeros(rows.len(), hidden.cols());
        for (k, &r) in rows.iter().enumerate() {
            picked.row_mut(k).copy_from_slice(hidden.row(r));
        }
        self.mlm_logits(&picked)
    }

    /// `hidden · token_embeddingsᵀ + bias`
    pub fn mlm_logits(&self, hidden: &Matrix<T>) -> Matrix<T> {
        let mut logits = hidden.matmul_t(&self.token_embeddings);
        logits.add_row_vector(self.output_bias.as_slice());
        logits
    }

    fn encode_impl(
        &self,
        seq: &Sequence,
        mode: Mode,
        num_layers: Option<usize>,
        keep_cache: bool,
    ) -> Result<(Matrix<T>, Option<ForwardCache<T>>)> {
        self.check_input(seq)?;
        let c = self.config();
        let mut dropout = match mode {
            Mode::Eval => None,
            Mode::Train { dropout_seed } => Some(Dropout {
                rng: ChaCha8Rng::seed_from_u64(dropout_seed),
                hidden_p: c.hidden_dropout_prob,
                attention_p: c.attention_dropout_prob,
            }),
        };

        let n = seq.len();
        let h = c.hidden_size;
        let mut x = Matrix::zeros(n, h);
        for i in 0..n {
            let tok = self.token_embeddings.row(seq.token_ids[i] as usize);
            let pos = self.position_embeddings.row(i);
            let seg = self.segment_embeddings.row(seq.segment_ids[i] as usize);
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = tok[j] + pos[j] + seg[j];
            }
        }

        let mut caches = Vec::with_capacity(if keep_cache { c.num_layers } else { 0 });
        let depth = num_layers.unwrap_or(self.layers.len());
        for layer in &self.layers[..depth] {
            let (out, cache) = self.layer_forward(layer, x, &seq.attention, dropout.as_mut());
            if keep_cache {
                caches.push(cache);
            }
            x = out;
        }
        let cache = keep_cache.then(|| ForwardCache {
            layers: caches,
            hidden: x.clone(),
        });
        Ok((x, cache))
    }

    fn layer_forward(
        &self,
        p: &LayerParams<T>,
        input: Matrix<T>,
        attention: &[bool],
        mut dropout: Option<&mut Dropout>,
    ) -> (Matrix<T>, LayerCache<T>) {
        let c = self.config();
        let n = input.rows();
        let heads = c.num_heads;
        let dh = c.head_size();
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let eps = T::lit(c.layer_norm_eps);

        let mut query = input.matmul(&p.query_weight);
        query.add_row_vector(p.query_bias.as_slice());
        let mut key = input.matmul(&p.key_weight);
        key.add_row_vector(p.key_bias.as_slice());
        let mut value = input.matmul(&p.value_weight);
        value.add_row_vector(p.value_bias.as_slice());

        let mut context = Matrix::zeros(n, c.hidden_size);
        let mut probs = Vec::with_capacity(heads);
        let mut probs_dropout = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = query.column_block(head * dh, dh);
            let kh = key.column_block(head * dh, dh);
            let vh = value.column_block(head * dh, dh);
            let mut scores = qh.matmul_t(&kh);
            for i in 0..n {
                let row = scores.row_mut(i);
                for (j, s) in row.iter_mut().enumerate() {
                    *s = if attention[j] { *s * scale } else { T::neg_infinity() };
                }
            }
            softmax_rows_in_place(&mut scores);
            let mask = dropout.as_deref_mut().and_then(|d| {
                let p = d.attention_p;
                d.mask(n, n, p)
            });
            let ctx = match &mask {
                Some(_) => {
                    let mut dropped = scores.clone();
                    apply_mask(&mut dropped, &mask);
                    dropped.matmul(&vh)
                }
                None => scores.matmul(&vh),
            };
            probs_dropout.push(mask);
            context.set_column_block(head * dh, &ctx);
            probs.push(scores);
        }

        let mut attn_out = context.matmul(&p.attn_out_weight);
        attn_out.add_row_vector(p.attn_out_bias.as_slice());
        let attn_dropout = dropout.as_deref_mut().and_then(|d| {
            let p = d.hidden_p;
            d.mask(n, c.hidden_size, p)
        });
        apply_mask(&mut attn_out, &attn_dropout);
        attn_out.add_assign(&input);
        let (after_attn, norm1) = layer_norm(
            &attn_out,
            p.attn_norm_gain.as_slice(),
            p.attn_norm_bias.as_slice(),
            eps,
        );

        let mut ffn_pre = after_attn.matmul(&p.ffn_in_weight);
        ffn_pre.add_row_vector(p.ffn_in_bias.as_slice());
        let ffn_act = ffn_pre.map(gelu);
        let mut ffn_out = ffn_act.matmul(&p.ffn_out_weight);
        ffn_out.add_row_vector(p.ffn_out_bias.as_slice());
        let ffn_dropout = dropout.as_deref_mut().and_then(|d| {
            let p = d.hidden_p;
            d.mask(n, c.hidden_size, p)
        });
        apply_mask(&mut ffn_out, &ffn_dropout);
        ffn_out.add_assign(&after_attn);
        let (out, norm2) = layer_norm(
            &ffn_out,
            p.ffn_norm_gain.as_slice(),
            p.ffn_norm_bias.as_slice(),
            eps,
        );

        let cache = LayerCache {
            input,
            query,
            key,
            value,
            probs,
            probs_dropout,
            context,
            attn_dropout,
            norm1,
            after_attn,
            ffn_pre,
            ffn_act,
            ffn_dropout,
            norm2,
        };
        (out, cache)
    }
}
