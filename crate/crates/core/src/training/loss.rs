use super::masking::MaskedSequence;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{log_softmax, ForwardOutput, Mode, ModelParams};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Σ over masked positions of −log softmax(logits[m])[y_m], natural log.
pub fn mlm_loss<T: Scalar>(output: &ForwardOutput<T>, batch: &MaskedSequence) -> Result<T> {
    if batch.mask_positions.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    let mut total = T::zero();
    for (&pos, &target) in batch.mask_positions.iter().zip(&batch.targets) {
        total -= log_softmax(output.logits.row(pos))[target as usize];
    }
    Ok(total)
}

/// Σ over the content positions of ‖base_j − current_j‖². `current` and
/// `base` are representations of the same input from the current and the
/// frozen model.
pub fn cross_lingual_penalty<T: Scalar>(
    current: &Matrix<T>,
    base: &Matrix<T>,
    batch: &MaskedSequence,
) -> Result<T> {
    check_pair(current, base, batch)?;
    Ok(batch.content.iter().fold(T::zero(), |acc, &j| acc + squared_distance(current.row(j), base.row(j))))
}

fn check_pair<T: Scalar>(current: &Matrix<T>, base: &Matrix<T>, batch: &MaskedSequence) -> Result<()> {
    if current.shape() != base.shape() || current.rows() != batch.input.len() {
        return Err(Error::ShapeMismatch(format!(
            "representations are {:?} and {:?} for a sequence of length {}",
            current.shape(),
            base.shape(),
            batch.input.len()
        )));
    }
    Ok(())
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// `mlm + λ·penalty`; exactly `mlm` when λ is 0.
pub fn total_loss<T: Scalar>(mlm: T, penalty: T, lambda: T) -> T {
    if lambda == T::zero() {
        mlm
    } else {
        mlm + lambda * penalty
    }
}

/// What the objective is: the weight λ on the representation penalty and
/// which encoder layer's output the penalty compares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub lambda: f64,
    /// 0-based encoder layer; `None` is the final layer.
    pub representation_layer: Option<usize>,
}

impl LossSpec {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            representation_layer: None,
        }
    }

    pub fn layer(&self, params_layers: usize) -> usize {
        self.representation_layer.unwrap_or(params_layers - 1)
    }
}

/// Batch means of the loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss<T> {
    pub mlm: T,
    pub penalty: T,
    pub total: T,
    /// Mean over content positions of ‖current_j − base_j‖.
    pub l2: T,
    pub sentences: usize,
}

impl<T: Scalar> BatchLoss<T> {
    fn finish(mlm: T, penalty: T, dist: T, positions: usize, sentences: usize, lambda: T) -> Self {
        let n = T::from_usize_lossy(sentences.max(1));
        let (mlm, penalty) = (mlm / n, penalty / n);
        Self {
            mlm,
            penalty,
            total: total_loss(mlm, penalty, lambda),
            l2: if positions == 0 { T::zero() } else { dist / T::from_usize_lossy(positions) },
            sentences,
        }
    }
}

/// Per-sentence contributions before averaging.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SentenceTerms<T> {
    pub mlm: T,
    pub penalty: T,
    pub dist: T,
    pub positions: usize,
}

impl<T: Scalar> SentenceTerms<T> {
    pub fn add(&mut self, o: &Self) {
        self.mlm += o.mlm;
        self.penalty += o.penalty;
        self.dist += o.dist;
        self.positions += o.positions;
    }
}

fn check_batch<T: Scalar>(params: &ModelParams<T>, batch: &[MaskedSequence], modes: &[Mode], spec: &LossSpec) -> Result<()> {
    if batch.len() != modes.len() {
        return Err(Error::ShapeMismatch(format!("{} sentences but {} modes", batch.len(), modes.len())));
    }
    if !(spec.lambda >= 0.0 && spec.lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be a finite value ≥ 0, got {}", spec.lambda)));
    }
    if spec.layer(params.config().num_layers) >= params.config().num_layers {
        return Err(Error::Config(format!(
            "representation layer {} out of range for {} layers",
            spec.layer(params.config().num_layers),
            params.config().num_layers
        )));
    }
    let vocab = params.config().vocab_size;
    for b in batch {
        if b.mask_positions.is_empty() {
            return Err(Error::NoMaskedPositions);
        }
        if let Some(&id) = b.targets.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::TokenOutOfRange { id: id as usize, size: vocab });
        }
    }
    Ok(())
}

/// One sentence's loss terms and, when `grads` is given, its gradient
/// scaled by `weight` accumulated into `grads`.
pub(crate) fn sentence_terms<T: Scalar>(
    params: &ModelParams<T>,
    base: &ModelParams<T>,
    masked: &MaskedSequence,
    mode: Mode,
    spec: &LossSpec,
    weight: T,
    grads: Option<&mut ModelParams<T>>,
) -> Result<SentenceTerms<T>> {
    let layer = spec.layer(params.config().num_layers);
    let lambda = T::lit(spec.lambda);
    // The reference model never uses dropout.
    let base_repr = base.encode_to_layer(&masked.input, Mode::Eval, layer)?;
    let cache = params.forward_cached(&masked.input, mode)?;
    let repr = cache.layer_output(layer);

    let logits = params.mlm_logits_rows(&cache.hidden, &masked.mask_positions);
    let mut d_logits = Matrix::zeros(logits.rows(), logits.cols());
    let mut terms = SentenceTerms::default();
    for (k, &target) in masked.targets.iter().enumerate() {
        let lp = log_softmax(logits.row(k));
        terms.mlm -= lp[target as usize];
        for (d, &l) in d_logits.row_mut(k).iter_mut().zip(&lp) {
            *d = l.exp() * weight;
        }
        let t = target as usize;
        let row = d_logits.row_mut(k);
        row[t] -= weight;
    }

    let mut d_repr = Matrix::zeros(repr.rows(), repr.cols());
    for &j in &masked.content {
        let sq = squared_distance(repr.row(j), base_repr.row(j));
        terms.penalty += sq;
        terms.dist += sq.sqrt();
        terms.positions += 1;
        let scale = T::lit(2.0) * lambda * weight;
        for ((d, &x), &x0) in d_repr.row_mut(j).iter_mut().zip(repr.row(j)).zip(base_repr.row(j)) {
            *d = scale * (x - x0);
        }
    }

    if let Some(grads) = grads {
        let repr_grad = (lambda != T::zero()).then_some((layer, &d_repr));
        params.backward(
            &masked.input,
            &cache,
            Some((masked.mask_positions.as_slice(), &d_logits)),
            repr_grad,
            grads,
        );
    }
    Ok(terms)
}

/// Batch objective: per-sentence `mlm + λ·penalty`, averaged over
/// sentences. `modes[i]` is the mode for sentence `i` (dropout seed).
pub fn batch_loss<T: Scalar>(
    params: &ModelParams<T>,
    base: &ModelParams<T>,
    batch: &[MaskedSequence],
    modes: &[Mode],
    spec: &LossSpec,
) -> Result<BatchLoss<T>> {
    check_batch(params, batch, modes, spec)?;
    let mut sum = SentenceTerms::default();
    for (m, &mode) in batch.iter().zip(modes) {
        sum.add(&sentence_terms(params, base, m, mode, spec, T::one(), None)?);
    }
    Ok(BatchLoss::finish(sum.mlm, sum.penalty, sum.dist, sum.positions, batch.len(), T::lit(spec.lambda)))
}

/// [`batch_loss`] plus its exact gradient with respect to every parameter
/// of `params`, added into `grads`.
pub fn batch_gradient<T: Scalar>(
    params: &ModelParams<T>,
    base: &ModelParams<T>,
    batch: &[MaskedSequence],
    modes: &[Mode],
    spec: &LossSpec,
    grads: &mut ModelParams<T>,
) -> Result<BatchLoss<T>> {
    check_batch(params, batch, modes, spec)?;
    let weight = T::one() / T::from_usize_lossy(batch.len().max(1));
    let mut sum = SentenceTerms::default();
    for (m, &mode) in batch.iter().zip(modes) {
        sum.add(&sentence_terms(params, base, m, mode, spec, weight, Some(grads))?);
    }
    Ok(BatchLoss::finish(sum.mlm, sum.penalty, sum.dist, sum.positions, batch.len(), T::lit(spec.lambda)))
}
