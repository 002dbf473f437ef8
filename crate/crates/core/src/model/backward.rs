use super::forward::{gelu_grad, ForwardCache, LayerCache, NormCache, Sequence};
use super::params::{LayerParams, ModelParams};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

fn mask_in_place<T: Scalar>(m: &mut Matrix<T>, mask: &Option<Matrix<T>>) {
    if let Some(mask) = mask {
        for (x, &k) in m.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *x *= k;
        }
    }
}

/// Returns d(input) of `y = gain * normalized + bias` and accumulates the
/// gain/bias gradients.
fn layer_norm_backward<T: Scalar>(
    d_out: &Matrix<T>,
    cache: &NormCache<T>,
    gain: &[T],
    d_gain: &mut [T],
    d_bias: &mut [T],
) -> Matrix<T> {
    let (rows, cols) = d_out.shape();
    let n = T::from_usize_lossy(cols);
    let mut d_in = Matrix::zeros(rows, cols);
    let mut d_norm = vec![T::zero(); cols];
    for r in 0..rows {
        let dy = d_out.row(r);
        let xhat = cache.normalized.row(r);
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for c in 0..cols {
            d_gain[c] += dy[c] * xhat[c];
            d_bias[c] += dy[c];
            d_norm[c] = dy[c] * gain[c];
            mean_d += d_norm[c];
            mean_dx += d_norm[c] * xhat[c];
        }
        mean_d /= n;
        mean_dx /= n;
        let inv = cache.inv_std[r];
        for (c, dx) in d_in.row_mut(r).iter_mut().enumerate() {
            *dx = inv * (d_norm[c] - mean_d - xhat[c] * mean_dx);
        }
    }
    d_in
}

impl<T: Scalar> ModelParams<T> {
    /// Back-propagates a scalar loss through the cached forward pass.
    ///
    /// `head` holds the loss's derivatives with respect to the MLM logits at
    /// the listed positions; `repr` its derivative with respect to the output
    /// of one encoder layer. Gradients are added into `grads`.
    pub(crate) fn backward(
        &self,
        seq: &Sequence,
        cache: &ForwardCache<T>,
        head: Option<(&[usize], &Matrix<T>)>,
        repr: Option<(usize, &Matrix<T>)>,
        grads: &mut ModelParams<T>,
    ) {
        let n = seq.len();
        let h = self.config().hidden_size;
        let mut dx = Matrix::zeros(n, h);
        if let Some((rows, dl)) = head {
            // logits[rows] = hidden[rows] · Eᵀ + b
            let mut picked = Matrix::zeros(rows.len(), h);
            for (k, &r) in rows.iter().enumerate() {
                picked.row_mut(k).copy_from_slice(cache.hidden.row(r));
            }
            dl.column_sums_into(grads.output_bias.as_mut_slice());
            dl.t_matmul_into(&picked, &mut grads.token_embeddings);
            let d_picked = dl.matmul(&self.token_embeddings);
            for (k, &r) in rows.iter().enumerate() {
                for (d, &v) in dx.row_mut(r).iter_mut().zip(d_picked.row(k)) {
                    *d += v;
                }
            }
        }

        for (li, layer) in self.layers.iter().enumerate().rev() {
            if let Some((k, d)) = repr {
                if k == li {
                    dx.add_assign(d);
                }
            }
            dx = self.layer_backward(layer, &cache.layers[li], dx, &seq.attention, &mut grads.layers[li]);
        }

        for i in 0..n {
            let d = dx.row(i);
            let tok = seq.token_ids[i] as usize;
            let seg = seq.segment_ids[i] as usize;
            for (g, &v) in grads.token_embeddings.row_mut(tok).iter_mut().zip(d) {
                *g += v;
            }
            for (g, &v) in grads.position_embeddings.row_mut(i).iter_mut().zip(d) {
                *g += v;
            }
            for (g, &v) in grads.segment_embeddings.row_mut(seg).iter_mut().zip(d) {
                *g += v;
            }
        }
    }

    fn layer_backward(
        &self,
        p: &LayerParams<T>,
        c: &LayerCache<T>,
        d_out: Matrix<T>,
        attention: &[bool],
        g: &mut LayerParams<T>,
    ) -> Matrix<T> {
        let cfg = self.config();
        let heads = cfg.num_heads;
        let dh = cfg.head_size();
        let n = d_out.rows();
        let scale = T::lit(1.0 / (dh as f64).sqrt());

        // out = LN2(after_attn + dropout(ffn_act · W2 + b2))
        let d_sum2 = layer_norm_backward(
            &d_out,
            &c.norm2,
            p.ffn_norm_gain.as_slice(),
            g.ffn_norm_gain.as_mut_slice(),
            g.ffn_norm_bias.as_mut_slice(),
        );
        let mut d_after_attn = d_sum2.clone();
        let mut d_ffn_out = d_sum2;
        mask_in_place(&mut d_ffn_out, &c.ffn_dropout);
        d_ffn_out.column_sums_into(g.ffn_out_bias.as_mut_slice());
        c.ffn_act.t_matmul_into(&d_ffn_out, &mut g.ffn_out_weight);
        let d_act = d_ffn_out.matmul_t(&p.ffn_out_weight);
        let mut d_pre = d_act;
        for (d, &x) in d_pre.as_mut_slice().iter_mut().zip(c.ffn_pre.as_slice()) {
            *d *= gelu_grad(x);
        }
        d_pre.column_sums_into(g.ffn_in_bias.as_mut_slice());
        c.after_attn.t_matmul_into(&d_pre, &mut g.ffn_in_weight);
        d_after_attn.add_assign(&d_pre.matmul_t(&p.ffn_in_weight));

        // after_attn = LN1(input + dropout(context · Wo + bo))
        let d_sum1 = layer_norm_backward(
            &d_after_attn,
            &c.norm1,
            p.attn_norm_gain.as_slice(),
            g.attn_norm_gain.as_mut_slice(),
            g.attn_norm_bias.as_mut_slice(),
        );
        let mut d_input = d_sum1.clone();
        let mut d_attn_out = d_sum1;
        mask_in_place(&mut d_attn_out, &c.attn_dropout);
        d_attn_out.column_sums_into(g.attn_out_bias.as_mut_slice());
        c.context.t_matmul_into(&d_attn_out, &mut g.attn_out_weight);
        let d_context = d_attn_out.matmul_t(&p.attn_out_weight);

        let mut d_query = Matrix::zeros(n, cfg.hidden_size);
        let mut d_key = Matrix::zeros(n, cfg.hidden_size);
        let mut d_value = Matrix::zeros(n, cfg.hidden_size);
        for head in 0..heads {
            let qh = c.query.column_block(head * dh, dh);
            let kh = c.key.column_block(head * dh, dh);
            let vh = c.value.column_block(head * dh, dh);
            let d_ctx = d_context.column_block(head * dh, dh);
            let probs = &c.probs[head];
            let mask = &c.probs_dropout[head];

            // ctx = dropout(P) · V
            let used = match mask {
                Some(_) => {
                    let mut m = probs.clone();
                    mask_in_place(&mut m, mask);
                    m
                }
                None => probs.clone(),
            };
            d_value.set_column_block(head * dh, &used.t_matmul(&d_ctx));
            let mut d_probs = d_ctx.matmul_t(&vh);
            mask_in_place(&mut d_probs, mask);

            // softmax backward, then the 1/sqrt(dh) scale
            let mut d_scores = Matrix::zeros(n, n);
            for i in 0..n {
                let pr = probs.row(i);
                let dp = d_probs.row(i);
                let dot = pr.iter().zip(dp).fold(T::zero(), |a, (&x, &y)| a + x * y);
                let ds = d_scores.row_mut(i);
                for j in 0..n {
                    ds[j] = if attention[j] { pr[j] * (dp[j] - dot) * scale } else { T::zero() };
                }
            }
            d_query.set_column_block(head * dh, &d_scores.matmul(&kh));
            d_key.set_column_block(head * dh, &d_scores.t_matmul(&qh));
        }

        for (d, w, gw, gb) in [
            (&d_query, &p.query_weight, &mut g.query_weight, &mut g.query_bias),
            (&d_key, &p.key_weight, &mut g.key_weight, &mut g.key_bias),
            (&d_value, &p.value_weight, &mut g.value_weight, &mut g.value_bias),
        ] {
            d.column_sums_into(gb.as_mut_slice());
            c.input.t_matmul_into(d, gw);
            d_input.add_assign(&d.matmul_t(w));
        }
        d_input
    }
}
