//! The encoder against a straight-line re-implementation of one post-norm
//! layer with one attention head, written with plain arrays and no shared
//! code.

use hanmlm::model::{Mode, ModelConfig, ModelParams, Sequence};

const H: usize = 8;
const FF: usize = 12;
const V: usize = 10;
const EPS: f64 = 1e-12;

fn config() -> ModelConfig {
    ModelConfig {
        vocab_size: V,
        hidden_size: H,
        num_layers: 1,
        num_heads: 1,
        intermediate_size: FF,
        max_position: 6,
        layer_norm_eps: EPS,
        ..ModelConfig::default()
    }
}

/// Deterministic "hand-set" value for element (r, c) of tensor `t`.
fn w(t: usize, r: usize, c: usize) -> f64 {
    ((t * 31 + r * 7 + c * 3) as f64 * 0.37).sin() * 0.5
}

fn table(t: usize, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|r| (0..cols).map(|c| w(t, r, c)).collect()).collect()
}

fn params() -> ModelParams<f64> {
    let mut p = ModelParams::zeros(&config());
    for (t, (_, _, m)) in p.named_tensors_mut().into_iter().enumerate() {
        let (rows, cols) = m.shape();
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, w(t, r, c));
            }
        }
    }
    p
}

fn vec_mat(x: &[f64], m: &[Vec<f64>], bias: &[f64]) -> Vec<f64> {
    (0..bias.len()).map(|j| bias[j] + (0..x.len()).map(|i| x[i] * m[i][j]).sum::<f64>()).collect()
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| gain[i] * (v - mean) / (var + EPS).sqrt() + bias[i])
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

/// Tensor indices follow the canonical checkpoint order.
fn oracle(tokens: &[usize]) -> Vec<Vec<f64>> {
    let tok = table(0, V, H);
    let pos = table(1, 6, H);
    let seg = table(2, 2, H);
    let (wq, bq) = (table(3, H, H), table(4, 1, H).remove(0));
    let (wk, bk) = (table(5, H, H), table(6, 1, H).remove(0));
    let (wv, bv) = (table(7, H, H), table(8, 1, H).remove(0));
    let (wo, bo) = (table(9, H, H), table(10, 1, H).remove(0));
    let (g1, n1) = (table(11, 1, H).remove(0), table(12, 1, H).remove(0));
    let (wi, bi) = (table(13, H, FF), table(14, 1, FF).remove(0));
    let (wf, bf) = (table(15, FF, H), table(16, 1, H).remove(0));
    let (g2, n2) = (table(17, 1, H).remove(0), table(18, 1, H).remove(0));
    let out_bias = table(19, 1, V).remove(0);

    let n = tokens.len();
    let x: Vec<Vec<f64>> = (0..n).map(|i| (0..H).map(|c| tok[tokens[i]][c] + pos[i][c] + seg[0][c]).collect()).collect();
    let q: Vec<_> = x.iter().map(|r| vec_mat(r, &wq, &bq)).collect();
    let k: Vec<_> = x.iter().map(|r| vec_mat(r, &wk, &bk)).collect();
    let v: Vec<_> = x.iter().map(|r| vec_mat(r, &wv, &bv)).collect();
    let mut out = Vec::new();
    for i in 0..n {
        let scores: Vec<f64> = (0..n)
            .map(|j| (0..H).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (H as f64).sqrt())
            .collect();
        let max = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let ctx: Vec<f64> = (0..H)
            .map(|c| (0..n).map(|j| (scores[j] - max).exp() / z * v[j][c]).sum())
            .collect();
        let attn = vec_mat(&ctx, &wo, &bo);
        let res1: Vec<f64> = (0..H).map(|c| x[i][c] + attn[c]).collect();
        let a = layer_norm(&res1, &g1, &n1);
        let inner: Vec<f64> = vec_mat(&a, &wi, &bi).into_iter().map(gelu).collect();
        let ffn = vec_mat(&inner, &wf, &bf);
        let res2: Vec<f64> = (0..H).map(|c| a[c] + ffn[c]).collect();
        let h = layer_norm(&res2, &g2, &n2);
        let logits: Vec<f64> = (0..V).map(|t| out_bias[t] + (0..H).map(|c| h[c] * tok[t][c]).sum::<f64>()).collect();
        out.push(logits);
    }
    out
}

fn check(tokens: &[usize]) {
    let p = params();
    let seq = Sequence::new(tokens.iter().map(|&t| t as u32).collect());
    let got = p.forward(&seq, Mode::Eval).unwrap();
    let want = oracle(tokens);
    for (i, row) in want.iter().enumerate() {
        for (t, &expected) in row.iter().enumerate() {
            let actual = got.logits.get(i, t);
            assert!((actual - expected).abs() < 1e-10, "position {i} token {t}: {actual} vs {expected}");
        }
    }
}

#[test]
fn single_token_matches_straight_line_arithmetic() {
    check(&[7]);
}

#[test]
fn short_sequence_matches_straight_line_arithmetic() {
    check(&[2, 5, 9, 3]);
}
