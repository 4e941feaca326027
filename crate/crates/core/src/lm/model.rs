//! Forward pass, cross-entropy loss and hand-written backward pass.
//!
//! The decoder is pre-norm: `x += Attn(LN(x)); x += MLP(LN(x))`, followed by a
//! final layer norm and an output projection. Each input row is the sum of its
//! content vector (a video embedding row or a token embedding) and the learned
//! positional vector selected by its explicit position index, so rows sharing
//! an index share one positional vector.

use crate::error::{invalid, Error, Result};
use crate::par::{self, Execution};
use crate::pipeline::EmbeddingSeq;

use super::ops::*;
use super::params::ToyLmParams;

/// One training sequence: a video prefix, text tokens and next-token targets.
///
/// A target `(i, id)` asks the logits at text token `i` to predict `id`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub prefix: EmbeddingSeq,
    pub tokens: Vec<u32>,
    pub targets: Vec<(usize, u32)>,
}

/// Row-major `rows x vocab` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub rows: usize,
    pub vocab: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.vocab..(r + 1) * self.vocab]
    }
}

struct LayerCache {
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    h: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head, `t x t` attention probabilities (upper triangle zero).
    probs: Vec<Vec<f64>>,
    attn: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    h2: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace {
    len: usize,
    positions: Vec<usize>,
    token_rows: Vec<(usize, u32)>,
    layers: Vec<LayerCache>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    hidden: Vec<f64>,
}

impl Trace {
    /// Attention probabilities of `layer`, `head` as a `len x len` matrix.
    pub fn attention(&self, layer: usize, head: usize) -> &[f64] {
        &self.layers[layer].probs[head]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }
}

/// Positions of the combined sequence: prefix positions, then text from `prefix.text_offset()`.
pub fn sequence_positions(prefix: &EmbeddingSeq, n_tokens: usize) -> Vec<usize> {
    let off = prefix.text_offset();
    prefix
        .positions
        .iter()
        .copied()
        .chain((0..n_tokens).map(|i| off + i))
        .collect()
}

fn embed_inputs(params: &ToyLmParams, prefix: &EmbeddingSeq, tokens: &[u32]) -> Result<(Vec<f64>, Vec<usize>)> {
    let c = &params.config;
    let d = c.d_model;
    if !prefix.is_empty() && prefix.dim != d {
        return Err(Error::Shape(format!("prefix width {} does not match model width {d}", prefix.dim)));
    }
    let positions = sequence_positions(prefix, tokens.len());
    if let Some(&p) = positions.iter().max() {
        if p >= c.max_positions {
            return Err(Error::Capacity {
                position: p,
                capacity: c.max_positions,
            });
        }
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= c.vocab) {
        return Err(Error::Vocab { id, vocab: c.vocab });
    }
    let mut x = Vec::with_capacity(positions.len() * d);
    x.extend(prefix.rows.iter().map(|&v| v as f64));
    for &t in tokens {
        let t = t as usize;
        x.extend_from_slice(&params.token_embedding[t * d..(t + 1) * d]);
    }
    for (row, &p) in x.chunks_exact_mut(d).zip(&positions) {
        add_assign(row, &params.position_embedding[p * d..(p + 1) * d]);
    }
    Ok((x, positions))
}

/// Runs the decoder and keeps every intermediate needed for backprop.
pub fn forward_trace(params: &ToyLmParams, prefix: &EmbeddingSeq, tokens: &[u32]) -> Result<Trace> {
    let c = params.config;
    let (d, nh, dh, hid) = (c.d_model, c.heads, c.head_dim(), c.mlp_hidden);
    let (mut x, positions) = embed_inputs(params, prefix, tokens)?;
    let t = positions.len();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut layers = Vec::with_capacity(c.layers);
    for lp in &params.layers {
        let (h, ln1_xhat, ln1_rstd) = layer_norm(&x, &lp.ln1_gain, &lp.ln1_bias);
        let q = matmul(&h, &lp.w_query, t, d, d);
        let k = matmul(&h, &lp.w_key, t, d, d);
        let v = matmul(&h, &lp.w_value, t, d, d);
        let mut attn = vec![0.0; t * d];
        let mut probs = Vec::with_capacity(nh);
        for head in 0..nh {
            let cols = head * dh..(head + 1) * dh;
            let mut p = vec![0.0; t * t];
            for i in 0..t {
                let qi = &q[i * d..(i + 1) * d][cols.clone()];
                let row = &mut p[i * t..i * t + i + 1];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &k[j * d..(j + 1) * d][cols.clone()]) * scale;
                }
                softmax(row);
                let out = &mut attn[i * d..(i + 1) * d][cols.clone()];
                for (j, &w) in row.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&v[j * d..(j + 1) * d][cols.clone()]) {
                        *o += w * vv;
                    }
                }
            }
            probs.push(p);
        }
        let mut a = matmul(&attn, &lp.w_attn_out, t, d, d);
        add_bias(&mut a, &lp.b_attn_out);
        add_assign(&mut x, &a);

        let (h2, ln2_xhat, ln2_rstd) = layer_norm(&x, &lp.ln2_gain, &lp.ln2_bias);
        let mut pre_act = matmul(&h2, &lp.w_fc, t, d, hid);
        add_bias(&mut pre_act, &lp.b_fc);
        let act: Vec<f64> = pre_act.iter().map(|&u| gelu(u)).collect();
        let mut m = matmul(&act, &lp.w_proj, t, hid, d);
        add_bias(&mut m, &lp.b_proj);
        add_assign(&mut x, &m);

        layers.push(LayerCache {
            ln1_xhat,
            ln1_rstd,
            h,
            q,
            k,
            v,
            probs,
            attn,
            ln2_xhat,
            ln2_rstd,
            h2,
            pre_act,
            act,
        });
    }
    let (hidden, lnf_xhat, lnf_rstd) = layer_norm(&x, &params.lnf_gain, &params.lnf_bias);
    let base = prefix.len();
    Ok(Trace {
        len: t,
        positions,
        token_rows: tokens.iter().enumerate().map(|(i, &id)| (base + i, id)).collect(),
        layers,
        lnf_xhat,
        lnf_rstd,
        hidden,
    })
}

fn logits_at(params: &ToyLmParams, trace: &Trace, row: usize) -> Vec<f64> {
    let d = params.config.d_model;
    let mut out = params.b_out.clone();
    matmul_acc(&trace.hidden[row * d..(row + 1) * d], &params.w_out, 1, d, params.config.vocab, &mut out);
    out
}

/// Logits for every row of `[prefix ; tokens]`.
pub fn forward(prefix: &EmbeddingSeq, tokens: &[u32], params: &ToyLmParams) -> Result<Logits> {
    let trace = forward_trace(params, prefix, tokens)?;
    let vocab = params.config.vocab;
    let mut data = Vec::with_capacity(trace.len * vocab);
    for r in 0..trace.len {
        data.extend(logits_at(params, &trace, r));
    }
    Ok(Logits {
        rows: trace.len,
        vocab,
        data,
    })
}

/// Logits of the final row only.
pub fn last_logits(prefix: &EmbeddingSeq, tokens: &[u32], params: &ToyLmParams) -> Result<Vec<f64>> {
    let trace = forward_trace(params, prefix, tokens)?;
    if trace.len == 0 {
        return Err(invalid("cannot produce logits for an empty sequence"));
    }
    Ok(logits_at(params, &trace, trace.len - 1))
}

/// Summed cross-entropy of one example and its (unnormalised) gradients.
fn example_loss_and_grads(params: &ToyLmParams, ex: &Example, weight: f64) -> Result<(f64, ToyLmParams)> {
    let c = params.config;
    let (d, nh, dh, hid, vocab) = (c.d_model, c.heads, c.head_dim(), c.mlp_hidden, c.vocab);
    let trace = forward_trace(params, &ex.prefix, &ex.tokens)?;
    let t = trace.len;
    let base = ex.prefix.len();
    let mut grads = params.zeros_like();
    let mut loss = 0.0;

    // Output head.
    let mut dhidden = vec![0.0; t * d];
    for &(i, target) in &ex.targets {
        if i >= ex.tokens.len() {
            return Err(invalid(format!("target index {i} beyond {} tokens", ex.tokens.len())));
        }
        if target as usize >= vocab {
            return Err(Error::Vocab { id: target, vocab });
        }
        let row = base + i;
        let logits = logits_at(params, &trace, row);
        let lse = log_sum_exp(&logits);
        loss += lse - logits[target as usize];
        let mut dl: Vec<f64> = logits.iter().map(|&z| (z - lse).exp() * weight).collect();
        dl[target as usize] -= weight;
        let hrow = &trace.hidden[row * d..(row + 1) * d];
        matmul_at_b_acc(hrow, &dl, 1, d, vocab, &mut grads.w_out);
        add_assign(&mut grads.b_out, &dl);
        let dh_row = matmul_a_bt(&dl, &params.w_out, 1, vocab, d);
        add_assign(&mut dhidden[row * d..(row + 1) * d], &dh_row);
    }
    if ex.targets.is_empty() {
        return Ok((0.0, grads));
    }
    let mut dx = layer_norm_backward(
        &dhidden,
        &trace.lnf_xhat,
        &trace.lnf_rstd,
        &params.lnf_gain,
        &mut grads.lnf_gain,
        &mut grads.lnf_bias,
    );

    let scale = 1.0 / (dh as f64).sqrt();
    for (li, (lp, cache)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        let g = &mut grads.layers[li];

        // MLP block.
        col_sum_acc(&dx, d, &mut g.b_proj);
        matmul_at_b_acc(&cache.act, &dx, t, hid, d, &mut g.w_proj);
        let dact = matmul_a_bt(&dx, &lp.w_proj, t, d, hid);
        let dpre: Vec<f64> = dact
            .iter()
            .zip(&cache.pre_act)
            .map(|(&da, &u)| da * gelu_grad(u))
            .collect();
        col_sum_acc(&dpre, hid, &mut g.b_fc);
        matmul_at_b_acc(&cache.h2, &dpre, t, d, hid, &mut g.w_fc);
        let dh2 = matmul_a_bt(&dpre, &lp.w_fc, t, hid, d);
        let dres = layer_norm_backward(&dh2, &cache.ln2_xhat, &cache.ln2_rstd, &lp.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
        add_assign(&mut dx, &dres);

        // Attention block.
        col_sum_acc(&dx, d, &mut g.b_attn_out);
        matmul_at_b_acc(&cache.attn, &dx, t, d, d, &mut g.w_attn_out);
        let dattn = matmul_a_bt(&dx, &lp.w_attn_out, t, d, d);
        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut dp = vec![0.0; t];
        for head in 0..nh {
            let cols = head * dh..(head + 1) * dh;
            let probs = &cache.probs[head];
            for i in 0..t {
                let prow = &probs[i * t..i * t + i + 1];
                let dout = &dattn[i * d..(i + 1) * d][cols.clone()];
                let dprow = &mut dp[..i + 1];
                for (j, dpj) in dprow.iter_mut().enumerate() {
                    *dpj = dot(dout, &cache.v[j * d..(j + 1) * d][cols.clone()]);
                    let w = prow[j];
                    for (dvv, &o) in dv[j * d..(j + 1) * d][cols.clone()].iter_mut().zip(dout) {
                        *dvv += w * o;
                    }
                }
                let inner: f64 = prow.iter().zip(dprow.iter()).map(|(a, b)| a * b).sum();
                let qi = &cache.q[i * d..(i + 1) * d][cols.clone()];
                let mut dqi = vec![0.0; dh];
                for j in 0..=i {
                    let ds = prow[j] * (dprow[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k[j * d..(j + 1) * d][cols.clone()];
                    for (a, &kv) in dqi.iter_mut().zip(kj) {
                        *a += ds * kv;
                    }
                    for (a, &qv) in dk[j * d..(j + 1) * d][cols.clone()].iter_mut().zip(qi) {
                        *a += ds * qv;
                    }
                }
                add_assign(&mut dq[i * d..(i + 1) * d][cols.clone()], &dqi);
            }
        }
        matmul_at_b_acc(&cache.h, &dq, t, d, d, &mut g.w_query);
        matmul_at_b_acc(&cache.h, &dk, t, d, d, &mut g.w_key);
        matmul_at_b_acc(&cache.h, &dv, t, d, d, &mut g.w_value);
        let mut dh = matmul_a_bt(&dq, &lp.w_query, t, d, d);
        add_assign(&mut dh, &matmul_a_bt(&dk, &lp.w_key, t, d, d));
        add_assign(&mut dh, &matmul_a_bt(&dv, &lp.w_value, t, d, d));
        let dres = layer_norm_backward(&dh, &cache.ln1_xhat, &cache.ln1_rstd, &lp.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
        add_assign(&mut dx, &dres);
    }

    // Embeddings. Prefix rows are fixed inputs; only their positional vectors learn.
    for (r, &p) in trace.positions.iter().enumerate() {
        add_assign(&mut grads.position_embedding[p * d..(p + 1) * d], &dx[r * d..(r + 1) * d]);
    }
    for &(r, id) in &trace.token_rows {
        let id = id as usize;
        add_assign(&mut grads.token_embedding[id * d..(id + 1) * d], &dx[r * d..(r + 1) * d]);
    }
    Ok((loss, grads))
}

/// Mean next-token cross-entropy over every target in the batch, with gradients.
///
/// Per-example work may run in parallel; the reduction is always in batch order.
pub fn loss_and_grads(batch: &[Example], params: &ToyLmParams, exec: Execution) -> Result<(f64, ToyLmParams)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let count: usize = batch.iter().map(|e| e.targets.len()).sum();
    let weight = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    let parts = par::map(exec, batch, |ex| example_loss_and_grads(params, ex, weight));
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for part in parts {
        let (l, g) = part?;
        total += l;
        grads.add_scaled(&g, 1.0);
    }
    Ok((total * weight, grads))
}

/// Mean loss only (used by finite-difference checks).
pub fn loss(batch: &[Example], params: &ToyLmParams) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in batch {
        let trace = forward_trace(params, &ex.prefix, &ex.tokens)?;
        for &(i, target) in &ex.targets {
            let logits = logits_at(params, &trace, ex.prefix.len() + i);
            total += log_sum_exp(&logits) - logits[target as usize];
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding of up to `max_new` tokens, stopping before `end_token`.
pub fn generate(
    prefix: &EmbeddingSeq,
    prompt: &[u32],
    params: &ToyLmParams,
    max_new: usize,
    end_token: u32,
) -> Result<Vec<u32>> {
    let mut tokens = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        let logits = last_logits(prefix, &tokens, params)?;
        let next = argmax(&logits) as u32;
        if next == end_token {
            break;
        }
        out.push(next);
        tokens.push(next);
    }
    Ok(out)
}
