//! Forward and backward passes of the shared transformer stack.

use super::linalg::{dot, matmul, matmul_acc, matmul_nt, matmul_tn_acc, Matrix};
use super::params::{LayerParams, Parameters};
use crate::tokenize::{TokenId, PAD};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Which key positions each query position may attend to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttentionMask {
    /// Every query sees every non-padding key.
    Bidirectional { key_valid: Vec<bool> },
    /// Positions before `prefix_len` see only the prefix; later positions see
    /// the prefix plus every earlier (and their own) position.
    PrefixCausal { prefix_len: usize },
}

impl AttentionMask {
    /// Bidirectional mask treating `PAD` tokens as padding.
    pub fn padded(tokens: &[TokenId]) -> Self {
        AttentionMask::Bidirectional {
            key_valid: tokens.iter().map(|&t| t != PAD).collect(),
        }
    }

    #[inline]
    pub fn allowed(&self, query: usize, key: usize) -> bool {
        match self {
            AttentionMask::Bidirectional { key_valid } => key_valid[key],
            AttentionMask::PrefixCausal { prefix_len } => {
                if query < *prefix_len {
                    key < *prefix_len
                } else {
                    key <= query
                }
            }
        }
    }
}

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, LnCache) {
    let cols = x.cols;
    let mut xhat = Matrix::zeros(x.rows, cols);
    let mut out = Matrix::zeros(x.rows, cols);
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(s);
        let xh = xhat.row_mut(r);
        for c in 0..cols {
            xh[c] = (row[c] - mean) * s;
        }
        let o = out.row_mut(r);
        for c in 0..cols {
            o[c] = xh[c] * gain.data[c] + bias.data[c];
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Returns the input gradient and accumulates gain/bias gradients.
fn layer_norm_backward(dy: &Matrix, cache: &LnCache, gain: &Matrix, dgain: &mut Matrix, dbias: &mut Matrix) -> Matrix {
    let cols = dy.cols;
    let n = cols as f64;
    let mut dx = Matrix::zeros(dy.rows, cols);
    let mut dxhat = vec![0.0; cols];
    for r in 0..dy.rows {
        let g = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..cols {
            dxhat[c] = g[c] * gain.data[c];
            dgain.data[c] += g[c] * xh[c];
            dbias.data[c] += g[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        let s = cache.rstd[r];
        let out = dx.row_mut(r);
        for c in 0..cols {
            out[c] = s * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = matmul(x, w);
    y.add_row_vector(&b.data);
    y
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn linear_backward(dy: &Matrix, x: &Matrix, w: &Matrix, dw: &mut Matrix, db: &mut Matrix) -> Matrix {
    matmul_tn_acc(x, dy, dw);
    dy.column_sums_into(&mut db.data);
    matmul_nt(dy, w)
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LnCache,
    h1: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities, one `len x len` matrix per head.
    probs: Vec<Matrix>,
    ctx: Matrix,
    ln2: LnCache,
    h2: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
}

/// Activations of one sequence, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub tokens: Vec<TokenId>,
    pub mask: AttentionMask,
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    /// Final layer-normed hidden states, `len x hidden`.
    pub output: Matrix,
}

fn attention(layer: &LayerParams, h1: &Matrix, heads: usize, mask: &AttentionMask) -> (Matrix, Matrix, Matrix, Vec<Matrix>, Matrix) {
    let len = h1.rows;
    let hidden = h1.cols;
    let dh = hidden / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(h1, &layer.w_q, &layer.b_q);
    let k = linear(h1, &layer.w_k, &layer.b_k);
    let v = linear(h1, &layer.w_v, &layer.b_v);
    let mut ctx = Matrix::zeros(len, hidden);
    let mut probs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = q.columns(head * dh, dh);
        let kh = k.columns(head * dh, dh);
        let vh = v.columns(head * dh, dh);
        let mut scores = matmul_nt(&qh, &kh);
        for i in 0..len {
            let row = scores.row_mut(i);
            let mut max = f64::NEG_INFINITY;
            for (j, s) in row.iter_mut().enumerate() {
                if mask.allowed(i, j) {
                    *s *= scale;
                    max = max.max(*s);
                }
            }
            let mut sum = 0.0;
            for (j, s) in row.iter_mut().enumerate() {
                if mask.allowed(i, j) {
                    *s = (*s - max).exp();
                    sum += *s;
                } else {
                    *s = 0.0;
                }
            }
            if sum > 0.0 {
                row.iter_mut().for_each(|s| *s /= sum);
            }
        }
        let ctx_h = matmul(&scores, &vh);
        ctx.set_columns(head * dh, &ctx_h);
        probs.push(scores);
    }
    (q, k, v, probs, ctx)
}

/// Run the shared stack over one token sequence.
///
/// Callers validate token ids and length against the config.
pub fn forward(params: &Parameters, heads: usize, tokens: &[TokenId], mask: AttentionMask) -> Forward {
    let len = tokens.len();
    let hidden = params.token_embedding.cols;
    let mut x = Matrix::zeros(len, hidden);
    for (i, &t) in tokens.iter().enumerate() {
        let tok = params.token_embedding.row(t as usize);
        let pos = params.position_embedding.row(i);
        for (o, (a, b)) in x.row_mut(i).iter_mut().zip(tok.iter().zip(pos)) {
            *o = a + b;
        }
    }

    let mut caches = Vec::with_capacity(params.stack().len());
    for layer in params.stack() {
        let (h1, ln1) = layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias);
        let (q, k, v, probs, ctx) = attention(layer, &h1, heads, &mask);
        let attn_out = linear(&ctx, &layer.w_o, &layer.b_o);
        x.add_assign(&attn_out);
        let (h2, ln2) = layer_norm(&x, &layer.ln2_gain, &layer.ln2_bias);
        let ff_pre = linear(&h2, &layer.w_ff1, &layer.b_ff1);
        let mut ff_act = ff_pre.clone();
        ff_act.data.iter_mut().for_each(|u| *u = gelu(*u));
        let ff_out = linear(&ff_act, &layer.w_ff2, &layer.b_ff2);
        x.add_assign(&ff_out);
        caches.push(LayerCache {
            ln1,
            h1,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            h2,
            ff_pre,
            ff_act,
        });
    }
    let (output, final_ln) = layer_norm(&x, &params.final_ln_gain, &params.final_ln_bias);
    Forward {
        tokens: tokens.to_vec(),
        mask,
        layers: caches,
        final_ln,
        output,
    }
}

/// Backpropagate `d_output` (gradient w.r.t. [`Forward::output`]) through
/// the stack, accumulating into `grads`.
pub fn backward(params: &Parameters, heads: usize, fwd: &Forward, d_output: &Matrix, grads: &mut Parameters) {
    let mut dx = layer_norm_backward(
        d_output,
        &fwd.final_ln,
        &params.final_ln_gain,
        &mut grads.final_ln_gain,
        &mut grads.final_ln_bias,
    );
    for (idx, layer) in params.stack().iter().enumerate().rev() {
        let cache = &fwd.layers[idx];
        let g = &mut grads.layers[idx];

        // Feed-forward residual branch.
        let mut d_act = linear_backward(&dx, &cache.ff_act, &layer.w_ff2, &mut g.w_ff2, &mut g.b_ff2);
        for (d, u) in d_act.data.iter_mut().zip(&cache.ff_pre.data) {
            *d *= gelu_grad(*u);
        }
        let d_h2 = linear_backward(&d_act, &cache.h2, &layer.w_ff1, &mut g.w_ff1, &mut g.b_ff1);
        let d_mid = layer_norm_backward(&d_h2, &cache.ln2, &layer.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
        dx.add_assign(&d_mid);

        // Attention residual branch.
        let d_ctx = linear_backward(&dx, &cache.ctx, &layer.w_o, &mut g.w_o, &mut g.b_o);
        let len = d_ctx.rows;
        let hidden = d_ctx.cols;
        let dh = hidden / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Matrix::zeros(len, hidden);
        let mut dk = Matrix::zeros(len, hidden);
        let mut dv = Matrix::zeros(len, hidden);
        for head in 0..heads {
            let probs = &cache.probs[head];
            let d_ctx_h = d_ctx.columns(head * dh, dh);
            let qh = cache.q.columns(head * dh, dh);
            let kh = cache.k.columns(head * dh, dh);
            let vh = cache.v.columns(head * dh, dh);

            let mut dvh = Matrix::zeros(len, dh);
            matmul_tn_acc(probs, &d_ctx_h, &mut dvh);
            let mut ds = matmul_nt(&d_ctx_h, &vh);
            for i in 0..len {
                let p = probs.row(i);
                let row = ds.row_mut(i);
                let inner = dot(p, row);
                for (d, pv) in row.iter_mut().zip(p) {
                    *d = pv * (*d - inner) * scale;
                }
            }
            let dqh = matmul(&ds, &kh);
            let mut dkh = Matrix::zeros(len, dh);
            matmul_tn_acc(&ds, &qh, &mut dkh);
            dq.set_columns(head * dh, &dqh);
            dk.set_columns(head * dh, &dkh);
            dv.set_columns(head * dh, &dvh);
        }
        let mut d_h1 = linear_backward(&dq, &cache.h1, &layer.w_q, &mut g.w_q, &mut g.b_q);
        d_h1.add_assign(&linear_backward(&dk, &cache.h1, &layer.w_k, &mut g.w_k, &mut g.b_k));
        d_h1.add_assign(&linear_backward(&dv, &cache.h1, &layer.w_v, &mut g.w_v, &mut g.b_v));
        let d_in = layer_norm_backward(&d_h1, &cache.ln1, &layer.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
        dx.add_assign(&d_in);
    }

    for (i, &t) in fwd.tokens.iter().enumerate() {
        let d = dx.row(i);
        for (g, v) in grads.token_embedding.row_mut(t as usize).iter_mut().zip(d) {
            *g += v;
        }
        for (g, v) in grads.position_embedding.row_mut(i).iter_mut().zip(d) {
            *g += v;
        }
    }
}

/// Projection-head output before and after L2 normalization.
#[derive(Debug, Clone)]
pub struct Projection {
    pub unit: Vec<f64>,
    pub norm: f64,
}

pub fn project(params: &Parameters, pooled: &[f64]) -> Projection {
    let mut z = params.proj_b.data.clone();
    let w = &params.proj_w;
    for (h, &x) in pooled.iter().enumerate() {
        for (zj, wj) in z.iter_mut().zip(w.row(h)) {
            *zj += x * wj;
        }
    }
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit = if norm > 0.0 { z.iter().map(|v| v / norm).collect() } else { z };
    Projection { unit, norm }
}

/// Gradient of the pooled state given the gradient of the unit projection.
pub fn project_backward(params: &Parameters, pooled: &[f64], proj: &Projection, d_unit: &[f64], grads: &mut Parameters) -> Vec<f64> {
    let along = dot(&proj.unit, d_unit);
    let dz: Vec<f64> = d_unit
        .iter()
        .zip(&proj.unit)
        .map(|(d, p)| (d - p * along) / proj.norm)
        .collect();
    for (h, &x) in pooled.iter().enumerate() {
        for (g, d) in grads.proj_w.row_mut(h).iter_mut().zip(&dz) {
            *g += x * d;
        }
    }
    for (g, d) in grads.proj_b.data.iter_mut().zip(&dz) {
        *g += d;
    }
    (0..pooled.len()).map(|h| dot(params.proj_w.row(h), &dz)).collect()
}

pub fn bc_logit(params: &Parameters, pooled: &[f64]) -> f64 {
    dot(&params.bc_w.data, pooled) + params.bc_b.data[0]
}

pub fn bc_backward(params: &Parameters, pooled: &[f64], d_logit: f64, grads: &mut Parameters) -> Vec<f64> {
    for (g, x) in grads.bc_w.data.iter_mut().zip(pooled) {
        *g += d_logit * x;
    }
    grads.bc_b.data[0] += d_logit;
    params.bc_w.data.iter().map(|w| d_logit * w).collect()
}

/// Vocabulary logits for each row of `states` (tied to the token embedding).
pub fn lm_logits(params: &Parameters, states: &Matrix) -> Matrix {
    let mut logits = matmul_nt(states, &params.token_embedding);
    logits.add_row_vector(&params.lm_bias.data);
    logits
}

pub fn lm_backward(params: &Parameters, states: &Matrix, d_logits: &Matrix, grads: &mut Parameters) -> Matrix {
    matmul_tn_acc(d_logits, states, &mut grads.token_embedding);
    d_logits.column_sums_into(&mut grads.lm_bias.data);
    let mut d_states = Matrix::zeros(states.rows, states.cols);
    matmul_acc(d_logits, &params.token_embedding, &mut d_states);
    d_states
}
