use crate::error::{Error, Result};

use super::mat::Mat;
use super::{position_encoding, EncoderParams, MaskMode, TokenSequence};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub rstd: Vec<f64>,
}

/// Row-wise layer norm without learned affine parameters.
pub(crate) fn layer_norm(x: &Mat) -> (Mat, LnCache) {
    let d = x.cols as f64;
    let mut out = Mat::zeros(x.rows, x.cols);
    let mut rstd = vec![0.0; x.rows];
    for i in 0..x.rows {
        let row = x.row(i);
        let m = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for (o, v) in out.row_mut(i).iter_mut().zip(row) {
            *o = (v - m) * r;
        }
    }
    (out, LnCache { rstd })
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub ln1: LnCache,
    pub y: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// Attention probabilities, one L×L matrix per head.
    pub probs: Vec<Mat>,
    pub ctx: Mat,
    pub ln2: LnCache,
    pub z: Mat,
    pub f1: Mat,
    pub act: Mat,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) ids: Vec<usize>,
    pub(crate) nonpad: Vec<bool>,
    pub(crate) n_nonpad: usize,
    pub(crate) layers: Vec<LayerCache>,
    pub x_final: Mat,
    pub pooled: Vec<f64>,
}

/// `allowed(i, j)`: may position i attend to position j. Pad columns are
/// masked everywhere; every row may attend to itself so no row softmax is
/// ever empty.
fn attention_allowed(i: usize, j: usize, nonpad: &[bool], mode: MaskMode) -> bool {
    if i == j {
        return true;
    }
    if !nonpad[j] {
        return false;
    }
    match mode {
        MaskMode::Bidirectional => true,
        MaskMode::Causal => j <= i,
    }
}

/// Full forward pass keeping intermediate activations for backprop.
pub fn encode_with_cache(seq: &TokenSequence, params: &EncoderParams) -> Result<ForwardCache> {
    params.config.validate()?;
    let d = params.config.dim;
    let len = seq.len();
    if len == 0 {
        return Err(Error::Input("encode: empty token sequence".into()));
    }
    if len > params.config.max_len {
        return Err(Error::Input(format!(
            "encode: sequence length {len} exceeds max_len {}",
            params.config.max_len
        )));
    }
    let vocab = params.vocab_size();
    for &id in &seq.ids {
        if id >= vocab {
            return Err(Error::Input(format!(
                "encode: token id {id} out of range (vocab {vocab})"
            )));
        }
    }
    let pad_id = 0usize;
    let nonpad: Vec<bool> = seq.ids.iter().map(|&id| id != pad_id).collect();
    let n_nonpad = nonpad.iter().filter(|b| **b).count();
    if n_nonpad == 0 {
        return Err(Error::Input("encode: all-pad sequence".into()));
    }

    let mut x0 = Mat::zeros(len, d);
    for (pos, &id) in seq.ids.iter().enumerate() {
        let row = x0.row_mut(pos);
        row.copy_from_slice(params.token_embeddings.row(id));
        if params.config.positional_encoding {
            for (r, p) in row.iter_mut().zip(position_encoding(pos, d)) {
                *r += p;
            }
        }
    }

    let heads = params.config.n_heads;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut x = x0;
    let mut layer_caches = Vec::with_capacity(params.layers.len());

    for (layer_idx, layer) in params.layers.iter().enumerate() {
        let x_in = x.clone();
        let (y, ln1) = layer_norm(&x_in);
        let q = y.matmul(&layer.w_q);
        let k = y.matmul(&layer.w_k);
        let v = y.matmul(&layer.w_v);

        let mut probs = Vec::with_capacity(heads);
        let mut ctx = Mat::zeros(len, d);
        for h in 0..heads {
            let qh = q.col_block(h * hd, hd);
            let kh = k.col_block(h * hd, hd);
            let vh = v.col_block(h * hd, hd);
            let mut scores = qh.matmul_nt(&kh);
            for s in scores.data.iter_mut() {
                *s *= scale;
            }
            let mut p = Mat::zeros(len, len);
            for i in 0..len {
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    if attention_allowed(i, j, &nonpad, params.config.mask_mode) {
                        max = max.max(scores.get(i, j));
                    }
                }
                let mut sum = 0.0;
                for j in 0..len {
                    if attention_allowed(i, j, &nonpad, params.config.mask_mode) {
                        let e = (scores.get(i, j) - max).exp();
                        p.set(i, j, e);
                        sum += e;
                    }
                }
                for j in 0..len {
                    p.set(i, j, p.get(i, j) / sum);
                }
            }
            let ctx_h = p.matmul(&vh);
            ctx.add_col_block(h * hd, &ctx_h);
            probs.push(p);
        }

        let attn_out = ctx.matmul(&layer.w_o);
        let mut x_mid = x_in.clone();
        x_mid.add_assign(&attn_out);

        let (z, ln2) = layer_norm(&x_mid);
        let f1 = z.matmul(&layer.w_ff1);
        let mut act = f1.clone();
        for a in act.data.iter_mut() {
            *a = gelu(*a);
        }
        let f2 = act.matmul(&layer.w_ff2);
        let mut x_out = x_mid.clone();
        x_out.add_assign(&f2);

        if !x_out.is_finite() {
            return Err(Error::Numeric(format!(
                "encode: non-finite activation after layer {layer_idx}"
            )));
        }

        layer_caches.push(LayerCache {
            ln1,
            y,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            z,
            f1,
            act,
        });
        x = x_out;
    }

    let mut pooled = vec![0.0; d];
    for (pos, &np) in nonpad.iter().enumerate() {
        if np {
            for (p, v) in pooled.iter_mut().zip(x.row(pos)) {
                *p += v;
            }
        }
    }
    for p in pooled.iter_mut() {
        *p /= n_nonpad as f64;
    }
    if pooled.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("encode: non-finite pooled output".into()));
    }

    Ok(ForwardCache {
        ids: seq.ids.clone(),
        nonpad,
        n_nonpad,
        layers: layer_caches,
        x_final: x,
        pooled,
    })
}
