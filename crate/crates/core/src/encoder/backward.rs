use crate::error::{Error, Result};

use super::forward::{gelu_grad, ForwardCache, LnCache};
use super::mat::Mat;
use super::EncoderParams;

/// Gradient accumulator mirroring [`EncoderParams`] tensor for tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub token_embeddings: Mat,
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub w_o: Mat,
    pub w_ff1: Mat,
    pub w_ff2: Mat,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            token_embeddings: Mat::zeros(
                params.token_embeddings.rows,
                params.token_embeddings.cols,
            ),
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w_q: Mat::zeros(l.w_q.rows, l.w_q.cols),
                    w_k: Mat::zeros(l.w_k.rows, l.w_k.cols),
                    w_v: Mat::zeros(l.w_v.rows, l.w_v.cols),
                    w_o: Mat::zeros(l.w_o.rows, l.w_o.cols),
                    w_ff1: Mat::zeros(l.w_ff1.rows, l.w_ff1.cols),
                    w_ff2: Mat::zeros(l.w_ff2.rows, l.w_ff2.cols),
                })
                .collect(),
        }
    }

    /// Same flattening order as [`EncoderParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.token_embeddings.data);
        for l in &self.layers {
            out.extend_from_slice(&l.w_q.data);
            out.extend_from_slice(&l.w_k.data);
            out.extend_from_slice(&l.w_v.data);
            out.extend_from_slice(&l.w_o.data);
            out.extend_from_slice(&l.w_ff1.data);
            out.extend_from_slice(&l.w_ff2.data);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for x in self.token_embeddings.data.iter_mut() {
            *x *= factor;
        }
        for l in self.layers.iter_mut() {
            for m in [
                &mut l.w_q,
                &mut l.w_k,
                &mut l.w_v,
                &mut l.w_o,
                &mut l.w_ff1,
                &mut l.w_ff2,
            ] {
                for x in m.data.iter_mut() {
                    *x *= factor;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.token_embeddings.is_finite()
            && self.layers.iter().all(|l| {
                l.w_q.is_finite()
                    && l.w_k.is_finite()
                    && l.w_v.is_finite()
                    && l.w_o.is_finite()
                    && l.w_ff1.is_finite()
                    && l.w_ff2.is_finite()
            })
    }
}

/// Backward of row-wise affine-free layer norm.
fn layer_norm_backward(dy: &Mat, y: &Mat, cache: &LnCache) -> Mat {
    let d = dy.cols as f64;
    let mut dx = Mat::zeros(dy.rows, dy.cols);
    for i in 0..dy.rows {
        let dy_row = dy.row(i);
        let y_row = y.row(i);
        let r = cache.rstd[i];
        let mean_dy = dy_row.iter().sum::<f64>() / d;
        let mean_dyy = dy_row.iter().zip(y_row).map(|(a, b)| a * b).sum::<f64>() / d;
        for (j, dst) in dx.row_mut(i).iter_mut().enumerate() {
            *dst = r * (dy_row[j] - mean_dy - y_row[j] * mean_dyy);
        }
    }
    dx
}

/// Row-wise softmax backward with masked (zero-probability) entries
/// contributing nothing.
fn softmax_rows_backward(probs: &Mat, dprobs: &Mat) -> Mat {
    let mut out = Mat::zeros(probs.rows, probs.cols);
    for i in 0..probs.rows {
        let p = probs.row(i);
        let dp = dprobs.row(i);
        let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (j, dst) in out.row_mut(i).iter_mut().enumerate() {
            *dst = p[j] * (dp[j] - inner);
        }
    }
    out
}

/// Reverse-mode pass: accumulate into `grads` the gradient of a scalar loss
/// whose gradient with respect to the pooled embedding is `d_pooled`.
pub fn backward_into(
    cache: &ForwardCache,
    params: &EncoderParams,
    d_pooled: &[f64],
    grads: &mut EncoderGrads,
) -> Result<()> {
    let d = params.config.dim;
    if d_pooled.len() != d {
        return Err(Error::Dimension(format!(
            "backward: pooled gradient has dim {}, expected {d}",
            d_pooled.len()
        )));
    }
    let len = cache.ids.len();
    let heads = params.config.n_heads;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();

    // Mean pooling backward: each non-pad row receives d_pooled / n_nonpad.
    let mut dx = Mat::zeros(len, d);
    let inv = 1.0 / cache.n_nonpad as f64;
    for (pos, &np) in cache.nonpad.iter().enumerate() {
        if np {
            for (dst, g) in dx.row_mut(pos).iter_mut().zip(d_pooled) {
                *dst = g * inv;
            }
        }
    }

    for (layer, (lc, lp)) in cache
        .layers
        .iter()
        .zip(&params.layers)
        .enumerate()
        .rev()
        .map(|(i, pair)| (i, pair))
    {
        // FFN block: x_out = x_mid + gelu(LN(x_mid) W1) W2
        let df2 = &dx;
        let mut dact = df2.matmul_nt(&lp.w_ff2);
        let lg = &mut grads.layers[layer];
        lg.w_ff2.add_assign(&lc.act.matmul_tn(df2));
        for (da, f) in dact.data.iter_mut().zip(&lc.f1.data) {
            *da *= gelu_grad(*f);
        }
        let dz = dact.matmul_nt(&lp.w_ff1);
        lg.w_ff1.add_assign(&lc.z.matmul_tn(&dact));
        let mut dx_mid = dx.clone();
        dx_mid.add_assign(&layer_norm_backward(&dz, &lc.z, &lc.ln2));

        // Attention block: x_mid = x_in + MHA(LN(x_in)) Wo
        let dattn = &dx_mid;
        let dctx = dattn.matmul_nt(&lp.w_o);
        lg.w_o.add_assign(&lc.ctx.matmul_tn(dattn));

        let mut dq = Mat::zeros(len, d);
        let mut dk = Mat::zeros(len, d);
        let mut dv = Mat::zeros(len, d);
        for h in 0..heads {
            let dctx_h = dctx.col_block(h * hd, hd);
            let vh = lc.v.col_block(h * hd, hd);
            let qh = lc.q.col_block(h * hd, hd);
            let kh = lc.k.col_block(h * hd, hd);
            let p = &lc.probs[h];

            let dp = dctx_h.matmul_nt(&vh);
            let dvh = p.matmul_tn(&dctx_h);
            let mut ds = softmax_rows_backward(p, &dp);
            for s in ds.data.iter_mut() {
                *s *= scale;
            }
            let dqh = ds.matmul(&kh);
            let dkh = ds.matmul_tn(&qh);

            dq.add_col_block(h * hd, &dqh);
            dk.add_col_block(h * hd, &dkh);
            dv.add_col_block(h * hd, &dvh);
        }

        let mut dy = dq.matmul_nt(&lp.w_q);
        dy.add_assign(&dk.matmul_nt(&lp.w_k));
        dy.add_assign(&dv.matmul_nt(&lp.w_v));
        lg.w_q.add_assign(&lc.y.matmul_tn(&dq));
        lg.w_k.add_assign(&lc.y.matmul_tn(&dk));
        lg.w_v.add_assign(&lc.y.matmul_tn(&dv));

        let mut dx_in = dx_mid.clone();
        dx_in.add_assign(&layer_norm_backward(&dy, &lc.y, &lc.ln1));

        if !dx_in.is_finite() {
            return Err(Error::Numeric(format!(
                "backward: non-finite gradient at layer {layer}"
            )));
        }
        dx = dx_in;
    }

    // Embedding lookup backward: scatter-add rows. Position encodings are
    // constants and take no gradient.
    for (pos, &id) in cache.ids.iter().enumerate() {
        let src = dx.row(pos);
        let dst = grads.token_embeddings.row_mut(id);
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }
    Ok(())
}
