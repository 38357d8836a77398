//! Reverse-mode passes matching `encoder::forward`.
//!
//! Each function takes the upstream gradient of a forward output, accumulates
//! parameter gradients into a params-shaped buffer and returns the gradient
//! of the forward inputs.

use crate::encoder::forward::{BlockCache, CrossCache, ProjectionCache, QueryCache, VideoCache};
use crate::encoder::{AttentionBlock, CrossEncoderParams, Linear, ModelParams};
use crate::numkit::{axpy, dot, softmax_backward, Matrix};

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Returns `(d x_q, d x_kv)`.
pub(crate) fn block_backward(
    p: &AttentionBlock,
    c: &BlockCache,
    dy: &Matrix,
    g: &mut AttentionBlock,
) -> (Matrix, Matrix) {
    let d = p.hidden();
    let n_q = dy.rows();

    let mut dr = Matrix::zeros(n_q, d);
    for r in 0..n_q {
        let stats = &c.ln[r];
        let dyr = dy.row(r);
        let mut dxhat = vec![0.0; d];
        for j in 0..d {
            g.ln_gamma[j] += dyr[j] * stats.normalized[j];
            g.ln_beta[j] += dyr[j];
            dxhat[j] = dyr[j] * p.ln_gamma[j];
        }
        let sum: f64 = dxhat.iter().sum();
        let sum_xhat = dot(&dxhat, &stats.normalized);
        let scale = stats.inv_std / d as f64;
        for (j, out) in dr.row_mut(r).iter_mut().enumerate() {
            *out = scale * (d as f64 * dxhat[j] - sum - stats.normalized[j] * sum_xhat);
        }
    }

    g.out.weight.add_assign(&c.ctx.t_mul(&dr));
    add_into(&mut g.out.bias, &dr.col_sums());
    let dctx = dr.mul_t(&p.out.weight);
    let mut dx_q = dr;

    let d_attn = dctx.mul_t(&c.v);
    let dv = c.attn.t_mul(&dctx);
    let s = 1.0 / (d as f64).sqrt();
    let mut dscores = Matrix::zeros(d_attn.rows(), d_attn.cols());
    for r in 0..d_attn.rows() {
        let row = softmax_backward(c.attn.row(r), d_attn.row(r));
        for (o, x) in dscores.row_mut(r).iter_mut().zip(row) {
            *o = s * x;
        }
    }
    let dq = dscores.mul(&c.k);
    let dk = dscores.t_mul(&c.q);

    g.wq.add_assign(&c.x_q.t_mul(&dq));
    g.wk.add_assign(&c.x_kv.t_mul(&dk));
    g.wv.add_assign(&c.x_kv.t_mul(&dv));
    dx_q.add_assign(&dq.mul_t(&p.wq));
    let mut dx_kv = dk.mul_t(&p.wk);
    dx_kv.add_assign(&dv.mul_t(&p.wv));
    (dx_q, dx_kv)
}

/// Self-attention: input feeds both query and key/value paths.
pub(crate) fn self_block_backward(p: &AttentionBlock, c: &BlockCache, dy: &Matrix, g: &mut AttentionBlock) -> Matrix {
    let (mut dx, dkv) = block_backward(p, c, dy, g);
    dx.add_assign(&dkv);
    dx
}

/// Returns `(d x_self, d x_cross)`.
pub(crate) fn cross_backward(
    p: &CrossEncoderParams,
    c: &CrossCache,
    dy: &Matrix,
    g: &mut CrossEncoderParams,
) -> (Matrix, Matrix) {
    let dmid = self_block_backward(&p.inner, &c.inner, dy, &mut g.inner);
    block_backward(&p.cross, &c.cross, &dmid, &mut g.cross)
}

/// Accumulates projection and positional-table gradients.
pub(crate) fn projection_backward(
    c: &ProjectionCache,
    dx: &Matrix,
    g: &mut Linear,
    g_pos: &mut Matrix,
) {
    let mut dpre = dx.clone();
    for r in 0..dpre.rows() {
        let pre = c.pre_activation.row(r);
        for (v, p) in dpre.row_mut(r).iter_mut().zip(pre) {
            if *p <= 0.0 {
                *v = 0.0;
            }
        }
        add_into(g_pos.row_mut(r), dx.row(r));
    }
    g.weight.add_assign(&c.input.t_mul(&dpre));
    add_into(&mut g.bias, &dpre.col_sums());
}

/// Backward of `q = H_qᵀ·softmax(H_q·w)`; accumulates into `dh_q` and `dw`.
pub(crate) fn pool_backward(h_q: &Matrix, w: &[f64], attn: &[f64], dq: &[f64], dh_q: &mut Matrix, dw: &mut [f64]) {
    let da: Vec<f64> = h_q.row_iter().map(|h| dot(h, dq)).collect();
    let dsc = softmax_backward(attn, &da);
    for r in 0..h_q.rows() {
        let row = dh_q.row_mut(r);
        axpy(row, attn[r], dq);
        axpy(row, dsc[r], w);
    }
    add_into(dw, &h_q.t_mul_vec(&dsc));
}

/// Gradients flowing into one encoded video.
pub(crate) struct VideoGrads {
    pub h_v0: Matrix,
    pub h_s0: Matrix,
    /// `None` when the cross-encoded outputs were not used.
    pub h_v1: Option<Matrix>,
    pub h_s1: Option<Matrix>,
}

pub(crate) fn video_backward(params: &ModelParams, cache: &VideoCache, mut dv: VideoGrads, g: &mut ModelParams) {
    if let Some(dh_v1) = &dv.h_v1 {
        let (dself, dcross) = cross_backward(&params.cross_v, &cache.cross_v, dh_v1, &mut g.cross_v);
        dv.h_v0.add_assign(&dself);
        dv.h_s0.add_assign(&dcross);
    }
    if let Some(dh_s1) = &dv.h_s1 {
        let (dself, dcross) = cross_backward(&params.cross_s, &cache.cross_s, dh_s1, &mut g.cross_s);
        dv.h_s0.add_assign(&dself);
        dv.h_v0.add_assign(&dcross);
    }
    let de_v = self_block_backward(&params.self_v, &cache.self_v, &dv.h_v0, &mut g.self_v);
    let de_s = self_block_backward(&params.self_s, &cache.self_s, &dv.h_s0, &mut g.self_s);
    projection_backward(&cache.proj_v, &de_v, &mut g.proj_v, &mut g.pos_enc);
    projection_backward(&cache.proj_s, &de_s, &mut g.proj_s, &mut g.pos_enc);
}

/// `dq_v`, `dq_s` are gradients of the two pooled vectors; `dh_q` of the
/// token states directly, if any.
pub(crate) fn query_backward(
    params: &ModelParams,
    cache: &QueryCache,
    h_q: &Matrix,
    attn_v: &[f64],
    attn_s: &[f64],
    dq_v: &[f64],
    dq_s: &[f64],
    g: &mut ModelParams,
) {
    let mut dh = Matrix::zeros(h_q.rows(), h_q.cols());
    pool_backward(h_q, &params.w_v, attn_v, dq_v, &mut dh, &mut g.w_v);
    pool_backward(h_q, &params.w_s, attn_s, dq_s, &mut dh, &mut g.w_s);
    let de = self_block_backward(&params.self_q, &cache.self_q, &dh, &mut g.self_q);
    projection_backward(&cache.proj, &de, &mut g.proj_q, &mut g.pos_enc);
}
