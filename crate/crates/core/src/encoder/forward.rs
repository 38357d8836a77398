//! Forward passes that keep the intermediates reverse-mode needs.

use super::params::{AttentionBlock, CrossEncoderParams, Linear, ModelParams};
use super::{EncodedQuery, EncodedVideo, LN_EPS};
use crate::error::{Error, Result};
use crate::featstore::ClipContext;
use crate::numkit::{dot, layer_norm_with_stats, softmax_unchecked, LayerNormStats, Matrix};

pub(crate) struct ProjectionCache {
    pub input: Matrix,
    pub pre_activation: Matrix,
}

pub(crate) fn project_cached(e_raw: &Matrix, proj: &Linear, pos_enc: &Matrix) -> Result<(Matrix, ProjectionCache)> {
    if e_raw.cols() != proj.weight.rows() {
        return Err(Error::Shape(format!(
            "raw features have {} columns, projection expects {}",
            e_raw.cols(),
            proj.weight.rows()
        )));
    }
    if e_raw.rows() > pos_enc.rows() {
        return Err(Error::SequenceTooLong {
            len: e_raw.rows(),
            max_len: pos_enc.rows(),
        });
    }
    let mut pre = e_raw.mul(&proj.weight);
    pre.add_row_vec(&proj.bias);
    let mut out = pre.clone();
    for r in 0..out.rows() {
        let pos = pos_enc.row(r);
        for (x, p) in out.row_mut(r).iter_mut().zip(pos) {
            *x = x.max(0.0) + p;
        }
    }
    Ok((
        out,
        ProjectionCache {
            input: e_raw.clone(),
            pre_activation: pre,
        },
    ))
}

pub(crate) struct BlockCache {
    pub x_q: Matrix,
    pub x_kv: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub attn: Matrix,
    pub ctx: Matrix,
    pub ln: Vec<LayerNormStats>,
}

/// Attention of `x_q` over `x_kv`, output linear, residual to `x_q`, layer norm.
pub(crate) fn block_forward(p: &AttentionBlock, x_q: &Matrix, x_kv: &Matrix) -> (Matrix, BlockCache) {
    let d = p.hidden();
    let q = x_q.mul(&p.wq);
    let k = x_kv.mul(&p.wk);
    let v = x_kv.mul(&p.wv);
    let mut scores = q.mul_t(&k);
    scores.scale(1.0 / (d as f64).sqrt());
    let mut attn = Matrix::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        attn.row_mut(r).copy_from_slice(&softmax_unchecked(scores.row(r)));
    }
    let ctx = attn.mul(&v);
    let mut resid = ctx.mul(&p.out.weight);
    resid.add_row_vec(&p.out.bias);
    resid.add_assign(x_q);
    let mut out = Matrix::zeros(resid.rows(), d);
    let mut ln = Vec::with_capacity(resid.rows());
    for r in 0..resid.rows() {
        let (y, stats) = layer_norm_with_stats(resid.row(r), &p.ln_gamma, &p.ln_beta, LN_EPS);
        out.row_mut(r).copy_from_slice(&y);
        ln.push(stats);
    }
    (
        out,
        BlockCache {
            x_q: x_q.clone(),
            x_kv: x_kv.clone(),
            q,
            k,
            v,
            attn,
            ctx,
            ln,
        },
    )
}

pub(crate) struct CrossCache {
    pub cross: BlockCache,
    pub inner: BlockCache,
}

pub(crate) fn cross_forward(p: &CrossEncoderParams, x_self: &Matrix, x_cross: &Matrix) -> (Matrix, CrossCache) {
    let (mid, cross) = block_forward(&p.cross, x_self, x_cross);
    let (out, inner) = block_forward(&p.inner, &mid, &mid);
    (out, CrossCache { cross, inner })
}

pub(crate) struct VideoCache {
    pub proj_v: ProjectionCache,
    pub proj_s: ProjectionCache,
    pub self_v: BlockCache,
    pub self_s: BlockCache,
    pub cross_v: CrossCache,
    pub cross_s: CrossCache,
}

pub(crate) fn encode_context_cached(ctx: &ClipContext, params: &ModelParams) -> Result<(EncodedVideo, VideoCache)> {
    let (e_v, proj_v) = project_cached(&ctx.video_feats, &params.proj_v, &params.pos_enc)?;
    let (e_s, proj_s) = project_cached(&ctx.sub_feats, &params.proj_s, &params.pos_enc)?;
    let (h_v0, self_v) = block_forward(&params.self_v, &e_v, &e_v);
    let (h_s0, self_s) = block_forward(&params.self_s, &e_s, &e_s);
    let (h_v1, cross_v) = cross_forward(&params.cross_v, &h_v0, &h_s0);
    let (h_s1, cross_s) = cross_forward(&params.cross_s, &h_s0, &h_v0);
    Ok((
        EncodedVideo {
            video_id: ctx.video_id.clone(),
            clip_duration: ctx.clip_duration,
            h_v0,
            h_s0,
            h_v1,
            h_s1,
        },
        VideoCache {
            proj_v,
            proj_s,
            self_v,
            self_s,
            cross_v,
            cross_s,
        },
    ))
}

pub(crate) struct QueryCache {
    pub proj: ProjectionCache,
    pub self_q: BlockCache,
}

pub(crate) fn modular_pool(h_q: &Matrix, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = h_q.row_iter().map(|r| dot(r, w)).collect();
    let attn = softmax_unchecked(&scores);
    let pooled = h_q.t_mul_vec(&attn);
    (pooled, attn)
}

pub(crate) fn encode_query_cached(tokens: &Matrix, params: &ModelParams) -> Result<(EncodedQuery, QueryCache)> {
    if tokens.rows() == 0 {
        return Err(Error::Empty("query tokens"));
    }
    let (e_q, proj) = project_cached(tokens, &params.proj_q, &params.pos_enc)?;
    let (h_q, self_q) = block_forward(&params.self_q, &e_q, &e_q);
    let (q_v, attn_v) = modular_pool(&h_q, &params.w_v);
    let (q_s, attn_s) = modular_pool(&h_q, &params.w_s);
    Ok((
        EncodedQuery {
            h_q,
            q_v,
            q_s,
            attn_v,
            attn_s,
        },
        QueryCache { proj, self_q },
    ))
}
