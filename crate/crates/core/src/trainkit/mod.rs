//! Training: the VR hinge and SVMR losses, exact reverse-mode gradients for
//! the whole encoder and scorer, negative sampling, Adam and a small trainer.

pub(crate) mod backward;
mod demo;

pub use demo::{
    box_signals, edge_template, evaluate_kernels, pearson, train_convse_demo, BoxSignal, ConvSeDemoConfig,
    ConvSeDemoResult,
};

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use backward::{query_backward, self_block_backward, projection_backward, video_backward, VideoGrads};

use crate::encoder::forward::{block_forward, encode_context_cached, encode_query_cached, project_cached};
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::featstore::{ClipContext, QueryRecord};
use crate::numkit::{conv1d_same_backward, dot, norm, sigmoid, Matrix, Rng};
use crate::scorer::{convse_probs, max_cosine, query_clip_scores, COSINE_EPS};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// How the span head is supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SvmrLossKind {
    /// Cross-entropy on ConvSE start/end probabilities.
    #[default]
    ConvseCe,
    /// Per-clip sigmoid BCE on the raw query-clip scores, for proposal heads.
    ClipBce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin_delta: f64,
    pub lambda_svmr: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub svmr_loss: SvmrLossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin_delta: 0.1,
            lambda_svmr: 0.01,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 1,
            batch_size: 16,
            seed: 0,
            svmr_loss: SvmrLossKind::ConvseCe,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_delta > 0.0) {
            return Err(Error::InvalidArgument(format!("margin {} must be positive", self.margin_delta)));
        }
        if !(self.lambda_svmr >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", self.lambda_svmr)));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument("learning rate and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// `max(0, Δ + s_neg_video − s_pos) + max(0, Δ + s_neg_query − s_pos)`.
pub fn vr_hinge_loss(s_pos: f64, s_neg_video: f64, s_neg_query: f64, delta: f64) -> f64 {
    (delta + s_neg_video - s_pos).max(0.0) + (delta + s_neg_query - s_pos).max(0.0)
}

/// Mean hinge loss over `(s_pos, s_neg_video, s_neg_query)` triples.
pub fn vr_hinge_loss_batch(triples: &[(f64, f64, f64)], delta: f64) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    triples.iter().map(|&(p, v, q)| vr_hinge_loss(p, v, q, delta)).sum::<f64>() / triples.len() as f64
}

/// `−[log p_st[t_st] + log p_ed[t_ed]]` with probabilities floored at 1e-12.
pub fn svmr_ce_loss(p_st: &[f64], p_ed: &[f64], t_st: usize, t_ed: usize) -> Result<f64> {
    if t_st >= p_st.len() || t_ed >= p_ed.len() {
        return Err(Error::InvalidArgument(format!(
            "span ({t_st}, {t_ed}) out of range for {} clips",
            p_st.len()
        )));
    }
    Ok(-(p_st[t_st].max(PROB_FLOOR).ln() + p_ed[t_ed].max(PROB_FLOOR).ln()))
}

/// Gradient of `−log max(p[t], floor)` with respect to the logits of `p`.
pub fn ce_logit_grad(p: &[f64], t: usize) -> Vec<f64> {
    if p[t] < PROB_FLOOR {
        return vec![0.0; p.len()];
    }
    let mut g = p.to_vec();
    g[t] -= 1.0;
    g
}

fn clip_labels(l: usize, span: (usize, usize)) -> impl Iterator<Item = f64> {
    (0..l).map(move |i| if (span.0..=span.1).contains(&i) { 1.0 } else { 0.0 })
}

/// Mean sigmoid binary cross-entropy of clip scores against in-span labels.
pub fn bce_clip_loss(scores: &[f64], gt_span: (usize, usize)) -> f64 {
    let l = scores.len();
    if l == 0 {
        return 0.0;
    }
    scores
        .iter()
        .zip(clip_labels(l, gt_span))
        // softplus(x) − y·x, stable for large |x|
        .map(|(&x, y)| x.max(0.0) + (-x.abs()).exp().ln_1p() - y * x)
        .sum::<f64>()
        / l as f64
}

pub fn bce_clip_grad(scores: &[f64], gt_span: (usize, usize)) -> Vec<f64> {
    let l = scores.len() as f64;
    scores
        .iter()
        .zip(clip_labels(scores.len(), gt_span))
        .map(|(&x, y)| (sigmoid(x) - y) / l)
        .collect()
}

fn uniform_excluding(rng: &mut Rng, n: usize, exclude: usize) -> usize {
    let r = rng.below(n - 1);
    if r >= exclude {
        r + 1
    } else {
        r
    }
}

/// For each anchor `i`, a negative video index `j ≠ i` and a negative query
/// index `z ≠ i`, each uniform over the remaining `n_corpus − 1` indices.
pub fn sample_negatives(rng: &mut Rng, batch_indices: &[usize], n_corpus: usize) -> Result<Vec<(usize, usize)>> {
    if n_corpus < 2 {
        return Err(Error::InvalidArgument(format!(
            "negative sampling needs at least 2 items, got {n_corpus}"
        )));
    }
    batch_indices
        .iter()
        .map(|&i| {
            if i >= n_corpus {
                return Err(Error::InvalidArgument(format!("index {i} outside corpus of {n_corpus}")));
            }
            let j = uniform_excluding(rng, n_corpus, i);
            let z = uniform_excluding(rng, n_corpus, i);
            Ok((j, z))
        })
        .collect()
}

/// One positive pair with its two negatives.
#[derive(Debug, Clone, Copy)]
pub struct TrainTriple<'a> {
    pub pos_video: &'a ClipContext,
    pub query: &'a Matrix,
    /// Ground-truth span of `query` in `pos_video`, inclusive clip indices.
    pub span: (usize, usize),
    pub neg_video: &'a ClipContext,
    pub neg_query: &'a Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub vr: f64,
    pub svmr: f64,
    pub total: f64,
}

/// Gradients shaped exactly like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub grads: ModelParams,
}

impl GradientTape {
    pub fn zeros(params: &ModelParams) -> Self {
        GradientTape {
            grads: params.zeros_like(),
        }
    }

    /// Named gradient tensors, same order as [`ModelParams::tensors`].
    pub fn tensors(&self) -> Vec<crate::encoder::TensorView<'_>> {
        self.grads.tensors()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.is_finite()
    }

    /// Largest absolute entry per tensor name.
    pub fn max_abs(&self) -> HashMap<String, f64> {
        self.tensors()
            .into_iter()
            .map(|t| (t.name, t.data.iter().fold(0.0f64, |a, x| a.max(x.abs()))))
            .collect()
    }
}

/// `(dh, dq)` of `cos(h, q)` with the same norm floor as the forward pass.
fn cosine_grads(h: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nh_raw, nq_raw) = (norm(h), norm(q));
    let (nh, nq) = (nh_raw.max(COSINE_EPS), nq_raw.max(COSINE_EPS));
    let c = dot(h, q) / (nh * nq);
    let dh = h
        .iter()
        .zip(q)
        .map(|(hi, qi)| qi / (nh * nq) - if nh_raw >= COSINE_EPS { c * hi / (nh * nh) } else { 0.0 })
        .collect();
    let dq = q
        .iter()
        .zip(h)
        .map(|(qi, hi)| hi / (nh * nq) - if nq_raw >= COSINE_EPS { c * qi / (nq * nq) } else { 0.0 })
        .collect();
    (dh, dq)
}

/// Accumulates `g · ∂vr/∂(H_m0, q_m)` for one modality.
fn vr_modality_backward(h0: &Matrix, q: &[f64], g: f64, dh0: &mut Matrix, dq: &mut [f64]) {
    if g == 0.0 {
        return;
    }
    let (idx, _) = max_cosine(h0, q);
    let (dh, dqq) = cosine_grads(h0.row(idx), q);
    crate::numkit::axpy(dh0.row_mut(idx), 0.5 * g, &dh);
    crate::numkit::axpy(dq, 0.5 * g, &dqq);
}

struct PartialVideo {
    h_v0: Matrix,
    h_s0: Matrix,
    cache: (
        crate::encoder::forward::ProjectionCache,
        crate::encoder::forward::ProjectionCache,
        crate::encoder::forward::BlockCache,
        crate::encoder::forward::BlockCache,
    ),
}

/// Self-encoded states only; negatives never reach the cross encoders.
fn encode_partial(ctx: &ClipContext, params: &ModelParams) -> Result<PartialVideo> {
    let (e_v, pv) = project_cached(&ctx.video_feats, &params.proj_v, &params.pos_enc)?;
    let (e_s, ps) = project_cached(&ctx.sub_feats, &params.proj_s, &params.pos_enc)?;
    let (h_v0, sv) = block_forward(&params.self_v, &e_v, &e_v);
    let (h_s0, ss) = block_forward(&params.self_s, &e_s, &e_s);
    Ok(PartialVideo {
        h_v0,
        h_s0,
        cache: (pv, ps, sv, ss),
    })
}

fn vr_of(h_v0: &Matrix, h_s0: &Matrix, q_v: &[f64], q_s: &[f64]) -> f64 {
    0.5 * (max_cosine(h_v0, q_v).1 + max_cosine(h_s0, q_s).1)
}

/// Loss terms of one triple, each already divided by the batch size `n`.
/// Accumulates gradients into `grads` when given.
fn triple_pass(
    t: &TrainTriple,
    params: &ModelParams,
    cfg: &TrainConfig,
    n: f64,
    grads: Option<&mut ModelParams>,
) -> Result<(f64, f64)> {
    let l = t.pos_video.n_clips();
    if t.span.0 > t.span.1 || t.span.1 >= l {
        return Err(Error::InvalidArgument(format!(
            "span {:?} invalid for video {} with {l} clips",
            t.span, t.pos_video.video_id
        )));
    }
    let (ev, vcache) = encode_context_cached(t.pos_video, params)?;
    let (eq, qcache) = encode_query_cached(t.query, params)?;
    let neg = encode_partial(t.neg_video, params)?;
    let (eqn, qncache) = encode_query_cached(t.neg_query, params)?;

    let s_pos = vr_of(&ev.h_v0, &ev.h_s0, &eq.q_v, &eq.q_s);
    let s_nv = vr_of(&neg.h_v0, &neg.h_s0, &eq.q_v, &eq.q_s);
    let s_nq = vr_of(&ev.h_v0, &ev.h_s0, &eqn.q_v, &eqn.q_s);
    let a1 = cfg.margin_delta + s_nv - s_pos;
    let a2 = cfg.margin_delta + s_nq - s_pos;
    let vr = (a1.max(0.0) + a2.max(0.0)) / n;

    let scores = query_clip_scores(&ev, &eq);
    let (svmr, d_scores) = match cfg.svmr_loss {
        SvmrLossKind::ConvseCe => {
            let sig = convse_probs(&scores, &params.k_st, &params.k_ed)?;
            let loss = svmr_ce_loss(&sig.p_st, &sig.p_ed, t.span.0, t.span.1)?;
            (loss, Some(sig))
        }
        SvmrLossKind::ClipBce => (bce_clip_loss(&scores, t.span), None),
    };
    let svmr = svmr / n;

    let Some(g) = grads else {
        return Ok((vr, svmr));
    };

    let d = params.hidden();
    let g_pos = -(((a1 > 0.0) as u8 + (a2 > 0.0) as u8) as f64) / n;
    let g_nv = (a1 > 0.0) as u8 as f64 / n;
    let g_nq = (a2 > 0.0) as u8 as f64 / n;

    let mut dv = VideoGrads {
        h_v0: Matrix::zeros(l, d),
        h_s0: Matrix::zeros(l, d),
        h_v1: None,
        h_s1: None,
    };
    let mut dq_v = vec![0.0; d];
    let mut dq_s = vec![0.0; d];
    vr_modality_backward(&ev.h_v0, &eq.q_v, g_pos, &mut dv.h_v0, &mut dq_v);
    vr_modality_backward(&ev.h_s0, &eq.q_s, g_pos, &mut dv.h_s0, &mut dq_s);

    let mut dneg_v = Matrix::zeros(neg.h_v0.rows(), d);
    let mut dneg_s = Matrix::zeros(neg.h_s0.rows(), d);
    vr_modality_backward(&neg.h_v0, &eq.q_v, g_nv, &mut dneg_v, &mut dq_v);
    vr_modality_backward(&neg.h_s0, &eq.q_s, g_nv, &mut dneg_s, &mut dq_s);

    let mut dqn_v = vec![0.0; d];
    let mut dqn_s = vec![0.0; d];
    vr_modality_backward(&ev.h_v0, &eqn.q_v, g_nq, &mut dv.h_v0, &mut dqn_v);
    vr_modality_backward(&ev.h_s0, &eqn.q_s, g_nq, &mut dv.h_s0, &mut dqn_s);

    if cfg.lambda_svmr != 0.0 {
        let scale = cfg.lambda_svmr / n;
        let mut ds = vec![0.0; l];
        match &d_scores {
            Some(sig) => {
                let gst: Vec<f64> = ce_logit_grad(&sig.p_st, t.span.0).iter().map(|x| x * scale).collect();
                let ged: Vec<f64> = ce_logit_grad(&sig.p_ed, t.span.1).iter().map(|x| x * scale).collect();
                conv1d_same_backward(&scores, &params.k_st, &gst, &mut ds, &mut g.k_st);
                conv1d_same_backward(&scores, &params.k_ed, &ged, &mut ds, &mut g.k_ed);
            }
            None => {
                for (o, x) in ds.iter_mut().zip(bce_clip_grad(&scores, t.span)) {
                    *o = x * scale;
                }
            }
        }
        let mut dh_v1 = Matrix::zeros(l, d);
        let mut dh_s1 = Matrix::zeros(l, d);
        for c in 0..l {
            crate::numkit::axpy(dh_v1.row_mut(c), 0.5 * ds[c], &eq.q_v);
            crate::numkit::axpy(dh_s1.row_mut(c), 0.5 * ds[c], &eq.q_s);
        }
        let half: Vec<f64> = ds.iter().map(|x| 0.5 * x).collect();
        crate::numkit::axpy(&mut dq_v, 1.0, &ev.h_v1.t_mul_vec(&half));
        crate::numkit::axpy(&mut dq_s, 1.0, &ev.h_s1.t_mul_vec(&half));
        dv.h_v1 = Some(dh_v1);
        dv.h_s1 = Some(dh_s1);
    }

    video_backward(params, &vcache, dv, g);
    query_backward(params, &qcache, &eq.h_q, &eq.attn_v, &eq.attn_s, &dq_v, &dq_s, g);
    query_backward(params, &qncache, &eqn.h_q, &eqn.attn_v, &eqn.attn_s, &dqn_v, &dqn_s, g);
    let (pv, ps, sv, ss) = &neg.cache;
    let de_v = self_block_backward(&params.self_v, sv, &dneg_v, &mut g.self_v);
    let de_s = self_block_backward(&params.self_s, ss, &dneg_s, &mut g.self_s);
    projection_backward(pv, &de_v, &mut g.proj_v, &mut g.pos_enc);
    projection_backward(ps, &de_s, &mut g.proj_s, &mut g.pos_enc);
    Ok((vr, svmr))
}

fn breakdown(vr: f64, svmr: f64, cfg: &TrainConfig) -> LossBreakdown {
    LossBreakdown {
        vr,
        svmr,
        total: vr + cfg.lambda_svmr * svmr,
    }
}

/// Batch loss `L_vr + λ·L_svmr` and its exact gradient for every parameter.
///
/// Examples are processed in index order, so the result is deterministic.
pub fn combined_loss(batch: &[TrainTriple], params: &ModelParams, cfg: &TrainConfig) -> Result<(LossBreakdown, GradientTape)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let n = batch.len() as f64;
    let mut tape = GradientTape::zeros(params);
    let (mut vr, mut svmr) = (0.0, 0.0);
    for t in batch {
        let (a, b) = triple_pass(t, params, cfg, n, Some(&mut tape.grads))?;
        vr += a;
        svmr += b;
    }
    Ok((breakdown(vr, svmr, cfg), tape))
}

/// Forward-only loss, identical in value to [`combined_loss`].
pub fn batch_loss(batch: &[TrainTriple], params: &ModelParams, cfg: &TrainConfig) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let n = batch.len() as f64;
    let (mut vr, mut svmr) = (0.0, 0.0);
    for t in batch {
        let (a, b) = triple_pass(t, params, cfg, n, None)?;
        vr += a;
        svmr += b;
    }
    Ok(breakdown(vr, svmr, cfg))
}

/// Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of a flat tensor; `t` is the 1-based step.
pub fn adam_update(x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &TrainConfig) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..x.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        x[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

pub fn adam_step(params: &mut ModelParams, tape: &GradientTape, state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let t = state.t;
    let grads = tape.tensors();
    let xs = params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((x, g), m), v) in xs.into_iter().zip(grads).zip(ms).zip(vs) {
        adam_update(x, g.data, m, v, t, cfg);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: LossBreakdown,
}

/// A query paired with its ground-truth video index and clip span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainExample {
    pub query: usize,
    pub video: usize,
    pub span: (usize, usize),
}

/// Resolves ground truth against `videos`; queries without a usable
/// ground truth are dropped.
pub fn build_examples(videos: &[ClipContext], queries: &[QueryRecord]) -> Vec<TrainExample> {
    let index: HashMap<&str, usize> = videos.iter().enumerate().map(|(i, v)| (v.video_id.as_str(), i)).collect();
    queries
        .iter()
        .enumerate()
        .filter_map(|(qi, q)| {
            let vi = *index.get(q.gt_video_id.as_deref()?)?;
            let span = q.gt_clip_span?;
            (span.0 <= span.1 && span.1 < videos[vi].n_clips()).then_some(TrainExample {
                query: qi,
                video: vi,
                span,
            })
        })
        .collect()
}

/// Minibatch training with corpus-wide uniform negatives.
///
/// Runs `steps` updates if given, otherwise `cfg.epochs` passes over the
/// examples. Each epoch visits the examples in a seeded shuffled order.
pub fn train(
    videos: &[ClipContext],
    queries: &[QueryRecord],
    params: &mut ModelParams,
    cfg: &TrainConfig,
    steps: Option<usize>,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    let examples = build_examples(videos, queries);
    if examples.len() < 2 || videos.len() < 2 {
        return Err(Error::InvalidArgument(
            "training needs at least two videos and two queries with ground truth".into(),
        ));
    }
    let per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total = steps.unwrap_or(cfg.epochs * per_epoch);
    let mut rng = Rng::new(cfg.seed);
    let mut state = AdamState::new(params);
    let mut logs = Vec::with_capacity(total);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for step in 0..total {
        if cursor >= order.len() {
            order = (0..examples.len()).collect();
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch: Vec<TrainTriple> = order[cursor..end]
            .iter()
            .map(|&ei| {
                let ex = examples[ei];
                let j = uniform_excluding(&mut rng, videos.len(), ex.video);
                let z = uniform_excluding(&mut rng, examples.len(), ei);
                TrainTriple {
                    pos_video: &videos[ex.video],
                    query: &queries[ex.query].tokens,
                    span: ex.span,
                    neg_video: &videos[j],
                    neg_query: &queries[examples[z].query].tokens,
                }
            })
            .collect();
        cursor = end;
        let (loss, tape) = combined_loss(&batch, params, cfg)?;
        adam_step(params, &tape, &mut state, cfg);
        let log = StepLog { step: step + 1, loss };
        on_step(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// CSV with header `step,L_vr,L_svmr,total`.
pub fn write_train_log(path: impl AsRef<Path>, logs: &[StepLog]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("step,L_vr,L_svmr,total\n");
    for l in logs {
        body.push_str(&format!("{},{},{},{}\n", l.step, l.loss.vr, l.loss.svmr, l.loss.total));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}
