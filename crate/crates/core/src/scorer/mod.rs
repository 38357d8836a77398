//! Late-fusion scoring: query-clip similarity, ConvSE start/end
//! probabilities, video retrieval scores, constrained span search and corpus
//! retrieval.

mod early_fusion;
mod output;

pub use early_fusion::{early_fusion_baseline, EarlyFusionModel};
pub use output::{read_predictions_jsonl, write_predictions_jsonl, QueryPredictions, SecondsPrediction};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::encoder::{EncodedQuery, EncodedVideo, ModelParams};
use crate::error::Result;
use crate::momentgen::{self, MomentGenerator};
use crate::numkit::{conv1d_replicate, dot, norm, sigmoid, softmax_unchecked};

/// Norm floor for cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Above this exponent the aggregation is evaluated as `exp(ln s + α·s_vr)`.
const LOG_SPACE_THRESHOLD: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub alpha: f64,
    pub top_videos: usize,
    pub l_min: usize,
    pub l_max: usize,
    pub top_k_moments: usize,
    pub generator: MomentGenerator,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            alpha: 20.0,
            top_videos: 100,
            l_min: 2,
            l_max: 16,
            top_k_moments: 100,
            generator: MomentGenerator::ConvSe,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.top_videos == 0 || self.top_k_moments == 0 || self.l_min == 0 {
            return Err(Error::InvalidArgument(
                "top_videos, top_k_moments and l_min must be positive".into(),
            ));
        }
        if self.l_min > self.l_max {
            return Err(Error::InvalidArgument(format!(
                "l_min {} exceeds l_max {}",
                self.l_min, self.l_max
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidArgument(format!("alpha {} must be >= 0", self.alpha)));
        }
        Ok(())
    }

    pub fn span_ok(&self, t_st: usize, t_ed: usize) -> bool {
        t_st <= t_ed && (self.l_min..=self.l_max).contains(&(t_ed - t_st + 1))
    }
}

/// Query-clip similarity with its ConvSE responses and probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySignal {
    pub scores: Vec<f64>,
    pub s_st: Vec<f64>,
    pub s_ed: Vec<f64>,
    pub p_st: Vec<f64>,
    pub p_ed: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSpan {
    pub t_st: usize,
    pub t_ed: usize,
    pub score: f64,
}

/// Score descending, then start ascending, then end ascending.
pub fn span_order(a: &ScoredSpan, b: &ScoredSpan) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.t_st.cmp(&b.t_st))
        .then(a.t_ed.cmp(&b.t_ed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentPrediction {
    pub video_id: String,
    pub t_st: usize,
    pub t_ed: usize,
    pub score: f64,
}

/// Score descending, then video id, start and end ascending.
pub fn prediction_order(a: &MomentPrediction, b: &MomentPrediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then(a.t_st.cmp(&b.t_st))
        .then(a.t_ed.cmp(&b.t_ed))
}

/// The two ConvSE filters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSeKernels {
    pub k_st: Vec<f64>,
    pub k_ed: Vec<f64>,
}

impl From<&ModelParams> for ConvSeKernels {
    fn from(p: &ModelParams) -> Self {
        ConvSeKernels {
            k_st: p.k_st.clone(),
            k_ed: p.k_ed.clone(),
        }
    }
}

/// `½(H_v1·q_v + H_s1·q_s)`.
pub fn query_clip_scores(ev: &EncodedVideo, eq: &EncodedQuery) -> Vec<f64> {
    ev.h_v1
        .row_iter()
        .zip(ev.h_s1.row_iter())
        .map(|(v, s)| 0.5 * (dot(v, &eq.q_v) + dot(s, &eq.q_s)))
        .collect()
}

pub fn convse_probs(scores: &[f64], k_st: &[f64], k_ed: &[f64]) -> Result<SimilaritySignal> {
    if scores.is_empty() {
        return Err(crate::error::Error::Empty("query-clip scores"));
    }
    if k_st.len() % 2 == 0 || k_ed.len() % 2 == 0 {
        return Err(crate::error::Error::InvalidArgument(format!(
            "ConvSE kernels must have odd length, got {} and {}",
            k_st.len(),
            k_ed.len()
        )));
    }
    let s_st = conv1d_replicate(scores, k_st);
    let s_ed = conv1d_replicate(scores, k_ed);
    let p_st = softmax_unchecked(&s_st);
    let p_ed = softmax_unchecked(&s_ed);
    Ok(SimilaritySignal {
        scores: scores.to_vec(),
        s_st,
        s_ed,
        p_st,
        p_ed,
    })
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a).max(COSINE_EPS) * norm(b).max(COSINE_EPS))
}

/// Index and value of the clip with the highest cosine similarity to `q`.
pub(crate) fn max_cosine(h: &crate::numkit::Matrix, q: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, row) in h.row_iter().enumerate() {
        let c = cosine(row, q);
        if c > best.1 {
            best = (i, c);
        }
    }
    best
}

/// Mean over the two modalities of the best clip-query cosine similarity.
pub fn vr_score(ev: &EncodedVideo, eq: &EncodedQuery) -> f64 {
    0.5 * (max_cosine(&ev.h_v0, &eq.q_v).1 + max_cosine(&ev.h_s0, &eq.q_s).1)
}

/// Result of a constrained span search.
#[derive(Debug, Clone, PartialEq)]
pub struct TopSpans {
    pub spans: Vec<ScoredSpan>,
    /// Set when the video is shorter than `l_min`; `spans` is then empty.
    pub too_short: bool,
}

struct HeapEntry(ScoredSpan);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        span_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // max-heap on "worse", so the root is the weakest kept span
    fn cmp(&self, other: &Self) -> Ordering {
        span_order(&self.0, &other.0)
    }
}

/// Best `k` spans `(st, ed)` by `p_st[st]·p_ed[ed]` subject to
/// `l_min ≤ ed − st + 1 ≤ l_max`.
///
/// Enumerates the `O(l·(l_max − l_min + 1))` admissible pairs and keeps a
/// bounded heap of size `k`.
pub fn top_spans(p_st: &[f64], p_ed: &[f64], l_min: usize, l_max: usize, k: usize) -> TopSpans {
    let l = p_st.len();
    if l < l_min || k == 0 {
        return TopSpans {
            spans: Vec::new(),
            too_short: l < l_min,
        };
    }
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
    for st in 0..l {
        let first = st + l_min - 1;
        let last = (st + l_max - 1).min(l - 1);
        if first > last {
            continue;
        }
        for ed in first..=last {
            let cand = ScoredSpan {
                t_st: st,
                t_ed: ed,
                score: p_st[st] * p_ed[ed],
            };
            if heap.len() < k {
                heap.push(HeapEntry(cand));
            } else if span_order(&cand, &heap.peek().unwrap().0) == Ordering::Less {
                heap.pop();
                heap.push(HeapEntry(cand));
            }
        }
    }
    let mut spans: Vec<ScoredSpan> = heap.into_iter().map(|e| e.0).collect();
    spans.sort_by(span_order);
    TopSpans {
        spans,
        too_short: false,
    }
}

/// Best single span via a sliding-window argmax over start probabilities.
///
/// For each end `ed` the admissible starts form the window
/// `[ed − l_max + 1, ed − l_min + 1]`; a monotone deque keeps its argmax
/// (earliest index on ties) in amortized O(1), so the search is linear in `l`.
pub fn top1_span_dp(p_st: &[f64], p_ed: &[f64], l_min: usize, l_max: usize) -> Option<ScoredSpan> {
    let l = p_st.len();
    if l < l_min {
        return None;
    }
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut best: Option<ScoredSpan> = None;
    let mut next_start = 0;
    for ed in (l_min - 1)..l {
        let hi = ed + 1 - l_min;
        while next_start <= hi {
            // strict comparison keeps the earliest start among equal values
            while let Some(&back) = deque.back() {
                if p_st[back] < p_st[next_start] {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(next_start);
            next_start += 1;
        }
        let lo = (ed + 1).saturating_sub(l_max);
        while let Some(&front) = deque.front() {
            if front < lo {
                deque.pop_front();
            } else {
                break;
            }
        }
        let st = *deque.front().expect("window is nonempty");
        let cand = ScoredSpan {
            t_st: st,
            t_ed: ed,
            score: p_st[st] * p_ed[ed],
        };
        if best.map_or(true, |b| span_order(&cand, &b) == Ordering::Less) {
            best = Some(cand);
        }
    }
    best
}

/// `s_svmr · exp(α · s_vr)`.
pub fn vcmr_aggregate(s_svmr: f64, s_vr: f64, alpha: f64) -> f64 {
    let x = alpha * s_vr;
    if x > LOG_SPACE_THRESHOLD {
        if s_svmr <= 0.0 {
            return 0.0;
        }
        (s_svmr.ln() + x).exp()
    } else {
        s_svmr * x.exp()
    }
}

/// Candidate spans for one video under the configured moment generator.
///
/// Sliding-window and TAG proposals are scored on `sigmoid(S)` so their
/// confidences are probabilities, as with a clip-level BCE head.
pub fn video_moments(
    ev: &EncodedVideo,
    eq: &EncodedQuery,
    kernels: &ConvSeKernels,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredSpan>> {
    let scores = query_clip_scores(ev, eq);
    moments_from_scores(&scores, kernels, cfg)
}

pub fn moments_from_scores(
    scores: &[f64],
    kernels: &ConvSeKernels,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredSpan>> {
    match cfg.generator {
        MomentGenerator::ConvSe => {
            let sig = convse_probs(scores, &kernels.k_st, &kernels.k_ed)?;
            Ok(top_spans(&sig.p_st, &sig.p_ed, cfg.l_min, cfg.l_max, cfg.top_k_moments).spans)
        }
        MomentGenerator::SlidingWindow | MomentGenerator::Tag => {
            let probs: Vec<f64> = scores.iter().map(|s| sigmoid(*s)).collect();
            let proposals = match cfg.generator {
                MomentGenerator::SlidingWindow => {
                    let sw = momentgen::SlidingWindowConfig::default();
                    momentgen::sliding_window_proposals(probs.len(), &sw.scales, sw.stride_frac)
                }
                _ => {
                    let tag = momentgen::TagConfig::default();
                    momentgen::tag_group(&probs, tag.n_thresholds, tag.min_len)?
                }
            };
            let admissible: Vec<momentgen::Proposal> = proposals
                .into_iter()
                .filter(|p| cfg.span_ok(p.t_st, p.t_ed))
                .collect();
            Ok(momentgen::rank_proposals_avg(&probs, &admissible, cfg.top_k_moments)
                .into_iter()
                .map(|p| ScoredSpan {
                    t_st: p.t_st,
                    t_ed: p.t_ed,
                    score: p.score,
                })
                .collect())
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Two-stage corpus retrieval: shortlist `top_videos` videos by VR score
/// (ties by video id), rank every admissible moment inside them by the
/// aggregated score and return the global top `top_k_moments`.
pub fn retrieve_corpus(
    corpus: &[EncodedVideo],
    eq: &EncodedQuery,
    kernels: &ConvSeKernels,
    cfg: &RetrievalConfig,
) -> Result<Vec<MomentPrediction>> {
    let vr: Vec<f64> = par_map(corpus, |v| vr_score(v, eq));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        vr[b]
            .total_cmp(&vr[a])
            .then_with(|| corpus[a].video_id.cmp(&corpus[b].video_id))
    });
    order.truncate(cfg.top_videos);

    let per_video: Vec<Result<Vec<MomentPrediction>>> = par_map(&order, |&vi| {
        let v = &corpus[vi];
        let spans = video_moments(v, eq, kernels, cfg)?;
        Ok(spans
            .into_iter()
            .map(|s| MomentPrediction {
                video_id: v.video_id.clone(),
                t_st: s.t_st,
                t_ed: s.t_ed,
                score: vcmr_aggregate(s.score, vr[vi], cfg.alpha),
            })
            .collect())
    });
    let mut merged = Vec::new();
    for r in per_video {
        merged.extend(r?);
    }
    merged.sort_by(prediction_order);
    merged.truncate(cfg.top_k_moments);
    Ok(merged)
}

/// Reference retrieval without a shortlist: scores every admissible span of
/// every video by direct enumeration over all `(st, ed)` pairs.
pub fn retrieve_exhaustive(
    corpus: &[EncodedVideo],
    eq: &EncodedQuery,
    kernels: &ConvSeKernels,
    cfg: &RetrievalConfig,
) -> Result<Vec<MomentPrediction>> {
    let mut all = Vec::new();
    for v in corpus {
        let s_vr = vr_score(v, eq);
        let sig = convse_probs(&query_clip_scores(v, eq), &kernels.k_st, &kernels.k_ed)?;
        let l = sig.p_st.len();
        for st in 0..l {
            for ed in st..l {
                if cfg.span_ok(st, ed) {
                    all.push(MomentPrediction {
                        video_id: v.video_id.clone(),
                        t_st: st,
                        t_ed: ed,
                        score: vcmr_aggregate(sig.p_st[st] * sig.p_ed[ed], s_vr, cfg.alpha),
                    });
                }
            }
        }
    }
    all.sort_by(prediction_order);
    all.truncate(cfg.top_k_moments);
    Ok(all)
}
