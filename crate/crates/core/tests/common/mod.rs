//! Shared oracles for integration tests.
#![allow(dead_code)]

use xmlr::encoder::{ModelConfig, ModelParams};
use xmlr::evalkit::Task;
use xmlr::featstore::{ClipContext, TruthRecord};
use xmlr::numkit::{Matrix, Rng};
use xmlr::scorer::{QueryPredictions, SecondsPrediction};
use xmlr::trainkit::{batch_loss, TrainConfig, TrainTriple};

/// Two videos and two queries, small enough for per-entry finite differences.
pub struct MicroInstance {
    pub videos: Vec<ClipContext>,
    pub queries: Vec<Matrix>,
    pub spans: Vec<(usize, usize)>,
    pub params: ModelParams,
}

impl MicroInstance {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let (d_v, d_s, d_q) = (5, 4, 3);
        let videos = vec![
            ClipContext::new("a", 1.5, Matrix::gaussian(5, d_v, 1.0, &mut rng), Matrix::gaussian(5, d_s, 1.0, &mut rng)).unwrap(),
            ClipContext::new("b", 1.5, Matrix::gaussian(6, d_v, 1.0, &mut rng), Matrix::gaussian(6, d_s, 1.0, &mut rng)).unwrap(),
        ];
        let queries = vec![Matrix::gaussian(3, d_q, 1.0, &mut rng), Matrix::gaussian(4, d_q, 1.0, &mut rng)];
        let mut cfg = ModelConfig::new(d_v, d_s, d_q);
        cfg.hidden = 6;
        cfg.max_len = 8;
        cfg.kernel_size = 3;
        cfg.init_std = 0.3;
        let params = ModelParams::init(cfg, &mut rng).unwrap();
        MicroInstance { videos, queries, spans: vec![(1, 3), (2, 5)], params }
    }

    /// Query `i` belongs to video `i`; negatives are the other video and query.
    pub fn batch(&self) -> Vec<TrainTriple<'_>> {
        (0..2)
            .map(|i| TrainTriple {
                pos_video: &self.videos[i],
                query: &self.queries[i],
                span: self.spans[i],
                neg_video: &self.videos[1 - i],
                neg_query: &self.queries[1 - i],
            })
            .collect()
    }
}

/// A margin large enough that every hinge is active.
pub fn gradcheck_config() -> TrainConfig {
    TrainConfig { margin_delta: 3.0, lambda_svmr: 1.0, ..TrainConfig::default() }
}

/// Central finite differences of the total batch loss for every parameter
/// entry, in `ModelParams::tensors` order.
pub fn finite_difference(batch: &[TrainTriple], params: &ModelParams, cfg: &TrainConfig, h: f64) -> Vec<Vec<f64>> {
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    let mut p = params.clone();
    for (ti, len) in shapes.into_iter().enumerate() {
        let mut g = vec![0.0; len];
        for (k, gk) in g.iter_mut().enumerate() {
            let orig = p.tensors_mut()[ti][k];
            p.tensors_mut()[ti][k] = orig + h;
            let up = batch_loss(batch, &p, cfg).unwrap().total;
            p.tensors_mut()[ti][k] = orig - h;
            let down = batch_loss(batch, &p, cfg).unwrap().total;
            p.tensors_mut()[ti][k] = orig;
            *gk = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Independent recall scorer: scans the first `k` predictions directly.
pub fn brute_recall(preds: &[QueryPredictions], truths: &[TruthRecord], k: usize, iou: f64, task: Task) -> f64 {
    if truths.is_empty() {
        return 0.0;
    }
    let overlap = |a: (f64, f64), b: (f64, f64)| {
        let lo = a.0.max(b.0);
        let hi = a.1.min(b.1);
        let inter = if hi > lo { hi - lo } else { 0.0 };
        let union = (a.1 - a.0) + (b.1 - b.0) - inter;
        if union <= 0.0 {
            if a == b { 1.0 } else { 0.0 }
        } else {
            inter / union
        }
    };
    let mut hits = 0usize;
    for gt in truths {
        let list: Vec<&SecondsPrediction> = preds
            .iter()
            .filter(|q| q.query_id == gt.query_id)
            .flat_map(|q| q.predictions_s.iter())
            .collect();
        let hit = match task {
            Task::Vr => {
                let mut videos: Vec<&str> = Vec::new();
                for p in &list {
                    if !videos.contains(&p.video_id.as_str()) {
                        videos.push(&p.video_id);
                    }
                }
                videos.iter().take(k).any(|v| *v == gt.video_id)
            }
            Task::Vcmr => list
                .iter()
                .take(k)
                .any(|p| p.video_id == gt.video_id && overlap((p.start_s, p.end_s), (gt.ts[0], gt.ts[1])) >= iou),
            Task::Svmr => list.iter().take(k).any(|p| overlap((p.start_s, p.end_s), (gt.ts[0], gt.ts[1])) >= iou),
        };
        hits += hit as usize;
    }
    hits as f64 / truths.len() as f64
}

/// Random evaluation instance over a small video pool on a 1.5 s clip grid,
/// with exact copies of the ground truth planted at random ranks.
pub fn random_eval_instance(rng: &mut Rng) -> (Vec<QueryPredictions>, Vec<TruthRecord>) {
    let n_videos = 1 + rng.below(5);
    let n_queries = 1 + rng.below(8);
    let span = |rng: &mut Rng| {
        let s = rng.below(20) as f64 * 1.5;
        (s, s + (1 + rng.below(8)) as f64 * 1.5)
    };
    let mut truths = Vec::new();
    let mut preds = Vec::new();
    for q in 0..n_queries as u64 {
        let (s, e) = span(rng);
        let video_id = format!("v{}", rng.below(n_videos));
        truths.push(TruthRecord { query_id: q, video_id: video_id.clone(), ts: [s, e], span: None });
        if rng.below(6) == 0 {
            continue;
        }
        let n = rng.below(30);
        let list = (0..n)
            .map(|_| {
                if rng.below(8) == 0 {
                    SecondsPrediction { video_id: video_id.clone(), start_s: s, end_s: e, score: 0.0 }
                } else {
                    let (a, b) = span(rng);
                    SecondsPrediction { video_id: format!("v{}", rng.below(n_videos)), start_s: a, end_s: b, score: 0.0 }
                }
            })
            .collect();
        preds.push(QueryPredictions { query_id: q, predictions: vec![], predictions_s: list });
    }
    (preds, truths)
}
