//! Temporal IoU, R@K for the three retrieval tasks, the frequency baseline
//! and the retrieval latency benchmark.

mod bench;
mod frequency;

pub use bench::{bench_retrieval, linear_fit_r2, BenchConfig, BenchReport, BenchRow, Engine};
pub use frequency::FrequencyBaseline;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::featstore::TruthRecord;
use crate::scorer::{QueryPredictions, SecondsPrediction};

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 100];
pub const DEFAULT_IOUS: [f64; 2] = [0.5, 0.7];

/// Overlap of two `[start, end]` intervals on the real line.
///
/// Two equal degenerate intervals have IoU 1.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    if a.0 > a.1 || b.0 > b.1 {
        return Err(Error::InvalidArgument(format!("reversed interval in {a:?} / {b:?}")));
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = a.1.max(b.1) - a.0.min(b.0);
    if union == 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok(inter / union)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Vcmr,
    Svmr,
    Vr,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vcmr" => Ok(Task::Vcmr),
            "svmr" => Ok(Task::Svmr),
            "vr" => Ok(Task::Vr),
            other => Err(Error::InvalidArgument(format!(
                "unknown task {other:?} (expected vcmr, svmr or vr)"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Vcmr => "vcmr",
            Task::Svmr => "svmr",
            Task::Vr => "vr",
        })
    }
}

/// Recall per `(K, IoU)` pair. Keys look like `R@1,IoU=0.5`, or `R@1` for VR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub task: Task,
    pub metrics: BTreeMap<String, f64>,
    pub n_queries: usize,
    /// Prediction entries whose query has no ground truth.
    #[serde(skip_serializing_if = "is_zero")]
    pub n_skipped: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

pub fn metric_key(task: Task, k: usize, iou: f64) -> String {
    match task {
        Task::Vr => format!("R@{k}"),
        _ => format!("R@{k},IoU={iou}"),
    }
}

impl EvalResult {
    pub fn get(&self, k: usize, iou: f64) -> Option<f64> {
        self.metrics.get(&metric_key(self.task, k, iou)).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("eval result serializes")
    }
}

/// Rank (0-based) of the first correct prediction, if any.
fn first_hit(task: Task, preds: &[SecondsPrediction], gt: &TruthRecord, iou: f64) -> Result<Option<usize>> {
    match task {
        Task::Vr => {
            let mut seen = HashSet::new();
            let mut rank = 0;
            for p in preds {
                if seen.insert(p.video_id.as_str()) {
                    if p.video_id == gt.video_id {
                        return Ok(Some(rank));
                    }
                    rank += 1;
                }
            }
            Ok(None)
        }
        Task::Vcmr | Task::Svmr => {
            let gt_span = (gt.ts[0], gt.ts[1]);
            for (rank, p) in preds.iter().enumerate() {
                if task == Task::Vcmr && p.video_id != gt.video_id {
                    continue;
                }
                if temporal_iou((p.start_s, p.end_s), gt_span)? >= iou {
                    return Ok(Some(rank));
                }
            }
            Ok(None)
        }
    }
}

/// Average recall over the ground-truth queries for every `(K, IoU)` pair.
///
/// A ground-truth query without predictions counts as a miss. VR ranks
/// distinct videos in order of first appearance.
pub fn evaluate(
    predictions: &[QueryPredictions],
    truths: &[TruthRecord],
    ks: &[usize],
    ious: &[f64],
    task: Task,
) -> Result<EvalResult> {
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let by_query: HashMap<u64, &QueryPredictions> = predictions.iter().map(|p| (p.query_id, p)).collect();
    let gt_ids: HashSet<u64> = truths.iter().map(|t| t.query_id).collect();
    let n_skipped = predictions.iter().filter(|p| !gt_ids.contains(&p.query_id)).count();
    let ious: Vec<f64> = if task == Task::Vr { vec![0.0] } else { ious.to_vec() };

    let mut hits: BTreeMap<String, usize> = BTreeMap::new();
    for &iou in &ious {
        for &k in ks {
            hits.insert(metric_key(task, k, iou), 0);
        }
    }
    for gt in truths {
        let preds = by_query.get(&gt.query_id).map_or(&[][..], |p| &p.predictions_s[..]);
        for &iou in &ious {
            let hit = first_hit(task, preds, gt, iou)?;
            for &k in ks {
                if hit.is_some_and(|r| r < k) {
                    *hits.get_mut(&metric_key(task, k, iou)).unwrap() += 1;
                }
            }
        }
    }
    let n = truths.len();
    let metrics = hits
        .into_iter()
        .map(|(key, h)| (key, if n == 0 { 0.0 } else { h as f64 / n as f64 }))
        .collect();
    Ok(EvalResult {
        task,
        metrics,
        n_queries: n,
        n_skipped,
    })
}

/// Recall at a single `(K, IoU)` pair.
pub fn recall_at_k(
    predictions: &[QueryPredictions],
    truths: &[TruthRecord],
    k: usize,
    iou: f64,
    task: Task,
) -> Result<EvalResult> {
    evaluate(predictions, truths, &[k], &[iou], task)
}
