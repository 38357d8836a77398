//! Corpus features: the binary feature store, JSONL ingestion, the synthetic
//! planted-moment generator and TEF augmentation.

mod jsonl;
pub(crate) mod store;
mod synth;

pub use jsonl::{
    ingest_jsonl, load_queries, load_queries_indexed, read_feature_file, read_truth_jsonl, write_feature_file,
    write_queries_jsonl, write_truth_jsonl, TruthRecord,
};
pub use store::{read_store, store_size, write_store, STORE_MAGIC, STORE_VERSION};
pub use synth::{synth_corpus, SynthConfig};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const DEFAULT_CLIP_DURATION: f64 = 1.5;

/// One video's clip-aligned features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipContext {
    pub video_id: String,
    pub clip_duration: f64,
    pub video_feats: Matrix,
    pub sub_feats: Matrix,
}

impl ClipContext {
    pub fn new(
        video_id: impl Into<String>,
        clip_duration: f64,
        video_feats: Matrix,
        sub_feats: Matrix,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if video_feats.rows() == 0 {
            return Err(Error::InvalidArgument(format!("video {video_id} has no clips")));
        }
        if video_feats.rows() != sub_feats.rows() {
            return Err(Error::Shape(format!(
                "video {video_id}: {} video rows vs {} subtitle rows",
                video_feats.rows(),
                sub_feats.rows()
            )));
        }
        if !(clip_duration > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "video {video_id}: clip duration {clip_duration} must be positive"
            )));
        }
        Ok(ClipContext {
            video_id,
            clip_duration,
            video_feats,
            sub_feats,
        })
    }

    pub fn n_clips(&self) -> usize {
        self.video_feats.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryType {
    VideoOnly,
    SubOnly,
    VideoSub,
    Unknown,
}

impl QueryType {
    pub fn tag(self) -> Option<&'static str> {
        match self {
            QueryType::VideoOnly => Some("v"),
            QueryType::SubOnly => Some("t"),
            QueryType::VideoSub => Some("vt"),
            QueryType::Unknown => None,
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "v" => Some(QueryType::VideoOnly),
            "t" => Some(QueryType::SubOnly),
            "vt" => Some(QueryType::VideoSub),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: u64,
    /// Token embeddings, one row per token.
    pub tokens: Matrix,
    pub gt_video_id: Option<String>,
    /// Ground-truth span in seconds.
    pub gt_span_s: Option<(f64, f64)>,
    /// Ground-truth span as inclusive clip indices, resolved against the corpus.
    pub gt_clip_span: Option<(usize, usize)>,
    pub query_type: QueryType,
}

/// Every video in a corpus shares the feature dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub videos: Vec<ClipContext>,
    pub d_v: usize,
    pub d_s: usize,
    pub tef_enabled: bool,
}

impl CorpusManifest {
    pub fn new(videos: Vec<ClipContext>, d_v: usize, d_s: usize) -> Result<Self> {
        let m = CorpusManifest {
            videos,
            d_v,
            d_s,
            tef_enabled: false,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for v in &self.videos {
            if !seen.insert(v.video_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate video id {}",
                    v.video_id
                )));
            }
            if v.video_feats.cols() != self.d_v || v.sub_feats.cols() != self.d_s {
                return Err(Error::Shape(format!(
                    "video {} has dims ({}, {}), manifest declares ({}, {})",
                    v.video_id,
                    v.video_feats.cols(),
                    v.sub_feats.cols(),
                    self.d_v,
                    self.d_s
                )));
            }
        }
        Ok(())
    }

    pub fn index_by_id(&self) -> HashMap<&str, usize> {
        self.videos
            .iter()
            .enumerate()
            .map(|(i, v)| (v.video_id.as_str(), i))
            .collect()
    }
}

/// Planted ground truth, one entry per generated query.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    pub spans: Vec<PlantedSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedSpan {
    pub video: usize,
    pub t_st: usize,
    pub t_ed: usize,
}

/// Converts a span in seconds to inclusive clip indices.
///
/// Start is `floor(start / dur)`, end is `floor((end - ε) / dur)`, both clamped
/// to `[0, l-1]`, so an end landing exactly on a clip boundary stays in the
/// preceding clip.
pub fn seconds_to_clips(start_s: f64, end_s: f64, clip_duration: f64, n_clips: usize) -> (usize, usize) {
    const EPS: f64 = 1e-9;
    let last = n_clips.saturating_sub(1) as f64;
    let st = (start_s / clip_duration).floor().clamp(0.0, last) as usize;
    let ed = ((end_s - EPS) / clip_duration).floor().clamp(0.0, last) as usize;
    (st, ed.max(st))
}

/// Inclusive clip span to `[start, end)` seconds.
pub fn clips_to_seconds(t_st: usize, t_ed: usize, clip_duration: f64) -> (f64, f64) {
    (t_st as f64 * clip_duration, (t_ed + 1) as f64 * clip_duration)
}

/// Appends the temporal endpoint feature `[i/l, (i+1)/l]` to every clip row
/// of both modalities.
pub fn append_tef(manifest: &CorpusManifest) -> Result<CorpusManifest> {
    if manifest.tef_enabled {
        return Err(Error::TefAlreadyEnabled);
    }
    let augment = |m: &Matrix| -> Matrix {
        let l = m.rows();
        let cols = m.cols() + 2;
        let mut data = Vec::with_capacity(l * cols);
        for (i, row) in m.row_iter().enumerate() {
            data.extend_from_slice(row);
            data.push(i as f64 / l as f64);
            data.push((i + 1) as f64 / l as f64);
        }
        Matrix::from_vec(l, cols, data).expect("tef shape")
    };
    let videos = manifest
        .videos
        .iter()
        .map(|v| ClipContext {
            video_id: v.video_id.clone(),
            clip_duration: v.clip_duration,
            video_feats: augment(&v.video_feats),
            sub_feats: augment(&v.sub_feats),
        })
        .collect();
    Ok(CorpusManifest {
        videos,
        d_v: manifest.d_v + 2,
        d_s: manifest.d_s + 2,
        tef_enabled: true,
    })
}
