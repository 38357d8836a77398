//! Synthetic planted-moment corpora.
//!
//! Background features are i.i.d. standard normal. Each query draws a random
//! unit direction `u`; `signal_strength · u` is added to every query token and
//! to the video and subtitle rows inside the planted span only. When the
//! modalities have different widths each one uses the leading coordinates of
//! a shared direction.

use super::{clips_to_seconds, ClipContext, CorpusManifest, PlantedSpan, PlantedTruth, QueryRecord, QueryType};
use crate::error::{Error, Result};
use crate::numkit::{norm, Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub clips_per_video: usize,
    pub d_v: usize,
    pub d_s: usize,
    pub d_q: usize,
    pub n_queries: usize,
    pub query_len: usize,
    pub min_moment_len: usize,
    pub max_moment_len: usize,
    pub signal_strength: f64,
    pub clip_duration: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 200,
            clips_per_video: 20,
            d_v: 128,
            d_s: 128,
            d_q: 128,
            n_queries: 400,
            query_len: 15,
            min_moment_len: 2,
            max_moment_len: 14,
            signal_strength: 5.0,
            clip_duration: super::DEFAULT_CLIP_DURATION,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.clips_per_video == 0 || self.query_len == 0 {
            return bad("clips_per_video and query_len must be positive".into());
        }
        if self.d_v == 0 || self.d_s == 0 || self.d_q == 0 {
            return bad("feature dims must be positive".into());
        }
        if self.min_moment_len == 0 || self.min_moment_len > self.max_moment_len {
            return bad(format!(
                "moment length range [{}, {}] is empty",
                self.min_moment_len, self.max_moment_len
            ));
        }
        if self.max_moment_len > self.clips_per_video {
            return bad(format!(
                "max moment length {} exceeds clips per video {}",
                self.max_moment_len, self.clips_per_video
            ));
        }
        if self.n_queries > 0 && self.n_videos == 0 {
            return bad("queries need at least one video".into());
        }
        if !(self.signal_strength >= 0.0) {
            return bad(format!("signal strength {} must be >= 0", self.signal_strength));
        }
        if !(self.clip_duration > 0.0) {
            return bad("clip duration must be positive".into());
        }
        Ok(())
    }
}

fn quantize(m: &mut Matrix) {
    for x in m.data_mut() {
        *x = *x as f32 as f64;
    }
}

fn add_direction(row: &mut [f64], u: &[f64], scale: f64) {
    let n = norm(&u[..row.len()]).max(1e-12);
    for (x, d) in row.iter_mut().zip(u) {
        *x += scale * d / n;
    }
}

/// Generates a corpus with one planted moment per query.
///
/// All feature values are rounded to `f32` so the binary store round-trips
/// them exactly.
pub fn synth_corpus(
    rng: &mut Rng,
    cfg: &SynthConfig,
) -> Result<(CorpusManifest, Vec<QueryRecord>, PlantedTruth)> {
    cfg.validate()?;
    let l = cfg.clips_per_video;
    let mut videos: Vec<ClipContext> = (0..cfg.n_videos)
        .map(|i| ClipContext {
            video_id: format!("vid{i:05}"),
            clip_duration: cfg.clip_duration,
            video_feats: Matrix::gaussian(l, cfg.d_v, 1.0, rng),
            sub_feats: Matrix::gaussian(l, cfg.d_s, 1.0, rng),
        })
        .collect();

    let width = cfg.d_v.max(cfg.d_s).max(cfg.d_q);
    let mut queries = Vec::with_capacity(cfg.n_queries);
    let mut spans = Vec::with_capacity(cfg.n_queries);
    for qi in 0..cfg.n_queries {
        let video = rng.below(cfg.n_videos);
        let len = rng.range_inclusive(cfg.min_moment_len, cfg.max_moment_len);
        let t_st = rng.below(l - len + 1);
        let t_ed = t_st + len - 1;
        let u = rng.gaussian_vec(width);

        let mut tokens = Matrix::gaussian(cfg.query_len, cfg.d_q, 1.0, rng);
        for r in 0..tokens.rows() {
            add_direction(tokens.row_mut(r), &u, cfg.signal_strength);
        }
        quantize(&mut tokens);

        let v = &mut videos[video];
        for c in t_st..=t_ed {
            add_direction(v.video_feats.row_mut(c), &u, cfg.signal_strength);
            add_direction(v.sub_feats.row_mut(c), &u, cfg.signal_strength);
        }

        queries.push(QueryRecord {
            query_id: qi as u64,
            tokens,
            gt_video_id: Some(v.video_id.clone()),
            gt_span_s: Some(clips_to_seconds(t_st, t_ed, cfg.clip_duration)),
            gt_clip_span: Some((t_st, t_ed)),
            query_type: QueryType::VideoSub,
        });
        spans.push(PlantedSpan { video, t_st, t_ed });
    }
    for v in &mut videos {
        quantize(&mut v.video_feats);
        quantize(&mut v.sub_feats);
    }

    let manifest = CorpusManifest::new(videos, cfg.d_v, cfg.d_s)?;
    Ok((manifest, queries, PlantedTruth { spans }))
}
