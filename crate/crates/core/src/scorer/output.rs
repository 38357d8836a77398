use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MomentPrediction;
use crate::error::{Error, Result};
use crate::featstore::clips_to_seconds;

/// A prediction with its span in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondsPrediction {
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPredictions {
    pub query_id: u64,
    pub predictions: Vec<MomentPrediction>,
    pub predictions_s: Vec<SecondsPrediction>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    query_id: u64,
    predictions: Vec<(String, usize, usize, f64)>,
    predictions_s: Vec<(String, f64, f64, f64)>,
}

/// Writes one JSON object per query, in the given order.
///
/// `clip_durations` maps video id to clip length in seconds for the
/// `predictions_s` field.
pub fn write_predictions_jsonl(
    path: impl AsRef<Path>,
    results: &[(u64, Vec<MomentPrediction>)],
    clip_durations: &HashMap<String, f64>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (query_id, preds) in results {
        let mut line = Line {
            query_id: *query_id,
            predictions: Vec::with_capacity(preds.len()),
            predictions_s: Vec::with_capacity(preds.len()),
        };
        for p in preds {
            let dur = *clip_durations.get(&p.video_id).ok_or_else(|| {
                Error::InvalidArgument(format!("no clip duration for video {}", p.video_id))
            })?;
            let (s, e) = clips_to_seconds(p.t_st, p.t_ed, dur);
            line.predictions.push((p.video_id.clone(), p.t_st, p.t_ed, p.score));
            line.predictions_s.push((p.video_id.clone(), s, e, p.score));
        }
        let text = serde_json::to_string(&line).expect("prediction line serializes");
        writeln!(w, "{text}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions_jsonl(path: impl AsRef<Path>) -> Result<Vec<QueryPredictions>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(QueryPredictions {
            query_id: parsed.query_id,
            predictions: parsed
                .predictions
                .into_iter()
                .map(|(video_id, t_st, t_ed, score)| MomentPrediction {
                    video_id,
                    t_st,
                    t_ed,
                    score,
                })
                .collect(),
            predictions_s: parsed
                .predictions_s
                .into_iter()
                .map(|(video_id, start_s, end_s, score)| SecondsPrediction {
                    video_id,
                    start_s,
                    end_s,
                    score,
                })
                .collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let preds = vec![
            MomentPrediction { video_id: "a".into(), t_st: 1, t_ed: 3, score: 0.123456789012345 },
            MomentPrediction { video_id: "b".into(), t_st: 0, t_ed: 1, score: 1e-30 },
        ];
        let durs: HashMap<String, f64> = [("a".to_string(), 1.5), ("b".to_string(), 2.0)].into();
        write_predictions_jsonl(&path, &[(7, preds.clone()), (9, vec![])], &durs).unwrap();
        let back = read_predictions_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].query_id, 7);
        assert_eq!(back[0].predictions, preds);
        assert_eq!((back[0].predictions_s[0].start_s, back[0].predictions_s[0].end_s), (1.5, 6.0));
        assert!(back[1].predictions.is_empty());
        let missing: HashMap<String, f64> = HashMap::new();
        assert!(write_predictions_jsonl(&path, &[(1, preds)], &missing).is_err());
    }
}
