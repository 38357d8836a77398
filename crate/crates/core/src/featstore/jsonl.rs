//! JSONL corpus/query ingestion and the raw feature-file format
//! (`rows u32 | cols u32 | rows×cols f32`, little-endian, row-major).

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::store::Cursor;
use super::{seconds_to_clips, ClipContext, CorpusManifest, QueryRecord, QueryType};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub fn write_feature_file(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + 4 * m.data().len());
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for x in m.data() {
        buf.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(&bytes, path);
    let rows = cur.u32("rows")? as usize;
    let cols = cur.u32("cols")? as usize;
    let m = cur.f32_matrix(rows, cols, "feature payload")?;
    if cur.pos != bytes.len() {
        return Err(Error::DimMismatch {
            path: path.to_path_buf(),
            detail: format!("payload longer than declared {rows}x{cols}"),
        });
    }
    Ok(m)
}

#[derive(Debug, Deserialize)]
struct CorpusLine {
    video_id: String,
    clip_duration: f64,
    video_feats_path: String,
    sub_feats_path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryLine {
    query_id: u64,
    tokens_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ts: Option<[f64; 2]>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    query_type: Option<String>,
}

/// Ground truth line: `{"query_id", "video_id", "ts": [s, e], "span": [st, ed]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub query_id: u64,
    pub video_id: String,
    pub ts: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[usize; 2]>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Iterates non-blank lines with 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn load_corpus(corpus_file: &Path) -> Result<CorpusManifest> {
    let base = corpus_file.parent().unwrap_or(Path::new("."));
    let mut videos = Vec::new();
    for (lineno, line) in lines(corpus_file)? {
        let rec: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| parse_err(corpus_file, lineno, e.to_string()))?;
        let vf = read_feature_file(resolve(base, &rec.video_feats_path))?;
        let sf = read_feature_file(resolve(base, &rec.sub_feats_path))?;
        let ctx = ClipContext::new(rec.video_id, rec.clip_duration, vf, sf)
            .map_err(|e| parse_err(corpus_file, lineno, e.to_string()))?;
        videos.push(ctx);
    }
    let (d_v, d_s) = videos
        .first()
        .map(|v| (v.video_feats.cols(), v.sub_feats.cols()))
        .unwrap_or((0, 0));
    CorpusManifest::new(videos, d_v, d_s).map_err(|e| parse_err(corpus_file, 0, e.to_string()))
}

/// Loads a query JSONL file, resolving ground truth against `manifest`.
pub fn load_queries(query_file: impl AsRef<Path>, manifest: &CorpusManifest) -> Result<Vec<QueryRecord>> {
    let index: HashMap<String, (f64, usize)> = manifest
        .videos
        .iter()
        .map(|v| (v.video_id.clone(), (v.clip_duration, v.n_clips())))
        .collect();
    load_queries_indexed(query_file, &index)
}

/// Like [`load_queries`], with videos given as id → (clip duration, clips).
pub fn load_queries_indexed(
    query_file: impl AsRef<Path>,
    index: &HashMap<String, (f64, usize)>,
) -> Result<Vec<QueryRecord>> {
    let query_file = query_file.as_ref();
    let base = query_file.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in lines(query_file)? {
        let rec: QueryLine = serde_json::from_str(&line)
            .map_err(|e| parse_err(query_file, lineno, e.to_string()))?;
        let tokens = read_feature_file(resolve(base, &rec.tokens_path))?;
        if tokens.rows() == 0 {
            return Err(parse_err(query_file, lineno, "query has no tokens"));
        }
        let query_type = match rec.query_type.as_deref() {
            None => QueryType::Unknown,
            Some(t) => QueryType::from_tag(t)
                .ok_or_else(|| parse_err(query_file, lineno, format!("unknown query type {t:?}")))?,
        };
        let (gt_video_id, gt_span_s, gt_clip_span) = match (rec.video_id, rec.ts) {
            (None, None) => (None, None, None),
            (Some(vid), ts) => {
                let &(clip_duration, n_clips) = index
                    .get(vid.as_str())
                    .ok_or_else(|| parse_err(query_file, lineno, format!("unknown video_id {vid:?}")))?;
                let span = match ts {
                    Some([s, e]) => {
                        if !(0.0 <= s && s < e) {
                            return Err(parse_err(
                                query_file,
                                lineno,
                                format!("invalid span [{s}, {e}]"),
                            ));
                        }
                        Some((s, e))
                    }
                    None => None,
                };
                let clips = span.map(|(s, e)| seconds_to_clips(s, e, clip_duration, n_clips));
                (Some(vid), span, clips)
            }
            (None, Some(_)) => {
                return Err(parse_err(query_file, lineno, "ts given without video_id"));
            }
        };
        out.push(QueryRecord {
            query_id: rec.query_id,
            tokens,
            gt_video_id,
            gt_span_s,
            gt_clip_span,
            query_type,
        });
    }
    Ok(out)
}

/// Reads a corpus JSONL and a query JSONL. Feature paths are resolved
/// relative to the JSONL file that names them.
pub fn ingest_jsonl(
    corpus_file: impl AsRef<Path>,
    query_file: impl AsRef<Path>,
) -> Result<(CorpusManifest, Vec<QueryRecord>)> {
    let manifest = load_corpus(corpus_file.as_ref())?;
    let queries = load_queries(query_file, &manifest)?;
    Ok((manifest, queries))
}

/// Writes `queries.jsonl` style output plus one token file per query under
/// `token_dir` (relative to the JSONL's directory).
pub fn write_queries_jsonl(
    queries: &[QueryRecord],
    path: impl AsRef<Path>,
    token_dir: &str,
) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let dir = base.join(token_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in queries {
        let rel = format!("{token_dir}/q{:06}.f32", q.query_id);
        write_feature_file(&q.tokens, base.join(&rel))?;
        let line = QueryLine {
            query_id: q.query_id,
            tokens_path: rel,
            video_id: q.gt_video_id.clone(),
            ts: q.gt_span_s.map(|(s, e)| [s, e]),
            query_type: q.query_type.tag().map(str::to_string),
        };
        let json = serde_json::to_string(&line).expect("serializable");
        writeln!(w, "{json}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_truth_jsonl(records: &[TruthRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let json = serde_json::to_string(r).expect("serializable");
        writeln!(w, "{json}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_truth_jsonl(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    lines(path)?
        .into_iter()
        .map(|(lineno, line)| {
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))
        })
        .collect()
}

/// Ground-truth records for queries carrying both a video and a span.
impl TruthRecord {
    pub fn from_queries(queries: &[QueryRecord]) -> Vec<TruthRecord> {
        queries
            .iter()
            .filter_map(|q| {
                let vid = q.gt_video_id.clone()?;
                let (s, e) = q.gt_span_s?;
                Some(TruthRecord {
                    query_id: q.query_id,
                    video_id: vid,
                    ts: [s, e],
                    span: q.gt_clip_span.map(|(a, b)| [a, b]),
                })
            })
            .collect()
    }

    pub fn by_query(records: &[TruthRecord]) -> HashMap<u64, &TruthRecord> {
        records.iter().map(|r| (r.query_id, r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    fn setup(dir: &Path) -> PathBuf {
        let mut rng = Rng::new(4);
        for (name, rows) in [("a", 4), ("b", 6)] {
            write_feature_file(&Matrix::gaussian(rows, 3, 1.0, &mut rng), dir.join(format!("{name}_v.f32"))).unwrap();
            write_feature_file(&Matrix::gaussian(rows, 2, 1.0, &mut rng), dir.join(format!("{name}_s.f32"))).unwrap();
        }
        write_feature_file(&Matrix::gaussian(5, 7, 1.0, &mut rng), dir.join("q1.f32")).unwrap();
        let corpus = dir.join("corpus.jsonl");
        fs::write(
            &corpus,
            r#"{"video_id": "a", "clip_duration": 1.5, "video_feats_path": "a_v.f32", "sub_feats_path": "a_s.f32"}
{"video_id": "b", "clip_duration": 1.5, "video_feats_path": "b_v.f32", "sub_feats_path": "b_s.f32"}
"#,
        )
        .unwrap();
        corpus
    }

    #[test]
    fn ingest_converts_spans() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = setup(dir.path());
        let queries = dir.path().join("q.jsonl");
        fs::write(
            &queries,
            r#"{"query_id": 1, "tokens_path": "q1.f32", "video_id": "b", "ts": [0.0, 3.0], "type": "vt"}
{"query_id": 2, "tokens_path": "q1.f32"}
"#,
        )
        .unwrap();
        let (m, qs) = ingest_jsonl(&corpus, &queries).unwrap();
        assert_eq!(m.videos.len(), 2);
        assert_eq!((m.d_v, m.d_s), (3, 2));
        assert_eq!(qs[0].gt_clip_span, Some((0, 1)));
        assert_eq!(qs[0].query_type, QueryType::VideoSub);
        assert_eq!(qs[0].tokens.shape(), (5, 7));
        assert_eq!(qs[1].gt_video_id, None);
        assert_eq!(qs[1].gt_span_s, None);
        assert_eq!(qs[1].query_type, QueryType::Unknown);
    }

    #[test]
    fn errors_name_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = setup(dir.path());
        let queries = dir.path().join("q.jsonl");
        fs::write(
            &queries,
            "{\"query_id\": 1, \"tokens_path\": \"q1.f32\"}\n{\"query_id\": 2, \"tokens_path\": \"q1.f32\", \"video_id\": \"zzz\"}\n",
        )
        .unwrap();
        let err = ingest_jsonl(&corpus, &queries).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        fs::write(&queries, "{\"query_id\": 1, \"tokens_path\": \"q1.f32\"}\n{not json\n").unwrap();
        let err = ingest_jsonl(&corpus, &queries).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        fs::write(&queries, "{\"tokens_path\": \"q1.f32\"}\n").unwrap();
        let err = ingest_jsonl(&corpus, &queries).unwrap_err();
        assert!(err.to_string().contains("query_id"), "{err}");
    }
}
