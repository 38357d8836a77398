//! Encoding cost, storage and query latency of late-fusion retrieval against
//! an early-fusion recurrent baseline on random corpora.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::encoder::{encode_context, encode_query, encoded_store_size, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::featstore::{store_size, ClipContext, CorpusManifest};
use crate::numkit::{Matrix, Rng};
use crate::scorer::{early_fusion_baseline, retrieve_corpus, ConvSeKernels, EarlyFusionModel, RetrievalConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    LateFusion,
    EarlyFusion,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::LateFusion => "late_fusion",
            Engine::EarlyFusion => "early_fusion",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "late_fusion" | "late" | "xml" => Ok(Engine::LateFusion),
            "early_fusion" | "early" => Ok(Engine::EarlyFusion),
            other => Err(Error::InvalidArgument(format!("unknown engine {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub n_queries: usize,
    pub clips: usize,
    /// Raw feature width of each modality and of query tokens.
    pub d_raw: usize,
    pub hidden: usize,
    pub query_len: usize,
    /// Timed repetitions; the median is reported.
    pub runs: usize,
    /// Early fusion is timed on this many queries and scaled to `n_queries`.
    pub early_sample_queries: usize,
    pub engines: Vec<Engine>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![1000, 5000, 10000],
            n_queries: 100,
            clips: 20,
            d_raw: 128,
            hidden: 128,
            query_len: 15,
            runs: 3,
            early_sample_queries: 1,
            engines: vec![Engine::LateFusion, Engine::EarlyFusion],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub engine: Engine,
    pub corpus_size: usize,
    pub n_queries: usize,
    /// Offline context encoding time; zero for early fusion.
    pub feat_time_s: f64,
    /// Bytes stored per corpus: encoded states, or raw features for early fusion.
    pub feat_size_bytes: usize,
    /// Wall time for `n_queries` queries, extrapolated when fewer were timed.
    pub retrieval_time_s: f64,
    pub timed_queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "engine,corpus_size,n_queries,feat_time_s,feat_size_bytes,retrieval_time_s,timed_queries";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{},{:.6},{}\n",
                r.engine, r.corpus_size, r.n_queries, r.feat_time_s, r.feat_size_bytes, r.retrieval_time_s, r.timed_queries
            ));
        }
        out
    }

    /// Parses the output of [`BenchReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(Error::InvalidArgument("missing benchmark CSV header".into()));
        }
        let bad = |line: &str| Error::InvalidArgument(format!("malformed benchmark row {line:?}"));
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 7 {
                    return Err(bad(line));
                }
                let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(line));
                let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad(line));
                Ok(BenchRow {
                    engine: f[0].parse()?,
                    corpus_size: int(1)?,
                    n_queries: int(2)?,
                    feat_time_s: num(3)?,
                    feat_size_bytes: int(4)?,
                    retrieval_time_s: num(5)?,
                    timed_queries: int(6)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchReport { rows })
    }

    pub fn engine_rows(&self, engine: Engine) -> Vec<&BenchRow> {
        self.rows.iter().filter(|r| r.engine == engine).collect()
    }

    /// R² of a least-squares line of retrieval time against corpus size.
    pub fn r_squared(&self, engine: Engine) -> Option<f64> {
        let rows = self.engine_rows(engine);
        let xs: Vec<f64> = rows.iter().map(|r| r.corpus_size as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.retrieval_time_s).collect();
        linear_fit_r2(&xs, &ys)
    }

    /// Early-fusion time divided by late-fusion time at `size`.
    pub fn speedup(&self, size: usize) -> Option<f64> {
        let find = |e| self.rows.iter().find(|r| r.engine == e && r.corpus_size == size);
        Some(find(Engine::EarlyFusion)?.retrieval_time_s / find(Engine::LateFusion)?.retrieval_time_s)
    }
}

/// Coefficient of determination of the least-squares line through the points;
/// `None` with fewer than two points or constant `xs`.
pub fn linear_fit_r2(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    if syy == 0.0 {
        return Some(1.0);
    }
    Some(sxy * sxy / (sxx * syy))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Runs the benchmark on a random corpus of `max(sizes)` videos; smaller
/// sizes are prefixes of it. Corpus generation and loading are not timed.
///
/// Contexts are encoded once, in order, and the cumulative encoding time is
/// read off at each size. `on_row` sees each row as soon as it is measured.
pub fn bench_retrieval(cfg: &BenchConfig, mut on_row: impl FnMut(&BenchRow)) -> Result<BenchReport> {
    if cfg.sizes.is_empty() || cfg.sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument("corpus sizes must be positive".into()));
    }
    if cfg.n_queries == 0 || cfg.runs == 0 || cfg.clips == 0 || cfg.early_sample_queries == 0 {
        return Err(Error::InvalidArgument("queries, runs, clips and early sample must be positive".into()));
    }
    let mut sizes = cfg.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let max_size = *sizes.last().unwrap();

    let mut rng = Rng::new(cfg.seed);
    let videos: Vec<ClipContext> = (0..max_size)
        .map(|i| ClipContext {
            video_id: format!("vid{i:06}"),
            clip_duration: crate::featstore::DEFAULT_CLIP_DURATION,
            video_feats: Matrix::gaussian(cfg.clips, cfg.d_raw, 1.0, &mut rng),
            sub_feats: Matrix::gaussian(cfg.clips, cfg.d_raw, 1.0, &mut rng),
        })
        .collect();
    let queries: Vec<Matrix> = (0..cfg.n_queries)
        .map(|_| Matrix::gaussian(cfg.query_len, cfg.d_raw, 1.0, &mut rng))
        .collect();
    let retrieval = RetrievalConfig::default();
    let mut rows = Vec::new();

    if cfg.engines.contains(&Engine::LateFusion) {
        let mut mc = ModelConfig::new(cfg.d_raw, cfg.d_raw, cfg.d_raw);
        mc.hidden = cfg.hidden;
        mc.max_len = cfg.clips.max(cfg.query_len);
        let params = ModelParams::init(mc, &mut rng)?;
        let kernels = ConvSeKernels::from(&params);

        let mut encoded = Vec::with_capacity(max_size);
        let mut feat_times = Vec::with_capacity(sizes.len());
        let mut elapsed = 0.0;
        for &size in &sizes {
            let (batch, t) = timed(|| videos[encoded.len()..size].iter().map(|v| encode_context(v, &params)).collect::<Result<Vec<_>>>())?;
            encoded.extend(batch);
            elapsed += t;
            feat_times.push(elapsed);
        }
        for (&size, &feat_time_s) in sizes.iter().zip(&feat_times) {
            let corpus = &encoded[..size];
            let mut times = Vec::with_capacity(cfg.runs);
            for _ in 0..cfg.runs {
                let (_, t) = timed(|| {
                    for q in &queries {
                        let eq = encode_query(q, &params)?;
                        std::hint::black_box(retrieve_corpus(corpus, &eq, &kernels, &retrieval)?);
                    }
                    Ok(())
                })?;
                times.push(t);
            }
            let row = BenchRow {
                engine: Engine::LateFusion,
                corpus_size: size,
                n_queries: cfg.n_queries,
                feat_time_s,
                feat_size_bytes: encoded_store_size(corpus, cfg.hidden),
                retrieval_time_s: median(times),
                timed_queries: cfg.n_queries,
            };
            on_row(&row);
            rows.push(row);
        }
    }

    if cfg.engines.contains(&Engine::EarlyFusion) {
        let model = EarlyFusionModel::init(cfg.d_raw, cfg.d_raw, cfg.d_raw, cfg.hidden, &mut rng);
        let sample = cfg.early_sample_queries.min(cfg.n_queries);
        for &size in &sizes {
            let corpus = &videos[..size];
            let mut times = Vec::with_capacity(cfg.runs);
            for _ in 0..cfg.runs {
                let (_, t) = timed(|| {
                    for q in &queries[..sample] {
                        std::hint::black_box(early_fusion_baseline(corpus, q, &model, &retrieval)?);
                    }
                    Ok(())
                })?;
                times.push(t);
            }
            let manifest = CorpusManifest {
                videos: Vec::new(),
                d_v: cfg.d_raw,
                d_s: cfg.d_raw,
                tef_enabled: false,
            };
            let raw_bytes = store_size(&manifest)
                + corpus
                    .iter()
                    .map(|v| 2 + v.video_id.len() + 8 + 4 * v.n_clips() * 2 * cfg.d_raw)
                    .sum::<usize>();
            let row = BenchRow {
                engine: Engine::EarlyFusion,
                corpus_size: size,
                n_queries: cfg.n_queries,
                feat_time_s: 0.0,
                feat_size_bytes: raw_bytes,
                retrieval_time_s: median(times) * cfg.n_queries as f64 / sample as f64,
                timed_queries: sample,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(BenchReport { rows })
}
