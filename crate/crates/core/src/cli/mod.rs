//! Command-line front end.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::encoder::{
    encode_context, encode_query, encoded_store_size, read_checkpoint, read_encoded_store, write_checkpoint,
    write_encoded_store, EncodedVideo, ModelConfig, ModelParams,
};
use crate::evalkit::{bench_retrieval, evaluate, BenchConfig, Engine, Task, DEFAULT_IOUS, DEFAULT_KS};
use crate::featstore::{
    load_queries, load_queries_indexed, read_store, read_truth_jsonl, synth_corpus, write_queries_jsonl, write_store,
    write_truth_jsonl, SynthConfig, TruthRecord,
};
use crate::momentgen::MomentGenerator;
use crate::numkit::Rng;
use crate::scorer::{
    read_predictions_jsonl, retrieve_corpus, retrieve_exhaustive, write_predictions_jsonl, ConvSeKernels,
    MomentPrediction, RetrievalConfig,
};
use crate::trainkit::{
    edge_template, pearson, train, train_convse_demo, write_train_log, ConvSeDemoConfig, SvmrLossKind, TrainConfig,
};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "XMLR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "xmlr", version, about = "Late-fusion video corpus moment retrieval")]
pub struct Cli {
    /// Worker threads; 0 uses every core. Overridden by XMLR_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with planted moments.
    Synth(SynthArgs),
    /// Encode every video of a feature store with a checkpoint.
    Encode(EncodeArgs),
    /// Retrieve moments for every query.
    Retrieve(RetrieveArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a prediction file against ground truth.
    Eval(EvalArgs),
    /// Time late-fusion retrieval against the early-fusion baseline.
    Bench(BenchArgs),
    /// Learn ConvSE filters on synthetic box signals and print them.
    ConvseDemo(DemoArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub videos: usize,
    #[arg(long, default_value_t = 20)]
    pub clips: usize,
    /// Feature width of video, subtitle and token features.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 400)]
    pub queries: usize,
    #[arg(long, default_value_t = 15)]
    pub query_len: usize,
    #[arg(long, default_value_t = 2)]
    pub min_moment: usize,
    #[arg(long, default_value_t = 14)]
    pub max_moment: usize,
    #[arg(long, default_value_t = 5.0)]
    pub strength: f64,
    #[arg(long, default_value_t = 1.5)]
    pub clip_duration: f64,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorArg {
    Convse,
    #[value(name = "sliding_window")]
    SlidingWindow,
    Tag,
}

impl From<GeneratorArg> for MomentGenerator {
    fn from(g: GeneratorArg) -> Self {
        match g {
            GeneratorArg::Convse => MomentGenerator::ConvSe,
            GeneratorArg::SlidingWindow => MomentGenerator::SlidingWindow,
            GeneratorArg::Tag => MomentGenerator::Tag,
        }
    }
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    /// Encoded store written by `encode`.
    #[arg(long, conflicts_with = "store", required_unless_present = "store")]
    pub encoded: Option<PathBuf>,
    /// Raw feature store, encoded on the fly.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub top_videos: usize,
    #[arg(long, default_value_t = 2)]
    pub lmin: usize,
    #[arg(long, default_value_t = 16)]
    pub lmax: usize,
    #[arg(long, default_value_t = 100)]
    pub topk: usize,
    #[arg(long, value_enum, default_value_t = GeneratorArg::Convse)]
    pub generator: GeneratorArg,
    /// Score every span of every video without a shortlist.
    #[arg(long)]
    pub exhaustive: bool,
    /// Search only each query's ground-truth video.
    #[arg(long)]
    pub svmr: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvmrLossArg {
    Ce,
    Bce,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV log of per-step losses.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Number of updates; overrides --epochs.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_KERNEL_SIZE)]
    pub kernel: usize,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = ModelConfig::DEFAULT_INIT_STD)]
    pub init_std: f64,
    #[arg(long, value_enum, default_value_t = SvmrLossArg::Ce)]
    pub svmr_loss: SvmrLossArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = "vcmr")]
    pub task: String,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_IOUS)]
    pub ious: Vec<f64>,
    /// Also write the JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![1000, 5000, 10000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 20)]
    pub clips: usize,
    /// Raw feature width.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    /// Queries actually timed for early fusion; scaled to --queries.
    #[arg(long, default_value_t = 1)]
    pub early_sample: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec!["late_fusion".to_string(), "early_fusion".to_string()])]
    pub engines: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 500)]
    pub signals: usize,
    #[arg(long, default_value_t = 30)]
    pub length: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses arguments, runs the command and maps failures to exit codes:
/// 2 for invalid arguments, 1 for everything else.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            let bad_args = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<crate::Error>(), Some(crate::Error::InvalidArgument(_))));
            ExitCode::from(if bad_args { 2 } else { 1 })
        }
    }
}

/// Joins the error chain, dropping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    crate::Error::InvalidArgument(msg.into()).into()
}

fn configure_threads(flag: Option<usize>, default: usize) -> anyhow::Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| bad(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        Err(_) => flag.unwrap_or(default),
    };
    #[cfg(feature = "parallel")]
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(n)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let default_threads = if matches!(cli.command, Command::Train(_)) { 1 } else { 0 };
    configure_threads(cli.threads, default_threads)?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ConvseDemo(a) => cmd_convse_demo(a),
    }
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        n_videos: a.videos,
        clips_per_video: a.clips,
        d_v: a.dim,
        d_s: a.dim,
        d_q: a.dim,
        n_queries: a.queries,
        query_len: a.query_len,
        min_moment_len: a.min_moment,
        max_moment_len: a.max_moment,
        signal_strength: a.strength,
        clip_duration: a.clip_duration,
    };
    cfg.validate()?;
    let (manifest, queries, _) = synth_corpus(&mut Rng::new(a.seed), &cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let corpus = a.out.join("corpus.xmlf");
    write_store(&manifest, &corpus)?;
    write_queries_jsonl(&queries, a.out.join("queries.jsonl"), "tokens")?;
    write_truth_jsonl(&TruthRecord::from_queries(&queries), a.out.join("truth.jsonl"))?;
    println!(
        "seed {} videos {} clips {} d_v {} d_s {} d_q {} queries {} -> {}",
        a.seed,
        a.videos,
        a.clips,
        a.dim,
        a.dim,
        a.dim,
        a.queries,
        a.out.display()
    );
    Ok(())
}

fn check_dims(params: &ModelParams, d_v: usize, d_s: usize) -> anyhow::Result<()> {
    if params.config.d_v != d_v || params.config.d_s != d_s {
        return Err(anyhow!(
            "checkpoint expects feature dims ({}, {}), store has ({d_v}, {d_s})",
            params.config.d_v,
            params.config.d_s
        ));
    }
    Ok(())
}

fn encode_store(store: &Path, params: &ModelParams) -> anyhow::Result<(Vec<EncodedVideo>, f64)> {
    let manifest = read_store(store)?;
    check_dims(params, manifest.d_v, manifest.d_s)?;
    let start = Instant::now();
    let encoded = manifest
        .videos
        .iter()
        .map(|v| encode_context(v, params))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok((encoded, start.elapsed().as_secs_f64()))
}

fn cmd_encode(a: EncodeArgs) -> anyhow::Result<()> {
    let params = read_checkpoint(&a.checkpoint)?;
    let (encoded, secs) = encode_store(&a.store, &params)?;
    write_encoded_store(&encoded, params.hidden(), &a.out)?;
    println!(
        "encoded {} videos in {secs:.3}s feat_time_s {secs:.6} feat_size_bytes {}",
        encoded.len(),
        encoded_store_size(&encoded, params.hidden())
    );
    Ok(())
}

fn cmd_retrieve(a: RetrieveArgs) -> anyhow::Result<()> {
    let cfg = RetrievalConfig {
        alpha: a.alpha,
        top_videos: a.top_videos,
        l_min: a.lmin,
        l_max: a.lmax,
        top_k_moments: a.topk,
        generator: a.generator.into(),
    };
    cfg.validate()?;
    let params = read_checkpoint(&a.checkpoint)?;
    let corpus = match (&a.encoded, &a.store) {
        (Some(path), _) => {
            let (videos, d) = read_encoded_store(path)?;
            if d != params.hidden() {
                return Err(anyhow!("encoded store has width {d}, checkpoint {}", params.hidden()));
            }
            videos
        }
        (None, Some(store)) => encode_store(store, &params)?.0,
        (None, None) => return Err(bad("one of --encoded or --store is required")),
    };
    if corpus.is_empty() {
        return Err(bad("corpus is empty"));
    }
    let index: HashMap<String, (f64, usize)> = corpus
        .iter()
        .map(|v| (v.video_id.clone(), (v.clip_duration, v.n_clips())))
        .collect();
    let queries = load_queries_indexed(&a.queries, &index)?;
    let by_id: HashMap<&str, usize> = corpus.iter().enumerate().map(|(i, v)| (v.video_id.as_str(), i)).collect();
    let kernels = ConvSeKernels::from(&params);

    let mut results: Vec<(u64, Vec<MomentPrediction>)> = Vec::with_capacity(queries.len());
    for q in &queries {
        let eq = encode_query(&q.tokens, &params)?;
        let preds = if a.svmr {
            let Some(vid) = q.gt_video_id.as_deref() else { continue };
            let v = &corpus[by_id[vid]];
            retrieve_corpus(std::slice::from_ref(v), &eq, &kernels, &cfg)?
        } else if a.exhaustive {
            retrieve_exhaustive(&corpus, &eq, &kernels, &cfg)?
        } else {
            retrieve_corpus(&corpus, &eq, &kernels, &cfg)?
        };
        results.push((q.query_id, preds));
    }
    let durations: HashMap<String, f64> = index.iter().map(|(k, v)| (k.clone(), v.0)).collect();
    write_predictions_jsonl(&a.out, &results, &durations)?;
    println!("{} queries -> {}", results.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let manifest = read_store(&a.store)?;
    let queries = load_queries(&a.queries, &manifest)?;
    let d_q = queries.first().map(|q| q.tokens.cols()).ok_or_else(|| bad("no queries"))?;
    let mut params = match &a.init {
        Some(path) => {
            let p = read_checkpoint(path)?;
            check_dims(&p, manifest.d_v, manifest.d_s)?;
            p
        }
        None => {
            let mut mc = ModelConfig::new(manifest.d_v, manifest.d_s, d_q);
            mc.hidden = a.hidden;
            mc.kernel_size = a.kernel;
            mc.max_len = a.max_len;
            mc.init_std = a.init_std;
            mc.validate()?;
            ModelParams::init(mc, &mut Rng::new(a.seed))?
        }
    };
    let cfg = TrainConfig {
        margin_delta: a.delta,
        lambda_svmr: a.lambda,
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        svmr_loss: match a.svmr_loss {
            SvmrLossArg::Ce => SvmrLossKind::ConvseCe,
            SvmrLossArg::Bce => SvmrLossKind::ClipBce,
        },
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let logs = train(&manifest.videos, &queries, &mut params, &cfg, a.steps, |l| {
        if l.step % 50 == 0 {
            eprintln!("step {} L_vr {:.5} L_svmr {:.5} total {:.5}", l.step, l.loss.vr, l.loss.svmr, l.loss.total);
        }
    })?;
    write_checkpoint(&params, &a.out)?;
    if let Some(log) = &a.log {
        write_train_log(log, &logs)?;
    }
    match logs.last() {
        Some(l) => println!("seed {} steps {} final total {:.6} -> {}", a.seed, logs.len(), l.loss.total, a.out.display()),
        None => println!("seed {} steps 0 -> {}", a.seed, a.out.display()),
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let task: Task = a.task.parse()?;
    let preds = read_predictions_jsonl(&a.predictions)?;
    let truths = read_truth_jsonl(&a.truth)?;
    let result = evaluate(&preds, &truths, &a.ks, &a.ious, task)?;
    let json = result.to_json();
    println!("{json}");
    if let Some(out) = &a.out {
        fs::write(out, format!("{json}\n")).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    let engines = a
        .engines
        .iter()
        .map(|e| e.parse::<Engine>())
        .collect::<crate::Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        sizes: a.sizes,
        n_queries: a.queries,
        clips: a.clips,
        d_raw: a.dim,
        hidden: a.hidden,
        runs: a.runs,
        early_sample_queries: a.early_sample,
        engines,
        seed: a.seed,
        ..BenchConfig::default()
    };
    let report = bench_retrieval(&cfg, |r| {
        eprintln!("{} size {} retrieval {:.3}s", r.engine, r.corpus_size, r.retrieval_time_s);
    })?;
    let csv = report.to_csv();
    print!("{csv}");
    for e in [Engine::LateFusion, Engine::EarlyFusion] {
        if let Some(r2) = report.r_squared(e) {
            eprintln!("{e} R^2 {r2:.4}");
        }
    }
    if let Some(&largest) = cfg.sizes.iter().max() {
        if let Some(s) = report.speedup(largest) {
            eprintln!("speedup at {largest} videos: {s:.1}x");
        }
    }
    if let Some(out) = &a.out {
        fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn fmt_kernel(k: &[f64]) -> String {
    k.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join(" ")
}

fn cmd_convse_demo(a: DemoArgs) -> anyhow::Result<()> {
    let cfg = ConvSeDemoConfig {
        kernel_size: a.kernel,
        epochs: a.epochs,
        lr: a.lr,
        ..ConvSeDemoConfig::default()
    };
    let r = train_convse_demo(&mut Rng::new(a.seed), a.signals, a.length, a.noise, &cfg)?;
    let corr = |k: &[f64], rising| pearson(k, &edge_template(a.kernel, rising)).map_or("n/a".to_string(), |c| format!("{c:.3}"));
    println!("seed {} signals {} length {} noise {} kernel {}", a.seed, a.signals, a.length, a.noise, a.kernel);
    println!("k_st  {}", fmt_kernel(&r.k_st));
    println!("k_ed  {}", fmt_kernel(&r.k_ed));
    println!("corr(k_st, rising edge) {}", corr(&r.k_st, true));
    println!("corr(k_ed, falling edge) {}", corr(&r.k_ed, false));
    println!("final loss {:.4} held-out mean top-1 IoU {:.4}", r.final_loss, r.mean_iou);
    Ok(())
}
