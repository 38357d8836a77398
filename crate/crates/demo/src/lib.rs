//! WebAssembly bindings for the browser demo.
//!
//! Every exported function returns a JSON string. The `*_json` functions
//! hold the logic and are callable from native tests.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;
use xmlr::momentgen::MomentGenerator;
use xmlr::numkit::Rng;
use xmlr::scorer::{convse_probs, moments_from_scores, top_spans, ConvSeKernels, RetrievalConfig};
use xmlr::trainkit::{box_signals, edge_template, pearson, train_convse_demo, ConvSeDemoConfig};
use xmlr::{Error, Result};

pub const L_MIN: usize = 2;
pub const L_MAX: usize = 16;

fn span_cfg(generator: MomentGenerator, k: usize) -> RetrievalConfig {
    RetrievalConfig { l_min: L_MIN, l_max: L_MAX, top_k_moments: k, generator, ..RetrievalConfig::default() }
}

fn clip_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = (a.1.min(b.1) + 1).saturating_sub(a.0.max(b.0));
    let union = a.1.max(b.1) + 1 - a.0.min(b.0);
    inter as f64 / union as f64
}

/// Noisy low-high-low curve with its planted span.
pub fn box_signal_json(seed: u32, length: usize, noise: f64) -> Result<Value> {
    if length < L_MIN {
        return Err(Error::InvalidArgument(format!("length must be at least {L_MIN}")));
    }
    let s = box_signals(&mut Rng::new(seed as u64), 1, length, noise, L_MIN, L_MAX.min(length)).remove(0);
    Ok(json!({ "scores": s.scores, "span": [s.span.0, s.span.1] }))
}

/// Edge-detector starting kernels of odd size `k`.
pub fn templates_json(k: usize) -> Result<Value> {
    if k % 2 == 0 {
        return Err(Error::InvalidArgument("kernel size must be odd".into()));
    }
    Ok(json!({ "k_st": edge_template(k, true), "k_ed": edge_template(k, false) }))
}

/// Start/end logits, probabilities and the best `top_k` spans.
pub fn convse_json(scores: &[f64], k_st: &[f64], k_ed: &[f64], top_k: usize) -> Result<Value> {
    let sig = convse_probs(scores, k_st, k_ed)?;
    let spans = top_spans(&sig.p_st, &sig.p_ed, L_MIN, L_MAX, top_k.max(1)).spans;
    let spans: Vec<Value> = spans.iter().map(|s| json!({ "st": s.t_st, "ed": s.t_ed, "score": s.score })).collect();
    Ok(json!({ "s_st": sig.s_st, "s_ed": sig.s_ed, "p_st": sig.p_st, "p_ed": sig.p_ed, "spans": spans }))
}

/// Top-1 span of each generator and its IoU with `(gt_st, gt_ed)`.
pub fn compare_generators_json(scores: &[f64], k_st: &[f64], k_ed: &[f64], gt_st: usize, gt_ed: usize) -> Result<Value> {
    let kernels = ConvSeKernels { k_st: k_st.to_vec(), k_ed: k_ed.to_vec() };
    let mut out = serde_json::Map::new();
    for g in [MomentGenerator::ConvSe, MomentGenerator::SlidingWindow, MomentGenerator::Tag] {
        let best = moments_from_scores(scores, &kernels, &span_cfg(g, 1))?;
        let entry = match best.first() {
            Some(b) => json!({ "st": b.t_st, "ed": b.t_ed, "iou": clip_iou((b.t_st, b.t_ed), (gt_st, gt_ed)) }),
            None => Value::Null,
        };
        out.insert(g.to_string(), entry);
    }
    Ok(Value::Object(out))
}

/// Learns both kernels from `n_signals` random curves of length 30.
pub fn train_kernels_json(seed: u32, kernel_size: usize, epochs: usize, noise: f64, n_signals: usize) -> Result<Value> {
    let cfg = ConvSeDemoConfig { kernel_size, epochs, ..ConvSeDemoConfig::default() };
    let r = train_convse_demo(&mut Rng::new(seed as u64), n_signals, 30, noise, &cfg)?;
    Ok(json!({
        "k_st": r.k_st,
        "k_ed": r.k_ed,
        "losses": r.losses,
        "mean_iou": r.mean_iou,
        "corr_st": pearson(&r.k_st, &edge_template(kernel_size, true)),
        "corr_ed": pearson(&r.k_ed, &edge_template(kernel_size, false)),
    }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn box_signal(seed: u32, length: usize, noise: f64) -> std::result::Result<String, JsError> {
    to_js(box_signal_json(seed, length, noise))
}

#[wasm_bindgen]
pub fn templates(k: usize) -> std::result::Result<String, JsError> {
    to_js(templates_json(k))
}

#[wasm_bindgen]
pub fn convse(scores: &[f64], k_st: &[f64], k_ed: &[f64], top_k: usize) -> std::result::Result<String, JsError> {
    to_js(convse_json(scores, k_st, k_ed, top_k))
}

#[wasm_bindgen]
pub fn compare_generators(
    scores: &[f64],
    k_st: &[f64],
    k_ed: &[f64],
    gt_st: usize,
    gt_ed: usize,
) -> std::result::Result<String, JsError> {
    to_js(compare_generators_json(scores, k_st, k_ed, gt_st, gt_ed))
}

#[wasm_bindgen]
pub fn train_kernels(
    seed: u32,
    kernel_size: usize,
    epochs: usize,
    noise: f64,
    n_signals: usize,
) -> std::result::Result<String, JsError> {
    to_js(train_kernels_json(seed, kernel_size, epochs, noise, n_signals))
}
