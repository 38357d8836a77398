//! Learning the two ConvSE filters alone on synthetic box signals.

use super::{adam_update, ce_logit_grad, svmr_ce_loss, TrainConfig};
use crate::error::{Error, Result};
use crate::numkit::{conv1d_same_backward, Rng};
use crate::scorer::{convse_probs, top_spans};

/// Low-high-low similarity curve with its planted span.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSignal {
    pub scores: Vec<f64>,
    pub span: (usize, usize),
}

/// `n` signals of length `l`: 1 inside a random span of length in
/// `[min_len, max_len]`, 0 outside, plus Gaussian noise of std `noise`.
pub fn box_signals(rng: &mut Rng, n: usize, l: usize, noise: f64, min_len: usize, max_len: usize) -> Vec<BoxSignal> {
    let max_len = max_len.min(l);
    (0..n)
        .map(|_| {
            let len = rng.range_inclusive(min_len, max_len);
            let st = rng.below(l - len + 1);
            let span = (st, st + len - 1);
            let scores = (0..l)
                .map(|i| {
                    let base = if (span.0..=span.1).contains(&i) { 1.0 } else { 0.0 };
                    base + noise * rng.gaussian()
                })
                .collect();
            BoxSignal { scores, span }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSeDemoConfig {
    pub kernel_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub init_std: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for ConvSeDemoConfig {
    fn default() -> Self {
        ConvSeDemoConfig {
            kernel_size: 5,
            epochs: 60,
            batch_size: 50,
            lr: 0.05,
            init_std: 0.1,
            min_len: 2,
            max_len: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSeDemoResult {
    pub k_st: Vec<f64>,
    pub k_ed: Vec<f64>,
    /// Mean CE loss of the last epoch.
    pub final_loss: f64,
    /// Per-epoch mean CE loss.
    pub losses: Vec<f64>,
    /// Mean top-1 IoU against planted spans on a fresh held-out set.
    pub mean_iou: f64,
}

/// Trains only `k_st` and `k_ed` with Adam through ConvSE and the SVMR
/// cross-entropy.
pub fn train_convse_demo(
    rng: &mut Rng,
    n_signals: usize,
    l: usize,
    noise: f64,
    cfg: &ConvSeDemoConfig,
) -> Result<ConvSeDemoResult> {
    if cfg.kernel_size % 2 == 0 || cfg.kernel_size == 0 {
        return Err(Error::InvalidArgument(format!("kernel size {} must be odd", cfg.kernel_size)));
    }
    if n_signals == 0 || l < cfg.min_len || cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "need signals, 1 <= min_len <= max_len and min_len <= l".into(),
        ));
    }
    let signals = box_signals(rng, n_signals, l, noise, cfg.min_len, cfg.max_len);
    let mut k_st: Vec<f64> = rng.gaussian_vec(cfg.kernel_size).iter().map(|x| x * cfg.init_std).collect();
    let mut k_ed: Vec<f64> = rng.gaussian_vec(cfg.kernel_size).iter().map(|x| x * cfg.init_std).collect();
    let adam = TrainConfig {
        lr: cfg.lr,
        ..TrainConfig::default()
    };
    let k = cfg.kernel_size;
    let (mut m_st, mut v_st, mut m_ed, mut v_ed) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let mut t = 0;
    let mut order: Vec<usize> = (0..signals.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut g_st = vec![0.0; k];
            let mut g_ed = vec![0.0; k];
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = &signals[i];
                let sig = convse_probs(&s.scores, &k_st, &k_ed)?;
                epoch_loss += svmr_ce_loss(&sig.p_st, &sig.p_ed, s.span.0, s.span.1)?;
                let gst: Vec<f64> = ce_logit_grad(&sig.p_st, s.span.0).iter().map(|x| x * scale).collect();
                let ged: Vec<f64> = ce_logit_grad(&sig.p_ed, s.span.1).iter().map(|x| x * scale).collect();
                let mut sink = vec![0.0; l];
                conv1d_same_backward(&s.scores, &k_st, &gst, &mut sink, &mut g_st);
                conv1d_same_backward(&s.scores, &k_ed, &ged, &mut sink, &mut g_ed);
            }
            t += 1;
            adam_update(&mut k_st, &g_st, &mut m_st, &mut v_st, t, &adam);
            adam_update(&mut k_ed, &g_ed, &mut m_ed, &mut v_ed, t, &adam);
        }
        losses.push(epoch_loss / signals.len() as f64);
    }
    let held_out = box_signals(rng, n_signals, l, noise, cfg.min_len, cfg.max_len);
    let mean_iou = evaluate_kernels(&held_out, &k_st, &k_ed, cfg.min_len, cfg.max_len)?;
    Ok(ConvSeDemoResult {
        k_st,
        k_ed,
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        losses,
        mean_iou,
    })
}

fn clip_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = (a.1.min(b.1) + 1).saturating_sub(a.0.max(b.0));
    let union = (a.1.max(b.1) + 1) - a.0.min(b.0);
    inter as f64 / union as f64
}

/// Mean IoU of the top-1 constrained span against each signal's planted span.
pub fn evaluate_kernels(signals: &[BoxSignal], k_st: &[f64], k_ed: &[f64], l_min: usize, l_max: usize) -> Result<f64> {
    if signals.is_empty() {
        return Err(Error::Empty("signals"));
    }
    let mut total = 0.0;
    for s in signals {
        let sig = convse_probs(&s.scores, k_st, k_ed)?;
        let best = top_spans(&sig.p_st, &sig.p_ed, l_min, l_max, 1);
        total += best.spans.first().map_or(0.0, |b| clip_iou((b.t_st, b.t_ed), s.span));
    }
    Ok(total / signals.len() as f64)
}

/// Ideal edge filter: `−1` on the left half, `0` at the centre, `+1` on the
/// right half for a rising edge; negated for a falling edge.
pub fn edge_template(kernel_size: usize, rising: bool) -> Vec<f64> {
    let half = kernel_size / 2;
    let sign = if rising { 1.0 } else { -1.0 };
    (0..kernel_size)
        .map(|j| match j.cmp(&half) {
            std::cmp::Ordering::Less => -sign,
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => sign,
        })
        .collect()
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_and_iou() {
        assert_eq!(edge_template(5, true), vec![-1.0, -1.0, 0.0, 1.0, 1.0]);
        assert_eq!(edge_template(3, false), vec![1.0, 0.0, -1.0]);
        assert_eq!(pearson(&[1.0], &[0.0]), None);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(clip_iou((0, 9), (5, 14)), 5.0 / 15.0);
        assert_eq!(clip_iou((0, 1), (3, 4)), 0.0);
    }

    #[test]
    fn box_signal_shapes() {
        let sigs = box_signals(&mut Rng::new(1), 200, 30, 0.0, 2, 16);
        for s in &sigs {
            let len = s.span.1 - s.span.0 + 1;
            assert!((2..=16).contains(&len) && s.span.1 < 30);
            assert_eq!(s.scores.iter().sum::<f64>(), len as f64);
        }
    }
}
