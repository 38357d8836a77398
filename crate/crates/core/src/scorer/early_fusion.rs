use super::{prediction_order, top_spans, MomentPrediction, RetrievalConfig};
use crate::error::{Error, Result};
use crate::featstore::ClipContext;
use crate::numkit::{dot, softmax_unchecked, Matrix, Rng};

/// Recurrent scorer over early-fused clip and query features.
///
/// `h_t = tanh([v_t; s_t; q̄]·W_x + h_{t−1}·W_h + b)` with linear start/end
/// heads. It is never trained; it exists so the cost of running a
/// query-dependent sequence model on every (query, video) pair can be timed.
#[derive(Debug, Clone)]
pub struct EarlyFusionModel {
    pub w_q: Matrix,
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub bias: Vec<f64>,
    pub w_st: Vec<f64>,
    pub w_ed: Vec<f64>,
}

impl EarlyFusionModel {
    pub fn init(d_v: usize, d_s: usize, d_q: usize, hidden: usize, rng: &mut Rng) -> Self {
        let fan_in = (d_v + d_s + hidden) as f64;
        EarlyFusionModel {
            w_q: Matrix::gaussian(d_q, hidden, 1.0 / (d_q as f64).sqrt(), rng),
            w_x: Matrix::gaussian(d_v + d_s + hidden, hidden, 1.0 / fan_in.sqrt(), rng),
            w_h: Matrix::gaussian(hidden, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            bias: vec![0.0; hidden],
            w_st: rng.gaussian_vec(hidden),
            w_ed: rng.gaussian_vec(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }

    /// Start and end logits for one (query, video) pair.
    pub fn pair_logits(&self, ctx: &ClipContext, q_pooled: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.hidden();
        let l = ctx.n_clips();
        let mut x = Vec::with_capacity(self.w_x.rows());
        let mut h = vec![0.0; d];
        let mut s_st = Vec::with_capacity(l);
        let mut s_ed = Vec::with_capacity(l);
        for t in 0..l {
            x.clear();
            x.extend_from_slice(ctx.video_feats.row(t));
            x.extend_from_slice(ctx.sub_feats.row(t));
            x.extend_from_slice(q_pooled);
            let mut pre = self.w_x.t_mul_vec(&x);
            let rec = self.w_h.t_mul_vec(&h);
            for ((p, r), b) in pre.iter_mut().zip(&rec).zip(&self.bias) {
                *p = (*p + r + b).tanh();
            }
            h = pre;
            s_st.push(dot(&h, &self.w_st));
            s_ed.push(dot(&h, &self.w_ed));
        }
        (s_st, s_ed)
    }
}

/// Runs the recurrent scorer on every video for one query and returns the
/// global top moments under the same length prior and ordering as
/// late-fusion retrieval.
pub fn early_fusion_baseline(
    corpus: &[ClipContext],
    query_tokens: &Matrix,
    model: &EarlyFusionModel,
    cfg: &RetrievalConfig,
) -> Result<Vec<MomentPrediction>> {
    if query_tokens.rows() == 0 {
        return Err(Error::Empty("query tokens"));
    }
    if query_tokens.cols() != model.w_q.rows() {
        return Err(Error::Shape(format!(
            "query tokens have {} columns, model expects {}",
            query_tokens.cols(),
            model.w_q.rows()
        )));
    }
    let mut mean = vec![0.0; query_tokens.cols()];
    for row in query_tokens.row_iter() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / query_tokens.rows() as f64;
        }
    }
    let q_pooled = model.w_q.t_mul_vec(&mean);
    let fused_dim = model.w_x.rows() - model.hidden();

    let per_video: Vec<Result<Vec<MomentPrediction>>> = super::par_map(corpus, |ctx| {
        if ctx.video_feats.cols() + ctx.sub_feats.cols() != fused_dim {
            return Err(Error::Shape(format!(
                "video {} feature width {} does not match model input {}",
                ctx.video_id,
                ctx.video_feats.cols() + ctx.sub_feats.cols(),
                fused_dim
            )));
        }
        let (s_st, s_ed) = model.pair_logits(ctx, &q_pooled);
        let p_st = softmax_unchecked(&s_st);
        let p_ed = softmax_unchecked(&s_ed);
        Ok(top_spans(&p_st, &p_ed, cfg.l_min, cfg.l_max, cfg.top_k_moments)
            .spans
            .into_iter()
            .map(|s| MomentPrediction {
                video_id: ctx.video_id.clone(),
                t_st: s.t_st,
                t_ed: s.t_ed,
                score: s.score,
            })
            .collect())
    });
    let mut merged = Vec::new();
    for r in per_video {
        merged.extend(r?);
    }
    merged.sort_by(prediction_order);
    merged.truncate(cfg.top_k_moments);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_respect_length_prior() {
        let mut rng = Rng::new(9);
        let corpus: Vec<ClipContext> = (0..4)
            .map(|i| {
                ClipContext::new(
                    format!("v{i}"),
                    1.5,
                    Matrix::gaussian(10 + i, 6, 1.0, &mut rng),
                    Matrix::gaussian(10 + i, 5, 1.0, &mut rng),
                )
                .unwrap()
            })
            .collect();
        let model = EarlyFusionModel::init(6, 5, 3, 8, &mut rng);
        let q = Matrix::gaussian(4, 3, 1.0, &mut rng);
        let cfg = RetrievalConfig {
            l_min: 3,
            l_max: 5,
            top_k_moments: 50,
            ..RetrievalConfig::default()
        };
        let preds = early_fusion_baseline(&corpus, &q, &model, &cfg).unwrap();
        assert_eq!(preds.len(), 50);
        for p in &preds {
            assert!(p.t_st <= p.t_ed && (3..=5).contains(&(p.t_ed - p.t_st + 1)));
        }
        for w in preds.windows(2) {
            assert_ne!(prediction_order(&w[0], &w[1]), std::cmp::Ordering::Greater);
        }
        let bad = Matrix::gaussian(4, 2, 1.0, &mut rng);
        assert!(early_fusion_baseline(&corpus, &bad, &model, &cfg).is_err());
    }
}
