//! Backbone forward pass: input projection with learned positions,
//! Self-Encoders, Cross-Encoders and the modular query decomposition.

mod checkpoint;
mod encoded_store;
pub(crate) mod forward;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use encoded_store::{encoded_store_size, read_encoded_store, write_encoded_store, ENCODED_MAGIC};
pub use params::{AttentionBlock, CrossEncoderParams, Linear, ModelConfig, ModelParams, TensorView};

use crate::error::{Error, Result};
use crate::featstore::ClipContext;
use crate::numkit::Matrix;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Stored context representations, ready for late fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVideo {
    pub video_id: String,
    pub clip_duration: f64,
    /// Single-modal contextualized video features, used for video retrieval.
    pub h_v0: Matrix,
    pub h_s0: Matrix,
    /// Cross-modal features, used for query-clip similarity.
    pub h_v1: Matrix,
    pub h_s1: Matrix,
}

impl EncodedVideo {
    pub fn n_clips(&self) -> usize {
        self.h_v0.rows()
    }
}

/// A query split into a video-facing and a subtitle-facing vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedQuery {
    pub h_q: Matrix,
    pub q_v: Vec<f64>,
    pub q_s: Vec<f64>,
    pub attn_v: Vec<f64>,
    pub attn_s: Vec<f64>,
}

/// Row-wise `ReLU(x·W + b)` followed by adding `pos_enc[i]` to row `i`.
pub fn project_inputs(e_raw: &Matrix, proj: &Linear, pos_enc: &Matrix) -> Result<Matrix> {
    forward::project_cached(e_raw, proj, pos_enc).map(|(m, _)| m)
}

pub fn self_encoder(x: &Matrix, params: &AttentionBlock) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::Empty("self_encoder input"));
    }
    check_width(x, params)?;
    Ok(forward::block_forward(params, x, x).0)
}

/// Attention weights the Self-Encoder assigns for `x` (rows sum to one).
pub fn self_attention_weights(x: &Matrix, params: &AttentionBlock) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::Empty("self_encoder input"));
    }
    check_width(x, params)?;
    Ok(forward::block_forward(params, x, x).1.attn)
}

pub fn cross_encoder(x_self: &Matrix, x_cross: &Matrix, params: &CrossEncoderParams) -> Result<Matrix> {
    if x_cross.rows() == 0 {
        return Err(Error::Empty("cross_encoder context"));
    }
    if x_self.rows() == 0 {
        return Err(Error::Empty("cross_encoder input"));
    }
    check_width(x_self, &params.cross)?;
    check_width(x_cross, &params.cross)?;
    Ok(forward::cross_forward(params, x_self, x_cross).0)
}

fn check_width(x: &Matrix, p: &AttentionBlock) -> Result<()> {
    if x.cols() != p.hidden() {
        return Err(Error::Shape(format!(
            "input width {} does not match hidden size {}",
            x.cols(),
            p.hidden()
        )));
    }
    Ok(())
}

/// Softmax-pools the rows of `h_q` with scores `w_m · h_r`, once per modality.
pub fn modular_query(h_q: &Matrix, w_v: &[f64], w_s: &[f64]) -> Result<EncodedQuery> {
    if h_q.rows() == 0 {
        return Err(Error::Empty("query encoding"));
    }
    if w_v.len() != h_q.cols() || w_s.len() != h_q.cols() {
        return Err(Error::Shape(format!(
            "modular vectors ({}, {}) vs hidden {}",
            w_v.len(),
            w_s.len(),
            h_q.cols()
        )));
    }
    let (q_v, attn_v) = forward::modular_pool(h_q, w_v);
    let (q_s, attn_s) = forward::modular_pool(h_q, w_s);
    Ok(EncodedQuery {
        h_q: h_q.clone(),
        q_v,
        q_s,
        attn_v,
        attn_s,
    })
}

pub fn encode_context(ctx: &ClipContext, params: &ModelParams) -> Result<EncodedVideo> {
    forward::encode_context_cached(ctx, params).map(|(v, _)| v)
}

/// Projects, self-encodes and decomposes a query token matrix.
pub fn encode_query(tokens: &Matrix, params: &ModelParams) -> Result<EncodedQuery> {
    forward::encode_query_cached(tokens, params).map(|(q, _)| q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{dot, Rng};

    fn cfg(d: usize) -> ModelConfig {
        ModelConfig {
            d_v: 5,
            d_s: 4,
            d_q: 3,
            hidden: d,
            max_len: 16,
            kernel_size: 3,
            init_std: 0.3,
        }
    }

    fn params(d: usize, seed: u64) -> ModelParams {
        ModelParams::init(cfg(d), &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn projection_cases() {
        let p = params(4, 1);
        let mut rng = Rng::new(2);
        let e = Matrix::gaussian(3, 5, 1.0, &mut rng);

        let zero = Linear {
            weight: Matrix::zeros(5, 4),
            bias: vec![0.0; 4],
        };
        let out = project_inputs(&e, &zero, &Matrix::zeros(16, 4)).unwrap();
        assert!(out.data().iter().all(|x| *x == 0.0));

        let neg = Linear {
            weight: Matrix::zeros(5, 4),
            bias: vec![-1.0, 2.0, -3.0, 0.5],
        };
        let out = project_inputs(&e, &neg, &Matrix::zeros(16, 4)).unwrap();
        for r in out.row_iter() {
            assert_eq!(r, &[0.0, 2.0, 0.0, 0.5]);
        }

        let out = project_inputs(&e, &p.proj_v, &p.pos_enc).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mut lin = p.proj_v.bias[j];
                for t in 0..5 {
                    lin += e.get(i, t) * p.proj_v.weight.get(t, j);
                }
                let expect = lin.max(0.0);
                assert!((out.get(i, j) - p.pos_enc.get(i, j) - expect).abs() < 1e-12);
            }
        }

        let long = Matrix::zeros(17, 5);
        let err = project_inputs(&long, &p.proj_v, &p.pos_enc).unwrap_err();
        assert!(err.to_string().contains("max_len 16"), "{err}");
    }

    #[test]
    fn self_encoder_attention_rows() {
        let p = params(6, 3);
        let mut rng = Rng::new(4);
        let one = Matrix::gaussian(1, 6, 1.0, &mut rng);
        assert_eq!(self_attention_weights(&one, &p.self_v).unwrap().data(), &[1.0]);

        let x = Matrix::gaussian(7, 6, 2.0, &mut rng);
        let a = self_attention_weights(&x, &p.self_v).unwrap();
        for r in a.row_iter() {
            assert!(r.iter().all(|w| *w >= 0.0));
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(self_encoder(&Matrix::zeros(0, 6), &p.self_v).is_err());
    }

    #[test]
    fn self_encoder_permutation_equivariant() {
        let p = params(6, 5);
        let x = Matrix::gaussian(4, 6, 1.0, &mut Rng::new(6));
        let perm = [2usize, 0, 3, 1];
        let px = Matrix::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let y = self_encoder(&x, &p.self_v).unwrap();
        let py = self_encoder(&px, &p.self_v).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in py.row(k).iter().zip(y.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_encoder_cases() {
        let p = params(5, 7);
        let mut rng = Rng::new(8);
        let x = Matrix::gaussian(4, 5, 1.0, &mut rng);

        let single = Matrix::gaussian(1, 5, 1.0, &mut rng);
        let (_, cache) = forward::cross_forward(&p.cross_v, &x, &single);
        assert!(cache.cross.attn.data().iter().all(|a| *a == 1.0));

        let row = rng.gaussian_vec(5);
        let same = Matrix::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let (out, cache) = forward::cross_forward(&p.cross_v, &x, &same);
        // identical keys give uniform attention and one shared value mix
        for r in cache.cross.attn.row_iter() {
            for a in r {
                assert!((a - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        let first = cache.cross.ctx.row(0).to_vec();
        for r in cache.cross.ctx.row_iter() {
            for (a, b) in r.iter().zip(&first) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(out.shape(), (4, 5));
        assert!(cross_encoder(&x, &Matrix::zeros(0, 5), &p.cross_v).is_err());
    }

    #[test]
    fn modular_query_cases() {
        let mut rng = Rng::new(9);
        let h = Matrix::gaussian(5, 4, 1.0, &mut rng);
        let zero = vec![0.0; 4];
        let eq = modular_query(&h, &zero, &zero).unwrap();
        let mean: Vec<f64> = h.col_sums().iter().map(|x| x / 5.0).collect();
        for (a, b) in eq.q_v.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }

        let single = Matrix::gaussian(1, 4, 1.0, &mut rng);
        let w = rng.gaussian_vec(4);
        let eq = modular_query(&single, &w, &w).unwrap();
        for (a, b) in eq.q_v.iter().zip(single.row(0)) {
            assert!((a - b).abs() < 1e-15);
        }

        let w_v = rng.gaussian_vec(4);
        let w_s = rng.gaussian_vec(4);
        let eq = modular_query(&h, &w_v, &w_s).unwrap();
        for q in [&eq.q_v, &eq.q_s] {
            for (c, val) in q.iter().enumerate() {
                let col: Vec<f64> = h.row_iter().map(|r| r[c]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(*val >= lo - 1e-12 && *val <= hi + 1e-12);
            }
        }
        for a in [&eq.attn_v, &eq.attn_s] {
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn modular_argmax_invariant_to_positive_scaling() {
        let mut rng = Rng::new(10);
        for _ in 0..50 {
            let h = Matrix::gaussian(6, 4, 1.0, &mut rng);
            let w = rng.gaussian_vec(4);
            let c = 0.1 + 10.0 * rng.next_f64();
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            let argmax = |a: &[f64]| {
                a.iter()
                    .enumerate()
                    .max_by(|x, y| x.1.total_cmp(y.1))
                    .unwrap()
                    .0
            };
            let a = modular_query(&h, &w, &w).unwrap();
            let b = modular_query(&h, &scaled, &scaled).unwrap();
            assert_eq!(argmax(&a.attn_v), argmax(&b.attn_v));
        }
    }

    fn ctx(l: usize, seed: u64) -> ClipContext {
        let mut rng = Rng::new(seed);
        ClipContext::new(
            "v",
            1.5,
            Matrix::gaussian(l, 5, 1.0, &mut rng),
            Matrix::gaussian(l, 4, 1.0, &mut rng),
        )
        .unwrap()
    }

    #[test]
    fn encode_context_shapes_and_purity() {
        let p = params(6, 11);
        let one = encode_context(&ctx(1, 1), &p).unwrap();
        for m in [&one.h_v0, &one.h_s0, &one.h_v1, &one.h_s1] {
            assert_eq!(m.shape(), (1, 6));
        }
        let c = ctx(5, 2);
        assert_eq!(encode_context(&c, &p).unwrap(), encode_context(&c, &p).unwrap());
    }

    /// Straight-line attention block with explicit loops.
    fn naive_block(p: &AttentionBlock, xq: &Matrix, xkv: &Matrix) -> Matrix {
        let d = p.hidden();
        let proj = |x: &Matrix, w: &Matrix| {
            let mut o = Matrix::zeros(x.rows(), d);
            for i in 0..x.rows() {
                for j in 0..d {
                    o.set(i, j, (0..d).map(|t| x.get(i, t) * w.get(t, j)).sum());
                }
            }
            o
        };
        let (q, k, v) = (proj(xq, &p.wq), proj(xkv, &p.wk), proj(xkv, &p.wv));
        let mut out = Matrix::zeros(xq.rows(), d);
        for i in 0..xq.rows() {
            let s: Vec<f64> = (0..xkv.rows()).map(|j| dot(q.row(i), k.row(j)) / (d as f64).sqrt()).collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mix: Vec<f64> = (0..d).map(|c| (0..xkv.rows()).map(|j| e[j] / z * v.get(j, c)).sum()).collect();
            let r: Vec<f64> = (0..d)
                .map(|c| xq.get(i, c) + p.out.bias[c] + (0..d).map(|t| mix[t] * p.out.weight.get(t, c)).sum::<f64>())
                .collect();
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            for c in 0..d {
                out.set(i, c, (r[c] - mean) / (var + LN_EPS).sqrt() * p.ln_gamma[c] + p.ln_beta[c]);
            }
        }
        out
    }

    #[test]
    fn encode_context_matches_straight_line_composition() {
        let p = params(6, 12);
        let c = ctx(3, 13);
        let enc = encode_context(&c, &p).unwrap();
        let ev = project_inputs(&c.video_feats, &p.proj_v, &p.pos_enc).unwrap();
        let es = project_inputs(&c.sub_feats, &p.proj_s, &p.pos_enc).unwrap();
        let hv0 = naive_block(&p.self_v, &ev, &ev);
        let hs0 = naive_block(&p.self_s, &es, &es);
        let mid_v = naive_block(&p.cross_v.cross, &hv0, &hs0);
        let hv1 = naive_block(&p.cross_v.inner, &mid_v, &mid_v);
        let mid_s = naive_block(&p.cross_s.cross, &hs0, &hv0);
        let hs1 = naive_block(&p.cross_s.inner, &mid_s, &mid_s);
        for (a, b) in [(&enc.h_v0, &hv0), (&enc.h_s0, &hs0), (&enc.h_v1, &hv1), (&enc.h_s1, &hs1)] {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn no_nan_for_extreme_inputs() {
        let p = params(6, 14);
        let mut c = ctx(4, 15);
        for x in c.video_feats.data_mut() {
            *x *= 1e6;
        }
        let zero_sub = Matrix::zeros(4, 4);
        c.sub_feats = zero_sub;
        let enc = encode_context(&c, &p).unwrap();
        for m in [&enc.h_v0, &enc.h_s0, &enc.h_v1, &enc.h_s1] {
            assert!(m.is_finite());
        }
    }
}
