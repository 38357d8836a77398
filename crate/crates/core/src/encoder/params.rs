use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_s: usize,
    pub d_q: usize,
    /// Hidden size shared by every encoder block.
    pub hidden: usize,
    /// Rows of the learned positional table; bounds clip and token counts.
    pub max_len: usize,
    /// ConvSE filter length, odd.
    pub kernel_size: usize,
    pub init_std: f64,
}

impl ModelConfig {
    pub const DEFAULT_HIDDEN: usize = 128;
    pub const DEFAULT_MAX_LEN: usize = 128;
    pub const DEFAULT_KERNEL_SIZE: usize = 5;
    pub const DEFAULT_INIT_STD: f64 = 0.02;

    pub fn new(d_v: usize, d_s: usize, d_q: usize) -> Self {
        ModelConfig {
            d_v,
            d_s,
            d_q,
            hidden: Self::DEFAULT_HIDDEN,
            max_len: Self::DEFAULT_MAX_LEN,
            kernel_size: Self::DEFAULT_KERNEL_SIZE,
            init_std: Self::DEFAULT_INIT_STD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.max_len == 0 || self.d_v == 0 || self.d_s == 0 || self.d_q == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    fn init(d_in: usize, d_out: usize, std: f64, rng: &mut Rng) -> Self {
        Linear {
            weight: Matrix::gaussian(d_in, d_out, std, rng),
            bias: vec![0.0; d_out],
        }
    }
}

/// Single-head attention, output linear, residual and layer norm.
///
/// Used directly as a Self-Encoder and as the cross-attention half of a
/// Cross-Encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub out: Linear,
    pub ln_gamma: Vec<f64>,
    pub ln_beta: Vec<f64>,
}

impl AttentionBlock {
    pub fn init(d: usize, std: f64, rng: &mut Rng) -> Self {
        AttentionBlock {
            wq: Matrix::gaussian(d, d, std, rng),
            wk: Matrix::gaussian(d, d, std, rng),
            wv: Matrix::gaussian(d, d, std, rng),
            out: Linear::init(d, d, std, rng),
            ln_gamma: vec![1.0; d],
            ln_beta: vec![0.0; d],
        }
    }

    pub fn hidden(&self) -> usize {
        self.wq.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEncoderParams {
    pub cross: AttentionBlock,
    pub inner: AttentionBlock,
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub proj_v: Linear,
    pub proj_s: Linear,
    pub proj_q: Linear,
    pub pos_enc: Matrix,
    pub self_v: AttentionBlock,
    pub self_s: AttentionBlock,
    pub self_q: AttentionBlock,
    pub cross_v: CrossEncoderParams,
    pub cross_s: CrossEncoderParams,
    pub w_v: Vec<f64>,
    pub w_s: Vec<f64>,
    pub k_st: Vec<f64>,
    pub k_ed: Vec<f64>,
}

/// Borrowed view of one named tensor.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn push<'a>(out: &mut Vec<TensorView<'a>>, name: String, shape: Vec<usize>, data: &'a [f64]) {
    out.push(TensorView { name, shape, data });
}

fn view_matrix<'a>(out: &mut Vec<TensorView<'a>>, name: String, m: &'a Matrix) {
    push(out, name, vec![m.rows(), m.cols()], m.data());
}

fn view_linear<'a>(out: &mut Vec<TensorView<'a>>, prefix: &str, l: &'a Linear) {
    view_matrix(out, format!("{prefix}.weight"), &l.weight);
    push(out, format!("{prefix}.bias"), vec![l.bias.len()], &l.bias);
}

fn view_block<'a>(out: &mut Vec<TensorView<'a>>, prefix: &str, b: &'a AttentionBlock) {
    view_matrix(out, format!("{prefix}.wq"), &b.wq);
    view_matrix(out, format!("{prefix}.wk"), &b.wk);
    view_matrix(out, format!("{prefix}.wv"), &b.wv);
    view_linear(out, &format!("{prefix}.out"), &b.out);
    push(out, format!("{prefix}.ln_gamma"), vec![b.ln_gamma.len()], &b.ln_gamma);
    push(out, format!("{prefix}.ln_beta"), vec![b.ln_beta.len()], &b.ln_beta);
}

fn slices_linear<'a>(out: &mut Vec<&'a mut [f64]>, l: &'a mut Linear) {
    out.push(l.weight.data_mut());
    out.push(&mut l.bias);
}

fn slices_block<'a>(out: &mut Vec<&'a mut [f64]>, b: &'a mut AttentionBlock) {
    out.push(b.wq.data_mut());
    out.push(b.wk.data_mut());
    out.push(b.wv.data_mut());
    slices_linear(out, &mut b.out);
    out.push(&mut b.ln_gamma);
    out.push(&mut b.ln_beta);
}

impl ModelParams {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let std = config.init_std;
        Ok(ModelParams {
            config,
            proj_v: Linear::init(config.d_v, d, std, rng),
            proj_s: Linear::init(config.d_s, d, std, rng),
            proj_q: Linear::init(config.d_q, d, std, rng),
            pos_enc: Matrix::gaussian(config.max_len, d, std, rng),
            self_v: AttentionBlock::init(d, std, rng),
            self_s: AttentionBlock::init(d, std, rng),
            self_q: AttentionBlock::init(d, std, rng),
            cross_v: CrossEncoderParams {
                cross: AttentionBlock::init(d, std, rng),
                inner: AttentionBlock::init(d, std, rng),
            },
            cross_s: CrossEncoderParams {
                cross: AttentionBlock::init(d, std, rng),
                inner: AttentionBlock::init(d, std, rng),
            },
            w_v: rng.gaussian_vec(d).into_iter().map(|x| x * std).collect(),
            w_s: rng.gaussian_vec(d).into_iter().map(|x| x * std).collect(),
            k_st: rng.gaussian_vec(config.kernel_size).into_iter().map(|x| x * std).collect(),
            k_ed: rng.gaussian_vec(config.kernel_size).into_iter().map(|x| x * std).collect(),
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Named tensors in a fixed canonical order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        view_linear(&mut out, "proj_v", &self.proj_v);
        view_linear(&mut out, "proj_s", &self.proj_s);
        view_linear(&mut out, "proj_q", &self.proj_q);
        view_matrix(&mut out, "pos_enc".into(), &self.pos_enc);
        view_block(&mut out, "self_v", &self.self_v);
        view_block(&mut out, "self_s", &self.self_s);
        view_block(&mut out, "self_q", &self.self_q);
        view_block(&mut out, "cross_v.cross", &self.cross_v.cross);
        view_block(&mut out, "cross_v.inner", &self.cross_v.inner);
        view_block(&mut out, "cross_s.cross", &self.cross_s.cross);
        view_block(&mut out, "cross_s.inner", &self.cross_s.inner);
        push(&mut out, "w_v".into(), vec![self.w_v.len()], &self.w_v);
        push(&mut out, "w_s".into(), vec![self.w_s.len()], &self.w_s);
        push(&mut out, "k_st".into(), vec![self.k_st.len()], &self.k_st);
        push(&mut out, "k_ed".into(), vec![self.k_ed.len()], &self.k_ed);
        out
    }

    /// Mutable slices in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        slices_linear(&mut out, &mut self.proj_v);
        slices_linear(&mut out, &mut self.proj_s);
        slices_linear(&mut out, &mut self.proj_q);
        out.push(self.pos_enc.data_mut());
        slices_block(&mut out, &mut self.self_v);
        slices_block(&mut out, &mut self.self_s);
        slices_block(&mut out, &mut self.self_q);
        slices_block(&mut out, &mut self.cross_v.cross);
        slices_block(&mut out, &mut self.cross_v.inner);
        slices_block(&mut out, &mut self.cross_s.cross);
        slices_block(&mut out, &mut self.cross_s.inner);
        out.push(&mut self.w_v);
        out.push(&mut self.w_s);
        out.push(&mut self.k_st);
        out.push(&mut self.k_ed);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|t| t.name).collect()
    }

    /// Same shapes, all zeros. Used for gradient and optimizer-moment buffers.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn kernel_size(&self) -> usize {
        self.k_st.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn views_and_slices_align() {
        let mut cfg = ModelConfig::new(5, 4, 3);
        cfg.hidden = 6;
        cfg.max_len = 10;
        let mut p = ModelParams::init(cfg, &mut Rng::new(1)).unwrap();
        let shapes: Vec<usize> = p.tensors().iter().map(|t| t.data.len()).collect();
        let lens: Vec<usize> = p.tensors_mut().iter().map(|s| s.len()).collect();
        assert_eq!(shapes, lens);
        for t in p.tensors() {
            assert_eq!(t.shape.iter().product::<usize>(), t.data.len(), "{}", t.name);
        }
        let names = p.tensor_names();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(p.self_v.ln_gamma, vec![1.0; 6]);
        assert!(p.proj_q.bias.iter().all(|b| *b == 0.0));
        assert_eq!(p.zeros_like().tensors().iter().map(|t| t.data.iter().map(|x| x.abs()).sum::<f64>()).sum::<f64>(), 0.0);
    }

    #[test]
    fn rejects_even_kernel() {
        let mut cfg = ModelConfig::new(2, 2, 2);
        cfg.kernel_size = 4;
        assert!(ModelParams::init(cfg, &mut Rng::new(0)).is_err());
    }
}
