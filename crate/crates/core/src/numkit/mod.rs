//! Dense `f64` kernels shared by every other module.
//!
//! All reductions accumulate left to right in index order, so results are
//! bit-identical across runs for identical inputs.

mod rng;

pub use rng::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of length {} cannot hold {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {} has length {}, expected {}",
                    i,
                    r.len(),
                    cols
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Self {
        let data = rng.gaussian_vec(rows * cols).into_iter().map(|x| x * std).collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero width
        let width = self.cols.max(1);
        self.data.chunks_exact(width).take(self.rows)
    }

    /// First `n` rows as a new matrix.
    pub fn top_rows(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `C = A·B`, checked.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.mul(other))
    }

    /// `C = A·B`; panics on mismatched inner dimensions.
    pub(crate) fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul of {}x{} by {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let n = other.cols;
        let mut out = Matrix::zeros(self.rows, n);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let c_row = &mut out.data[i * n..(i + 1) * n];
            for (t, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[t * n..(t + 1) * n];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        out
    }

    /// `C = A·Bᵀ`.
    pub(crate) fn mul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "mul_t inner dims");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `C = Aᵀ·B`.
    pub(crate) fn t_mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_mul inner dims");
        let n = other.cols;
        let mut out = Matrix::zeros(self.cols, n);
        for t in 0..self.rows {
            let a_row = self.row(t);
            let b_row = other.row(t);
            for (i, &a) in a_row.iter().enumerate() {
                let c_row = &mut out.data[i * n..(i + 1) * n];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        out
    }

    /// `Aᵀ·v`.
    pub(crate) fn t_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "t_mul_vec dims");
        let mut out = vec![0.0; self.cols];
        for (r, &w) in self.row_iter().zip(v) {
            axpy(&mut out, w, r);
        }
        out
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `bias` to every row.
    pub(crate) fn add_row_vec(&mut self, bias: &[f64]) {
        assert_eq!(self.cols, bias.len(), "bias length");
        for r in 0..self.rows {
            for (a, b) in self.row_mut(r).iter_mut().zip(bias) {
                *a += b;
            }
        }
    }

    /// Column sums.
    pub(crate) fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
        out
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    out
}

/// Backward of softmax: given `p = softmax(s)` and `dL/dp`, returns `dL/ds`.
pub(crate) fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, gi)| pi * (gi - inner)).collect()
}

/// Scales every row to unit Euclidean norm, dividing by `max(norm, eps)`.
pub fn l2_normalize_rows(m: &Matrix, eps: f64) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm(row).max(eps);
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    out
}

/// Statistics kept from a layer-norm forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerNormStats {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

pub(crate) fn layer_norm_with_stats(
    v: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, LayerNormStats) {
    let d = v.len() as f64;
    let mean = v.iter().sum::<f64>() / d;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + eps).sqrt();
    let normalized: Vec<f64> = v.iter().map(|x| (x - mean) * inv_std).collect();
    let out = normalized
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(n, (g, b))| n * g + b)
        .collect();
    (out, LayerNormStats { normalized, inv_std })
}

/// Per-vector layer normalization with population variance and an affine map.
pub fn layer_norm(v: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("layer_norm input"));
    }
    if gamma.len() != v.len() || beta.len() != v.len() {
        return Err(Error::Shape(format!(
            "layer_norm input {} with gamma {} and beta {}",
            v.len(),
            gamma.len(),
            beta.len()
        )));
    }
    Ok(layer_norm_with_stats(v, gamma, beta, eps).0)
}

/// Index into the replicate-padded signal: position `i + j` of the padded
/// sequence maps to `signal[clamp(i + j - half, 0, l - 1)]`.
#[inline]
pub(crate) fn replicate_index(i: usize, j: usize, half: usize, len: usize) -> usize {
    (i + j).saturating_sub(half).min(len - 1)
}

/// Same-length cross-correlation with replicate (edge) padding.
///
/// `out[i] = Σ_j kernel[j] · signal[clamp(i + j - (k-1)/2, 0, l-1)]`
pub fn conv1d_same(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    let k = kernel.len();
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv1d kernel length must be odd, got {}",
            k
        )));
    }
    let l = signal.len();
    if l == 0 {
        return Ok(Vec::new());
    }
    if k > 2 * l - 1 {
        return Err(Error::InvalidArgument(format!(
            "conv1d kernel length {} exceeds 2*{}-1",
            k, l
        )));
    }
    Ok(conv1d_replicate(signal, kernel))
}

/// [`conv1d_same`] without the length check; the clamped index is defined
/// for any odd kernel, so signals shorter than the kernel still score.
pub(crate) fn conv1d_replicate(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let l = signal.len();
    if l == 0 {
        return Vec::new();
    }
    let half = (kernel.len() - 1) / 2;
    (0..l)
        .map(|i| {
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                acc += w * signal[replicate_index(i, j, half, l)];
            }
            acc
        })
        .collect()
}

/// Gradients of [`conv1d_same`] with respect to signal and kernel.
pub(crate) fn conv1d_same_backward(
    signal: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    d_signal: &mut [f64],
    d_kernel: &mut [f64],
) {
    let l = signal.len();
    let half = (kernel.len() - 1) / 2;
    for (i, &g) in d_out.iter().enumerate() {
        for (j, &w) in kernel.iter().enumerate() {
            let idx = replicate_index(i, j, half, l);
            d_kernel[j] += g * signal[idx];
            d_signal[idx] += g * w;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `n` standard normal samples from `rng`.
pub fn rng_gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    rng.gaussian_vec(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for t in 0..a.cols() {
                    s += a.get(i, t) * b.get(t, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut rng = Rng::new(3);
        let m = Matrix::gaussian(3, 4, 1.0, &mut rng);
        assert_eq!(Matrix::identity(3).matmul(&m).unwrap(), m);

        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = Matrix::gaussian(5, 4, 1.0, &mut rng);
        let b = Matrix::gaussian(4, 3, 1.0, &mut rng);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.mul_t(&b.transpose()), fast);
        let at = a.transpose();
        let via_t = at.t_mul(&b);
        for (x, y) in via_t.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("2x3 by 2x3"), "{msg}");
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn l2_normalize_cases() {
        let m = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let n = l2_normalize_rows(&m, 1e-12);
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15 && (n.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(n.row(1), &[0.0, 0.0]);

        let mut rng = Rng::new(5);
        let r = Matrix::gaussian(20, 7, 1.0, &mut rng);
        for row in l2_normalize_rows(&r, 1e-12).row_iter() {
            let s: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_cases() {
        let ones = [1.0; 4];
        let zeros = [0.0; 4];
        let out = layer_norm(&[2.5; 4], &ones, &zeros, 1e-5).unwrap();
        assert!(out.iter().all(|x| *x == 0.0));

        let out = layer_norm(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0], 1e-15).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] + 1.0).abs() < 1e-12);

        let v = [0.3, -1.2, 2.0, 0.1];
        let base = layer_norm(&v, &ones, &zeros, 1e-5).unwrap();
        let beta = [0.5, -0.25, 1.0, 2.0];
        let shifted = layer_norm(&v, &ones, &beta, 1e-5).unwrap();
        for i in 0..4 {
            assert_eq!(shifted[i], base[i] + beta[i]);
        }
        assert!(layer_norm(&[], &[], &[], 1e-5).is_err());
    }

    #[test]
    fn conv1d_cases() {
        let sig = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(conv1d_same(&sig, &[-1.0, 0.0, 1.0]).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(conv1d_same(&sig, &[0.0, 1.0, 0.0]).unwrap(), sig.to_vec());
        let c = conv1d_same(&[2.0; 5], &[0.5, -1.0, 3.0]).unwrap();
        assert!(c.iter().all(|x| (*x - 5.0).abs() < 1e-15));
        assert!(conv1d_same(&sig, &[1.0, 1.0]).is_err());
        assert!(conv1d_same(&[1.0, 2.0], &[1.0; 5]).is_err());
        assert!(conv1d_same(&[1.0, 2.0], &[1.0; 3]).is_ok());
    }

    #[test]
    fn gaussian_moments() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        assert_eq!(rng_gaussian(&mut a, 16), rng_gaussian(&mut b, 16));
        let xs = rng_gaussian(&mut Rng::new(2024), 100_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-3.0f64..3.0, rows * cols)
            .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_associative(a in small_matrix(3, 4), b in small_matrix(4, 2), c in small_matrix(2, 5)) {
            let left = a.mul(&b).mul(&c);
            let right = a.mul(&b.mul(&c));
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_distribution_and_shift(v in prop::collection::vec(-30.0f64..30.0, 1..20), c in -50.0f64..50.0) {
            let p = softmax(&v).unwrap();
            prop_assert!(p.iter().all(|x| *x > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn conv1d_linear(
            x in prop::collection::vec(-5.0f64..5.0, 8),
            y in prop::collection::vec(-5.0f64..5.0, 8),
            k in prop::collection::vec(-2.0f64..2.0, 5),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = conv1d_same(&mix, &k).unwrap();
            let cx = conv1d_same(&x, &k).unwrap();
            let cy = conv1d_same(&y, &k).unwrap();
            for i in 0..8 {
                prop_assert!((lhs[i] - (a * cx[i] + b * cy[i])).abs() < 1e-9);
            }
            let again = conv1d_same(&mix, &k).unwrap();
            prop_assert_eq!(lhs, again);
        }
    }
}
