//! Dense numeric kernels, entropy functions, scalar quantization, and
//! seeded pseudo-randomness.
//!
//! Everything here is deterministic: matrix products fix their reduction
//! order, the quantizer documents its tie-breaking rule, and [`Rng`] is a
//! fully specified xoshiro256** stream so identical seeds reproduce
//! identical results on every platform.

use std::fmt;

/// Errors from the numeric kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum MathError {
    /// Probability argument outside `[0, 1]`.
    ProbabilityOutOfRange { value: f64 },
    /// Histogram bins do not sum to 1 within tolerance.
    HistogramNotNormalized { sum: f64 },
    /// Histogram bin with a negative probability.
    HistogramNegativeBin { index: usize, value: f64 },
    /// Quantizer called with zero bits.
    ZeroQuantBits,
    /// Quantizer bit width too large for exact f64 level arithmetic.
    QuantBitsTooLarge { bits: u32 },
    /// Quantizer range with `lo >= hi`.
    InvalidRange { lo: f64, hi: f64 },
    /// Matrix data length does not match the stated shape.
    DataLengthMismatch { rows: usize, cols: usize, len: usize },
    /// Non-finite entry in a matrix.
    NonFiniteEntry { row: usize, col: usize },
    /// Two operands with incompatible shapes.
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

impl fmt::Display for MathError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ProbabilityOutOfRange { value } => {
                write!(f, "probability {value} outside [0, 1]")
            }
            Self::HistogramNotNormalized { sum } => {
                write!(f, "histogram probabilities sum to {sum}, expected 1")
            }
            Self::HistogramNegativeBin { index, value } => {
                write!(f, "histogram bin {index} has negative probability {value}")
            }
            Self::ZeroQuantBits => write!(f, "quantization requires at least 1 bit"),
            Self::QuantBitsTooLarge { bits } => {
                write!(f, "quantization with {bits} bits exceeds the supported maximum of 52")
            }
            Self::InvalidRange { lo, hi } => {
                write!(f, "invalid quantization range [{lo}, {hi}]")
            }
            Self::DataLengthMismatch { rows, cols, len } => {
                write!(f, "matrix data length {len} does not match {rows}x{cols}")
            }
            Self::NonFiniteEntry { row, col } => {
                write!(f, "non-finite matrix entry at ({row}, {col})")
            }
            Self::ShapeMismatch { expected, found } => {
                write!(
                    f,
                    "shape mismatch: expected {}x{}, found {}x{}",
                    expected.0, expected.1, found.0, found.1
                )
            }
        }
    }
}

impl std::error::Error for MathError {}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, checking length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MathError> {
        if data.len() != rows * cols {
            return Err(MathError::DataLengthMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MathError::NonFiniteEntry {
                row: if cols == 0 { 0 } else { pos / cols },
                col: if cols == 0 { 0 } else { pos % cols },
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Shape-checked construction without the finiteness check.
    /// Training uses this for in-flight values, where divergence is
    /// detected at epoch granularity instead.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major backing slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Copies a contiguous range of rows into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows, "row range out of bounds");
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn require_same_shape(&self, other: &Matrix) -> Result<(), MathError> {
        if self.shape() != other.shape() {
            return Err(MathError::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    /// `self * other` (m x k by k x n).
    pub fn dot(&self, other: &Matrix) -> Result<Matrix, MathError> {
        if self.cols != other.rows {
            return Err(MathError::ShapeMismatch {
                expected: (self.cols, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            [self.cols as isize, 1],
            &other.data,
            [other.cols as isize, 1],
            &mut out.data,
        );
        Ok(out)
    }

    /// `self * other^T` (m x k by n x k).
    pub fn dot_transpose(&self, other: &Matrix) -> Result<Matrix, MathError> {
        if self.cols != other.cols {
            return Err(MathError::ShapeMismatch {
                expected: (other.rows, self.cols),
                found: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            &self.data,
            [self.cols as isize, 1],
            &other.data,
            [1, other.cols as isize],
            &mut out.data,
        );
        Ok(out)
    }

    /// `self^T * other` (k x m by k x n).
    pub fn transpose_dot(&self, other: &Matrix) -> Result<Matrix, MathError> {
        if self.rows != other.rows {
            return Err(MathError::ShapeMismatch {
                expected: (self.rows, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            &self.data,
            [1, self.cols as isize],
            &other.data,
            [other.cols as isize, 1],
            &mut out.data,
        );
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Thin wrapper over `matrixmultiply::dgemm` with row/col strides.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: [isize; 2],
    b: &[f64],
    b_strides: [isize; 2],
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: shapes are validated by the callers; strides describe the
    // row-major buffers passed in, and c is exactly m*n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides[0],
            a_strides[1],
            b.as_ptr(),
            b_strides[0],
            b_strides[1],
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// Entropy
// ---------------------------------------------------------------------------

/// Normalized discrete distribution over histogram bins.
///
/// Invariants: all bins non-negative and summing to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    bins: Vec<f64>,
}

impl Histogram {
    pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

    pub fn new(bins: Vec<f64>) -> Result<Self, MathError> {
        for (index, &value) in bins.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(MathError::HistogramNegativeBin { index, value });
            }
        }
        let sum: f64 = bins.iter().sum();
        if (sum - 1.0).abs() > Self::NORMALIZATION_TOLERANCE {
            return Err(MathError::HistogramNotNormalized { sum });
        }
        Ok(Self { bins })
    }

    /// Builds a histogram from non-negative counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self, MathError> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(MathError::HistogramNotNormalized { sum: 0.0 });
        }
        let t = total as f64;
        Self::new(counts.iter().map(|&c| c as f64 / t).collect())
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Entropy of a Bernoulli variable, in bits.
///
/// `0 * log2(0)` is taken as 0, so the endpoints return exactly 0.
pub fn bernoulli_entropy(p: f64) -> Result<f64, MathError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MathError::ProbabilityOutOfRange { value: p });
    }
    Ok(xlog2x(p) + xlog2x(1.0 - p))
}

/// Shannon entropy of a normalized histogram, in bits per event.
pub fn discrete_entropy(h: &Histogram) -> f64 {
    h.bins().iter().map(|&p| xlog2x(p)).sum()
}

#[inline]
fn xlog2x(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

// ---------------------------------------------------------------------------
// Scalar quantization
// ---------------------------------------------------------------------------

/// Number of quantization levels supported before f64 index arithmetic
/// stops being exact.
pub const MAX_QUANT_BITS: u32 = 52;

fn check_quant_args(bits: u32, lo: f64, hi: f64) -> Result<f64, MathError> {
    if bits == 0 {
        return Err(MathError::ZeroQuantBits);
    }
    if bits > MAX_QUANT_BITS {
        return Err(MathError::QuantBitsTooLarge { bits });
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(MathError::InvalidRange { lo, hi });
    }
    let levels = (1u64 << bits) as f64;
    Ok((hi - lo) / (levels - 1.0))
}

/// Snaps each value to the nearest of `2^bits` equally spaced levels
/// spanning `[lo, hi]`, after clamping into the range.
///
/// Ties round half away from zero (the behaviour of `f64::round` on the
/// scaled level index), which keeps results reproducible across platforms.
pub fn quantize_uniform(
    values: &[f64],
    bits: u32,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>, MathError> {
    let step = check_quant_args(bits, lo, hi)?;
    Ok(values
        .iter()
        .map(|&v| lo + quant_index(v, bits, lo, hi, step) as f64 * step)
        .collect())
}

/// Level indices (`0..2^bits`) produced by the same snapping rule as
/// [`quantize_uniform`].
pub fn quantize_uniform_indices(
    values: &[f64],
    bits: u32,
    lo: f64,
    hi: f64,
) -> Result<Vec<u64>, MathError> {
    let step = check_quant_args(bits, lo, hi)?;
    Ok(values
        .iter()
        .map(|&v| quant_index(v, bits, lo, hi, step))
        .collect())
}

#[inline]
fn quant_index(v: f64, bits: u32, lo: f64, hi: f64, step: f64) -> u64 {
    let clamped = v.clamp(lo, hi);
    let max_index = (1u64 << bits) - 1;
    let idx = ((clamped - lo) / step).round();
    (idx as u64).min(max_index)
}

// ---------------------------------------------------------------------------
// Seeded pseudo-randomness
// ---------------------------------------------------------------------------

/// Deterministic xoshiro256** generator, seeded through splitmix64.
///
/// The integer stream is the portability contract: any implementation of
/// xoshiro256** (Blackman & Vigna) with its four 64-bit state words
/// initialized from four successive splitmix64 outputs of the seed
/// reproduces `next_u64` exactly. Floating-point helpers derive from that
/// stream: `next_f64` uses the top 53 bits, `next_below` uses widening
/// multiplication with rejection, and `next_gaussian` applies Box-Muller
/// to two consecutive uniforms.
#[derive(Debug, Clone)]
pub struct Rng {
    state: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut state = [0u64; 4];
        for word in &mut state {
            *word = splitmix64(&mut sm);
        }
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.state[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
        let t = self.state[1] << 17;
        self.state[2] ^= self.state[0];
        self.state[3] ^= self.state[1];
        self.state[1] ^= self.state[2];
        self.state[0] ^= self.state[3];
        self.state[2] ^= t;
        self.state[3] = self.state[3].rotate_left(45);
        result
    }

    /// Uniform double in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, unbiased (Lemire's method).
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires n > 0");
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            let low = m as u64;
            if low < n {
                let threshold = n.wrapping_neg() % n;
                if low < threshold {
                    continue;
                }
            }
            return (m >> 64) as u64;
        }
    }

    /// Standard normal via Box-Muller on two consecutive uniforms.
    pub fn next_gaussian(&mut self) -> f64 {
        // Shift into (0, 1] so the log argument is never zero.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle driven by `next_below`.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam hyperparameters; the usual defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Matrix,
    v: Matrix,
    step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut Matrix,
    grads: &Matrix,
    state: &mut AdamState,
    lr: f64,
    hp: &AdamParams,
) -> Result<(), MathError> {
    params.require_same_shape(grads)?;
    params.require_same_shape(&state.m)?;
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hp.beta1.powi(t);
    let bias2 = 1.0 - hp.beta2.powi(t);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for ((p, &g), (m_i, v_i)) in params
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(m.iter_mut().zip(v.iter_mut()))
    {
        *m_i = hp.beta1 * *m_i + (1.0 - hp.beta1) * g;
        *v_i = hp.beta2 * *v_i + (1.0 - hp.beta2) * g * g;
        let m_hat = *m_i / bias1;
        let v_hat = *v_i / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn bernoulli_entropy_examples() {
        assert_eq!(bernoulli_entropy(0.5).unwrap(), 1.0);
        assert_eq!(bernoulli_entropy(0.0).unwrap(), 0.0);
        assert_eq!(bernoulli_entropy(1.0).unwrap(), 0.0);
        // direct evaluation of -p log2 p - (1-p) log2 (1-p) at p = 0.11
        assert_relative_eq!(
            bernoulli_entropy(0.11).unwrap(),
            0.499915958164528,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bernoulli_entropy_rejects_out_of_range() {
        assert!(matches!(
            bernoulli_entropy(-0.1),
            Err(MathError::ProbabilityOutOfRange { .. })
        ));
        assert!(matches!(
            bernoulli_entropy(1.1),
            Err(MathError::ProbabilityOutOfRange { .. })
        ));
    }

    #[test]
    fn discrete_entropy_examples() {
        let uniform = Histogram::new(vec![0.25; 4]).unwrap();
        assert_relative_eq!(discrete_entropy(&uniform), 2.0, epsilon = 1e-12);
        let point = Histogram::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(discrete_entropy(&point), 0.0);
        let mixed = Histogram::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert_relative_eq!(discrete_entropy(&mixed), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn histogram_rejects_unnormalized() {
        assert!(matches!(
            Histogram::new(vec![0.5, 0.4]),
            Err(MathError::HistogramNotNormalized { .. })
        ));
        assert!(matches!(
            Histogram::new(vec![1.5, -0.5]),
            Err(MathError::HistogramNegativeBin { .. })
        ));
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(
            quantize_uniform(&[0.0, 1.0], 1, 0.0, 1.0).unwrap(),
            vec![0.0, 1.0]
        );
        // 0.49 is nearer to 0 than to 1
        assert_eq!(quantize_uniform(&[0.49], 1, 0.0, 1.0).unwrap(), vec![0.0]);
        // clamped into [0, 1] before snapping
        assert_eq!(quantize_uniform(&[2.0], 2, 0.0, 1.0).unwrap(), vec![1.0]);
        // tie rounds half away from zero
        assert_eq!(quantize_uniform(&[0.5], 1, 0.0, 1.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn quantize_rejects_bad_args() {
        assert!(matches!(
            quantize_uniform(&[0.5], 0, 0.0, 1.0),
            Err(MathError::ZeroQuantBits)
        ));
        assert!(matches!(
            quantize_uniform(&[0.5], 1, 1.0, 0.0),
            Err(MathError::InvalidRange { .. })
        ));
        assert!(matches!(
            quantize_uniform(&[0.5], 60, 0.0, 1.0),
            Err(MathError::QuantBitsTooLarge { .. })
        ));
    }

    #[test]
    fn quantize_indices_match_values() {
        let values = [0.0, 0.2, 0.5, 0.77, 1.0];
        let q = quantize_uniform(&values, 3, 0.0, 1.0).unwrap();
        let idx = quantize_uniform_indices(&values, 3, 0.0, 1.0).unwrap();
        let step = 1.0 / 7.0;
        for (v, i) in q.iter().zip(idx) {
            assert_relative_eq!(*v, i as f64 * step, epsilon = 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Matrix::new(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let g = Matrix::zeros(2, 2);
        let mut st = AdamState::new(2, 2);
        adam_step(&mut p, &g, &mut st, 0.1, &AdamParams::default()).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // fresh state, grad 1: m_hat = 1, v_hat = 1 so the step is
        // lr / (1 + eps), within eps of lr itself
        let mut p = Matrix::zeros(1, 1);
        let g = Matrix::new(1, 1, vec![1.0]).unwrap();
        let mut st = AdamState::new(1, 1);
        adam_step(&mut p, &g, &mut st, 0.1, &AdamParams::default()).unwrap();
        assert_relative_eq!(p.get(0, 0), -0.1, epsilon = 1e-8);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = Matrix::new(1, 3, vec![0.3, -0.7, 1.1]).unwrap();
            let mut st = AdamState::new(1, 3);
            for i in 0..10 {
                let g = Matrix::new(1, 3, vec![0.1 * i as f64, -0.2, 0.05]).unwrap();
                adam_step(&mut p, &g, &mut st, 0.01, &AdamParams::default()).unwrap();
            }
            p.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(2, 3);
        let mut st = AdamState::new(2, 2);
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, 0.1, &AdamParams::default()),
            Err(MathError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn matrix_products_agree_with_naive() {
        let a = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let ab = a.dot(&b).unwrap();
        assert_eq!(ab.data(), &[58.0, 64.0, 139.0, 154.0]);
        let abt = a.dot_transpose(&b.transpose()).unwrap();
        assert_eq!(abt.data(), ab.data());
        let atb = a.transpose_dot(&ab).unwrap();
        let atb_naive = a.transpose().dot(&ab).unwrap();
        for (x, y) in atb.data().iter().zip(atb_naive.data()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn matrix_rejects_bad_data() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0, 2.0, 3.0]),
            Err(MathError::DataLengthMismatch { .. })
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(MathError::NonFiniteEntry { row: 0, col: 1 })
        ));
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::new(43);
        assert_ne!(Rng::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn rng_known_values() {
        // Frozen from this implementation; guards against accidental
        // changes to the seeding or state transition.
        let mut r = Rng::new(0);
        let first: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        assert_eq!(
            first,
            vec![
                11091344671253066420,
                13793997310169335082,
                1900383378846508768
            ]
        );
    }

    #[test]
    fn rng_next_below_is_in_range() {
        let mut r = Rng::new(7);
        for _ in 0..1000 {
            assert!(r.next_below(13) < 13);
        }
    }

    proptest! {
        #[test]
        fn entropy_is_nonnegative_and_bounded(weights in proptest::collection::vec(0.0f64..1.0, 1..32)) {
            let sum: f64 = weights.iter().sum();
            prop_assume!(sum > 1e-9);
            let bins: Vec<f64> = weights.iter().map(|w| w / sum).collect();
            let n = bins.len() as f64;
            let h = Histogram::new(bins).unwrap();
            let e = discrete_entropy(&h);
            prop_assert!(e >= 0.0);
            prop_assert!(e <= n.log2() + 1e-9);
        }

        #[test]
        fn entropy_bound_tight_iff_uniform(n in 1usize..64) {
            let h = Histogram::new(vec![1.0 / n as f64; n]).unwrap();
            prop_assert!((discrete_entropy(&h) - (n as f64).log2()).abs() <= 1e-9);
        }

        #[test]
        fn quantization_idempotent_and_bounded(
            values in proptest::collection::vec(-10.0f64..10.0, 1..64),
            bits in 1u32..12,
            lo in -5.0f64..0.0,
            span in 0.1f64..10.0,
        ) {
            let hi = lo + span;
            let once = quantize_uniform(&values, bits, lo, hi).unwrap();
            let twice = quantize_uniform(&once, bits, lo, hi).unwrap();
            prop_assert_eq!(&once, &twice);
            let half_step = span / ((1u64 << bits) - 1) as f64 / 2.0;
            for (&v, &q) in values.iter().zip(&once) {
                let clamped = v.clamp(lo, hi);
                prop_assert!((q - clamped).abs() <= half_step + 1e-12);
            }
        }

        #[test]
        fn bernoulli_matches_two_bin_histogram(i in 0usize..=100) {
            let p = i as f64 / 100.0;
            let h = Histogram::new(vec![p, 1.0 - p]).unwrap();
            let diff = (bernoulli_entropy(p).unwrap() - discrete_entropy(&h)).abs();
            prop_assert!(diff <= 1e-12);
        }
    }
}
