//! Unitary discrete Fourier transforms in one and two dimensions.
//!
//! Both directions carry a `1/sqrt(N)` factor, so every transform preserves the
//! l2 norm of its input. Noise added to a spectrum therefore keeps its total
//! energy after the inverse transform, which the mechanisms rely on.
//!
//! Powers of two take an iterative radix-2 path. Every other length uses a
//! direct `O(N^2)` evaluation against a precomputed twiddle table; the layer
//! shapes this crate deals with are small enough that this is not a concern.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{shape, Error, Result};

/// Scaling convention of a plan.
///
/// Everything in this crate uses [`Normalization::Unitary`]. `Backward`
/// (unscaled forward, `1/N` on the inverse) exists so the verification
/// harness can run a negative control against a mis-normalized transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    Unitary,
    Backward,
}

/// Precomputed state for transforms of one fixed length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    norm: Normalization,
    /// `exp(-2 pi i k / N)` for `k in 0..N`.
    twiddles: Vec<Complex64>,
    bitrev: Option<Vec<usize>>,
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        Self::with_normalization(len, Normalization::Unitary)
    }

    pub fn with_normalization(len: usize, norm: Normalization) -> Result<Self> {
        if len == 0 {
            return Err(Error::Empty("transform length must be at least 1"));
        }
        let twiddles = (0..len)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        let bitrev = len.is_power_of_two().then(|| bit_reversal(len));
        Ok(Self {
            len,
            norm,
            twiddles,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    /// Forward transform, `y_i = s * sum_n x_n exp(-j 2 pi i n / N)`.
    pub fn forward(&self, input: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(input)?;
        let mut buf = input.to_vec();
        self.forward_in_place(&mut buf);
        Ok(buf)
    }

    /// Inverse transform, `x_n = s * sum_i y_i exp(+j 2 pi i n / N)`.
    pub fn inverse(&self, input: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(input)?;
        let mut buf = input.to_vec();
        self.inverse_in_place(&mut buf);
        Ok(buf)
    }

    /// Unchecked in-place forward transform. `buf.len()` must equal the plan length.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.transform(buf, false);
        let scale = match self.norm {
            Normalization::Unitary => 1.0 / (self.len as f64).sqrt(),
            Normalization::Backward => 1.0,
        };
        scale_in_place(buf, scale);
    }

    /// Unchecked in-place inverse transform.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.transform(buf, true);
        let scale = match self.norm {
            Normalization::Unitary => 1.0 / (self.len as f64).sqrt(),
            Normalization::Backward => 1.0 / self.len as f64,
        };
        scale_in_place(buf, scale);
    }

    fn check(&self, input: &[Complex64]) -> Result<()> {
        if input.len() != self.len {
            return Err(shape("fft plan", self.len, input.len()));
        }
        check_finite_complex(input)
    }

    fn twiddle(&self, k: usize, inverse: bool) -> Complex64 {
        let w = self.twiddles[k];
        if inverse {
            w.conj()
        } else {
            w
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        match &self.bitrev {
            Some(rev) => self.radix2(buf, rev, inverse),
            None => self.direct(buf, inverse),
        }
    }

    fn radix2(&self, buf: &mut [Complex64], rev: &[usize], inverse: bool) {
        let n = self.len;
        for (i, &j) in rev.iter().enumerate() {
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < n {
            let stride = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for k in 0..half {
                    let w = self.twiddle(k * stride, inverse);
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }

    fn direct(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.len;
        let input = buf.to_vec();
        for (i, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut idx = 0;
            for x in &input {
                acc += x * self.twiddle(idx, inverse);
                idx += i;
                if idx >= n {
                    idx %= n;
                }
            }
            *out = acc;
        }
    }
}

fn bit_reversal(n: usize) -> Vec<usize> {
    let bits = n.trailing_zeros();
    (0..n)
        .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
        .collect()
}

fn scale_in_place(buf: &mut [Complex64], scale: f64) {
    if scale != 1.0 {
        buf.iter_mut().for_each(|z| *z *= scale);
    }
}

/// Unitary forward DFT of `v`.
pub fn fft1d(v: &[Complex64]) -> Result<Vec<Complex64>> {
    check_finite_complex(v)?;
    FftPlan::new(v.len())?.forward(v)
}

/// Unitary inverse DFT of `v`.
pub fn ifft1d(v: &[Complex64]) -> Result<Vec<Complex64>> {
    check_finite_complex(v)?;
    FftPlan::new(v.len())?.inverse(v)
}

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(shape("complex matrix", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real(m: &RealMat) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    /// Real parts, discarding the imaginary component of every entry.
    pub fn real_part(&self) -> RealMat {
        RealMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }
}

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(shape("real matrix", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Separable 2D transform: 1D transforms over every row, then every column.
#[derive(Debug, Clone)]
pub struct Fft2dPlan {
    rows: usize,
    cols: usize,
    row_plan: FftPlan,
    col_plan: FftPlan,
}

impl Fft2dPlan {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        Self::with_normalization(rows, cols, Normalization::Unitary)
    }

    pub fn with_normalization(rows: usize, cols: usize, norm: Normalization) -> Result<Self> {
        Ok(Self {
            rows,
            cols,
            row_plan: FftPlan::with_normalization(cols, norm)?,
            col_plan: FftPlan::with_normalization(rows, norm)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn forward(&self, m: &ComplexMat) -> Result<ComplexMat> {
        self.check(m)?;
        let mut out = m.clone();
        self.forward_in_place(out.as_mut_slice());
        Ok(out)
    }

    pub fn inverse(&self, m: &ComplexMat) -> Result<ComplexMat> {
        self.check(m)?;
        let mut out = m.clone();
        self.inverse_in_place(out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked forward transform of a row-major `rows x cols` buffer.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.apply(buf, false);
    }

    /// Unchecked inverse transform of a row-major `rows x cols` buffer.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.apply(buf, true);
    }

    fn apply(&self, buf: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(buf.len(), self.rows * self.cols);
        for row in buf.chunks_exact_mut(self.cols) {
            if inverse {
                self.row_plan.inverse_in_place(row);
            } else {
                self.row_plan.forward_in_place(row);
            }
        }
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for (r, z) in column.iter_mut().enumerate() {
                *z = buf[r * self.cols + c];
            }
            if inverse {
                self.col_plan.inverse_in_place(&mut column);
            } else {
                self.col_plan.forward_in_place(&mut column);
            }
            for (r, z) in column.iter().enumerate() {
                buf[r * self.cols + c] = *z;
            }
        }
    }

    fn check(&self, m: &ComplexMat) -> Result<()> {
        if m.rows != self.rows || m.cols != self.cols {
            return Err(shape(
                "fft2d plan",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", m.rows, m.cols),
            ));
        }
        check_finite_complex(&m.data)
    }
}

pub fn fft2d(m: &ComplexMat) -> Result<ComplexMat> {
    Fft2dPlan::new(m.rows, m.cols)?.forward(m)
}

pub fn ifft2d(m: &ComplexMat) -> Result<ComplexMat> {
    Fft2dPlan::new(m.rows, m.cols)?.inverse(m)
}

pub fn check_finite_complex(v: &[Complex64]) -> Result<()> {
    match v.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

pub fn check_finite_real(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

pub(crate) fn require_len(v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Empty("sequence must have at least one element"))
    } else {
        Ok(())
    }
}
