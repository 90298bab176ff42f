//! Minimal deterministic dense-tensor kernels.
//!
//! Everything is `f32`, row-major, and single-threaded. Summation order is
//! fixed (ascending index, no reduction reordering) so that higher layers can
//! assert bitwise equality between incremental and batched execution paths.

use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, validating the shape product and rejecting NaN/Inf.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "Tensor::new",
                detail: format!("shape {:?} has {} elements, data has {}", shape, numel, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel] }
    }

    /// 2-D convenience constructor.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows when viewed as a matrix (all leading dims collapsed).
    pub fn rows(&self) -> usize {
        match self.shape.last() {
            Some(&cols) if cols > 0 => self.data.len() / cols,
            _ => 0,
        }
    }

    /// Last-dimension extent.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Copies rows `[start, end)` into a new `(end-start) x cols` tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let c = self.cols();
        Tensor {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        }
    }

    /// Checks the finiteness invariant after an in-place computation.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Boolean mask with the same logical layout as a 2-D tensor.
/// `true` marks an allowed position.
#[derive(Debug, Clone)]
pub struct BoolMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl BoolMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::Shape {
                op: "BoolMask::new",
                detail: format!("{}x{} mask needs {} flags, got {}", rows, cols, rows * cols, allowed.len()),
            });
        }
        Ok(Self { rows, cols, allowed })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }
}

/// Deterministic generator (SplitMix64). The same seed yields the same
/// stream on every run, which is what makes weight initialization and the
/// replay tests bit-reproducible.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 24 bits of mantissa.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u64 << 24) as f32
    }

    /// Uniform in [-scale, scale).
    pub fn uniform(&mut self, scale: f32) -> f32 {
        (self.next_f32() * 2.0 - 1.0) * scale
    }

    /// Uniform integer in [0, bound).
    pub fn next_below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }

    /// Derives an independent stream; used to give each weight tensor its
    /// own seed so insertion order cannot change initialization.
    pub fn derive(&self, stream: u64) -> Rng {
        let mut r = Rng::new(self.state ^ stream.wrapping_mul(0x9e3779b97f4a7c15));
        r.next_u64();
        r
    }

    pub fn fill_uniform(&mut self, rows: usize, cols: usize, scale: f32) -> Tensor {
        let data = (0..rows * cols).map(|_| self.uniform(scale)).collect();
        Tensor { shape: vec![rows, cols], data }
    }
}

/// Standard matrix product `a[m x k] * b[k x n]`.
///
/// The inner accumulation runs over `k` in ascending order for every output
/// element, so a row computed alone is bitwise identical to the same row
/// computed inside a larger batch.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    if ka != kb {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("inner extents differ: {}x{} vs {}x{}", m, ka, kb, n),
        });
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bkj;
            }
        }
    }
    let t = Tensor { shape: vec![m, n], data: out };
    t.check_finite("matmul")?;
    Ok(t)
}

/// Row-wise softmax over the last dimension with optional masking.
///
/// Disallowed positions are set to -inf before exponentiation, so their
/// weight is exactly 0.0 and they contribute nothing to any downstream sum.
/// A row with no allowed position is a contract violation.
pub fn softmax_lastdim(x: &Tensor, mask: Option<&BoolMask>) -> Result<Tensor> {
    let cols = x.cols();
    let rows = x.rows();
    if cols == 0 {
        return Err(Error::Shape { op: "softmax_lastdim", detail: "empty last dimension".into() });
    }
    if let Some(m) = mask {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::Shape {
                op: "softmax_lastdim",
                detail: format!("mask {}x{} vs tensor {}x{}", m.rows(), m.cols(), rows, cols),
            });
        }
    }
    let mut out = vec![0.0f32; rows * cols];
    for i in 0..rows {
        let xrow = x.row(i);
        let orow = &mut out[i * cols..(i + 1) * cols];
        let mut max = f32::NEG_INFINITY;
        for j in 0..cols {
            let allowed = mask.map_or(true, |m| m.is_allowed(i, j));
            if allowed && xrow[j] > max {
                max = xrow[j];
            }
        }
        if max == f32::NEG_INFINITY {
            return Err(Error::FullyMaskedRow(i));
        }
        let mut denom = 0.0f32;
        for j in 0..cols {
            let allowed = mask.map_or(true, |m| m.is_allowed(i, j));
            let e = if allowed { (xrow[j] - max).exp() } else { 0.0 };
            orow[j] = e;
            denom += e;
        }
        for o in orow.iter_mut() {
            *o /= denom;
        }
    }
    let t = Tensor { shape: x.shape.clone(), data: out };
    t.check_finite("softmax_lastdim")?;
    Ok(t)
}

/// Layer normalization epsilon, fixed crate-wide.
pub const LN_EPS: f32 = 1e-5;

/// Per-vector normalization over the last dimension followed by an affine map.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.cols();
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::Shape {
            op: "layer_norm",
            detail: format!("gain/bias length {}/{} vs width {}", gain.numel(), bias.numel(), d),
        });
    }
    let rows = x.rows();
    let g = gain.data();
    let b = bias.data();
    let mut out = vec![0.0f32; rows * d];
    for i in 0..rows {
        let xrow = x.row(i);
        let mut mean = 0.0f32;
        for &v in xrow {
            mean += v;
        }
        mean /= d as f32;
        let mut var = 0.0f32;
        for &v in xrow {
            let c = v - mean;
            var += c * c;
        }
        var /= d as f32;
        let inv = 1.0 / (var + eps).sqrt();
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            orow[j] = (xrow[j] - mean) * inv * g[j] + b[j];
        }
    }
    let t = Tensor { shape: x.shape.clone(), data: out };
    t.check_finite("layer_norm")?;
    Ok(t)
}

/// Interleaved sin/cos positional encoding of width `d`, defined for any
/// non-negative position so streaming past a trained length stays well-formed.
pub fn sinusoidal_position(pos: usize, d: usize) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("positional width must be even and positive, got {}", d)));
    }
    let mut data = vec![0.0f32; d];
    for i in 0..d / 2 {
        let freq = 1.0f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        let angle = pos as f64 * freq;
        data[2 * i] = angle.sin() as f32;
        data[2 * i + 1] = angle.cos() as f32;
    }
    Tensor::new(vec![d], data)
}

/// Element-wise sum of two equally-shaped tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Shape {
            op: "add",
            detail: format!("{:?} vs {:?}", a.shape, b.shape),
        });
    }
    let data = a.data.iter().zip(b.data.iter()).map(|(x, y)| x + y).collect();
    let t = Tensor { shape: a.shape.clone(), data };
    t.check_finite("add")?;
    Ok(t)
}

/// In-place `a += b`.
pub fn add_assign(a: &mut Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape {
            op: "add_assign",
            detail: format!("{:?} vs {:?}", a.shape, b.shape),
        });
    }
    for (x, y) in a.data.iter_mut().zip(b.data.iter()) {
        *x += y;
    }
    a.check_finite("add_assign")
}

/// GELU (tanh approximation), applied element-wise.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    const C: f32 = 0.797_884_56; // sqrt(2/pi)
    let data = x
        .data
        .iter()
        .map(|&v| 0.5 * v * (1.0 + (C * (v + 0.044715 * v * v * v)).tanh()))
        .collect();
    let t = Tensor { shape: x.shape.clone(), data };
    t.check_finite("gelu")?;
    Ok(t)
}
