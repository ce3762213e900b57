//! Dense linear algebra, activations and the small amount of numerical
//! machinery the recommender and memory banks are built on.
//!
//! Everything here works on `f64` and plain row-major storage. The shapes
//! involved are tiny (embedding sizes in the tens to low hundreds), so a
//! hand-rolled matrix keeps the gradient code explicit and auditable.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Norm below which a vector is treated as zero by [`cosine_sim`].
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} of length {cols}"),
                    r.len(),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// `a bᵀ` for column vectors `a` and `b`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        let mut data = Vec::with_capacity(a.len() * b.len());
        for &x in a {
            data.extend(b.iter().map(|&y| x * y));
        }
        Self {
            rows: a.len(),
            cols: b.len(),
            data,
        }
    }

    /// Horizontal concatenation `[left | right]`.
    pub fn hcat(left: &Matrix, right: &Matrix) -> Result<Self> {
        if left.rows != right.rows {
            return Err(Error::shape("Matrix::hcat", left.shape_str(), right.shape_str()));
        }
        let cols = left.cols + right.cols;
        let mut data = Vec::with_capacity(left.rows * cols);
        for r in 0..left.rows {
            data.extend_from_slice(left.row(r));
            data.extend_from_slice(right.row(r));
        }
        Ok(Self {
            rows: left.rows,
            cols,
            data,
        })
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

    pub(crate) fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "matvec",
                format!("vector of length {} for {}", self.cols, self.shape_str()),
                v.len(),
            ));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::shape(
                "matvec_t",
                format!("vector of length {} for {}ᵀ", self.rows, self.shape_str()),
                v.len(),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += vr * m;
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape("axpy", self.shape_str(), other.shape_str()));
        }
        axpy(&mut self.data, s, &other.data);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Denominator floor of [`relative_error`]. A central difference at
/// ε = 1e-5 on losses of order 10 resolves gradients to about 1e-10, so
/// entries below the floor are in effect compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Seeded random source. ChaCha8 gives the same stream on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream keyed on `(seed, stream)`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        if sd == 0.0 {
            return mean;
        }
        Normal::new(mean, sd)
            .expect("standard deviation is finite and positive")
            .sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, sd: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| self.normal(0.0, sd)).collect();
        Matrix { rows, cols, data }
    }

    /// Fan-scaled uniform init in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, rows: usize, cols: usize) -> Matrix {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.uniform(-limit, limit))
            .collect();
        Matrix { rows, cols, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu if x < 0.0 => LEAKY_SLOPE * x,
            _ => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu if x < 0.0 => LEAKY_SLOPE,
            _ => 1.0,
        }
    }
}

/// What [`fc_backward`] needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FcCache {
    pub input: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcGrads {
    pub input: Vec<f64>,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

pub fn fc_forward(
    input: &[f64],
    weights: &Matrix,
    bias: &[f64],
    activation: Activation,
) -> Result<(Vec<f64>, FcCache)> {
    if weights.cols != input.len() || weights.rows != bias.len() {
        return Err(Error::shape(
            "fc_forward",
            format!(
                "weights {} with input {} and bias {}",
                weights.shape_str(),
                weights.cols,
                weights.rows
            ),
            format!("input {} and bias {}", input.len(), bias.len()),
        ));
    }
    let mut pre = weights.matvec(input)?;
    axpy(&mut pre, 1.0, bias);
    let out = pre.iter().map(|&z| activation.apply(z)).collect();
    Ok((
        out,
        FcCache {
            input: input.to_vec(),
            pre_activation: pre,
            activation,
        },
    ))
}

pub fn fc_backward(grad_output: &[f64], cache: &FcCache, weights: &Matrix) -> Result<FcGrads> {
    if cache.input.len() != weights.cols || cache.pre_activation.len() != weights.rows {
        return Err(Error::Contract(format!(
            "fc cache (input {}, output {}) does not belong to a {} layer",
            cache.input.len(),
            cache.pre_activation.len(),
            weights.shape_str()
        )));
    }
    if grad_output.len() != weights.rows {
        return Err(Error::shape("fc_backward", weights.rows, grad_output.len()));
    }
    let delta: Vec<f64> = grad_output
        .iter()
        .zip(&cache.pre_activation)
        .map(|(&g, &z)| g * cache.activation.derivative(z))
        .collect();
    Ok(FcGrads {
        input: weights.matvec_t(&delta)?,
        weights: Matrix::outer(&delta, &cache.input),
        bias: delta,
    })
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    let max = v
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return Err(Error::Contract("softmax of an empty vector".into()));
    }
    if !max.is_finite() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract("softmax input is not finite".into()));
    }
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Cosine similarity, clamped to `[-1, 1]`; zero when either side has
/// (near-)zero norm.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_sim", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// A parameter container whose coordinates can be read and rewritten as one
/// flat vector. The order is fixed per type and shared by both methods.
pub trait Params: Clone {
    fn flatten(&self) -> Vec<f64>;

    fn assign(&mut self, values: &[f64]);

    fn num_params(&self) -> usize {
        self.flatten().len()
    }
}

impl Params for Vec<f64> {
    fn flatten(&self) -> Vec<f64> {
        self.clone()
    }

    fn assign(&mut self, values: &[f64]) {
        self.copy_from_slice(values);
    }
}

impl Params for f64 {
    fn flatten(&self) -> Vec<f64> {
        vec![*self]
    }

    fn assign(&mut self, values: &[f64]) {
        *self = values[0];
    }
}

impl Params for Matrix {
    fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    fn assign(&mut self, values: &[f64]) {
        self.data.copy_from_slice(values);
    }
}

/// Central-difference gradient `(f(p + ε) - f(p - ε)) / 2ε`, one coordinate
/// at a time. Returned with the same shape as `params`.
pub fn finite_diff_grad<P, F>(mut loss_fn: F, params: &P, epsilon: f64) -> Result<P>
where
    P: Params,
    F: FnMut(&P) -> f64,
{
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let base = params.flatten();
    let mut probe = params.clone();
    let mut values = base.clone();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        values[i] = base[i] + epsilon;
        probe.assign(&values);
        let plus = loss_fn(&probe);
        values[i] = base[i] - epsilon;
        probe.assign(&values);
        let minus = loss_fn(&probe);
        values[i] = base[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle { coordinate: i });
        }
        grad[i] = (plus - minus) / (2.0 * epsilon);
    }
    let mut out = params.clone();
    out.assign(&grad);
    Ok(out)
}
