//! Dense 64-bit vectors and matrices, the handful of elementwise maps the
//! cells need, and a seeded, replayable random number generator.
//!
//! Everything here is deliberately small: row-major storage, no broadcasting,
//! no batching. The `*_into` / `*_acc` kernels are the hot loops of training
//! and skip shape checks outside debug builds; the public free functions
//! check shapes and return [`ShapeError`].

use std::fmt;
use std::ops::{Deref, DerefMut};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Largest double strictly below one. Sigmoid outputs are clamped to it so
/// that saturated gates stay inside the open unit interval.
pub const SIGMOID_MAX: f64 = 1.0 - f64::EPSILON / 2.0;
/// Smallest positive normal double, the lower clamp for sigmoid outputs.
pub const SIGMOID_MIN: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShapeError {
    #[error("{op}: shape mismatch, left is {left:?} but right is {right:?}")]
    Mismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: expected {expected} values, got {got}")]
    Length {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: non-finite value at index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: bound must be positive and finite, got {bound}")]
    Bound { op: &'static str, bound: f64 },
}

/// A dense vector of doubles.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    /// Wraps `data`, rejecting NaN and infinities.
    pub fn from_vec(data: Vec<f64>) -> Result<Self, ShapeError> {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(ShapeError::NonFinite {
                op: "Vector::from_vec",
                index,
            });
        }
        Ok(Vector(data))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Concatenation `[self; other]`.
    pub fn concat(&self, other: &[f64]) -> Vector {
        let mut out = Vec::with_capacity(self.len() + other.len());
        out.extend_from_slice(&self.0);
        out.extend_from_slice(other);
        Vector(out)
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// A dense row-major matrix of doubles.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::Length {
                op: "Matrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(ShapeError::NonFinite {
                op: "Matrix::from_vec",
                index,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, ShapeError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(ShapeError::Length {
                    op: "Matrix::from_rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vector, ShapeError> {
        if v.len() != self.cols {
            return Err(ShapeError::Mismatch {
                op: "matvec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        let mut out = Vector::zeros(self.rows);
        matvec_into(self, v, &mut out);
        Ok(out)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for r in 0..self.rows {
            list.entry(&self.row(r));
        }
        list.finish()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Independent lanes let the compiler keep the sum in vector registers.
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let chunks_a = a.chunks_exact(LANES);
    let chunks_b = b.chunks_exact(LANES);
    let tail_a = chunks_a.remainder();
    let tail_b = chunks_b.remainder();
    for (x, y) in chunks_a.zip(chunks_b) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in tail_a.iter().zip(tail_b) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = m · v`.
pub(crate) fn matvec_into(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols.max(1))) {
        *o = dot(row, v);
    }
}

/// `out += mᵀ · g`.
pub(crate) fn matvec_t_acc(m: &Matrix, g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, g.len());
    debug_assert_eq!(m.cols, out.len());
    for (gi, row) in g.iter().zip(m.data.chunks_exact(m.cols.max(1))) {
        if *gi != 0.0 {
            axpy(*gi, row, out);
        }
    }
}

/// `m += g ⊗ u`, the weight gradient of `m · u` under upstream `g`.
pub(crate) fn outer_acc(m: &mut Matrix, g: &[f64], u: &[f64]) {
    debug_assert_eq!(m.rows, g.len());
    debug_assert_eq!(m.cols, u.len());
    let cols = m.cols.max(1);
    for (gi, row) in g.iter().zip(m.data.chunks_exact_mut(cols)) {
        if *gi != 0.0 {
            axpy(*gi, u, row);
        }
    }
}

pub(crate) fn add_assign(a: &mut [f64], b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Logistic function, clamped to `[SIGMOID_MIN, SIGMOID_MAX]`.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_MIN, SIGMOID_MAX)
}

pub fn sigmoid(v: &[f64]) -> Vector {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh(v: &[f64]) -> Vector {
    v.iter().map(|x| x.tanh()).collect()
}

fn check_same(op: &'static str, a: &[f64], b: &[f64]) -> Result<(), ShapeError> {
    if a.len() != b.len() {
        return Err(ShapeError::Mismatch {
            op,
            left: (a.len(), 1),
            right: (b.len(), 1),
        });
    }
    Ok(())
}

pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector, ShapeError> {
    m.matvec(v)
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vector, ShapeError> {
    check_same("hadamard", a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn add(a: &[f64], b: &[f64]) -> Result<Vector, ShapeError> {
    check_same("add", a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

pub fn scale(a: &[f64], k: f64) -> Vector {
    a.iter().map(|x| x * k).collect()
}

/// A matrix with entries drawn i.i.d. from `U[-bound, bound]`.
pub fn init_uniform(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Result<Matrix, ShapeError> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(ShapeError::Bound {
            op: "init_uniform",
            bound,
        });
    }
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Ok(Matrix { rows, cols, data })
}

/// Below this magnitude, gradient entries are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`, zero when both are zero.
///
/// Central differences with step 1e-5 carry round-off of order
/// `1e-16 · |loss| / 1e-5` in absolute terms, so tiny gradient entries cannot
/// be checked to a relative tolerance; the floor turns those comparisons
/// into absolute ones.
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Position of an [`Rng`] in its stream; enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

/// Seeded ChaCha8 stream. The keystream is counter based, so a seed plus a
/// word position pins the generator down on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A generator whose seed is derived from this one's seed and `label`.
    /// Independent of how much of the parent stream has been consumed.
    pub fn child(&self, label: &str) -> Rng {
        Rng::new(derive_seed(self.seed, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn restore(state: RngState) -> Self {
        let mut rng = Rng::new(state.seed);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

/// Child seed for `label`: the first eight bytes of SHA-256 over the parent
/// seed and the label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
