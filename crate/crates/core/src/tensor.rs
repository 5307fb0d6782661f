//! Dense `f64` vectors and row-major matrices.
//!
//! Everything the model, relevance propagation and trainer need is here:
//! affine maps, the two LSTM nonlinearities and a numerically stable softmax.
//! Values are kept finite; constructors and [`affine`] reject NaN/Inf.

use std::fmt;
use std::ops::{Deref, Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("empty tensor: dimensions must be positive")]
    Empty,
}

/// A dense vector of finite `f64` values.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self, TensorError> {
        if data.is_empty() {
            return Err(TensorError::Empty);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "Vector::new" });
        }
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector length must be positive");
        Self(vec![0.0; len])
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_vec(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self(data)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Concatenate `self` and `other` into a new vector.
    pub fn concat(&self, other: &Vector) -> Vector {
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.0);
        data.extend_from_slice(&other.0);
        Vector(data)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Vector {
        Vector::from_vec(self.0[range].to_vec())
    }

    pub fn add_assign(&mut self, other: &Vector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn hadamard(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = TensorError;

    fn try_from(data: Vec<f64>) -> Result<Self, Self::Error> {
        Vector::new(data)
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::Empty);
        }
        if data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch {
                op: "Matrix::new",
                left: format!("{rows}x{cols}"),
                right: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "Matrix::new" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::ShapeMismatch {
                op: "Matrix::from_rows",
                left: format!("{cols} columns"),
                right: "ragged rows".into(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `W·x` without bias; panics on shape mismatch (internal hot path).
    pub(crate) fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `out += Wᵀ·y`.
    pub(crate) fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(self.rows, y.len());
        assert_eq!(self.cols, out.len());
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
    }

    /// `self += y ⊗ x` (outer product accumulation, used for weight gradients).
    pub(crate) fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        assert_eq!(self.rows, y.len());
        assert_eq!(self.cols, x.len());
        let cols = self.cols;
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (w, v) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *w += yr * v;
            }
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)
    }
}

/// `out[j] = Σ_i W[j,i]·x[i] + b[j]`.
pub fn affine(w: &Matrix, x: &Vector, b: &Vector) -> Result<Vector, TensorError> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(TensorError::ShapeMismatch {
            op: "affine",
            left: format!("W {}x{}", w.rows(), w.cols()),
            right: format!("x {}, b {}", x.len(), b.len()),
        });
    }
    let mut out = w.matvec(x);
    for (o, bias) in out.iter_mut().zip(b.iter()) {
        *o += bias;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "affine" });
    }
    Ok(Vector(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Sigmoid,
    Tanh,
}

pub fn sigmoid(x: f64) -> f64 {
    // Branch on sign so that exp never overflows.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn apply_nonlinearity(kind: Nonlinearity, x: &Vector) -> Vector {
    let f: fn(f64) -> f64 = match kind {
        Nonlinearity::Sigmoid => sigmoid,
        Nonlinearity::Tanh => f64::tanh,
    };
    Vector(x.iter().map(|&v| f(v)).collect())
}

/// Softmax with max subtraction.
pub fn softmax(x: &Vector) -> Vector {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Vector(exps.into_iter().map(|e| e / total).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(data: &[f64]) -> Vector {
        Vector::new(data.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity() {
        let out = affine(&Matrix::identity(2), &v(&[3.0, 4.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_hand_sum() {
        let w = Matrix::from_rows(&[vec![2.0, 1.0]]).unwrap();
        let out = affine(&w, &v(&[1.0, 1.0]), &v(&[1.0])).unwrap();
        assert_eq!(out.as_slice(), &[4.0]);
    }

    #[test]
    fn affine_matches_naive_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let w = Matrix::new(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let x = v(&(0..3).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let b = v(&(0..5).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let out = affine(&w, &x, &b).unwrap();
        for j in 0..5 {
            let mut acc = 0.0;
            for i in 0..3 {
                acc += w.as_slice()[j * 3 + i] * x[i];
            }
            acc += b[j];
            assert!((out[j] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let err = affine(&Matrix::zeros(2, 3), &v(&[1.0, 2.0]), &v(&[0.0, 0.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("x 2"), "{msg}");
    }

    #[test]
    fn nonlinearities_at_zero() {
        assert_eq!(apply_nonlinearity(Nonlinearity::Sigmoid, &v(&[0.0])).as_slice(), &[0.5]);
        assert_eq!(apply_nonlinearity(Nonlinearity::Tanh, &v(&[0.0])).as_slice(), &[0.0]);
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        let out = apply_nonlinearity(Nonlinearity::Sigmoid, &v(&[-800.0, 800.0]));
        assert_eq!(out.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&v(&[0.0, 0.0])).as_slice(), &[0.5, 0.5]);
        assert_eq!(softmax(&v(&[1000.0, 1000.0])).as_slice(), &[0.5, 0.5]);
        // Direct formula, evaluated without max-shifting.
        let direct: Vec<f64> = {
            let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        };
        let out = softmax(&v(&[1.0, 2.0, 3.0]));
        for (a, b) in out.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert!(Vector::new(vec![]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn sigmoid_symmetry(x in -50.0f64..50.0) {
            let s = sigmoid(x) + sigmoid(-x);
            prop_assert!((s - 1.0).abs() < 1e-15);
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            xs in prop::collection::vec(-30.0f64..30.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax(&v(&xs));
            prop_assert!((a.sum() - 1.0).abs() < 1e-12);
            prop_assert!(a.iter().all(|&p| p > 0.0));
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let b = softmax(&v(&shifted));
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn affine_is_linear(
            wdata in prop::collection::vec(-2.0f64..2.0, 12),
            x in prop::collection::vec(-2.0f64..2.0, 4),
            y in prop::collection::vec(-2.0f64..2.0, 4),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let w = Matrix::new(3, 4, wdata).unwrap();
            let zero = Vector::zeros(3);
            let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = affine(&w, &v(&combo), &zero).unwrap();
            let fx = affine(&w, &v(&x), &zero).unwrap();
            let fy = affine(&w, &v(&y), &zero).unwrap();
            for j in 0..3 {
                let rhs = alpha * fx[j] + beta * fy[j];
                let scale = lhs[j].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs[j] - rhs).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn operations_are_deterministic(xs in prop::collection::vec(-5.0f64..5.0, 1..8)) {
            let a = softmax(&v(&xs));
            let b = softmax(&v(&xs));
            prop_assert_eq!(a.as_slice().iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
                            b.as_slice().iter().map(|f| f.to_bits()).collect::<Vec<_>>());
        }
    }
}
