//! Dense `f64` tensors and a small define-by-run autodiff tape.
//!
//! Only the operations the link predictor needs are provided. Shapes are
//! either scalars (`[]`), vectors (`[n]`) or row-major matrices
//! (`[rows, cols]`); there is no broadcasting.

mod tape;

use thiserror::Error;

pub(crate) use tape::bce_value;
pub use tape::{Tape, Var, BCE_CLAMP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> NumericError {
    NumericError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(mismatch(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` for a matrix, `(1, n)` for a vector.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => (1, self.data.len()),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty() && self.data.len() == 1
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.rows_cols();
        &self.data[r * c..(r + 1) * c]
    }
}

/// Per-group softmax over `(group, value)` pairs, stabilized by
/// subtracting each group's maximum. Output order matches input order.
pub fn neighborhood_softmax(scores: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let n_groups = scores.iter().map(|&(g, _)| g + 1).max().unwrap_or(0);
    let groups: Vec<usize> = scores.iter().map(|&(g, _)| g).collect();
    let values: Vec<f64> = scores.iter().map(|&(_, v)| v).collect();
    let w = group_softmax(&values, &groups, n_groups);
    groups.into_iter().zip(w).collect()
}

pub(crate) fn group_softmax(values: &[f64], groups: &[usize], n_groups: usize) -> Vec<f64> {
    let mut max = vec![f64::NEG_INFINITY; n_groups];
    for (&v, &g) in values.iter().zip(groups) {
        if v > max[g] {
            max[g] = v;
        }
    }
    let exps: Vec<f64> = values
        .iter()
        .zip(groups)
        .map(|(&v, &g)| (v - max[g]).exp())
        .collect();
    let mut sum = vec![0.0; n_groups];
    for (&e, &g) in exps.iter().zip(groups) {
        sum[g] += e;
    }
    exps.iter().zip(groups).map(|(&e, &g)| e / sum[g]).collect()
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn elu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
