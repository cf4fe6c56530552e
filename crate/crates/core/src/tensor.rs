//! Dense f64 tensors in row-major layout.
//!
//! `Tensor` is a plain value type: shape, flat data, a `requires_grad` flag
//! and an optional gradient buffer that the tape fills in during a backward
//! pass. All model math runs in 64-bit floats so that finite-difference
//! checks are meaningful at tight tolerances.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Shape does not describe the provided data buffer.
    InvalidShape { shape: Vec<usize>, data_len: usize },
    /// Operand shapes do not conform to the op's rule.
    ShapeMismatch { op: &'static str, detail: String },
    /// A non-finite value was detected while strict mode is on.
    NonFinite { op: &'static str },
    /// `backward` was called on a tensor that is not a scalar.
    NotScalar { numel: usize },
    /// `backward` was called on a tape with no recorded operations.
    EmptyTape,
    /// `backward` was called twice without a new forward pass.
    BackwardTwice,
    /// Cosine similarity received an all-zero vector.
    ZeroNorm,
    /// Cross-entropy label outside the logit range.
    LabelOutOfRange { label: usize, classes: usize },
    /// An index attribute (embedding id, slice bound, axis) is out of range.
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    /// An op attribute has an invalid value (e.g. dropout rate >= 1).
    InvalidAttribute { op: &'static str, detail: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::InvalidShape { shape, data_len } => {
                write!(f, "shape {:?} does not match data length {}", shape, data_len)
            }
            TensorError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in `{}`: {}", op, detail)
            }
            TensorError::NonFinite { op } => {
                write!(f, "non-finite value detected in `{}` (strict mode)", op)
            }
            TensorError::NotScalar { numel } => {
                write!(f, "backward requires a scalar loss, got {} elements", numel)
            }
            TensorError::EmptyTape => write!(f, "backward called on an empty tape"),
            TensorError::BackwardTwice => {
                write!(f, "backward called twice without a new forward pass")
            }
            TensorError::ZeroNorm => write!(f, "cosine similarity of a zero-norm vector"),
            TensorError::LabelOutOfRange { label, classes } => {
                write!(f, "label {} out of range for {} classes", label, classes)
            }
            TensorError::IndexOutOfRange { op, index, bound } => {
                write!(f, "index {} out of range (bound {}) in `{}`", index, bound, op)
            }
            TensorError::InvalidAttribute { op, detail } => {
                write!(f, "invalid attribute for `{}`: {}", op, detail)
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense tensor with optional gradient tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, checking that `shape` describes `data`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape { shape, data_len: data.len() });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    /// A scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    /// A 1-D tensor owning `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data, requires_grad: false, grad: None }
    }

    /// Gaussian-initialized tensor (Box-Muller over the given seeded stream).
    pub fn randn(shape: Vec<usize>, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| mean + std * standard_normal(rng)).collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard normal sample via Box-Muller; deterministic given the stream.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let mut u1: f64 = rng.random();
    while u1 <= f64::MIN_POSITIVE {
        u1 = rng.random();
    }
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Cosine similarity of two flat vectors; errors on a zero-norm input.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, TensorError> {
    if a.len() != b.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cosine_similarity",
            detail: format!("lengths {} vs {}", a.len(), b.len()),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(TensorError::ZeroNorm);
    }
    if a == b {
        // cos(x, x) is exactly 1; don't let rounding say otherwise.
        return Ok(1.0);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}
