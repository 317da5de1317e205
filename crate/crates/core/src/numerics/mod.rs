//! Dense-tensor reverse-mode automatic differentiation, optimizers, and
//! gradient checking. Everything runs on the CPU in f64; checkpoints may
//! be stored in f32 (see the sequence model module), which is the only
//! place precision is reduced.

mod gradcheck;
mod optim;
mod tape;

pub use gradcheck::grad_check;
pub use optim::{AdamConfig, AdamState, LrSchedule, ParamAverager};
pub use tape::{Tape, Var, IGNORE_TARGET};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
}

/// Row-major dense tensor. Most operations work on rank-2 shapes
/// `[rows, cols]`; rank-1 data lives in `[1, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not hold {} values",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Tensor {
        Tensor {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn row(values: &[f64]) -> Tensor {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// Uniform(-bound, bound) initialization.
    pub fn uniform_init(rng: &mut crate::rng::Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| rng.gen_uniform(-bound, bound))
            .collect();
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Normal(0, std) initialization.
    pub fn normal_init(rng: &mut crate::rng::Rng, rows: usize, cols: usize, std: f64) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_normal() * std).collect();
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan() || v.is_infinite())
    }
}
