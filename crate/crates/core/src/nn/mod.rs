//! A small reverse-mode core: each layer has an explicit forward that records what its
//! backward needs, plus Adam and a finite-difference gradient checker.

mod adam;
mod conv;
mod embedding;
pub mod gradcheck;
mod linear;
mod loss;
mod lstm;
mod norm;
pub mod ops;
mod tensor;

pub use adam::{adam_step, clip_grad_norm, Adam, AdamHyper, AdamState};
pub use conv::{conv1d_backward, conv1d_forward, conv1d_out_len, Conv1d};
pub use embedding::{embedding_backward, embedding_forward, Embedding};
pub use gradcheck::{grad_check, GradProbe};
pub use linear::{linear_backward, linear_forward, Linear};
pub use loss::softmax_xent;
pub use lstm::{lstm_cell_backward, lstm_cell_forward, Lstm, LstmState, LstmStepCache};
pub use norm::LayerNorm;
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("index {index} out of range for table of {size} rows")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("non-finite gradient in parameter '{name}'")]
    NonFiniteGrad { name: String },
    #[error("{0}: backward called without a preceding forward")]
    NoCache(&'static str),
}

/// A layer or model owning named parameter tensors.
pub trait Module<T: Real> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.numel());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _| names.push(n.to_string()));
        names
    }
}

/// Visit a child module's parameters under `prefix.`.
pub fn visit_child<T: Real, M: Module<T> + ?Sized>(
    prefix: &str,
    child: &M,
    f: &mut dyn FnMut(&str, &Tensor<T>),
) {
    child.visit_params(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}

pub fn visit_child_mut<T: Real, M: Module<T> + ?Sized>(
    prefix: &str,
    child: &mut M,
    f: &mut dyn FnMut(&str, &mut Tensor<T>),
) {
    child.visit_params_mut(&mut |n, p| f(&format!("{prefix}.{n}"), p));
}
