//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records operations against a borrowed [`ParamSet`]; calling
//! [`Graph::backward`] on a scalar node returns [`Gradients`] which the caller
//! adds into the parameter set before an [`AdamState::step`].
//!
//! ```
//! use ctxprobe::diffcore::{Graph, ParamSet, Tensor};
//!
//! let mut params = ParamSet::<f64>::new(0);
//! let w = params.add_tensor("w", Tensor::row_vector(vec![2.0, -1.0]), true).unwrap();
//! let mut g = Graph::new(&params);
//! let wv = g.param(w);
//! let sq = g.mul(wv, wv).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[4.0, -2.0]);
//! ```

mod adam;
mod cells;
mod check;
mod graph;
mod params;
mod store;
mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use cells::{gru_cell, lstm_cell, Dense, GruParams, LstmParams};
pub use check::{finite_diff_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{Graph, Var};
pub use params::{Gradients, Param, ParamId, ParamSet};
pub use store::{ParamRecord, StoredParams};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("loss must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{0}` missing")]
    MissingParam(String),
}
