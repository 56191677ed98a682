use serde::{Deserialize, Serialize};

use super::{DiffError, ParamSet, Tensor};
use crate::scalar::Scalar;

/// One parameter as written to disk: row-major `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub values: Vec<f64>,
}

/// Serializable snapshot of a [`ParamSet`] in registration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredParams {
    pub rng_seed: u64,
    pub params: Vec<ParamRecord>,
}

impl StoredParams {
    pub fn capture<T: Scalar>(params: &ParamSet<T>) -> Self {
        Self {
            rng_seed: params.rng_seed(),
            params: params
                .iter()
                .map(|(_, p)| ParamRecord {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    trainable: p.trainable,
                    values: p.value.data().iter().map(|v| v.to_f64_lossy()).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a standalone parameter set.
    pub fn to_param_set<T: Scalar>(&self) -> Result<ParamSet<T>, DiffError> {
        let mut out = ParamSet::new(self.rng_seed);
        for r in &self.params {
            if r.values.len() != r.rows * r.cols {
                return Err(DiffError::Shape {
                    op: "stored_params",
                    left: (r.rows, r.cols),
                    right: (r.values.len(), 1),
                });
            }
            let data = r.values.iter().map(|&v| T::lit(v)).collect();
            out.add_tensor(
                r.name.clone(),
                Tensor::from_vec(r.rows, r.cols, data),
                r.trainable,
            )?;
        }
        Ok(out)
    }

    /// Copies stored values into an already-registered set, matching by name.
    pub fn restore_into<T: Scalar>(&self, params: &mut ParamSet<T>) -> Result<(), DiffError> {
        let stored: ParamSet<T> = self.to_param_set()?;
        params.load_values_from(&stored)
    }
}
