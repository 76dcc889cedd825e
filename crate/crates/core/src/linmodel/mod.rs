//! Regularized linear models over sparse features.
//!
//! * [`ridge`]: weighted ℓ2 least squares with an unpenalized intercept,
//!   closed-form leave-one-out residuals and a one-decomposition λ sweep.
//! * [`cv`]: λ selection by LOOCV or seeded (stratified) k-fold.
//! * [`lasso`]: ℓ1 coordinate descent and fixed-support-size selection.

pub mod cv;
pub mod lasso;
pub mod ridge;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub use cv::{default_grid, select_lambda, CvOptions, CvPolicy, CvReport, ResolvedPolicy};
pub use lasso::{fit_lasso, fit_lasso_with, kkt_violation, lasso_select_k, LassoOptions, LassoSelection};
pub use ridge::{fit_ridge, loocv_errors, RidgeOptions, RidgePath, SolveForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L2,
    L1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub penalty: Penalty,
    /// Hash of the vocabulary the weights index into; empty when unknown.
    pub feature_space_id: String,
    pub task: String,
    pub n_train: usize,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub fn decision(&self, x: &CsrMatrix, row: usize) -> f64 {
        x.row_dot(row, &self.weights) + self.intercept
    }

    pub fn with_space(mut self, feature_space_id: impl Into<String>, task: impl Into<String>) -> Self {
        self.feature_space_id = feature_space_id.into();
        self.task = task.into();
        self
    }

    /// The same model with every weight and the intercept negated.
    pub fn negated(&self) -> Self {
        LinearModel {
            weights: self.weights.iter().map(|w| -w).collect(),
            intercept: -self.intercept,
            ..self.clone()
        }
    }

    pub fn to_doc(&self) -> ModelDoc {
        let weights = match self.penalty {
            Penalty::L2 => WeightsDoc::Dense(self.weights.clone()),
            Penalty::L1 => WeightsDoc::Sparse(
                self.weights
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(j, w)| (j, *w))
                    .collect(),
            ),
        };
        ModelDoc {
            penalty: self.penalty,
            lambda: self.lambda,
            intercept: self.intercept,
            dim: self.weights.len(),
            weights,
            vocab_hash: self.feature_space_id.clone(),
            task: self.task.clone(),
            n_train: self.n_train,
        }
    }

    pub fn from_doc(doc: ModelDoc) -> Result<Self> {
        let weights = match doc.weights {
            // an all-zero l1 model serializes as `[]`, which parses as dense
            WeightsDoc::Dense(w) if w.is_empty() && doc.penalty == Penalty::L1 => vec![0.0; doc.dim],
            WeightsDoc::Dense(w) => {
                if w.len() != doc.dim {
                    return Err(Error::DimensionMismatch {
                        expected: doc.dim,
                        found: w.len(),
                    });
                }
                w
            }
            WeightsDoc::Sparse(pairs) => {
                let mut w = vec![0.0; doc.dim];
                for (j, v) in pairs {
                    *w.get_mut(j).ok_or(Error::DimensionMismatch {
                        expected: doc.dim,
                        found: j + 1,
                    })? = v;
                }
                w
            }
        };
        Ok(LinearModel {
            weights,
            intercept: doc.intercept,
            lambda: doc.lambda,
            penalty: doc.penalty,
            feature_space_id: doc.vocab_hash,
            task: doc.task,
            n_train: doc.n_train,
        })
    }
}

/// Persisted model: dense weights for ℓ2, `(index, value)` pairs for ℓ1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub penalty: Penalty,
    pub lambda: f64,
    pub intercept: f64,
    pub dim: usize,
    pub weights: WeightsDoc,
    pub vocab_hash: String,
    pub task: String,
    #[serde(default)]
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsDoc {
    Dense(Vec<f64>),
    Sparse(Vec<(usize, f64)>),
}

impl Serialize for LinearModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LinearModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = ModelDoc::deserialize(d)?;
        LinearModel::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

/// `ŷ_i = x_i · β + b`
pub fn predict(model: &LinearModel, x: &CsrMatrix) -> Result<Vec<f64>> {
    if x.n_cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.n_cols(),
        });
    }
    Ok(x.mul_vec(&model.weights)
        .into_iter()
        .map(|v| v + model.intercept)
        .collect())
}
