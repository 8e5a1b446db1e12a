use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{devectorize, DenseMatrix};

/// `n` samples of matrix predictors `X_i ∈ ℝ^{p₁×p₂}` with scalar responses.
///
/// The vectorized design (row `i` = `vec(X_i)ᵀ`) is the canonical storage;
/// individual predictors are reconstructed on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    p1: usize,
    p2: usize,
    design: DenseMatrix,
    responses: DVector<f64>,
}

/// Header of a dataset file, also used to describe shapes in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub p1: usize,
    pub p2: usize,
    pub n: usize,
}

impl TraceDataset {
    /// Builds a dataset from a design whose row `i` is `vec(X_i)ᵀ`.
    pub fn from_design(
        p1: usize,
        p2: usize,
        design: DenseMatrix,
        responses: DVector<f64>,
    ) -> Result<Self> {
        if p1 == 0 || p2 == 0 {
            return Err(Error::InvalidArgument("p1 and p2 must be positive".into()));
        }
        if design.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "dataset needs at least one sample".into(),
            ));
        }
        if design.ncols() != p1 * p2 {
            return Err(Error::Dimension(format!(
                "design has {} columns, expected p1*p2 = {}",
                design.ncols(),
                p1 * p2
            )));
        }
        if design.nrows() != responses.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows but {} responses",
                design.nrows(),
                responses.len()
            )));
        }
        if !design.iter().chain(responses.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Self {
            p1,
            p2,
            design,
            responses,
        })
    }

    pub fn from_predictors(predictors: &[DenseMatrix], responses: &[f64]) -> Result<Self> {
        let first = predictors
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset needs at least one sample".into()))?;
        let (p1, p2) = first.shape();
        let mut design = DenseMatrix::zeros(predictors.len(), p1 * p2);
        for (i, x) in predictors.iter().enumerate() {
            if x.shape() != (p1, p2) {
                return Err(Error::Dimension(format!(
                    "predictor {i} has shape {:?}, expected ({p1}, {p2})",
                    x.shape()
                )));
            }
            for (k, v) in x.as_slice().iter().enumerate() {
                design[(i, k)] = *v;
            }
        }
        Self::from_design(p1, p2, design, DVector::from_column_slice(responses))
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn p2(&self) -> usize {
        self.p2
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn dim(&self) -> usize {
        self.p1 * self.p2
    }

    pub fn shape(&self) -> Shape {
        Shape {
            p1: self.p1,
            p2: self.p2,
            n: self.n(),
        }
    }

    pub fn design(&self) -> &DenseMatrix {
        &self.design
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn predictor(&self, i: usize) -> DenseMatrix {
        let row: Vec<f64> = self.design.row(i).iter().copied().collect();
        devectorize(&row, self.p1, self.p2).expect("row length is p1*p2")
    }

    /// `(1/n)·Σ vec(X_k)vec(X_k)ᵀ`.
    pub fn gram(&self) -> DenseMatrix {
        self.design.tr_mul(&self.design) / self.n() as f64
    }

    /// `(1/n)·Σ y_k vec(X_k)`.
    pub fn moment(&self) -> DVector<f64> {
        self.design.tr_mul(&self.responses) / self.n() as f64
    }

    /// Fitted values `⟨X_i, B⟩`.
    pub fn predict(&self, b: &DenseMatrix) -> DVector<f64> {
        &self.design * DVector::from_column_slice(b.as_slice())
    }

    pub fn residuals(&self, b: &DenseMatrix) -> DVector<f64> {
        &self.responses - self.predict(b)
    }

    pub fn with_responses(&self, responses: DVector<f64>) -> Result<Self> {
        Self::from_design(self.p1, self.p2, self.design.clone(), responses)
    }

    /// Sub-dataset with the given sample indices, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let design = self.design.select_rows(idx.iter());
        let responses = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.responses[i]));
        Self::from_design(self.p1, self.p2, design, responses)
    }
}
