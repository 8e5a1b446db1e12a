//! Unregularized least-squares fit and the adaptive weight matrices built
//! from its singular value decomposition.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::TraceDataset;
use crate::error::{Error, Result};
use crate::linalg::{devectorize, pseudo_inverse, sorted_svd, DenseMatrix, DEFAULT_RANK_TOL};
use crate::serde_matrix;

pub const DEFAULT_GAMMA: f64 = 1.0;

/// Symmetric positive definite weights `W₁ = U·Diag(s)^{-γ}·Uᵀ`,
/// `W₂ = V·Diag(s)^{-γ}·Vᵀ` and their inverses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPair {
    #[serde(with = "serde_matrix")]
    pub w1: DenseMatrix,
    #[serde(with = "serde_matrix")]
    pub w2: DenseMatrix,
    #[serde(with = "serde_matrix")]
    pub w1_inv: DenseMatrix,
    #[serde(with = "serde_matrix")]
    pub w2_inv: DenseMatrix,
    pub gamma: f64,
    #[serde(with = "serde_matrix::vector")]
    pub padded_spectrum_1: DVector<f64>,
    #[serde(with = "serde_matrix::vector")]
    pub padded_spectrum_2: DVector<f64>,
}

impl WeightPair {
    /// `W₁ = I`, `W₂ = I`: plain nuclear-norm regularization.
    pub fn identity(p1: usize, p2: usize) -> Self {
        Self {
            w1: DenseMatrix::identity(p1, p1),
            w2: DenseMatrix::identity(p2, p2),
            w1_inv: DenseMatrix::identity(p1, p1),
            w2_inv: DenseMatrix::identity(p2, p2),
            gamma: 0.0,
            padded_spectrum_1: DVector::from_element(p1, 1.0),
            padded_spectrum_2: DVector::from_element(p2, 1.0),
        }
    }

    pub fn p1(&self) -> usize {
        self.w1.nrows()
    }

    pub fn p2(&self) -> usize {
        self.w2.nrows()
    }

    /// The pair with weights and inverses exchanged.
    pub fn inverted(&self) -> Self {
        Self {
            w1: self.w1_inv.clone(),
            w2: self.w2_inv.clone(),
            w1_inv: self.w1.clone(),
            w2_inv: self.w2.clone(),
            gamma: -self.gamma,
            padded_spectrum_1: self.padded_spectrum_1.map(f64::recip),
            padded_spectrum_2: self.padded_spectrum_2.map(f64::recip),
        }
    }

    /// `W₁·B·W₂`.
    pub fn to_weighted(&self, b: &DenseMatrix) -> DenseMatrix {
        &self.w1 * b * &self.w2
    }

    /// `W₁⁻¹·C·W₂⁻¹`.
    pub fn from_weighted(&self, c: &DenseMatrix) -> DenseMatrix {
        &self.w1_inv * c * &self.w2_inv
    }

    fn check_shape(&self, p1: usize, p2: usize) -> Result<()> {
        if self.p1() != p1 || self.p2() != p2 {
            return Err(Error::Dimension(format!(
                "weights are {}x{} / {}x{} but data is {p1}x{p2}",
                self.p1(),
                self.p1(),
                self.p2(),
                self.p2()
            )));
        }
        Ok(())
    }
}

/// Minimum-Frobenius-norm minimizer of `(1/2n)·Σ(y_i − ⟨X_i,B⟩)²`.
///
/// Uses the SVD pseudo-inverse of the design, which yields the same
/// min-norm point as the pseudo-inverse of the Gram matrix without squaring
/// the condition number.
pub fn fit_least_squares(data: &TraceDataset) -> Result<DenseMatrix> {
    let pinv = pseudo_inverse(data.design(), DEFAULT_RANK_TOL)?;
    let beta = pinv * data.responses();
    devectorize(beta.as_slice(), data.p1(), data.p2())
}

/// Extends an orthonormal `p×k` basis to a full orthonormal basis of `ℝᵖ`
/// by Gram–Schmidt against `e₁, …, e_p` in order.
fn complete_basis(q: &DenseMatrix) -> DenseMatrix {
    let p = q.nrows();
    let mut cols: Vec<DVector<f64>> = q.column_iter().map(|c| c.into_owned()).collect();
    let mut candidate = 0;
    while cols.len() < p && candidate < p {
        let mut v = DVector::zeros(p);
        v[candidate] = 1.0;
        candidate += 1;
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&v);
                v.axpy(-proj, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            cols.push(v / norm);
        }
    }
    DenseMatrix::from_columns(&cols)
}

fn spectral_weight(basis: &DenseMatrix, spectrum: &DVector<f64>, exponent: f64) -> DenseMatrix {
    let mut scaled = basis.clone();
    for (j, s) in spectrum.iter().enumerate() {
        scaled.column_mut(j).scale_mut(s.powf(exponent));
    }
    let w = scaled * basis.transpose();
    (&w + w.transpose()) * 0.5
}

/// Builds `W₁, W₂` from the least-squares coefficient matrix.
///
/// Singular values below `n^{-1/2}` are floored at `n^{-1/2}`, and the
/// spectrum is padded with `n^{-1/2}` to length `p₁` (for `W₁`) and `p₂`
/// (for `W₂`).
pub fn build_weights(b_ls: &DenseMatrix, n: usize, gamma: f64) -> Result<WeightPair> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    crate::linalg::check_finite(b_ls, "least-squares coefficients")?;
    let (p1, p2) = b_ls.shape();
    let floor = (n as f64).powf(-0.5);
    let (u, s, v) = sorted_svd(b_ls);
    let s: Vec<f64> = s.into_iter().map(|x| x.max(floor)).collect();
    let pad = |len: usize| {
        DVector::from_iterator(
            len,
            s.iter().copied().chain(std::iter::repeat(floor)).take(len),
        )
    };
    let s1 = pad(p1);
    let s2 = pad(p2);
    if s1
        .iter()
        .chain(s2.iter())
        .any(|x| !(x.is_finite() && *x > 0.0))
    {
        return Err(Error::CorruptWeights(
            "padded spectrum has a nonpositive or non-finite entry".into(),
        ));
    }
    let u = complete_basis(&u);
    let v = complete_basis(&v);
    Ok(WeightPair {
        w1: spectral_weight(&u, &s1, -gamma),
        w2: spectral_weight(&v, &s2, -gamma),
        w1_inv: spectral_weight(&u, &s1, gamma),
        w2_inv: spectral_weight(&v, &s2, gamma),
        gamma,
        padded_spectrum_1: s1,
        padded_spectrum_2: s2,
    })
}

/// Least-squares fit followed by [`build_weights`].
pub fn weights_for(data: &TraceDataset, gamma: f64) -> Result<WeightPair> {
    build_weights(&fit_least_squares(data)?, data.n(), gamma)
}

/// Dataset with predictors `X̃_i = W₁⁻¹·X_i·W₂⁻¹`, so that
/// `⟨X̃_i, W₁BW₂⟩ = ⟨X_i, B⟩`.
pub fn transform_design(data: &TraceDataset, w: &WeightPair) -> Result<TraceDataset> {
    w.check_shape(data.p1(), data.p2())?;
    let (p1, p2) = (data.p1(), data.p2());
    let mut design = DenseMatrix::zeros(data.n(), p1 * p2);
    for i in 0..data.n() {
        let xt = w.from_weighted(&data.predictor(i));
        for (k, v) in xt.as_slice().iter().enumerate() {
            design[(i, k)] = *v;
        }
    }
    TraceDataset::from_design(p1, p2, design, data.responses().clone())
}
