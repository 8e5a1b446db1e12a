//! Dense linear-algebra kernels: vectorization, Kronecker products,
//! commutation matrices, truncated SVD and the Moore–Penrose pseudo-inverse.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, whose storage is column-major, so
//! `vec(M)` is a copy of the backing slice.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_matrix;

pub type DenseMatrix = DMatrix<f64>;

/// Relative tolerance (against the largest singular value) used wherever a
/// numerical rank is inferred.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Largest commutation matrix dimension (`m·n`) that is materialized densely.
pub const COMMUTATION_MATERIALIZE_LIMIT: usize = 10_000;

/// Largest number of entries a Kronecker product may produce.
pub const KRONECKER_ENTRY_LIMIT: u128 = 1 << 31;

/// Stacks the columns of `m` into a single vector.
pub fn vectorize(m: &DenseMatrix) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`] at a fixed shape.
pub fn devectorize(v: &[f64], rows: usize, cols: usize) -> Result<DenseMatrix> {
    if rows.checked_mul(cols) != Some(v.len()) {
        return Err(Error::Dimension(format!(
            "cannot reshape vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DenseMatrix::from_column_slice(rows, cols, v))
}

/// `A ⊗ B`: block `(i, j)` of the result is `A[i,j]·B`.
pub fn kronecker(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let rows = (ar as u128) * (br as u128);
    let cols = (ac as u128) * (bc as u128);
    let entries = rows * cols;
    if entries > KRONECKER_ENTRY_LIMIT {
        return Err(Error::SizeLimit {
            what: "Kronecker product entries",
            size: entries,
            limit: KRONECKER_ENTRY_LIMIT,
        });
    }
    let mut out = DenseMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for l in 0..bc {
                for k in 0..br {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    Ok(out)
}

/// The commutation permutation `K_{m,n}` with `K·vec(A) = vec(Aᵀ)` for every
/// `m×n` matrix `A`, stored as an index map rather than a dense matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commutation {
    pub m: usize,
    pub n: usize,
}

impl Commutation {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument(
                "commutation dimensions must be positive".into(),
            ));
        }
        m.checked_mul(n).ok_or(Error::SizeLimit {
            what: "commutation dimension",
            size: (m as u128) * (n as u128),
            limit: usize::MAX as u128,
        })?;
        Ok(Self { m, n })
    }

    pub fn dim(&self) -> usize {
        self.m * self.n
    }

    /// Source index in `vec(A)` feeding output index `out` of `vec(Aᵀ)`.
    #[inline]
    pub fn source(&self, out: usize) -> usize {
        // out = j + n·i  <-  i + m·j
        let j = out % self.n;
        let i = out / self.n;
        i + self.m * j
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "commutation K_{{{},{}}} applied to vector of length {}",
                self.m,
                self.n,
                v.len()
            )));
        }
        Ok((0..self.dim()).map(|o| v[self.source(o)]).collect())
    }

    /// `K·M`, i.e. a row permutation of `M`.
    pub fn left_mul(&self, mat: &DenseMatrix) -> Result<DenseMatrix> {
        if mat.nrows() != self.dim() {
            return Err(Error::Dimension(format!(
                "commutation of dimension {} times matrix with {} rows",
                self.dim(),
                mat.nrows()
            )));
        }
        Ok(DenseMatrix::from_fn(mat.nrows(), mat.ncols(), |r, c| {
            mat[(self.source(r), c)]
        }))
    }

    /// `M·K`, i.e. a column permutation of `M`.
    pub fn right_mul(&self, mat: &DenseMatrix) -> Result<DenseMatrix> {
        if mat.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "matrix with {} columns times commutation of dimension {}",
                mat.ncols(),
                self.dim()
            )));
        }
        // (M K)[r, s] = Σ_o M[r, o] K[o, s] = M[r, o*] where source(o*) = s.
        let mut out = DenseMatrix::zeros(mat.nrows(), mat.ncols());
        for o in 0..self.dim() {
            let s = self.source(o);
            out.set_column(s, &mat.column(o));
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let d = self.dim();
        if d > COMMUTATION_MATERIALIZE_LIMIT {
            return Err(Error::SizeLimit {
                what: "materialized commutation dimension",
                size: d as u128,
                limit: COMMUTATION_MATERIALIZE_LIMIT as u128,
            });
        }
        let mut k = DenseMatrix::zeros(d, d);
        for o in 0..d {
            k[(o, self.source(o))] = 1.0;
        }
        Ok(k)
    }
}

/// Dense `mn×mn` commutation matrix `K_{m,n}`.
///
/// Dimensions above [`COMMUTATION_MATERIALIZE_LIMIT`] are refused; use
/// [`Commutation`] to apply the permutation without materializing it.
pub fn commutation_matrix(m: usize, n: usize) -> Result<DenseMatrix> {
    Commutation::new(m, n)?.to_dense()
}

/// Rank-`r` singular triplets `M ≈ U·Diag(b)·Vᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSvd {
    /// `p₁×r`, orthonormal columns.
    #[serde(with = "serde_matrix")]
    pub left: DenseMatrix,
    /// Strictly positive, nonincreasing.
    #[serde(with = "serde_matrix::vector")]
    pub values: DVector<f64>,
    /// `p₂×r`, orthonormal columns.
    #[serde(with = "serde_matrix")]
    pub right: DenseMatrix,
    pub tolerance_used: f64,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.values.sum()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut scaled = self.left.clone();
        for (j, s) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right.transpose()
    }

    /// Smallest gap between consecutive retained singular values
    /// (`None` when fewer than two are retained).
    pub fn min_gap(&self) -> Option<f64> {
        self.values
            .as_slice()
            .windows(2)
            .map(|w| w[0] - w[1])
            .min_by(f64::total_cmp)
    }
}

/// Full thin SVD sorted by nonincreasing singular value.
pub(crate) fn sorted_svd(m: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return (
            DenseMatrix::zeros(m.nrows(), 0),
            Vec::new(),
            DenseMatrix::zeros(m.ncols(), 0),
        );
    }
    // nalgebra's bidiagonal SVD loses accuracy on nearly rank-deficient 2×2
    // blocks, so the decomposition is delegated to faer.
    let src = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let Ok(svd) = src.thin_svd() else {
        let nan = |r| DenseMatrix::from_element(r, k, f64::NAN);
        return (nan(m.nrows()), vec![f64::NAN; k], nan(m.ncols()));
    };
    let s = svd.S().column_vector();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let values = order.iter().map(|&i| s[i]).collect();
    let u = DenseMatrix::from_fn(m.nrows(), k, |r, c| svd.U()[(r, order[c])]);
    let v = DenseMatrix::from_fn(m.ncols(), k, |r, c| svd.V()[(r, order[c])]);
    (u, values, v)
}

/// Keeps exactly the singular triplets with `σᵢ > rel_tol·σ₁`.
///
/// An all-zero input yields rank 0 with empty (`p×0`) factors.
pub fn truncated_svd(m: &DenseMatrix, rel_tol: f64) -> Result<TruncatedSvd> {
    if !(0.0..1.0).contains(&rel_tol) {
        return Err(Error::InvalidArgument(format!(
            "rel_tol must lie in [0, 1), got {rel_tol}"
        )));
    }
    check_finite(m, "truncated_svd input")?;
    let (u, s, v) = sorted_svd(m);
    let sigma1 = s.first().copied().unwrap_or(0.0);
    let cutoff = rel_tol * sigma1;
    let r = s.iter().take_while(|&&x| x > cutoff && x > 0.0).count();
    Ok(TruncatedSvd {
        left: u.columns(0, r).into_owned(),
        values: DVector::from_iterator(r, s.into_iter().take(r)),
        right: v.columns(0, r).into_owned(),
        tolerance_used: cutoff,
    })
}

/// Numerical rank with the same relative threshold as [`truncated_svd`].
pub fn numerical_rank(m: &DenseMatrix, rel_tol: f64) -> usize {
    let (_, s, _) = sorted_svd(m);
    let cutoff = rel_tol * s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&x| x > cutoff && x > 0.0).count()
}

/// Moore–Penrose pseudo-inverse through the SVD; singular values at or
/// below `rel_tol·σ₁` are treated as zero.
pub fn pseudo_inverse(m: &DenseMatrix, rel_tol: f64) -> Result<DenseMatrix> {
    let t = truncated_svd(m, rel_tol)?;
    let mut scaled = t.right.clone();
    for (j, s) in t.values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    Ok(scaled * t.left.transpose())
}

/// Largest singular value.
pub fn spectral_norm(m: &DenseMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sorted_svd(m).1.first().copied().unwrap_or(0.0)
}

/// Eigenvalues of the symmetric part of a square matrix, ascending.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub(crate) fn check_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Projector `I − Q·Qᵀ` onto the orthogonal complement of `Q`'s columns.
pub(crate) fn complement_projector(q: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::identity(q.nrows(), q.nrows()) - q * q.transpose()
}
