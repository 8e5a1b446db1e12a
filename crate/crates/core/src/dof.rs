//! Degrees-of-freedom estimate for an adaptive nuclear-norm fit.
//!
//! ```text
//! df = (1/n)·Σ_k vec(X_k)ᵀ·M_r⁺·vec(X_k),   M_r = Gram + λ·M⁽¹⁾ + M⁽²⁾
//! ```
//!
//! where `Gram = (1/n)·Σ vec(X_k)vec(X_k)ᵀ` and `M⁽¹⁾`, `M⁽²⁾` are built from
//! the weighted singular triplets of `W₁B̂W₂`. Everything is assembled densely
//! as `p₁p₂×p₁p₂` matrices.

use serde::{Deserialize, Serialize};

use crate::dataset::TraceDataset;
use crate::error::{Error, Result};
use crate::linalg::{
    complement_projector, kronecker, numerical_rank, sorted_svd, Commutation, DenseMatrix,
    TruncatedSvd,
};
use crate::serde_matrix;
use crate::solver::FitResult;
use crate::weights::WeightPair;

/// Relative cutoff for the pseudo-inverse of `M_r` and the rank of the Gram
/// matrix.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Largest supported `p₁·p₂`.
pub const DEFAULT_MAX_DIM: usize = 2500;

/// Retained weighted singular values closer than this are flagged.
pub const SINGULAR_GAP_FLAG: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseBranch {
    FullRankInverse,
    PseudoInverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofOptions {
    pub pinv_tol: f64,
    pub max_dim: usize,
}

impl Default for DofOptions {
    fn default() -> Self {
        Self {
            pinv_tol: DEFAULT_PINV_TOL,
            max_dim: DEFAULT_MAX_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofEstimate {
    pub df: f64,
    pub m_r_rank: usize,
    pub m_r_symmetric: bool,
    pub branch: InverseBranch,
    pub gram_rank: usize,
    /// `σ_max/σ_min` of `M_r`; infinite when it is singular.
    pub condition_estimate: f64,
    /// `‖M_r − M_rᵀ‖_F / ‖M_r‖_F`.
    pub asymmetry: f64,
    pub fit_rank: usize,
    /// Some pair of retained weighted singular values is closer than
    /// [`SINGULAR_GAP_FLAG`].
    pub repeated_singular_values: bool,
}

/// Dense blocks that make up `M_r` for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofWorkspace {
    #[serde(with = "serde_matrix")]
    pub gram: DenseMatrix,
    #[serde(with = "serde_matrix")]
    pub m1: DenseMatrix,
    #[serde(with = "serde_matrix")]
    pub m2: DenseMatrix,
    #[serde(with = "serde_matrix")]
    pub e_lambda: DenseMatrix,
    /// `(W₁B̂W₂)⁺ = V_r·Diag(b_r)⁻¹·U_rᵀ`.
    #[serde(with = "serde_matrix")]
    pub pinv_weighted_b: DenseMatrix,
}

fn check_fit(data: &TraceDataset, fit: &FitResult) -> Result<()> {
    if fit.residuals.len() != data.n() || fit.b_hat.shape() != (data.p1(), data.p2()) {
        return Err(Error::Dimension(format!(
            "fit with {} residuals and coefficient {:?} does not match data ({} x {} x {})",
            fit.residuals.len(),
            fit.b_hat.shape(),
            data.p1(),
            data.p2(),
            data.n()
        )));
    }
    Ok(())
}

fn check_dim(data: &TraceDataset, max_dim: usize) -> Result<()> {
    if data.dim() > max_dim {
        return Err(Error::SizeLimit {
            what: "p1*p2 for dense degrees-of-freedom assembly",
            size: data.dim() as u128,
            limit: max_dim as u128,
        });
    }
    Ok(())
}

/// `E_λ = (1/n)·Σ residual_i·X_i` from the residuals stored in the fit.
pub fn residual_matrix(data: &TraceDataset, fit: &FitResult) -> Result<DenseMatrix> {
    check_fit(data, fit)?;
    let e = data.design().tr_mul(&fit.residuals) / data.n() as f64;
    Ok(DenseMatrix::from_column_slice(
        data.p1(),
        data.p2(),
        e.as_slice(),
    ))
}

/// `M·Diag(b)⁻¹·Mᵀ`-style product `A·Diag(1/b)·Bᵀ`.
fn inverse_scaled(a: &DenseMatrix, b: &[f64], c: &DenseMatrix) -> DenseMatrix {
    let mut scaled = a.clone();
    for (j, s) in b.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    scaled * c.transpose()
}

/// `[W₂V_r·Diag(b_r)⁻¹·V_rᵀW₂] ⊗ W₁² + W₂² ⊗ [W₁U_r·Diag(b_r)⁻¹·U_rᵀW₁]`;
/// zero for a rank-0 fit.
pub fn m1_matrix(w: &WeightPair, svd: &TruncatedSvd) -> Result<DenseMatrix> {
    let (p1, p2) = (w.p1(), w.p2());
    if svd.rank() == 0 {
        return Ok(DenseMatrix::zeros(p1 * p2, p1 * p2));
    }
    if svd.left.nrows() != p1 || svd.right.nrows() != p2 {
        return Err(Error::Dimension(
            "singular vectors do not match the weights".into(),
        ));
    }
    let b = svd.values.as_slice();
    let wv = &w.w2 * &svd.right;
    let wu = &w.w1 * &svd.left;
    let right_block = inverse_scaled(&wv, b, &wv);
    let left_block = inverse_scaled(&wu, b, &wu);
    let w1_sq = &w.w1 * &w.w1;
    let w2_sq = &w.w2 * &w.w2;
    Ok(kronecker(&right_block, &w1_sq)? + kronecker(&w2_sq, &left_block)?)
}

/// The five summands of `M⁽²⁾`, in order:
///
/// ```text
/// −(I ⊗ W₁P_U⊥W₁⁻¹)·Gram·(W₂⁻¹P_V W₂ ⊗ I)
/// −(W₂P_V⊥W₂⁻¹ ⊗ I)·Gram·(I ⊗ W₁⁻¹P_U W₁)
/// −(W₂P_V⊥W₂⁻¹ ⊗ I)·Gram·(W₂⁻¹P_V W₂ ⊗ W₁⁻¹P_U W₁)
/// −λ·(E_λᵀW₁⁻¹ ⊗ W₁)·(I + K_{p₁,p₁})·(C⁺ᵀW₂ ⊗ W₁)
/// −λ·(W₂ ⊗ E_λW₂⁻¹)·(I + K_{p₂,p₂})·(W₂ ⊗ C⁺W₁)
/// ```
///
/// with `P_U = U_rU_rᵀ`, `P_V = V_rV_rᵀ`, `P⊥ = I − P` and `C⁺ = V_r·Diag(b_r)⁻¹·U_rᵀ`.
pub fn m2_terms(
    data: &TraceDataset,
    w: &WeightPair,
    fit: &FitResult,
    lambda: f64,
) -> Result<[DenseMatrix; 5]> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let (p1, p2) = (data.p1(), data.p2());
    let dim = p1 * p2;
    let svd = &fit.weighted_svd;
    if svd.rank() == 0 {
        return Ok(std::array::from_fn(|_| DenseMatrix::zeros(dim, dim)));
    }
    if !fit.converged {
        return Err(Error::NotConverged {
            lambda: fit.lambda,
            residual: fit.optimality_residual,
        });
    }
    let gram = data.gram();
    let e = residual_matrix(data, fit)?;
    let (i1, i2) = (DenseMatrix::identity(p1, p1), DenseMatrix::identity(p2, p2));
    let (u, v) = (&svd.left, &svd.right);
    let pu = u * u.transpose();
    let pv = v * v.transpose();
    let pu_perp = complement_projector(u);
    let pv_perp = complement_projector(v);
    let cplus = inverse_scaled(v, svd.values.as_slice(), u);

    let a_u_perp = kronecker(&i2, &(&w.w1 * &pu_perp * &w.w1_inv))?;
    let a_v_perp = kronecker(&(&w.w2 * &pv_perp * &w.w2_inv), &i1)?;
    let pv_sim = &w.w2_inv * &pv * &w.w2;
    let pu_sim = &w.w1_inv * &pu * &w.w1;

    let t1 = -(a_u_perp * &gram * kronecker(&pv_sim, &i1)?);
    let t2 = -(&a_v_perp * &gram * kronecker(&i2, &pu_sim)?);
    let t3 = -(&a_v_perp * &gram * kronecker(&pv_sim, &pu_sim)?);

    let sym1 =
        |m: DenseMatrix| -> Result<DenseMatrix> { Ok(Commutation::new(p1, p1)?.left_mul(&m)? + m) };
    let sym2 =
        |m: DenseMatrix| -> Result<DenseMatrix> { Ok(Commutation::new(p2, p2)?.left_mul(&m)? + m) };
    let t4 = kronecker(&(e.transpose() * &w.w1_inv), &w.w1)?
        * sym1(kronecker(&(cplus.transpose() * &w.w2), &w.w1)?)?
        * -lambda;
    let t5 = kronecker(&w.w2, &(&e * &w.w2_inv))?
        * sym2(kronecker(&w.w2, &(&cplus * &w.w1))?)?
        * -lambda;
    Ok([t1, t2, t3, t4, t5])
}

/// Sum of [`m2_terms`]; zero for a rank-0 fit, an error for an unconverged
/// one.
pub fn m2_matrix(
    data: &TraceDataset,
    w: &WeightPair,
    fit: &FitResult,
    lambda: f64,
) -> Result<DenseMatrix> {
    let [t1, t2, t3, t4, t5] = m2_terms(data, w, fit, lambda)?;
    Ok(t1 + t2 + t3 + t4 + t5)
}

impl DofWorkspace {
    pub fn assemble(
        data: &TraceDataset,
        w: &WeightPair,
        fit: &FitResult,
        lambda: f64,
        opts: &DofOptions,
    ) -> Result<Self> {
        check_fit(data, fit)?;
        check_dim(data, opts.max_dim)?;
        let dim = data.dim();
        let svd = &fit.weighted_svd;
        let regularized = lambda > 0.0 && svd.rank() > 0;
        let (m1, m2) = if regularized {
            (m1_matrix(w, svd)?, m2_matrix(data, w, fit, lambda)?)
        } else {
            (DenseMatrix::zeros(dim, dim), DenseMatrix::zeros(dim, dim))
        };
        Ok(Self {
            gram: data.gram(),
            m1,
            m2,
            e_lambda: residual_matrix(data, fit)?,
            pinv_weighted_b: inverse_scaled(&svd.right, svd.values.as_slice(), &svd.left),
        })
    }
}

/// `Gram + λ·M⁽¹⁾ + M⁽²⁾`; `M⁽²⁾` already carries its own `λ` factors.
pub fn m_r_matrix(ws: &DofWorkspace, lambda: f64) -> DenseMatrix {
    &ws.gram + &ws.m1 * lambda + &ws.m2
}

pub fn degrees_of_freedom(
    data: &TraceDataset,
    w: &WeightPair,
    fit: &FitResult,
    lambda: f64,
) -> Result<DofEstimate> {
    degrees_of_freedom_with(data, w, fit, lambda, &DofOptions::default())
}

/// Degrees of freedom of the fit at `λ`.
///
/// `λ = 0` and rank-0 fits short-circuit to `rank(Gram)`. Otherwise `M_r` is
/// inverted through its SVD pseudo-inverse, which coincides with the inverse
/// when `M_r` is numerically full rank.
pub fn degrees_of_freedom_with(
    data: &TraceDataset,
    w: &WeightPair,
    fit: &FitResult,
    lambda: f64,
    opts: &DofOptions,
) -> Result<DofEstimate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    if !(opts.pinv_tol > 0.0 && opts.pinv_tol < 1.0) {
        return Err(Error::InvalidArgument("pinv_tol must lie in (0, 1)".into()));
    }
    check_fit(data, fit)?;
    check_dim(data, opts.max_dim)?;
    let gram = data.gram();
    let gram_rank = numerical_rank(&gram, opts.pinv_tol);
    let fit_rank = fit.weighted_svd.rank();
    let repeated_singular_values = fit
        .weighted_svd
        .min_gap()
        .is_some_and(|g| g < SINGULAR_GAP_FLAG);

    if lambda == 0.0 || fit_rank == 0 {
        let (_, s, _) = sorted_svd(&gram);
        return Ok(DofEstimate {
            df: gram_rank as f64,
            m_r_rank: gram_rank,
            m_r_symmetric: true,
            branch: branch_for(gram_rank, data.dim()),
            gram_rank,
            condition_estimate: condition(&s),
            asymmetry: 0.0,
            fit_rank,
            repeated_singular_values,
        });
    }

    let ws = DofWorkspace::assemble(data, w, fit, lambda, opts)?;
    let m_r = m_r_matrix(&ws, lambda);
    let norm = m_r.norm();
    let asymmetry = if norm > 0.0 {
        (&m_r - m_r.transpose()).norm() / norm
    } else {
        0.0
    };
    let (u, s, v) = sorted_svd(&m_r);
    let cutoff = opts.pinv_tol * s.first().copied().unwrap_or(0.0);
    let kept = s.iter().take_while(|&&x| x > cutoff && x > 0.0).count();
    // trace(Gram·V·Σ⁻¹·Uᵀ) = Σ_j (Uᵀ·Gram·V)_jj / σ_j
    let projected = u.columns(0, kept).transpose() * &gram * v.columns(0, kept);
    let df = (0..kept).map(|j| projected[(j, j)] / s[j]).sum();
    Ok(DofEstimate {
        df,
        m_r_rank: kept,
        m_r_symmetric: asymmetry <= SYMMETRY_TOL,
        branch: branch_for(kept, data.dim()),
        gram_rank,
        condition_estimate: condition(&s),
        asymmetry,
        fit_rank,
        repeated_singular_values,
    })
}

fn branch_for(rank: usize, dim: usize) -> InverseBranch {
    if rank == dim {
        InverseBranch::FullRankInverse
    } else {
        InverseBranch::PseudoInverse
    }
}

fn condition(s: &[f64]) -> f64 {
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{
        pseudo_inverse, symmetric_eigenvalues, truncated_svd, vectorize, DEFAULT_RANK_TOL,
    };
    use crate::solver::{lambda_max, solve, SolverOptions};
    use crate::testutil::{gaussian, rng};
    use crate::weights::weights_for;
    use nalgebra::DVector;

    fn random_data(seed: u64, p1: usize, p2: usize, n: usize) -> TraceDataset {
        let mut r = rng(seed);
        let design = gaussian(&mut r, n, p1 * p2);
        let b = gaussian(&mut r, p1, 1) * gaussian(&mut r, 1, p2);
        let noise = gaussian(&mut r, n, 1) * 0.1;
        let y = &design * vectorize(&b) + noise.column(0);
        TraceDataset::from_design(p1, p2, design, y).unwrap()
    }

    fn mid_fit(data: &TraceDataset, w: &WeightPair) -> FitResult {
        let lam = 0.618f64.powi(4) * lambda_max(data, w).unwrap();
        let opts = SolverOptions {
            kkt_tolerance: 1e-10,
            max_iterations: 200_000,
            ..SolverOptions::default()
        };
        let fit = solve(data, w, lam, &opts).unwrap();
        assert!(fit.converged && fit.rank >= 1);
        fit
    }

    /// Kronecker product from its entrywise definition.
    fn kron_naive(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let (br, bc) = b.shape();
        DenseMatrix::from_fn(a.nrows() * br, a.ncols() * bc, |r, c| {
            a[(r / br, c / bc)] * b[(r % br, c % bc)]
        })
    }

    /// `K_{p,p} = Σ_{i,j} E_ij ⊗ E_ji`.
    fn commutation_naive(p: usize) -> DenseMatrix {
        let mut k = DenseMatrix::zeros(p * p, p * p);
        for i in 0..p {
            for j in 0..p {
                let mut eij = DenseMatrix::zeros(p, p);
                eij[(i, j)] = 1.0;
                k += kron_naive(&eij, &eij.transpose());
            }
        }
        k
    }

    #[test]
    fn residual_matrix_cases() {
        let data = random_data(1, 2, 3, 10);
        let w = WeightPair::identity(2, 3);
        let fit = solve(&data, &w, 0.05, &SolverOptions::default()).unwrap();
        let e = residual_matrix(&data, &fit).unwrap();
        for k in 0..6 {
            let expect = data.design().column(k).dot(&fit.residuals) / 10.0;
            assert!((vectorize(&e)[k] - expect).abs() < 1e-14);
        }

        let x = DenseMatrix::from_element(2, 2, 1.0);
        let single = TraceDataset::from_predictors(&[x], &[2.0]).unwrap();
        let w = WeightPair::identity(2, 2);
        let fit = solve(&single, &w, 10.0, &SolverOptions::default()).unwrap();
        assert_eq!(fit.rank, 0);
        let e = residual_matrix(&single, &fit).unwrap();
        assert!((e - DenseMatrix::from_element(2, 2, 2.0)).amax() < 1e-15);
    }

    #[test]
    fn m1_identity_spectrum_is_twice_identity() {
        let w = WeightPair::identity(3, 3);
        let svd = truncated_svd(&DenseMatrix::identity(3, 3), DEFAULT_RANK_TOL).unwrap();
        let m1 = m1_matrix(&w, &svd).unwrap();
        assert!((m1 - DenseMatrix::identity(9, 9) * 2.0).amax() < 1e-12);
    }

    #[test]
    fn m1_rank_zero_and_psd() {
        let w = WeightPair::identity(2, 3);
        let svd = truncated_svd(&DenseMatrix::zeros(2, 3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(m1_matrix(&w, &svd).unwrap(), DenseMatrix::zeros(6, 6));

        for seed in 0..5 {
            let data = random_data(seed, 3, 4, 60);
            let w = weights_for(&data, 1.0).unwrap();
            let fit = mid_fit(&data, &w);
            let m1 = m1_matrix(&w, &fit.weighted_svd).unwrap();
            assert!((&m1 - m1.transpose()).amax() <= 1e-8 * m1.amax());
            assert!(symmetric_eigenvalues(&m1)[0] >= -1e-8 * m1.amax().max(1.0));
        }
    }

    #[test]
    fn m2_vanishes_for_full_rank_exact_fit() {
        // Square full-rank weighted fit with zero residuals.
        let mut r = rng(4);
        let design = gaussian(&mut r, 12, 4);
        let b = DenseMatrix::from_row_slice(2, 2, &[3.0, 1.0, -1.0, 2.0]);
        let y = &design * vectorize(&b);
        let data = TraceDataset::from_design(2, 2, design, y).unwrap();
        let w = WeightPair::identity(2, 2);
        let fit = FitResult {
            lambda: 0.1,
            weighted_svd: truncated_svd(&b, DEFAULT_RANK_TOL).unwrap(),
            rank: 2,
            residuals: DVector::zeros(12),
            objective: 0.0,
            optimality_residual: 0.0,
            iterations: 0,
            converged: true,
            b_hat: b,
        };
        let m2 = m2_matrix(&data, &w, &fit, 0.1).unwrap();
        assert!(m2.amax() < 1e-12);
    }

    #[test]
    fn m2_rejects_unconverged_and_zeroes_rank_zero() {
        let data = random_data(5, 2, 2, 20);
        let w = WeightPair::identity(2, 2);
        let mut fit = solve(&data, &w, 0.05, &SolverOptions::default()).unwrap();
        assert!(fit.rank > 0);
        fit.converged = false;
        assert!(matches!(
            m2_matrix(&data, &w, &fit, 0.05),
            Err(Error::NotConverged { .. })
        ));
        let top = solve(&data, &w, 1e3, &SolverOptions::default()).unwrap();
        assert_eq!(
            m2_matrix(&data, &w, &top, 1e3).unwrap(),
            DenseMatrix::zeros(4, 4)
        );
    }

    #[test]
    fn m2_terms_match_independent_assembly() {
        let data = random_data(6, 2, 2, 30);
        let w = weights_for(&data, 1.0).unwrap();
        let fit = mid_fit(&data, &w);
        let lam = fit.lambda;
        let terms = m2_terms(&data, &w, &fit, lam).unwrap();

        let gram = data.design().transpose() * data.design() / 30.0;
        let res = data.responses() - data.design() * vectorize(&fit.b_hat);
        let e = DenseMatrix::from_column_slice(
            2,
            2,
            (data.design().transpose() * res / 30.0).as_slice(),
        );
        let (u, v) = (&fit.weighted_svd.left, &fit.weighted_svd.right);
        let i = DenseMatrix::identity(2, 2);
        let w1i = w.w1.clone().try_inverse().unwrap();
        let w2i = w.w2.clone().try_inverse().unwrap();
        let pu = u * u.transpose();
        let pv = v * v.transpose();
        let c = &w.w1 * &fit.b_hat * &w.w2;
        let cp = pseudo_inverse(&c, 1e-8).unwrap();
        let ik = DenseMatrix::identity(4, 4) + commutation_naive(2);

        let expect = [
            -(kron_naive(&i, &(&w.w1 * (&i - &pu) * &w1i))
                * &gram
                * kron_naive(&(&w2i * &pv * &w.w2), &i)),
            -(kron_naive(&(&w.w2 * (&i - &pv) * &w2i), &i)
                * &gram
                * kron_naive(&i, &(&w1i * &pu * &w.w1))),
            -(kron_naive(&(&w.w2 * (&i - &pv) * &w2i), &i)
                * &gram
                * kron_naive(&(&w2i * &pv * &w.w2), &(&w1i * &pu * &w.w1))),
            -(kron_naive(&(e.transpose() * &w1i), &w.w1)
                * &ik
                * kron_naive(&(cp.transpose() * &w.w2), &w.w1))
                * lam,
            -(kron_naive(&w.w2, &(&e * &w2i)) * &ik * kron_naive(&w.w2, &(&cp * &w.w1))) * lam,
        ];
        for (k, (got, want)) in terms.iter().zip(expect.iter()).enumerate() {
            let scale = want.amax().max(1.0);
            assert!((got - want).amax() <= 1e-9 * scale, "term {k}");
        }
    }

    #[test]
    fn m_r_is_additive_assembly() {
        let data = random_data(7, 3, 3, 40);
        let w = weights_for(&data, 1.0).unwrap();
        let fit = mid_fit(&data, &w);
        let ws =
            DofWorkspace::assemble(&data, &w, &fit, fit.lambda, &DofOptions::default()).unwrap();
        let m1 = m1_matrix(&w, &fit.weighted_svd).unwrap();
        let m2 = m2_matrix(&data, &w, &fit, fit.lambda).unwrap();
        let direct = data.gram() + m1 * fit.lambda + m2;
        assert!((m_r_matrix(&ws, fit.lambda) - direct).amax() < 1e-10);
    }

    #[test]
    fn endpoints_equal_gram_rank() {
        let data = random_data(8, 3, 3, 60);
        let w = weights_for(&data, 1.0).unwrap();
        let ls = solve(&data, &w, 0.0, &SolverOptions::default()).unwrap();
        let d = degrees_of_freedom(&data, &w, &ls, 0.0).unwrap();
        assert_eq!(d.gram_rank, 9);
        assert_eq!(d.df, 9.0);

        let lmax = lambda_max(&data, &w).unwrap();
        let zero = solve(&data, &w, 1.01 * lmax, &SolverOptions::default()).unwrap();
        let d = degrees_of_freedom(&data, &w, &zero, 1.01 * lmax).unwrap();
        assert_eq!(d.df, 9.0);

        let ws =
            DofWorkspace::assemble(&data, &w, &zero, 1.01 * lmax, &DofOptions::default()).unwrap();
        assert_eq!(m_r_matrix(&ws, 1.01 * lmax), data.gram());

        // Fewer samples than coefficients.
        let small = random_data(9, 3, 3, 5);
        let w = WeightPair::identity(3, 3);
        let ls = solve(&small, &w, 0.0, &SolverOptions::default()).unwrap();
        assert_eq!(degrees_of_freedom(&small, &w, &ls, 0.0).unwrap().df, 5.0);
    }

    #[test]
    fn orthonormal_design_counts_every_coefficient() {
        let q = gaussian(&mut rng(10), 6, 6).qr().q();
        let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let data = TraceDataset::from_design(2, 3, q, DVector::from_vec(y)).unwrap();
        let w = WeightPair::identity(2, 3);
        let ls = solve(&data, &w, 0.0, &SolverOptions::default()).unwrap();
        assert_eq!(degrees_of_freedom(&data, &w, &ls, 0.0).unwrap().df, 6.0);
    }

    #[test]
    fn mid_path_estimate_reports_diagnostics() {
        let data = random_data(11, 3, 3, 60);
        let w = weights_for(&data, 1.0).unwrap();
        let fit = mid_fit(&data, &w);
        let d = degrees_of_freedom(&data, &w, &fit, fit.lambda).unwrap();
        assert!(d.df.is_finite());
        assert_eq!(d.fit_rank, fit.rank);
        assert!(d.condition_estimate >= 1.0);
        assert_eq!(d.m_r_symmetric, d.asymmetry <= SYMMETRY_TOL);
        let ws =
            DofWorkspace::assemble(&data, &w, &fit, fit.lambda, &DofOptions::default()).unwrap();
        let m_r = m_r_matrix(&ws, fit.lambda);
        let direct = (data.gram() * pseudo_inverse(&m_r, DEFAULT_PINV_TOL).unwrap()).trace();
        assert!((d.df - direct).abs() < 1e-8 * direct.abs().max(1.0));
    }

    #[test]
    fn refuses_oversized_problems() {
        let data = random_data(12, 3, 3, 20);
        let w = WeightPair::identity(3, 3);
        let fit = solve(&data, &w, 0.01, &SolverOptions::default()).unwrap();
        let opts = DofOptions {
            max_dim: 8,
            ..DofOptions::default()
        };
        assert!(matches!(
            degrees_of_freedom_with(&data, &w, &fit, 0.01, &opts),
            Err(Error::SizeLimit { .. })
        ));
    }
}
