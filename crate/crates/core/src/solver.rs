//! Adaptive nuclear-norm regularized trace regression
//!
//! ```text
//! minimize (1/2n)·Σ (y_i − ⟨X_i, B⟩)² + λ·‖W₁·B·W₂‖_*
//! ```
//!
//! The problem is solved in the weighted variable `C = W₁BW₂` (valid because
//! both weights are symmetric positive definite), where the penalty becomes a
//! plain nuclear norm on the transformed design `X̃_i = W₁⁻¹X_iW₂⁻¹`.
//! Accelerated proximal gradient with step `1/L` and gradient-based momentum
//! restart is run until the subdifferential certificate of the original
//! problem is met.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::TraceDataset;
use crate::error::{Error, Result};
use crate::linalg::{
    complement_projector, devectorize, sorted_svd, spectral_norm, truncated_svd, vectorize,
    DenseMatrix, TruncatedSvd, DEFAULT_RANK_TOL,
};
use crate::serde_matrix;
use crate::weights::{fit_least_squares, transform_design, WeightPair};

pub const DEFAULT_KKT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;

/// Iterations between optimality checks.
const CHECK_EVERY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub svd_rel_tol: f64,
    #[serde(skip)]
    pub warm_start: Option<DenseMatrix>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            kkt_tolerance: DEFAULT_KKT_TOLERANCE,
            svd_rel_tol: DEFAULT_RANK_TOL,
            warm_start: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tolerance > 0.0) {
            return Err(Error::InvalidArgument(
                "kkt_tolerance must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations must be positive".into(),
            ));
        }
        if !(self.svd_rel_tol > 0.0 && self.svd_rel_tol < 1.0) {
            return Err(Error::InvalidArgument(
                "svd_rel_tol must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Solution of one regularized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub lambda: f64,
    #[serde(with = "serde_matrix")]
    pub b_hat: DenseMatrix,
    /// Truncated SVD of `W₁·B̂·W₂`.
    pub weighted_svd: TruncatedSvd,
    pub rank: usize,
    #[serde(with = "serde_matrix::vector")]
    pub residuals: DVector<f64>,
    pub objective: f64,
    pub optimality_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

/// Singular-value soft-thresholding `U·Diag(max(σ − τ, 0))·Vᵀ`, the proximal
/// operator of `τ‖·‖_*`.
pub fn svt_prox(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    Ok(shrink(m, tau).0)
}

/// Soft-thresholds and also returns the retained (strictly positive) triplets.
fn shrink(m: &DenseMatrix, tau: f64) -> (DenseMatrix, Vec<f64>, DenseMatrix, DenseMatrix) {
    let (u, s, v) = sorted_svd(m);
    let kept: Vec<f64> = s.iter().map(|x| x - tau).take_while(|x| *x > 0.0).collect();
    let r = kept.len();
    let u = u.columns(0, r).into_owned();
    let v = v.columns(0, r).into_owned();
    let mut scaled = u.clone();
    for (j, s) in kept.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    (scaled * v.transpose(), kept, u, v)
}

/// Violation of the subdifferential membership `G ∈ U_rV_rᵀ + {N : U_rᵀN = 0,
/// NV_r = 0, ‖N‖₂ ≤ 1}` for a scaled gradient `G` and the weighted SVD.
fn certificate_violation(g: &DenseMatrix, svd: &TruncatedSvd) -> f64 {
    let r = svd.rank();
    if r == 0 {
        return (spectral_norm(g) - 1.0).max(0.0);
    }
    let u = &svd.left;
    let v = &svd.right;
    let pu = complement_projector(u);
    let pv = complement_projector(v);
    let core = u.transpose() * g * v - DenseMatrix::identity(r, r);
    let left_off = u.transpose() * g * &pv;
    let right_off = &pu * g * v;
    let normal = &pu * g * &pv;
    core.norm() + left_off.norm() + right_off.norm() + (spectral_norm(&normal) - 1.0).max(0.0)
}

/// Stationarity violation of `B` for the adaptive problem at `λ > 0`.
///
/// With `G = (1/(nλ))·W₁⁻¹·(Σ residual_i·X_i)·W₂⁻¹`, returns
/// `‖U_rᵀGV_r − I_r‖_F + ‖U_rᵀG·P_V⊥‖_F + ‖P_U⊥·G·V_r‖_F
///  + max(σ₁(P_U⊥·G·P_V⊥) − 1, 0)`, which is zero exactly when `B` is optimal.
pub fn optimality_residual(
    data: &TraceDataset,
    w: &WeightPair,
    lambda: f64,
    b: &DenseMatrix,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let e = residual_moment(data, b)?;
    let g = w.from_weighted(&e) / lambda;
    let svd = truncated_svd(&w.to_weighted(b), DEFAULT_RANK_TOL)?;
    Ok(certificate_violation(&g, &svd))
}

/// `(1/n)·Σ residual_i·X_i`.
pub(crate) fn residual_moment(data: &TraceDataset, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.shape() != (data.p1(), data.p2()) {
        return Err(Error::Dimension(format!(
            "coefficient is {:?}, data is {}x{}",
            b.shape(),
            data.p1(),
            data.p2()
        )));
    }
    let res = data.residuals(b);
    let e = data.design().tr_mul(&res) / data.n() as f64;
    devectorize(e.as_slice(), data.p1(), data.p2())
}

/// `‖W₁⁻¹·((1/n)·Σ y_i X_i)·W₂⁻¹‖₂`: the smallest `λ` at which `B = 0` is
/// stationary.
pub fn lambda_max(data: &TraceDataset, w: &WeightPair) -> Result<f64> {
    let m = devectorize(data.moment().as_slice(), data.p1(), data.p2())?;
    Ok(spectral_norm(&w.from_weighted(&m)))
}

/// Precomputed quantities of the weighted problem for one `(data, weights)`
/// pair; reused across every `λ` of a path.
#[derive(Debug)]
pub struct Workspace<'a> {
    data: &'a TraceDataset,
    weights: &'a WeightPair,
    /// `X̃ᵀX̃/n`.
    gram_t: DenseMatrix,
    /// `X̃ᵀy/n`.
    moment_t: DVector<f64>,
    lipschitz: f64,
    solves: AtomicUsize,
}

impl<'a> Workspace<'a> {
    pub fn new(data: &'a TraceDataset, weights: &'a WeightPair) -> Result<Self> {
        let t = transform_design(data, weights)?;
        let gram_t = t.gram();
        let moment_t = t.moment();
        let lipschitz = gram_t.clone().symmetric_eigenvalues().amax();
        Ok(Self {
            data,
            weights,
            gram_t,
            moment_t,
            lipschitz,
            solves: AtomicUsize::new(0),
        })
    }

    /// Number of [`Workspace::solve`] calls made so far, including those
    /// issued by [`Workspace::solve_path`].
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn lambda_max(&self) -> f64 {
        let m = devectorize(self.moment_t.as_slice(), self.data.p1(), self.data.p2())
            .expect("moment has p1*p2 entries");
        spectral_norm(&m)
    }

    fn scaled_gradient(&self, c: &DVector<f64>, lambda: f64) -> DenseMatrix {
        let g = (&self.moment_t - &self.gram_t * c) / lambda;
        devectorize(g.as_slice(), self.data.p1(), self.data.p2()).expect("shape")
    }

    fn finish(
        &self,
        lambda: f64,
        c: &DenseMatrix,
        opts: &SolverOptions,
        iterations: usize,
    ) -> Result<FitResult> {
        let b_hat = self.weights.from_weighted(c);
        let weighted_svd = truncated_svd(c, opts.svd_rel_tol)?;
        let residuals = self.data.residuals(&b_hat);
        let objective = residuals.norm_squared() / (2.0 * self.data.n() as f64)
            + lambda * weighted_svd.nuclear_norm();
        let g = self.scaled_gradient(&vectorize(c), lambda);
        let optimality_residual = certificate_violation(&g, &weighted_svd);
        Ok(FitResult {
            lambda,
            b_hat,
            rank: weighted_svd.rank(),
            weighted_svd,
            residuals,
            objective,
            optimality_residual,
            iterations,
            converged: optimality_residual <= opts.kkt_tolerance,
        })
    }

    fn least_squares(&self, opts: &SolverOptions) -> Result<FitResult> {
        let b_hat = fit_least_squares(self.data)?;
        let weighted_svd = truncated_svd(&self.weights.to_weighted(&b_hat), opts.svd_rel_tol)?;
        let residuals = self.data.residuals(&b_hat);
        let n = self.data.n() as f64;
        let grad = self.data.design().tr_mul(&residuals) / n;
        let optimality_residual = grad.norm() / (1.0 + self.data.responses().norm());
        Ok(FitResult {
            lambda: 0.0,
            b_hat,
            rank: weighted_svd.rank(),
            weighted_svd,
            objective: residuals.norm_squared() / (2.0 * n),
            residuals,
            optimality_residual,
            iterations: 0,
            converged: optimality_residual <= opts.kkt_tolerance,
        })
    }

    /// Solves at one `λ`; `λ = 0` is the minimum-norm least-squares fit.
    ///
    /// Running out of iterations is not an error: the best certified iterate
    /// is returned with `converged = false`.
    pub fn solve(&self, lambda: f64, opts: &SolverOptions) -> Result<FitResult> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        opts.validate()?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        if lambda == 0.0 {
            return self.least_squares(opts);
        }
        let (p1, p2) = (self.data.p1(), self.data.p2());
        let start = match &opts.warm_start {
            Some(b0) if b0.shape() == (p1, p2) => self.weights.to_weighted(b0),
            Some(b0) => {
                return Err(Error::Dimension(format!(
                    "warm start is {:?}, expected ({p1}, {p2})",
                    b0.shape()
                )))
            }
            None => DenseMatrix::zeros(p1, p2),
        };
        if self.lipschitz <= 0.0 {
            // Zero design: the loss is constant and B = 0 is optimal.
            return self.finish(lambda, &DenseMatrix::zeros(p1, p2), opts, 0);
        }
        let step = 1.0 / self.lipschitz;
        let tau = lambda * step;

        let mut x = vectorize(&start);
        let mut best = (self.violation_at(&x, lambda, opts)?, x.clone());
        if best.0 <= opts.kkt_tolerance {
            return self.finish(lambda, &start, opts, 0);
        }
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut iterations = 0;
        for it in 1..=opts.max_iterations {
            iterations = it;
            let grad = &self.gram_t * &y - &self.moment_t;
            let point = devectorize((&y - grad * step).as_slice(), p1, p2)?;
            let x_next = vectorize(&shrink(&point, tau).0);

            let restart = (&y - &x_next).dot(&(&x_next - &x)) > 0.0;
            if restart {
                t = 1.0;
                y = x_next.clone();
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
                t = t_next;
            }
            x = x_next;

            if it % CHECK_EVERY == 0 || it == opts.max_iterations {
                let v = self.violation_at(&x, lambda, opts)?;
                if v < best.0 {
                    best = (v, x.clone());
                }
                if v <= opts.kkt_tolerance {
                    break;
                }
            }
        }
        if best.0 > opts.kkt_tolerance {
            let (v, c, extra) = self.polish(lambda, &best.1, opts)?;
            iterations += extra;
            if v < best.0 {
                best = (v, c);
            }
        }
        let c = devectorize(best.1.as_slice(), p1, p2)?;
        self.finish(lambda, &c, opts, iterations)
    }

    /// ADMM on `c = z` with exact linear solves and residual balancing,
    /// started from `c0`. Used when proximal gradient stalls on an
    /// ill-conditioned design. Returns the best violation, its iterate and
    /// the iterations spent.
    fn polish(
        &self,
        lambda: f64,
        c0: &DVector<f64>,
        opts: &SolverOptions,
    ) -> Result<(f64, DVector<f64>, usize)> {
        let (p1, p2) = (self.data.p1(), self.data.p2());
        let dim = p1 * p2;
        let factor = |rho: f64| (&self.gram_t + DenseMatrix::identity(dim, dim) * rho).cholesky();
        let mut rho = (self.gram_t.trace() / dim as f64).max(f64::MIN_POSITIVE);
        let Some(mut chol) = factor(rho) else {
            return Ok((f64::INFINITY, c0.clone(), 0));
        };
        let mut z = c0.clone();
        let mut u = DVector::zeros(dim);
        let mut best = (f64::INFINITY, z.clone());
        let mut iterations = 0;
        for it in 1..=opts.max_iterations {
            iterations = it;
            let c = chol.solve(&(&self.moment_t + (&z - &u) * rho));
            let point = devectorize((&c + &u).as_slice(), p1, p2)?;
            let z_next = vectorize(&shrink(&point, lambda / rho).0);
            let primal = (&c - &z_next).norm();
            let dual = rho * (&z_next - &z).norm();
            u += &c - &z_next;
            z = z_next;
            if it % CHECK_EVERY == 0 || it == opts.max_iterations {
                let v = self.violation_at(&z, lambda, opts)?;
                if v < best.0 {
                    best = (v, z.clone());
                }
                if v <= opts.kkt_tolerance {
                    break;
                }
            }
            if it % 50 == 0 && (primal > 10.0 * dual || dual > 10.0 * primal) {
                let scale = if primal > dual { 2.0 } else { 0.5 };
                rho *= scale;
                u /= scale;
                match factor(rho) {
                    Some(c) => chol = c,
                    None => break,
                }
            }
        }
        Ok((best.0, best.1, iterations))
    }

    fn violation_at(&self, c: &DVector<f64>, lambda: f64, opts: &SolverOptions) -> Result<f64> {
        let cm = devectorize(c.as_slice(), self.data.p1(), self.data.p2())?;
        let svd = truncated_svd(&cm, opts.svd_rel_tol)?;
        Ok(certificate_violation(
            &self.scaled_gradient(c, lambda),
            &svd,
        ))
    }

    /// Warm-started fits in decreasing-`λ` order; results are returned in the
    /// order of `grid`.
    pub fn solve_path(&self, grid: &[f64], opts: &SolverOptions) -> Result<Vec<FitResult>> {
        if grid.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
        let mut out: Vec<Option<FitResult>> = vec![None; grid.len()];
        let mut local = opts.clone();
        for &i in &order {
            let fit = self.solve(grid[i], &local)?;
            local.warm_start = Some(fit.b_hat.clone());
            out[i] = Some(fit);
        }
        Ok(out
            .into_iter()
            .map(|f| f.expect("every grid point solved"))
            .collect())
    }
}

/// Solves the adaptive problem at a single `λ`.
pub fn solve(
    data: &TraceDataset,
    w: &WeightPair,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<FitResult> {
    Workspace::new(data, w)?.solve(lambda, opts)
}

/// Warm-started path over `grid`; see [`Workspace::solve_path`].
pub fn solve_path(
    data: &TraceDataset,
    w: &WeightPair,
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<FitResult>> {
    Workspace::new(data, w)?.solve_path(grid, opts)
}
