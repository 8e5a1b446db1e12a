//! Tuning-parameter grids and selection by information criteria or K-fold
//! cross-validation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TraceDataset;
use crate::dof::{degrees_of_freedom_with, DofEstimate, DofOptions};
use crate::error::{Error, Result};
use crate::solver::{FitResult, SolverOptions, Workspace};
use crate::weights::{weights_for, WeightPair, DEFAULT_GAMMA};

/// Ratio between consecutive values of the geometric grid.
pub const GEOMETRIC_RATIO: f64 = 0.618;

/// Default `λ_min/λ_max` of the log-interpolated grid.
pub const DEFAULT_LAMBDA_MIN_RATIO: f64 = 1e-4;

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScheme {
    LogInterpolated,
    Geometric,
}

/// Strictly decreasing sequence of penalty levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub scheme: GridScheme,
    pub lambda_max: f64,
    pub lambda_min: Option<f64>,
    pub count: usize,
}

/// `values[k] = exp(log λ_max + (k−1)·(log λ_min − log λ_max)/count)` for
/// `k = 1..count`. The last value stays above `λ_min`.
pub fn log_grid(lambda_max: f64, lambda_min: f64, count: usize) -> Result<LambdaGrid> {
    if !(lambda_max > 0.0 && lambda_min > 0.0 && lambda_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid bounds must be positive and finite, got [{lambda_min}, {lambda_max}]"
        )));
    }
    if lambda_min >= lambda_max {
        return Err(Error::InvalidArgument(format!(
            "lambda_min ({lambda_min}) must be below lambda_max ({lambda_max})"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("grid count must be positive".into()));
    }
    let (hi, lo) = (lambda_max.ln(), lambda_min.ln());
    let step = (lo - hi) / count as f64;
    let values = (0..count)
        .map(|k| {
            if k == 0 {
                lambda_max
            } else {
                (hi + k as f64 * step).exp()
            }
        })
        .collect();
    Ok(LambdaGrid {
        values,
        scheme: GridScheme::LogInterpolated,
        lambda_max,
        lambda_min: Some(lambda_min),
        count,
    })
}

/// `values[k] = 0.618^k·λ_max` for `k = 1..count`.
pub fn geometric_grid(lambda_max: f64, count: usize) -> Result<LambdaGrid> {
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda_max must be positive and finite, got {lambda_max}"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("grid count must be positive".into()));
    }
    let values = (1..=count)
        .map(|k| GEOMETRIC_RATIO.powi(k as i32) * lambda_max)
        .collect();
    Ok(LambdaGrid {
        values,
        scheme: GridScheme::Geometric,
        lambda_max,
        lambda_min: None,
        count,
    })
}

/// Grid recipe, resolved against a data-dependent `λ_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum GridSpec {
    Log { count: usize, lambda_min_ratio: f64 },
    Geometric { count: usize },
}

impl GridSpec {
    pub fn build(&self, lambda_max: f64) -> Result<LambdaGrid> {
        match *self {
            GridSpec::Log {
                count,
                lambda_min_ratio,
            } => {
                if !(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "lambda_min_ratio must lie in (0, 1), got {lambda_min_ratio}"
                    )));
                }
                log_grid(lambda_max, lambda_max * lambda_min_ratio, count)
            }
            GridSpec::Geometric { count } => geometric_grid(lambda_max, count),
        }
    }
}

/// `log(rss/n) + df·log(n)/n`; `−∞` when `rss = 0`.
pub fn bic(rss: f64, df: f64, n: usize) -> f64 {
    let n = n as f64;
    (rss / n).ln() + df * n.ln() / n
}

/// `log(rss/n) + 2·df/n`; `−∞` when `rss = 0`.
pub fn aic(rss: f64, df: f64, n: usize) -> f64 {
    (rss / n as f64).ln() + 2.0 * df / n as f64
}

/// `aic + 2·df·(df+1)/(n−df−1)`, or `+∞` when `n − df − 1 ≤ 0`.
pub fn aicc(rss: f64, df: f64, n: usize) -> f64 {
    let denom = n as f64 - df - 1.0;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    aic(rss, df, n) + 2.0 * df * (df + 1.0) / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bic,
    Aic,
    Aicc,
    Cv,
}

impl Method {
    fn criterion(self, rss: f64, df: f64, n: usize) -> f64 {
        match self {
            Method::Bic => bic(rss, df, n),
            Method::Aic => aic(rss, df, n),
            Method::Aicc => aicc(rss, df, n),
            Method::Cv => unreachable!("cross-validation has no closed-form criterion"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    pub gamma: f64,
    pub solver: SolverOptions,
    pub dof: DofOptions,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            solver: SolverOptions::default(),
            dof: DofOptions::default(),
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    pub criterion_value: f64,
    /// Absent for cross-validation.
    pub df: Option<f64>,
    pub rank: usize,
    pub rss: f64,
    pub converged: bool,
    /// `rss = 0`: the criterion is `−∞` and the point is skipped by the
    /// argmin unless every point is degenerate.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: Method,
    pub grid: LambdaGrid,
    pub per_lambda: Vec<LambdaRecord>,
    pub chosen_lambda: f64,
    pub chosen_rank: usize,
    /// `‖ŷ − y‖²` of the full-data fit at the chosen `λ`.
    pub mse: f64,
    /// `mse / n`.
    pub mse_mean: f64,
    pub wall_time_seconds: f64,
    pub fold_count: Option<usize>,
    pub seed: Option<u64>,
    pub gamma: f64,
    pub solver_invocations: usize,
    pub all_converged: bool,
}

/// Index minimizing `values`, skipping `−∞` unless nothing else is left.
/// Ties go to the largest `λ`; NaN never wins.
pub fn argmin_largest_lambda(lambdas: &[f64], values: &[f64]) -> Option<usize> {
    let pick = |admit: &dyn Fn(f64) -> bool| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in values.iter().enumerate() {
            if v.is_nan() || !admit(v) {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) if v < values[b] || (v == values[b] && lambdas[i] > lambdas[b]) => Some(i),
                keep => keep,
            };
        }
        best
    };
    pick(&|v| v != f64::NEG_INFINITY).or_else(|| pick(&|_| true))
}

/// One weighted path on the full data together with the df of every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathWithDf {
    pub weights: WeightPair,
    pub grid: LambdaGrid,
    pub fits: Vec<FitResult>,
    /// `None` where the fit did not converge.
    pub dof: Vec<Option<DofEstimate>>,
    pub solver_invocations: usize,
    pub wall_time_seconds: f64,
}

/// Builds weights on the full data, resolves the grid and solves the path.
pub fn path_with_df(
    data: &TraceDataset,
    grid: &GridSpec,
    opts: &SelectOptions,
) -> Result<PathWithDf> {
    let start = Instant::now();
    let weights = weights_for(data, opts.gamma)?;
    let ws = Workspace::new(data, &weights)?;
    let grid = grid.build(ws.lambda_max())?;
    let fits = ws.solve_path(&grid.values, &opts.solver)?;
    let dof = fits
        .par_iter()
        .map(
            |f| match degrees_of_freedom_with(data, &weights, f, f.lambda, &opts.dof) {
                Ok(d) => Ok(Some(d)),
                Err(Error::NotConverged { .. }) => Ok(None),
                Err(e) => Err(e),
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let solver_invocations = ws.solve_count();
    drop(ws);
    Ok(PathWithDf {
        weights,
        grid,
        fits,
        dof,
        solver_invocations,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Applies an information criterion to an already computed path.
pub fn select_from_path(path: &PathWithDf, method: Method, n: usize) -> Result<SelectionReport> {
    if method == Method::Cv {
        return Err(Error::InvalidArgument(
            "cross-validation cannot be evaluated on a single path".into(),
        ));
    }
    let start = Instant::now();
    let per_lambda: Vec<LambdaRecord> = path
        .fits
        .iter()
        .zip(&path.dof)
        .map(|(f, d)| {
            let rss = f.rss();
            let df = d.as_ref().map(|d| d.df);
            LambdaRecord {
                lambda: f.lambda,
                criterion_value: df.map_or(f64::NAN, |df| method.criterion(rss, df, n)),
                df,
                rank: f.rank,
                rss,
                converged: f.converged,
                degenerate: rss == 0.0,
            }
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    finish_report(
        method,
        path.grid.clone(),
        per_lambda,
        &path.fits,
        n,
        path.wall_time_seconds + elapsed,
        None,
        path.weights.gamma,
        path.solver_invocations,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_report(
    method: Method,
    grid: LambdaGrid,
    per_lambda: Vec<LambdaRecord>,
    fits: &[FitResult],
    n: usize,
    wall_time_seconds: f64,
    cv: Option<(usize, u64)>,
    gamma: f64,
    solver_invocations: usize,
) -> Result<SelectionReport> {
    let lambdas: Vec<f64> = per_lambda.iter().map(|r| r.lambda).collect();
    let values: Vec<f64> = per_lambda.iter().map(|r| r.criterion_value).collect();
    let best = argmin_largest_lambda(&lambdas, &values)
        .ok_or_else(|| Error::InvalidArgument("every criterion value is NaN".into()))?;
    let chosen = &fits[best];
    let mse = chosen.rss();
    Ok(SelectionReport {
        method,
        grid,
        all_converged: per_lambda.iter().all(|r| r.converged),
        per_lambda,
        chosen_lambda: chosen.lambda,
        chosen_rank: chosen.rank,
        mse,
        mse_mean: mse / n as f64,
        wall_time_seconds,
        fold_count: cv.map(|c| c.0),
        seed: cv.map(|c| c.1),
        gamma,
        solver_invocations,
    })
}

/// Fold label of every sample: a seeded shuffle dealt round-robin into
/// `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut label = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        label[i] = pos % k;
    }
    Ok(label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScores {
    /// `per_fold[f][j]`: validation MSE of fold `f` at grid point `j`.
    pub per_fold: Vec<Vec<f64>>,
    /// Mean over folds, per grid point.
    pub mean: Vec<f64>,
    pub solver_invocations: usize,
    pub all_converged: bool,
}

/// Validation error over `grid` for an explicit fold labelling. Weights are
/// rebuilt from each training portion.
pub fn cross_validate_folds(
    data: &TraceDataset,
    grid: &[f64],
    labels: &[usize],
    opts: &SelectOptions,
) -> Result<CvScores> {
    if labels.len() != data.n() {
        return Err(Error::Dimension(format!(
            "{} fold labels for {} samples",
            labels.len(),
            data.n()
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let folds = (0..k)
        .into_par_iter()
        .map(|f| -> Result<(Vec<f64>, usize, bool)> {
            let (valid, train): (Vec<usize>, Vec<usize>) =
                (0..data.n()).partition(|&i| labels[i] == f);
            if train.is_empty() || valid.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "fold {f} has {} training and {} validation samples",
                    train.len(),
                    valid.len()
                )));
            }
            let train = data.subset(&train)?;
            let valid = data.subset(&valid)?;
            let w = weights_for(&train, opts.gamma)?;
            let ws = Workspace::new(&train, &w)?;
            let fits = ws.solve_path(grid, &opts.solver)?;
            let scores = fits
                .iter()
                .map(|fit| valid.residuals(&fit.b_hat).norm_squared() / valid.n() as f64)
                .collect();
            Ok((scores, ws.solve_count(), fits.iter().all(|f| f.converged)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; grid.len()];
    for (scores, _, _) in &folds {
        for (m, s) in mean.iter_mut().zip(scores) {
            *m += s;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }
    Ok(CvScores {
        solver_invocations: folds.iter().map(|f| f.1).sum(),
        all_converged: folds.iter().all(|f| f.2),
        per_fold: folds.into_iter().map(|f| f.0).collect(),
        mean,
    })
}

/// Seeded K-fold cross-validation followed by a full-data path, from which
/// the fit at the chosen `λ` is reported. The grid is resolved against the
/// full-data `λ_max`.
pub fn cross_validate(
    data: &TraceDataset,
    grid: &GridSpec,
    opts: &SelectOptions,
) -> Result<SelectionReport> {
    let start = Instant::now();
    let labels = fold_assignment(data.n(), opts.folds, opts.seed)?;
    let weights = weights_for(data, opts.gamma)?;
    let ws = Workspace::new(data, &weights)?;
    let grid = grid.build(ws.lambda_max())?;
    let scores = cross_validate_folds(data, &grid.values, &labels, opts)?;
    let fits = ws.solve_path(&grid.values, &opts.solver)?;
    let per_lambda = fits
        .iter()
        .zip(&scores.mean)
        .map(|(f, &score)| LambdaRecord {
            lambda: f.lambda,
            criterion_value: score,
            df: None,
            rank: f.rank,
            rss: f.rss(),
            converged: f.converged,
            degenerate: false,
        })
        .collect();
    let invocations = scores.solver_invocations + ws.solve_count();
    let mut report = finish_report(
        Method::Cv,
        grid,
        per_lambda,
        &fits,
        data.n(),
        0.0,
        Some((opts.folds, opts.seed)),
        opts.gamma,
        invocations,
    )?;
    report.all_converged &= scores.all_converged;
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Selects `λ` by a single method.
pub fn select(
    data: &TraceDataset,
    grid: &GridSpec,
    method: Method,
    opts: &SelectOptions,
) -> Result<SelectionReport> {
    match method {
        Method::Cv => cross_validate(data, grid, opts),
        ic => select_from_path(&path_with_df(data, grid, opts)?, ic, data.n()),
    }
}

/// Information-criterion reports that share one path and one set of df
/// estimates.
pub fn select_information_criteria(
    data: &TraceDataset,
    grid: &GridSpec,
    methods: &[Method],
    opts: &SelectOptions,
) -> Result<Vec<SelectionReport>> {
    let path = path_with_df(data, grid, opts)?;
    methods
        .iter()
        .map(|&m| select_from_path(&path, m, data.n()))
        .collect()
}
