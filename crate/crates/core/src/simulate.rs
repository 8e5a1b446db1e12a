//! Synthetic low-rank trace-regression studies comparing selectors.
//!
//! Replicate `r` draws from ChaCha8 seeded with `seed` on stream `r`, so each
//! replicate is reproducible on its own and independent of worker count.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{
    cross_validate, path_with_df, select_from_path, GridSpec, Method, SelectOptions,
    SelectionReport,
};
use crate::dataset::TraceDataset;
use crate::error::{Error, Result};
use crate::linalg::{truncated_svd, DenseMatrix, DEFAULT_RANK_TOL};
use crate::serde_matrix;

/// A selector as it appears in study tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StudyMethod {
    Bic,
    Aic,
    Aicc,
    Cv(usize),
}

impl StudyMethod {
    pub const ALL: [StudyMethod; 5] = [
        StudyMethod::Bic,
        StudyMethod::Aic,
        StudyMethod::Aicc,
        StudyMethod::Cv(5),
        StudyMethod::Cv(10),
    ];

    fn information_criterion(self) -> Option<Method> {
        match self {
            StudyMethod::Bic => Some(Method::Bic),
            StudyMethod::Aic => Some(Method::Aic),
            StudyMethod::Aicc => Some(Method::Aicc),
            StudyMethod::Cv(_) => None,
        }
    }
}

impl fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StudyMethod::Bic => f.write_str("bic"),
            StudyMethod::Aic => f.write_str("aic"),
            StudyMethod::Aicc => f.write_str("aicc"),
            StudyMethod::Cv(k) => write!(f, "cv{k}"),
        }
    }
}

impl FromStr for StudyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bic" => Ok(StudyMethod::Bic),
            "aic" => Ok(StudyMethod::Aic),
            "aicc" => Ok(StudyMethod::Aicc),
            _ => s
                .strip_prefix("cv")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 2)
                .map(StudyMethod::Cv)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown study method `{s}`"))),
        }
    }
}

impl Serialize for StudyMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StudyMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub p1: usize,
    pub p2: usize,
    pub n: usize,
    pub true_rank: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub replicates: usize,
    pub grid: GridSpec,
    pub methods: Vec<StudyMethod>,
    pub options: SelectOptions,
}

impl SimulationConfig {
    /// All five selectors on a geometric grid with default options.
    pub fn new(p1: usize, p2: usize, n: usize, true_rank: usize, noise_std: f64) -> Self {
        Self {
            p1,
            p2,
            n,
            true_rank,
            noise_std,
            seed: 0,
            replicates: 1,
            grid: GridSpec::Geometric { count: 20 },
            methods: StudyMethod::ALL.to_vec(),
            options: SelectOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p1 == 0 || self.p2 == 0 || self.n == 0 || self.replicates == 0 {
            return Err(Error::InvalidArgument(
                "p1, p2, n and replicates must be positive".into(),
            ));
        }
        if self.true_rank == 0 || self.true_rank > self.p1.min(self.p2) {
            return Err(Error::InvalidArgument(format!(
                "true_rank must lie in 1..={}, got {}",
                self.p1.min(self.p2),
                self.true_rank
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be finite and nonnegative, got {}",
                self.noise_std
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods requested".into()));
        }
        self.options.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(with = "serde_matrix")]
    pub b_star: DenseMatrix,
    pub r_star: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Replicate 0 of the configuration.
pub fn generate(cfg: &SimulationConfig) -> Result<(TraceDataset, GroundTruth)> {
    generate_replicate(cfg, 0)
}

/// `B* = Σ_{j ≤ r*} u_j v_jᵀ`, `X_i = P_iQ_iᵀ`, `y_i = ⟨X_i, B*⟩ + ε_i` with
/// all of `u_j, v_j, P_i, Q_i` standard normal and `ε_i ~ N(0, σ²)`.
pub fn generate_replicate(
    cfg: &SimulationConfig,
    replicate: usize,
) -> Result<(TraceDataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate as u64);
    let (p1, p2) = (cfg.p1, cfg.p2);

    let mut b_star = DenseMatrix::zeros(p1, p2);
    for _ in 0..cfg.true_rank {
        let u = gaussian(&mut rng, p1);
        let v = gaussian(&mut rng, p2);
        b_star += u * v.transpose();
    }
    let r = truncated_svd(&b_star, DEFAULT_RANK_TOL)?.rank();
    if r != cfg.true_rank {
        return Err(Error::InvalidArgument(format!(
            "drawn coefficient has rank {r}, expected {}",
            cfg.true_rank
        )));
    }

    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let mut design = DenseMatrix::zeros(cfg.n, p1 * p2);
    let mut y = DVector::zeros(cfg.n);
    for i in 0..cfg.n {
        let x = gaussian(&mut rng, p1) * gaussian(&mut rng, p2).transpose();
        y[i] = x.dot(&b_star) + noise.sample(&mut rng);
        for (k, v) in x.as_slice().iter().enumerate() {
            design[(i, k)] = *v;
        }
    }
    let data = TraceDataset::from_design(p1, p2, design, y)?;
    Ok((
        data,
        GroundTruth {
            b_star,
            r_star: cfg.true_rank,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rank_correct: bool,
    /// `chosen_rank − r*`.
    pub rank_error: i64,
    pub mse: f64,
    pub time_seconds: f64,
}

pub fn evaluate(report: &SelectionReport, truth: &GroundTruth) -> Evaluation {
    Evaluation {
        rank_correct: report.chosen_rank == truth.r_star,
        rank_error: report.chosen_rank as i64 - truth.r_star as i64,
        mse: report.mse,
        time_seconds: report.wall_time_seconds,
    }
}

/// Outcome of one selector on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: StudyMethod,
    pub lambda_star: f64,
    pub rank: usize,
    pub evaluation: Evaluation,
    pub solver_invocations: usize,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub outcomes: Vec<MethodOutcome>,
    /// Failures as `(method, message)`; the study continues past them.
    pub failures: Vec<(StudyMethod, String)>,
}

/// Aggregate over the successful replicates of one selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub method: StudyMethod,
    pub lambda_star: f64,
    pub mse: f64,
    pub rank: f64,
    pub time_seconds: f64,
    pub rank_recovery_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub config: SimulationConfig,
    pub rows: Vec<StudyRow>,
    pub replicates: Vec<ReplicateOutcome>,
}

fn outcome(method: StudyMethod, report: &SelectionReport, truth: &GroundTruth) -> MethodOutcome {
    MethodOutcome {
        method,
        lambda_star: report.chosen_lambda,
        rank: report.chosen_rank,
        evaluation: evaluate(report, truth),
        solver_invocations: report.solver_invocations,
        all_converged: report.all_converged,
    }
}

/// Runs every configured selector on one replicate. Information criteria
/// share a single path.
pub fn run_replicate(cfg: &SimulationConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let (data, truth) = generate_replicate(cfg, replicate)?;
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();

    let ics: Vec<(StudyMethod, Method)> = cfg
        .methods
        .iter()
        .filter_map(|&m| m.information_criterion().map(|ic| (m, ic)))
        .collect();
    let path = if ics.is_empty() {
        None
    } else {
        Some(path_with_df(&data, &cfg.grid, &cfg.options))
    };

    for &m in &cfg.methods {
        let report = match (m, &path) {
            (StudyMethod::Cv(k), _) => {
                let opts = SelectOptions {
                    folds: k,
                    ..cfg.options.clone()
                };
                cross_validate(&data, &cfg.grid, &opts)
            }
            (_, Some(Ok(p))) => {
                select_from_path(p, m.information_criterion().expect("ic"), data.n())
            }
            (_, Some(Err(e))) => Err(Error::InvalidArgument(format!("shared path failed: {e}"))),
            (_, None) => unreachable!("path exists whenever an information criterion is requested"),
        };
        match report {
            Ok(r) => outcomes.push(outcome(m, &r, &truth)),
            Err(e) => failures.push((m, e.to_string())),
        }
    }
    Ok(ReplicateOutcome {
        replicate,
        outcomes,
        failures,
    })
}

/// Runs all replicates concurrently and aggregates per selector in the
/// configured method order.
pub fn replicate_study(cfg: &SimulationConfig) -> Result<StudyTable> {
    cfg.validate()?;
    let replicates = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(cfg, r).unwrap_or_else(|e| ReplicateOutcome {
                replicate: r,
                outcomes: Vec::new(),
                failures: cfg.methods.iter().map(|&m| (m, e.to_string())).collect(),
            })
        })
        .collect::<Vec<_>>();

    let rows = cfg
        .methods
        .iter()
        .map(|&m| {
            let hits: Vec<&MethodOutcome> = replicates
                .iter()
                .flat_map(|r| r.outcomes.iter().filter(move |o| o.method == m))
                .collect();
            let count = hits.len() as f64;
            let mean = |f: &dyn Fn(&MethodOutcome) -> f64| {
                if hits.is_empty() {
                    f64::NAN
                } else {
                    hits.iter().map(|o| f(o)).sum::<f64>() / count
                }
            };
            StudyRow {
                method: m,
                lambda_star: mean(&|o| o.lambda_star),
                mse: mean(&|o| o.evaluation.mse),
                rank: mean(&|o| o.rank as f64),
                time_seconds: mean(&|o| o.evaluation.time_seconds),
                rank_recovery_rate: mean(&|o| f64::from(u8::from(o.evaluation.rank_correct))),
            }
        })
        .collect();
    Ok(StudyTable {
        config: cfg.clone(),
        rows,
        replicates,
    })
}

/// Writes the aggregate rows with header
/// `method,lambda_star,mse,rank,time_seconds,rank_recovery_rate`.
pub fn write_study_csv(table: &StudyTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &table.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_study_json(table: &StudyTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), table)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_rank;

    fn small(n: usize) -> SimulationConfig {
        SimulationConfig {
            seed: 17,
            ..SimulationConfig::new(3, 4, n, 2, 0.1)
        }
    }

    #[test]
    fn method_labels_round_trip() {
        for m in StudyMethod::ALL {
            assert_eq!(m.to_string().parse::<StudyMethod>().unwrap(), m);
        }
        assert!("cv1".parse::<StudyMethod>().is_err());
        assert!("lasso".parse::<StudyMethod>().is_err());
    }

    #[test]
    fn generated_data_has_declared_structure() {
        let (data, truth) = generate(&small(30)).unwrap();
        assert_eq!(truth.r_star, 2);
        assert_eq!(numerical_rank(&truth.b_star, 1e-10), 2);
        for i in 0..data.n() {
            assert_eq!(numerical_rank(&data.predictor(i), 1e-10), 1);
        }
    }

    #[test]
    fn noiseless_truth_has_zero_residuals() {
        let cfg = SimulationConfig {
            noise_std: 0.0,
            ..small(25)
        };
        let (data, truth) = generate(&cfg).unwrap();
        assert!(data.residuals(&truth.b_star).amax() < 1e-12);
    }

    #[test]
    fn generation_is_reproducible_and_streams_differ() {
        let cfg = small(20);
        let (a, _) = generate_replicate(&cfg, 3).unwrap();
        let (b, _) = generate_replicate(&cfg, 3).unwrap();
        let (c, _) = generate_replicate(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate(&SimulationConfig::new(3, 4, 10, 4, 0.1)).is_err());
        assert!(generate(&SimulationConfig::new(3, 4, 10, 0, 0.1)).is_err());
        assert!(generate(&SimulationConfig::new(3, 4, 10, 1, -1.0)).is_err());
    }

    #[test]
    fn evaluation_fields() {
        let report = |rank| SelectionReport {
            method: Method::Aicc,
            grid: crate::criteria::geometric_grid(1.0, 1).unwrap(),
            per_lambda: Vec::new(),
            chosen_lambda: 0.5,
            chosen_rank: rank,
            mse: 3.0,
            mse_mean: 0.1,
            wall_time_seconds: 0.25,
            fold_count: None,
            seed: None,
            gamma: 1.0,
            solver_invocations: 1,
            all_converged: true,
        };
        let truth = GroundTruth {
            b_star: DenseMatrix::zeros(15, 30),
            r_star: 2,
        };
        let e = evaluate(&report(2), &truth);
        assert!(e.rank_correct && e.rank_error == 0);
        let e = evaluate(&report(15), &truth);
        assert_eq!(e.rank_error, 13);
        assert_eq!((e.mse, e.time_seconds), (3.0, 0.25));
    }

    #[test]
    fn single_method_single_replicate_gives_one_row() {
        let cfg = SimulationConfig {
            methods: vec![StudyMethod::Bic],
            grid: GridSpec::Geometric { count: 6 },
            ..small(40)
        };
        let t = replicate_study(&cfg).unwrap();
        assert_eq!(t.rows.len(), 1);
        let row = &t.rows[0];
        assert!(row.lambda_star.is_finite() && row.mse.is_finite() && row.time_seconds >= 0.0);
    }

    #[test]
    fn study_is_reproducible_apart_from_timing() {
        let cfg = SimulationConfig {
            replicates: 2,
            grid: GridSpec::Geometric { count: 5 },
            methods: vec![StudyMethod::Bic, StudyMethod::Aicc, StudyMethod::Cv(3)],
            ..small(30)
        };
        let strip = |t: StudyTable| -> Vec<(StudyMethod, f64, f64, f64, f64)> {
            t.rows
                .iter()
                .map(|r| (r.method, r.lambda_star, r.mse, r.rank, r.rank_recovery_rate))
                .collect()
        };
        let a = replicate_study(&cfg).unwrap();
        assert!(a.replicates.iter().all(|r| r.failures.is_empty()));
        assert_eq!(strip(a), strip(replicate_study(&cfg).unwrap()));
    }

    #[test]
    fn csv_header_matches_table_layout() {
        let cfg = SimulationConfig {
            methods: vec![StudyMethod::Aic],
            grid: GridSpec::Geometric { count: 4 },
            ..small(30)
        };
        let t = replicate_study(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        write_study_csv(&t, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "method,lambda_star,mse,rank,time_seconds,rank_recovery_rate"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("aic,"));
    }
}
