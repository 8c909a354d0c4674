//! CUSUM change-detection tests on manifold-valued embedding streams.
//!
//! Embeddings are mapped to real vectors `u` per ensemble member: geodesic
//! distances to the nominal Fréchet mean (D-CDT) or tangent coordinates of
//! the log map at that mean (R-CDT). Windows of `n` vectors are summarised
//! by a Mahalanobis statistic that feeds a CUSUM accumulator.

mod io;
mod threshold;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::geometry::{frechet_mean, geodesic_distance, log_map, CcmPoint, Ensemble, GeometryError, TangentBasis};
use crate::nn::Embedding;
use crate::seeding::derive_indexed;

pub use io::{load_detector, save_detector, write_trace_csv, DetectorCheckpoint, DETECTOR_FORMAT, DETECTOR_VERSION};
pub use threshold::{alarm_rate, calibrate_on, cusum_update, estimate_threshold, null_statistics};

/// Minimum number of complete training windows for fitting.
pub const MIN_TRAINING_WINDOWS: usize = 30;

#[derive(Debug, Error)]
pub enum CdtError {
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("not enough training data: {windows} complete windows, need {needed}")]
    InsufficientData { windows: usize, needed: usize },
    #[error("covariance is not positive definite even after the ridge term")]
    SingularCovariance,
    #[error("alpha {alpha} is unreachable: the alarm rate at h = 0 is only {at_zero}")]
    Calibration { alpha: f64, at_zero: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("change undetectable: expected statistic {expected} does not exceed q = {q}")]
    Undetectable { expected: f64, q: f64 },
    #[error("embedding {index}: {source}")]
    Geometry {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("detector checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CdtError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Geodesic distances to the nominal mean.
    #[serde(rename = "d-cdt")]
    Distance,
    /// Tangent coordinates of the log map at the nominal mean.
    #[serde(rename = "r-cdt")]
    Riemannian,
}

/// How the CUSUM drift `q` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    /// Quantile of the `χ²_dof / n` law of the statistic.
    ChiSquare,
    /// Quantile of the statistic on the training windows.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub window_n: usize,
    pub q_quantile: f64,
    pub variant: Variant,
    pub ensemble: Ensemble,
    pub drift_mode: DriftMode,
    pub mc_runs: usize,
    pub ridge: f64,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn new(variant: Variant, ensemble: Ensemble, window_n: usize) -> Self {
        DetectorConfig {
            alpha: 0.01,
            window_n,
            q_quantile: 0.75,
            variant,
            ensemble,
            drift_mode: DriftMode::ChiSquare,
            mc_runs: 100_000,
            ridge: 1e-6,
            seed: 0,
        }
    }

    /// Window length of 0.1% of the training stream, at least 1.
    pub fn default_window(n_train: usize) -> usize {
        n_train.div_ceil(1000).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CdtError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.window_n == 0 {
            return Err(CdtError::Config("window_n must be at least 1".into()));
        }
        if !(self.q_quantile > 0.0 && self.q_quantile < 1.0) {
            return Err(CdtError::Config("q_quantile must lie in (0, 1)".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(CdtError::Config("ridge must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One CUSUM test over a fixed-dimensional `u` stream.
#[derive(Debug, Clone)]
pub struct CusumTest {
    /// Ensemble members whose coordinates make up `u`.
    pub members: Vec<usize>,
    pub mean: Vec<f64>,
    /// Covariance of `u` including the ridge term.
    pub cov: Vec<Vec<f64>>,
    pub q: f64,
    pub h: f64,
    pub alpha: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl CusumTest {
    pub fn new(members: Vec<usize>, mean: Vec<f64>, cov: Vec<Vec<f64>>, q: f64, h: f64, alpha: f64) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(CdtError::Dimension {
                expected: d,
                actual: cov.len(),
            });
        }
        let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        let chol = m.cholesky().ok_or(CdtError::SingularCovariance)?;
        Ok(CusumTest {
            members,
            mean,
            cov,
            q,
            h,
            alpha,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(E[u] − ū)ᵀ Cov[u]⁻¹ (E[u] − ū)` for the mean `ū` of the window.
    pub fn local_statistic(&self, window: &[Vec<f64>]) -> Result<f64> {
        let d = self.dim();
        if let Some(u) = window.iter().find(|u| u.len() != d) {
            return Err(CdtError::Dimension {
                expected: d,
                actual: u.len(),
            });
        }
        let mut diff = DVector::from_column_slice(&self.mean);
        for k in 0..d {
            let mean_k: f64 = window.iter().map(|u| u[k]).sum::<f64>() / window.len() as f64;
            diff[k] -= mean_k;
        }
        let solved = self.chol.solve(&diff);
        Ok(diff.dot(&solved))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub config: DetectorConfig,
    /// Nominal Fréchet mean per ensemble member.
    pub mu0: Vec<CcmPoint>,
    pub tests: Vec<CusumTest>,
    bases: Vec<TangentBasis>,
}

/// Accumulators and alarm log of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub accumulators: Vec<f64>,
    /// 1-based windows in which at least one test alarmed.
    pub alarms: Vec<usize>,
    /// Per-test 1-based alarm windows.
    pub test_alarms: Vec<Vec<usize>>,
    pub windows: usize,
    pub tau_hat: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub window_index: usize,
    pub member: usize,
    pub s_w: f64,
    /// Accumulator after the update; the value that crossed `h` on alarms.
    #[serde(rename = "S_w")]
    pub big_s_w: f64,
    pub alarm: bool,
}

impl DetectorState {
    pub fn new(detector: &TrainedDetector) -> Self {
        DetectorState {
            accumulators: vec![0.0; detector.tests.len()],
            alarms: Vec::new(),
            test_alarms: vec![Vec::new(); detector.tests.len()],
            windows: 0,
            tau_hat: None,
        }
    }
}

/// Sample mean and covariance (denominator `m − 1`) of row vectors.
fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = rows[0].len();
    let m = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mean[k] += r[k];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let denom = (m - 1.0).max(1.0);
    cov.iter_mut().flatten().for_each(|v| *v /= denom);
    (mean, cov)
}

fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

impl TrainedDetector {
    pub fn n(&self) -> usize {
        self.config.window_n
    }

    /// The `u` vector of every test for one embedding.
    pub fn u_vectors(&self, embedding: &Embedding) -> std::result::Result<Vec<Vec<f64>>, GeometryError> {
        u_vectors(
            self.config.variant,
            &self.mu0,
            &self.bases,
            &self.tests_members(),
            embedding,
        )
    }

    fn tests_members(&self) -> Vec<Vec<usize>> {
        self.tests.iter().map(|t| t.members.clone()).collect()
    }

    /// Feeds one complete window of embeddings. `first_index` is the stream
    /// position of the window's first embedding, used in error reports.
    pub fn push_window(
        &self,
        state: &mut DetectorState,
        window: &[Embedding],
        first_index: usize,
    ) -> Result<Vec<TraceRow>> {
        if window.len() != self.n() {
            return Err(CdtError::Dimension {
                expected: self.n(),
                actual: window.len(),
            });
        }
        let mut per_test: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(window.len()); self.tests.len()];
        for (k, e) in window.iter().enumerate() {
            let us = self.u_vectors(e).map_err(|source| CdtError::Geometry {
                index: first_index + k,
                source,
            })?;
            for (t, u) in us.into_iter().enumerate() {
                per_test[t].push(u);
            }
        }
        state.windows += 1;
        let w = state.windows;
        let mut rows = Vec::with_capacity(self.tests.len());
        let mut any = false;
        for (t, test) in self.tests.iter().enumerate() {
            let s_w = test.local_statistic(&per_test[t])?;
            let acc = &mut state.accumulators[t];
            let before = (*acc + s_w - test.q).max(0.0);
            let alarm = cusum_update(acc, s_w, test.q, test.h);
            if alarm {
                state.test_alarms[t].push(w);
                any = true;
            }
            rows.push(TraceRow {
                window_index: w,
                member: t,
                s_w,
                big_s_w: before,
                alarm,
            });
        }
        if any {
            state.alarms.push(w);
            state.tau_hat.get_or_insert(w * self.n());
        }
        Ok(rows)
    }

    /// Runs the detector over a stream in non-overlapping windows; a trailing
    /// partial window is ignored.
    pub fn process_stream(&self, embeddings: &[Embedding]) -> Result<(DetectorState, Vec<TraceRow>)> {
        let mut state = DetectorState::new(self);
        let mut trace = Vec::new();
        for (w, window) in embeddings.chunks_exact(self.n()).enumerate() {
            trace.extend(self.push_window(&mut state, window, w * self.n())?);
        }
        Ok((state, trace))
    }
}

fn u_vectors(
    variant: Variant,
    mu0: &[CcmPoint],
    bases: &[TangentBasis],
    tests: &[Vec<usize>],
    embedding: &Embedding,
) -> std::result::Result<Vec<Vec<f64>>, GeometryError> {
    match variant {
        Variant::Distance => {
            let d = mu0
                .iter()
                .zip(&embedding.projected)
                .map(|(m, z)| geodesic_distance(m, z))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            debug_assert_eq!(tests.len(), 1);
            Ok(vec![d])
        }
        Variant::Riemannian => tests
            .iter()
            .map(|members| {
                let m = members[0];
                let v = log_map(&mu0[m], &embedding.projected[m])?;
                bases[m].coords_of(&v)
            })
            .collect(),
    }
}

/// Fits nominal means, window moments, drift and threshold for every test.
///
/// D-CDT uses one test on the vector of the `c` member distances; R-CDT runs
/// one test per member at significance `α / c`.
pub fn fit_detector(config: &DetectorConfig, train: &[Embedding]) -> Result<TrainedDetector> {
    config.validate()?;
    let n = config.window_n;
    let windows = train.len() / n;
    if windows < MIN_TRAINING_WINDOWS {
        return Err(CdtError::InsufficientData {
            windows,
            needed: MIN_TRAINING_WINDOWS,
        });
    }
    let ens = &config.ensemble;
    let c = ens.len();
    if let Some(e) = train.iter().find(|e| e.projected.len() != c) {
        return Err(CdtError::Dimension {
            expected: c,
            actual: e.projected.len(),
        });
    }
    let mut mu0 = Vec::with_capacity(c);
    let mut bases = Vec::with_capacity(c);
    for m in 0..c {
        let points: Vec<CcmPoint> = train.iter().map(|e| e.projected[m].clone()).collect();
        let mean = frechet_mean(&points).map_err(|source| CdtError::Geometry { index: 0, source })?;
        bases.push(TangentBasis::at(&mean).map_err(|source| CdtError::Geometry { index: 0, source })?);
        mu0.push(mean);
    }
    let (members, alpha): (Vec<Vec<usize>>, f64) = match config.variant {
        Variant::Distance => (vec![(0..c).collect()], config.alpha),
        Variant::Riemannian => ((0..c).map(|m| vec![m]).collect(), config.alpha / c as f64),
    };

    // u vectors per test for every training embedding.
    let mut per_test: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(train.len()); members.len()];
    for (i, e) in train.iter().enumerate() {
        let us = u_vectors(config.variant, &mu0, &bases, &members, e)
            .map_err(|source| CdtError::Geometry { index: i, source })?;
        for (t, u) in us.into_iter().enumerate() {
            per_test[t].push(u);
        }
    }

    let tests = per_test
        .iter()
        .zip(members)
        .enumerate()
        .map(|(t, (us, m))| fit_test(config, m, us, alpha, derive_indexed(config.seed, "threshold", t as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedDetector {
        config: config.clone(),
        mu0,
        tests,
        bases,
    })
}

/// Fits one test on a stream of `u` vectors: window-mean moments, drift `q`
/// and a threshold calibrated at `alpha`. A trailing partial window is
/// ignored.
pub fn fit_test(
    config: &DetectorConfig,
    members: Vec<usize>,
    us: &[Vec<f64>],
    alpha: f64,
    seed: u64,
) -> Result<CusumTest> {
    config.validate()?;
    let n = config.window_n;
    let windows = us.len() / n;
    if windows < 2 {
        return Err(CdtError::InsufficientData { windows, needed: 2 });
    }
    let dof = us[0].len();
    if let Some(u) = us.iter().find(|u| u.len() != dof) {
        return Err(CdtError::Dimension {
            expected: dof,
            actual: u.len(),
        });
    }
    let used = &us[..windows * n];
    let window_means: Vec<Vec<f64>> = used
        .chunks_exact(n)
        .map(|w| {
            (0..dof)
                .map(|k| w.iter().map(|u| u[k]).sum::<f64>() / n as f64)
                .collect()
        })
        .collect();
    let (mean, mut cov) = moments(&window_means);
    // Cov[u] = n · Cov(window means), plus the ridge.
    for (i, row) in cov.iter_mut().enumerate() {
        row.iter_mut().for_each(|v| *v *= n as f64);
        row[i] += config.ridge;
    }
    let (q, h) = match config.drift_mode {
        DriftMode::ChiSquare => {
            let law = ChiSquared::new(dof as f64).map_err(|e| CdtError::Config(e.to_string()))?;
            let q = law.inverse_cdf(config.q_quantile) / n as f64;
            (q, estimate_threshold(dof, n, q, alpha, config.mc_runs, seed)?)
        }
        DriftMode::Empirical => {
            let provisional = CusumTest::new(members.clone(), mean.clone(), cov.clone(), 0.0, f64::INFINITY, alpha)?;
            let stats = used
                .chunks_exact(n)
                .map(|w| provisional.local_statistic(w))
                .collect::<Result<Vec<_>>>()?;
            let q = quantile(&stats, config.q_quantile);
            // Bootstrap trajectory of training statistics in place of χ² draws.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws: Vec<f64> = (0..config.mc_runs)
                .map(|_| stats[rng.random_range(0..stats.len())])
                .collect();
            (q, calibrate_on(&draws, q, alpha)?)
        }
    };
    CusumTest::new(members, mean, cov, q, h, alpha)
}

/// First alarm converted to a stream position: `n` times the 1-based index
/// of the first alarming window.
pub fn estimate_change_point(state: &DetectorState, n: usize) -> Option<usize> {
    state.alarms.first().map(|w| w * n)
}

/// Upper bound `h / (E[s_w | H1] − q)` on the expected number of windows
/// needed to detect a change.
pub fn detection_delay_bound(h: f64, expected_s1: f64, q: f64) -> Result<f64> {
    if expected_s1 <= q {
        return Err(CdtError::Undetectable {
            expected: expected_s1,
            q,
        });
    }
    Ok(h / (expected_s1 - q))
}

impl TrainedDetector {
    /// Rebuilds a detector from stored parts, recomputing the tangent bases.
    pub fn from_parts(config: DetectorConfig, mu0: Vec<CcmPoint>, tests: Vec<CusumTest>) -> Result<Self> {
        let bases = mu0
            .iter()
            .map(|m| TangentBasis::at(m).map_err(|source| CdtError::Geometry { index: 0, source }))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainedDetector {
            config,
            mu0,
            tests,
            bases,
        })
    }
}

#[cfg(test)]
mod tests;
