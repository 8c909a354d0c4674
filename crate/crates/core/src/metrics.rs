//! Run-length analysis of alarm logs.
//!
//! Run lengths are measured in windows. The first run length counts from the
//! start of the stream; every run length belongs to the regime of the alarm
//! that terminates it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metric undefined: the {0} sample is empty")]
    EmptySample(&'static str),
    #[error("alarm windows must be strictly increasing and at least 1")]
    UnsortedAlarms,
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLengthSample {
    pub nominal: Vec<usize>,
    pub nonnominal: Vec<usize>,
}

/// First 1-based window that lies entirely after the change point `tau`
/// for windows of `n` samples.
pub fn regime_boundary(tau: usize, n: usize) -> usize {
    tau / n + 1
}

/// Splits the gaps between consecutive alarms into the two regimes. Alarms
/// in windows before `boundary` are nominal.
pub fn run_lengths(alarm_windows: &[usize], boundary: usize) -> Result<RunLengthSample> {
    let mut sample = RunLengthSample::default();
    let mut previous = 0;
    for &w in alarm_windows {
        if w <= previous {
            return Err(MetricError::UnsortedAlarms);
        }
        let rl = w - previous;
        if w < boundary {
            sample.nominal.push(rl);
        } else {
            sample.nonnominal.push(rl);
        }
        previous = w;
    }
    Ok(sample)
}

/// Number of pairs with `a > b` plus half the number of ties.
pub fn mann_whitney_u(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() {
        return Err(MetricError::EmptySample("first"));
    }
    if b.is_empty() {
        return Err(MetricError::EmptySample("second"));
    }
    let mut sorted = b.to_vec();
    sorted.sort_unstable();
    let mut twice = 0u64;
    for &x in a {
        let below = sorted.partition_point(|&y| y < x);
        let not_above = sorted.partition_point(|&y| y <= x);
        twice += 2 * below as u64 + (not_above - below) as u64;
    }
    Ok(twice as f64 / 2.0)
}

/// Probability that a nominal run length exceeds a non-nominal one.
pub fn auc_rl(sample: &RunLengthSample) -> Result<f64> {
    if sample.nominal.is_empty() {
        return Err(MetricError::EmptySample("nominal"));
    }
    if sample.nonnominal.is_empty() {
        return Err(MetricError::EmptySample("non-nominal"));
    }
    let u = mann_whitney_u(&sample.nominal, &sample.nonnominal)?;
    Ok(u / (sample.nominal.len() as f64 * sample.nonnominal.len() as f64))
}

/// Mean run length, `None` for an empty sample.
pub fn average_run_length(rls: &[usize]) -> Option<f64> {
    (!rls.is_empty()).then(|| rls.iter().sum::<usize>() as f64 / rls.len() as f64)
}

/// Run-length summary of one monitored stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLengthSummary {
    /// `None` when either regime has no run length.
    pub auc_rl: Option<f64>,
    /// Why the AUC is undefined, if it is.
    pub auc_undefined: Option<String>,
    pub arl_nominal: Option<f64>,
    pub arl_nonnominal: Option<f64>,
    pub run_lengths: RunLengthSample,
}

pub fn summarize(alarm_windows: &[usize], boundary: usize) -> Result<RunLengthSummary> {
    let rls = run_lengths(alarm_windows, boundary)?;
    let (auc_rl, auc_undefined) = match auc_rl(&rls) {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(RunLengthSummary {
        auc_rl,
        auc_undefined,
        arl_nominal: average_run_length(&rls.nominal),
        arl_nonnominal: average_run_length(&rls.nonnominal),
        run_lengths: rls,
    })
}

/// Median of the defined values, `None` if there are none.
pub fn median(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    Some(if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    })
}
