//! CUSUM recursion and Monte-Carlo threshold calibration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};

use super::{CdtError, Result};

const BISECTION_STEPS: usize = 100;

/// Applies `S ← max(0, S + s_w − q)`. Returns `true` on an alarm (`S > h`),
/// in which case `S` is reset to zero.
pub fn cusum_update(accumulator: &mut f64, s_w: f64, q: f64, h: f64) -> bool {
    *accumulator = (*accumulator + s_w - q).max(0.0);
    if *accumulator > h {
        *accumulator = 0.0;
        true
    } else {
        false
    }
}

/// Fraction of windows that raise an alarm when the CUSUM with threshold `h`
/// runs over `draws`, resetting after each alarm.
pub fn alarm_rate(draws: &[f64], q: f64, h: f64) -> f64 {
    let mut s = 0.0;
    let alarms = draws.iter().filter(|&&d| cusum_update(&mut s, d, q, h)).count();
    alarms as f64 / draws.len() as f64
}

/// `count` draws of `χ²_dof / n`, the null law of the local statistic.
pub fn null_statistics(dof: usize, n: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    let law = ChiSquared::new(dof as f64).map_err(|e| CdtError::Config(format!("chi-square law: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| law.sample(&mut rng) / n as f64).collect())
}

/// Constant threshold giving a per-window false-alarm rate of `alpha` on one
/// long simulated null trajectory of `mc_runs` windows.
///
/// The same draws are reused for every candidate `h`, so the bisection
/// works on a fixed, non-increasing step function.
pub fn estimate_threshold(dof: usize, n: usize, q: f64, alpha: f64, mc_runs: usize, seed: u64) -> Result<f64> {
    if dof == 0 || n == 0 {
        return Err(CdtError::Config("dof and n must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CdtError::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if mc_runs < 10_000 {
        return Err(CdtError::Config(format!(
            "at least 10000 Monte-Carlo runs are needed, got {mc_runs}"
        )));
    }
    let draws = null_statistics(dof, n, mc_runs, seed)?;
    calibrate_on(&draws, q, alpha)
}

/// Bisection for `h` on fixed draws of the local statistic.
pub fn calibrate_on(draws: &[f64], q: f64, alpha: f64) -> Result<f64> {
    let at_zero = alarm_rate(draws, q, 0.0);
    if alpha >= at_zero {
        return Err(CdtError::Calibration { alpha, at_zero });
    }
    let (mut lo, mut hi) = (0.0, q.max(1e-3));
    while alarm_rate(draws, q, hi) > alpha {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(CdtError::Calibration { alpha, at_zero });
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if alarm_rate(draws, q, mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
