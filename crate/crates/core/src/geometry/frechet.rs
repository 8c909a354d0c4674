use super::{exp_map, inner_unchecked, log_map, project_to_ccm, CcmPoint, GeometryError, Result, TangentVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrechetOptions {
    /// Stop once the mean log-vector has norm below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FrechetOptions {
    fn default() -> Self {
        FrechetOptions {
            tolerance: 1e-9,
            max_iterations: 1000,
        }
    }
}

/// Fréchet (Karcher) mean with default options.
pub fn frechet_mean(points: &[CcmPoint]) -> Result<CcmPoint> {
    frechet_mean_with(points, FrechetOptions::default())
}

/// Minimiser of the sum of squared geodesic distances, computed by the
/// fixed-point iteration `μ ← Exp_μ(mean_i Log_μ(z_i))` started from the
/// projected arithmetic mean. The flat case returns the arithmetic mean.
pub fn frechet_mean_with(points: &[CcmPoint], opts: FrechetOptions) -> Result<CcmPoint> {
    let first = points.first().ok_or(GeometryError::Empty)?;
    let kappa = first.kappa();
    let n = first.ambient_dim();
    for p in points {
        if p.kappa() != kappa {
            return Err(GeometryError::CurvatureMismatch {
                left: kappa.value(),
                right: p.kappa().value(),
            });
        }
        if p.ambient_dim() != n {
            return Err(GeometryError::DimensionMismatch {
                expected: n,
                actual: p.ambient_dim(),
            });
        }
    }
    if points.len() == 1 {
        return Ok(first.clone());
    }
    let m = points.len() as f64;
    let mut mean = vec![0.0; n];
    for p in points {
        for (a, c) in mean.iter_mut().zip(p.coords()) {
            *a += c;
        }
    }
    for a in &mut mean {
        *a /= m;
    }
    if kappa.is_flat() {
        return Ok(CcmPoint::new_unchecked(kappa, mean));
    }
    let mut mu = project_to_ccm(kappa, &mean)?;
    let mut step_norm = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let mut step = vec![0.0; n];
        for p in points {
            let v = log_map(&mu, p)?;
            for (s, c) in step.iter_mut().zip(v.coords()) {
                *s += c;
            }
        }
        for s in &mut step {
            *s /= m;
        }
        step_norm = inner_unchecked(kappa, &step, &step).max(0.0).sqrt();
        if step_norm < opts.tolerance {
            return Ok(mu);
        }
        let v = TangentVector::new(&mu, step)?;
        let next = exp_map(&mu, &v)?;
        // Re-project to keep rounding from drifting off the manifold.
        mu = project_to_ccm(kappa, next.coords())?;
    }
    Err(GeometryError::NoConvergence {
        iterations: opts.max_iterations,
        step_norm,
        last: mu,
    })
}
