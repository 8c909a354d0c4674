//! Synthetic stream of Delaunay triangulations.
//!
//! Class 0 support points are uniform in `[0,10]²`. Class `C ≥ 1` displaces
//! every support point by `r·[cos θ_i, sin φ_i]` with `r = 10·(2/3)^(C-1)`
//! and independent angles `θ_i, φ_i ~ U(0, 2π)`. Graph instances add
//! Gaussian noise to the support and connect nodes that share a triangle.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::{delaunay_triangulate, Graph, GraphError, GraphStream, Result};
use crate::seeding;

const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct DelaunayClassSpec {
    pub class_index: u32,
    /// Support points, one `[x, y]` row per node.
    pub support: Vec<[f64; 2]>,
    pub noise_std: f64,
}

/// Displacement radius of class `c ≥ 1`.
pub fn class_radius(c: u32) -> f64 {
    10.0 * (2.0f64 / 3.0).powi(c as i32 - 1)
}

/// `n` support points drawn uniformly from `[0,10]²`.
pub fn sample_base_support(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
        .collect()
}

/// Support of class `c` derived from the class-0 support.
pub fn class_support(base: &[[f64; 2]], c: u32, seed: u64) -> Vec<[f64; 2]> {
    if c == 0 {
        return base.to_vec();
    }
    let r = class_radius(c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = base.len();
    let theta: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
    let phi: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
    base.iter()
        .enumerate()
        .map(|(i, p)| [p[0] + r * theta[i].cos(), p[1] + r * phi[i].sin()])
        .collect()
}

/// One noisy instance of a class; resamples the noise if the perturbed
/// points are degenerate.
pub fn sample_delaunay_graph<R: Rng + ?Sized>(spec: &DelaunayClassSpec, rng: &mut R) -> Result<Graph> {
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).map_err(|e| GraphError::InvalidParameters(e.to_string()))?;
    let n = spec.support.len();
    let mut last_err = None;
    for _ in 0..MAX_RESAMPLES {
        let pts: Vec<[f64; 2]> = spec
            .support
            .iter()
            .map(|p| {
                if spec.noise_std == 0.0 {
                    *p
                } else {
                    [p[0] + noise.sample(rng), p[1] + noise.sample(rng)]
                }
            })
            .collect();
        match delaunay_triangulate(&pts) {
            Ok(t) => {
                let x = Array2::from_shape_fn((n, 2), |(i, f)| pts[i][f]);
                return Graph::new(t.adjacency(), x, Array3::zeros((n, n, 0)));
            }
            Err(e) => last_err = Some(e),
        }
        if spec.noise_std == 0.0 {
            break;
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Sizes and seed of a synthetic benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub class_index: u32,
    pub n_train: usize,
    pub n_operational: usize,
    pub change_point: usize,
    pub nodes: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            class_index: 2,
            n_train: 5000,
            n_operational: 20_000,
            change_point: 10_000,
            nodes: 7,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

/// Training stream (class 0) and operational stream (class 0 before the
/// change point, class `C` from it).
///
/// The base support and the training stream depend only on the seed, so
/// every class shares the same nominal regime for a given seed.
pub fn make_benchmark_stream(cfg: &BenchmarkConfig) -> Result<(GraphStream, GraphStream)> {
    if cfg.change_point == 0 || cfg.change_point >= cfg.n_operational {
        return Err(GraphError::InvalidParameters(format!(
            "change point {} must lie strictly inside the operational stream of length {}",
            cfg.change_point, cfg.n_operational
        )));
    }
    if cfg.n_train == 0 || cfg.nodes < 3 {
        return Err(GraphError::InvalidParameters(
            "need a nonempty training stream and at least 3 nodes".into(),
        ));
    }
    let base = sample_base_support(cfg.nodes, seeding::derive(cfg.seed, "support"));
    let nominal = DelaunayClassSpec {
        class_index: 0,
        support: base.clone(),
        noise_std: cfg.noise_std,
    };
    let shifted = DelaunayClassSpec {
        class_index: cfg.class_index,
        support: class_support(
            &base,
            cfg.class_index,
            seeding::derive_indexed(cfg.seed, "class", u64::from(cfg.class_index)),
        ),
        noise_std: cfg.noise_std,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(cfg.seed, "train"));
    let train = (0..cfg.n_train)
        .map(|_| sample_delaunay_graph(&nominal, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive_indexed(
        cfg.seed,
        "operational",
        u64::from(cfg.class_index),
    ));
    let operational = (0..cfg.n_operational)
        .map(|t| {
            let spec = if t < cfg.change_point { &nominal } else { &shifted };
            sample_delaunay_graph(spec, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        GraphStream {
            graphs: train,
            change_point: None,
            seed: Some(cfg.seed),
        },
        GraphStream {
            graphs: operational,
            change_point: Some(cfg.change_point),
            seed: Some(cfg.seed),
        },
    ))
}
