//! Element-wise standardisation of node and edge attributes.
//!
//! Moments are estimated per entry (node `i`, feature `f`) on the training
//! stream only. Edge-attribute moments only count graphs in which the edge
//! exists, and missing edges keep their all-zero attribute vector.

use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, GraphStream, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMoments {
    pub x_mean: Array2<f64>,
    pub x_std: Array2<f64>,
    pub e_mean: Array3<f64>,
    pub e_std: Array3<f64>,
}

impl AttributeMoments {
    pub fn fit(train: &GraphStream) -> Result<Self> {
        let first = train
            .graphs
            .first()
            .ok_or_else(|| GraphError::InvalidParameters("empty training stream".into()))?;
        let n = train.graphs.iter().map(Graph::order).max().unwrap_or(0);
        let (f, s) = (first.node_features(), first.edge_features());
        let mut xs = Array2::<f64>::zeros((n, f));
        let mut xss = Array2::<f64>::zeros((n, f));
        let mut xc = vec![0usize; n];
        let mut es = Array3::<f64>::zeros((n, n, s));
        let mut ess = Array3::<f64>::zeros((n, n, s));
        let mut ec = Array2::<f64>::zeros((n, n));
        for g in &train.graphs {
            if g.node_features() != f || g.edge_features() != s {
                return Err(GraphError::Shape("attribute dimensions vary across the stream".into()));
            }
            for i in 0..g.order() {
                xc[i] += 1;
                for k in 0..f {
                    let v = g.node_attributes()[[i, k]];
                    xs[[i, k]] += v;
                    xss[[i, k]] += v * v;
                }
                for j in 0..g.order() {
                    if g.adjacency()[[i, j]] == 1.0 {
                        ec[[i, j]] += 1.0;
                        for k in 0..s {
                            let v = g.edge_attributes()[[i, j, k]];
                            es[[i, j, k]] += v;
                            ess[[i, j, k]] += v * v;
                        }
                    }
                }
            }
        }
        let moments = |sum: f64, sq: f64, count: f64| {
            if count == 0.0 {
                return (0.0, 0.0);
            }
            let mean = sum / count;
            let var = (sq / count - mean * mean).max(0.0);
            (mean, var.sqrt())
        };
        let mut x_mean = Array2::zeros((n, f));
        let mut x_std = Array2::zeros((n, f));
        for i in 0..n {
            for k in 0..f {
                let (m, sd) = moments(xs[[i, k]], xss[[i, k]], xc[i] as f64);
                x_mean[[i, k]] = m;
                x_std[[i, k]] = sd;
            }
        }
        let mut e_mean = Array3::zeros((n, n, s));
        let mut e_std = Array3::zeros((n, n, s));
        for ((i, j, k), m) in e_mean.indexed_iter_mut() {
            let (mu, sd) = moments(es[[i, j, k]], ess[[i, j, k]], ec[[i, j]]);
            *m = mu;
            e_std[[i, j, k]] = sd;
        }
        Ok(AttributeMoments {
            x_mean,
            x_std,
            e_mean,
            e_std,
        })
    }

    /// Centres every entry and scales entries with nonzero spread.
    pub fn apply(&self, g: &Graph) -> Result<Graph> {
        let n = g.order();
        if n > self.x_mean.nrows()
            || g.node_features() != self.x_mean.ncols()
            || g.edge_features() != self.e_mean.dim().2
        {
            return Err(GraphError::Shape("graph does not match the fitted moments".into()));
        }
        let scale = |v: f64, m: f64, sd: f64| if sd > 0.0 { (v - m) / sd } else { v - m };
        let mut x = g.node_attributes().clone();
        Zip::indexed(&mut x).for_each(|(i, k), v| {
            *v = scale(*v, self.x_mean[[i, k]], self.x_std[[i, k]]);
        });
        let mut e = g.edge_attributes().clone();
        Zip::indexed(&mut e).for_each(|(i, j, k), v| {
            if g.adjacency()[[i, j]] == 1.0 {
                *v = scale(*v, self.e_mean[[i, j, k]], self.e_std[[i, j, k]]);
            }
        });
        Ok(g.with_attributes(x, e))
    }

    pub fn apply_stream(&self, stream: &GraphStream) -> Result<GraphStream> {
        Ok(GraphStream {
            graphs: stream.graphs.iter().map(|g| self.apply(g)).collect::<Result<_>>()?,
            change_point: stream.change_point,
            seed: stream.seed,
        })
    }
}

/// Fits moments on `train` and applies them to both streams.
pub fn normalize_attributes(
    train: &GraphStream,
    other: &GraphStream,
) -> Result<(GraphStream, GraphStream, AttributeMoments)> {
    let moments = AttributeMoments::fit(train)?;
    Ok((moments.apply_stream(train)?, moments.apply_stream(other)?, moments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_benchmark_stream, BenchmarkConfig};
    use ndarray::array;

    #[test]
    fn training_stream_is_standardised() {
        let cfg = BenchmarkConfig {
            n_train: 300,
            n_operational: 20,
            change_point: 10,
            seed: 5,
            ..Default::default()
        };
        let (train, op) = make_benchmark_stream(&cfg).unwrap();
        let (nt, no, _) = normalize_attributes(&train, &op).unwrap();
        assert_eq!(no.len(), op.len());
        let m = nt.len() as f64;
        for i in 0..7 {
            for k in 0..2 {
                let vals: Vec<f64> = nt.graphs.iter().map(|g| g.node_attributes()[[i, k]]).collect();
                let mean = vals.iter().sum::<f64>() / m;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
                assert!(mean.abs() <= 1e-9);
                assert!((var - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn constant_entries_are_only_centred() {
        let a = array![[0., 1.], [1., 0.]];
        let mut e = Array3::zeros((2, 2, 1));
        e[[0, 1, 0]] = 2.0;
        e[[1, 0, 0]] = 2.0;
        let g1 = Graph::new(a.clone(), array![[3.0], [1.0]], e.clone()).unwrap();
        let g2 = Graph::new(a, array![[3.0], [5.0]], e).unwrap();
        let train = GraphStream::new(vec![g1, g2]);
        let m = AttributeMoments::fit(&train).unwrap();
        let out = m.apply(&train.graphs[0]).unwrap();
        assert_eq!(out.node_attributes()[[0, 0]], 0.0);
        assert_eq!(out.node_attributes()[[1, 0]], -1.0);
        assert_eq!(out.edge_attributes()[[0, 1, 0]], 0.0);
        assert_eq!(out.edge_attributes()[[0, 0, 0]], 0.0);
    }

    #[test]
    fn moments_persist() {
        let cfg = BenchmarkConfig {
            n_train: 30,
            n_operational: 20,
            change_point: 10,
            seed: 2,
            ..Default::default()
        };
        let (train, op) = make_benchmark_stream(&cfg).unwrap();
        let m = AttributeMoments::fit(&train).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: AttributeMoments = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.apply_stream(&op).unwrap(), m.apply_stream(&op).unwrap());
    }
}
