//! Attributed graphs, graph streams, attribute normalisation and the
//! synthetic Delaunay benchmark.

mod delaunay;
mod io;
mod normalize;
mod synthetic;

pub use delaunay::{delaunay_triangulate, Triangulation};
pub use io::{read_stream, write_stream, StreamHeader};
pub use normalize::{normalize_attributes, AttributeMoments};
pub use synthetic::{
    class_radius, class_support, make_benchmark_stream, sample_base_support, sample_delaunay_graph, BenchmarkConfig,
    DelaunayClassSpec,
};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("adjacency entries must be 0 or 1 (found {value} at ({i}, {j}))")]
    NonBinary { i: usize, j: usize, value: f64 },
    #[error("edge attributes present on missing edge ({i}, {j})")]
    DanglingEdgeAttribute { i: usize, j: usize },
    #[error("degenerate point set: {0}")]
    Degenerate(String),
    #[error("invalid stream parameters: {0}")]
    InvalidParameters(String),
    #[error("stream format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// A graph given by its adjacency matrix `A` (N×N), node attributes `X`
/// (N×F) and edge attributes `E` (N×N×S).
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    a: Array2<f64>,
    x: Array2<f64>,
    e: Array3<f64>,
}

impl Graph {
    pub fn new(a: Array2<f64>, x: Array2<f64>, e: Array3<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(GraphError::Shape(format!("A is {}x{}", n, a.ncols())));
        }
        if x.nrows() != n {
            return Err(GraphError::Shape(format!("X has {} rows, A has {}", x.nrows(), n)));
        }
        let (e0, e1, _) = e.dim();
        if e0 != n || e1 != n {
            return Err(GraphError::Shape(format!("E is {e0}x{e1}, expected {n}x{n}")));
        }
        for ((i, j), &v) in a.indexed_iter() {
            if v != 0.0 && v != 1.0 {
                return Err(GraphError::NonBinary { i, j, value: v });
            }
            if v == 0.0 && e.slice(ndarray::s![i, j, ..]).iter().any(|&c| c != 0.0) {
                return Err(GraphError::DanglingEdgeAttribute { i, j });
            }
        }
        if x.iter().chain(e.iter()).any(|v| !v.is_finite()) {
            return Err(GraphError::Shape("non-finite attribute".into()));
        }
        Ok(Graph { a, x, e })
    }

    /// Graph without edge attributes (S = 0).
    pub fn without_edge_attributes(a: Array2<f64>, x: Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        Graph::new(a, x, Array3::zeros((n, n, 0)))
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn node_attributes(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn edge_attributes(&self) -> &Array3<f64> {
        &self.e
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn node_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn edge_features(&self) -> usize {
        self.e.dim().2
    }

    pub fn is_undirected(&self) -> bool {
        let n = self.order();
        (0..n).all(|i| self.a[[i, i]] == 0.0 && (0..i).all(|j| self.a[[i, j]] == self.a[[j, i]]))
    }

    pub fn edge_count(&self) -> usize {
        self.a.iter().filter(|&&v| v == 1.0).count()
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.order();
        assert_eq!(perm.len(), n);
        let a = Array2::from_shape_fn((n, n), |(i, j)| self.a[[perm[i], perm[j]]]);
        let x = Array2::from_shape_fn(self.x.dim(), |(i, f)| self.x[[perm[i], f]]);
        let e = Array3::from_shape_fn(self.e.dim(), |(i, j, s)| self.e[[perm[i], perm[j], s]]);
        Graph { a, x, e }
    }

    pub(crate) fn with_attributes(&self, x: Array2<f64>, e: Array3<f64>) -> Self {
        Graph {
            a: self.a.clone(),
            x,
            e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Nominal,
    NonNominal,
}

/// An ordered sequence of graphs with optional ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphStream {
    pub graphs: Vec<Graph>,
    /// Index of the first non-nominal graph, when known.
    pub change_point: Option<usize>,
    pub seed: Option<u64>,
}

impl GraphStream {
    pub fn new(graphs: Vec<Graph>) -> Self {
        GraphStream {
            graphs,
            change_point: None,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Regime label of graph `t` under the recorded change point.
    pub fn regime(&self, t: usize) -> Option<Regime> {
        self.change_point
            .map(|tau| if t < tau { Regime::Nominal } else { Regime::NonNominal })
    }

    pub fn labels(&self) -> Option<Vec<Regime>> {
        self.change_point
            .map(|_| (0..self.len()).map(|t| self.regime(t).unwrap()).collect())
    }
}
