//! Packing a list of graphs into the sparse structures consumed by the tape.

use std::rc::Rc;

use ndarray::{s, Array2};

use super::tape::{Aggregation, EdgePlan, Mat};
use super::ConvKind;
use crate::graph::Graph;

/// A batch of graphs stacked along the node axis, with padded decoder targets.
pub struct GraphBatch {
    pub size: usize,
    /// Stacked node attributes, `Σ N_g × F`.
    pub x: Mat,
    /// Row ranges of each graph inside `x`.
    pub segments: Rc<Vec<(usize, usize)>>,
    pub propagation: Propagation,
    pub targets: Targets,
}

pub enum Propagation {
    /// Symmetrically normalised `A + I` for node-only convolutions.
    Normalized(Rc<Aggregation>),
    /// Incoming edges and their attributes for edge-conditioned convolutions.
    Edges { plan: Rc<EdgePlan>, attributes: Mat },
}

/// Flattened decoder targets; loss weights are zero on padding and already
/// divided by the batch size.
pub struct Targets {
    pub a: Rc<Mat>,
    pub a_weight: Rc<Mat>,
    pub x: Rc<Mat>,
    pub x_weight: Rc<Mat>,
    pub e: Option<(Rc<Mat>, Rc<Mat>)>,
}

/// `D^-1/2 (A + I) D^-1/2` restricted to nonzero entries, with nodes offset
/// by `offset`.
pub(crate) fn normalized_rows(a: &Array2<f64>, offset: usize, out: &mut Vec<Vec<(usize, f64)>>) {
    let n = a.nrows();
    let with_loops = |i: usize, j: usize| a[[i, j]] + if i == j { 1.0 } else { 0.0 };
    let degree: Vec<f64> = (0..n).map(|i| (0..n).map(|j| with_loops(i, j)).sum()).collect();
    for i in 0..n {
        let row = (0..n)
            .filter(|&j| with_loops(i, j) != 0.0)
            .map(|j| (offset + j, with_loops(i, j) / (degree[i].sqrt() * degree[j].sqrt())))
            .collect();
        out.push(row);
    }
}

impl GraphBatch {
    /// Packs `graphs`; every graph must have at most `max_nodes` nodes and the
    /// attribute widths of the first one.
    pub fn new(graphs: &[&Graph], kind: ConvKind, max_nodes: usize) -> Self {
        let b = graphs.len();
        let f = graphs[0].node_features();
        let sf = graphs[0].edge_features();
        let total: usize = graphs.iter().map(|g| g.order()).sum();
        let inv_b = 1.0 / b as f64;

        let mut x = Mat::zeros((total, f));
        let mut segments = Vec::with_capacity(b);
        let mut rows = Vec::with_capacity(total);
        let mut plan = EdgePlan {
            rows: total,
            edges: Vec::new(),
            incoming: vec![Vec::new(); total],
        };
        let mut edge_attrs: Vec<f64> = Vec::new();

        let m2 = max_nodes * max_nodes;
        let mut at = Mat::zeros((b, m2));
        let mut aw = Mat::zeros((b, m2));
        let mut xt = Mat::zeros((b, max_nodes * f));
        let mut xw = Mat::zeros((b, max_nodes * f));
        let mut et = Mat::zeros((b, m2 * sf));
        let mut ew = Mat::zeros((b, m2 * sf));

        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            let n = g.order();
            let a = g.adjacency();
            let e = g.edge_attributes();
            x.slice_mut(s![offset..offset + n, ..]).assign(g.node_attributes());
            segments.push((offset, offset + n));
            match kind {
                ConvKind::NodeOnly => normalized_rows(a, offset, &mut rows),
                ConvKind::EdgeConditioned => {
                    for i in 0..n {
                        let deg: f64 = a.row(i).sum();
                        for j in 0..n {
                            if a[[i, j]] == 0.0 {
                                continue;
                            }
                            plan.incoming[offset + i].push(plan.edges.len());
                            plan.edges.push((offset + j, offset + i, a[[i, j]] / deg));
                            edge_attrs.extend((0..sf).map(|k| e[[j, i, k]]));
                        }
                    }
                }
            }
            let (wa, wx) = (inv_b / (n * n) as f64, inv_b / n as f64);
            for i in 0..n {
                for j in 0..n {
                    at[[gi, i * max_nodes + j]] = a[[i, j]];
                    aw[[gi, i * max_nodes + j]] = wa;
                    for k in 0..sf {
                        let idx = (i * max_nodes + j) * sf + k;
                        et[[gi, idx]] = e[[i, j, k]];
                        ew[[gi, idx]] = wa;
                    }
                }
                for k in 0..f {
                    xt[[gi, i * f + k]] = g.node_attributes()[[i, k]];
                    xw[[gi, i * f + k]] = wx;
                }
            }
            offset += n;
        }

        let propagation = match kind {
            ConvKind::NodeOnly => Propagation::Normalized(Rc::new(Aggregation {
                rows: total,
                entries: rows,
            })),
            ConvKind::EdgeConditioned => {
                let attributes = Mat::from_shape_vec((plan.edges.len(), sf), edge_attrs).expect("edge attribute rows");
                Propagation::Edges {
                    plan: Rc::new(plan),
                    attributes,
                }
            }
        };
        GraphBatch {
            size: b,
            x,
            segments: Rc::new(segments),
            propagation,
            targets: Targets {
                a: Rc::new(at),
                a_weight: Rc::new(aw),
                x: Rc::new(xt),
                x_weight: Rc::new(xw),
                e: (sf > 0).then(|| (Rc::new(et), Rc::new(ew))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalisation_of_single_node_is_identity() {
        let mut rows = Vec::new();
        normalized_rows(&array![[0.0]], 0, &mut rows);
        assert_eq!(rows, vec![vec![(0, 1.0)]]);
    }

    #[test]
    fn normalisation_of_an_edge() {
        let mut rows = Vec::new();
        normalized_rows(&array![[0.0, 1.0], [1.0, 0.0]], 3, &mut rows);
        for row in &rows {
            assert_eq!(row.iter().map(|e| e.0).collect::<Vec<_>>(), vec![3, 4]);
            assert!(row.iter().all(|e| (e.1 - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn edge_plan_uses_reverse_attributes_and_row_weights() {
        let a = array![
            [0.0, 1.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0]
        ];
        let x = Mat::zeros((4, 1));
        let mut e = ndarray::Array3::zeros((4, 4, 1));
        e[[0, 1, 0]] = 5.0;
        e[[1, 0, 0]] = 7.0;
        e[[0, 2, 0]] = 9.0;
        e[[2, 0, 0]] = 11.0;
        let g = Graph::new(a, x, e).unwrap();
        let batch = GraphBatch::new(&[&g], ConvKind::EdgeConditioned, 4);
        let Propagation::Edges { plan, attributes } = batch.propagation else {
            panic!("expected edge plan")
        };
        assert_eq!(plan.edges, vec![(1, 0, 0.5), (2, 0, 0.5), (0, 1, 1.0), (0, 2, 1.0)]);
        assert_eq!(attributes, array![[7.0], [11.0], [5.0], [9.0]]);
        assert!(plan.incoming[3].is_empty());
    }
}
