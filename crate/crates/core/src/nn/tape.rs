//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Every value is a 2-D `f64` matrix; scalars are `1×1`. Nodes are appended
//! to a [`Tape`] in evaluation order, so a single reverse sweep computes all
//! gradients.

use ndarray::{s, Array2, Axis};
use std::rc::Rc;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse weighted aggregation within each graph of a batch:
/// `out[row] = Σ_k weight_k · in[src_k]` over the entries of `row`.
#[derive(Debug, Clone, Default)]
pub struct Aggregation {
    pub rows: usize,
    /// `entries[row]` lists `(source_row, weight)`.
    pub entries: Vec<Vec<(usize, f64)>>,
}

/// Edge list for an edge-conditioned convolution; edge `k` sends node
/// `source` to node `target` with weight `weight`, and owns kernel row `k`.
#[derive(Debug, Clone, Default)]
pub struct EdgePlan {
    pub rows: usize,
    pub edges: Vec<(usize, usize, f64)>,
    /// `incoming[target]` lists the edges ending at `target`.
    pub incoming: Vec<Vec<usize>>,
}

/// Curvature of each `block`-wide column group of a latent matrix.
#[derive(Debug, Clone)]
pub struct BlockGeometry {
    pub block: usize,
    pub kappas: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Rc<Mat>),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Aggregate(Var, Rc<Aggregation>),
    EdgeConv {
        x: Var,
        kernels: Var,
        plan: Rc<EdgePlan>,
        fin: usize,
        fout: usize,
    },
    SegmentSum(Var, Rc<Vec<(usize, usize)>>),
    ProjectBlocks(Var, Rc<BlockGeometry>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Mat,
        inv_std: Vec<f64>,
    },
    SumSquares(Var),
    Bce {
        p: Var,
        target: Rc<Mat>,
        weight: Rc<Mat>,
        eps: f64,
    },
    SquaredError {
        x: Var,
        target: Rc<Mat>,
        weight: Rc<Mat>,
    },
    GeometricLoss {
        z: Var,
        geometry: Rc<BlockGeometry>,
        sigma: f64,
        eps: f64,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Sum with a fixed order independent of term order (sorted by value).
pub(crate) fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(|a, b| a.total_cmp(b));
    terms.iter().sum()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Per-block membership `exp(-(⟨z,z⟩_κ - 1/κ)² / 2ς²)`; flat blocks score 1.
pub(crate) fn block_membership(z: &[f64], kappa: f64, sigma: f64) -> (f64, f64) {
    if kappa == 0.0 {
        return (1.0, 0.0);
    }
    let n = z.len();
    let head: f64 = z[..n - 1].iter().map(|v| v * v).sum();
    let last = z[n - 1] * z[n - 1];
    let product = if kappa < 0.0 { head - last } else { head + last };
    let residual = product - 1.0 / kappa;
    ((-residual * residual / (2.0 * sigma * sigma)).exp(), residual)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds a `1×n` row vector to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let v = self.value(a) + &self.value(bias).row(0);
        self.push(v, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Rc<Mat>) -> Var {
        let v = self.value(a) * &*c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn aggregate(&mut self, a: Var, agg: Rc<Aggregation>) -> Var {
        let input = self.value(a);
        let cols = input.ncols();
        let mut out = Mat::zeros((agg.rows, cols));
        let mut terms = Vec::new();
        for (row, entries) in agg.entries.iter().enumerate() {
            for c in 0..cols {
                terms.clear();
                terms.extend(entries.iter().map(|&(src, w)| w * input[[src, c]]));
                out[[row, c]] = canonical_sum(&mut terms);
            }
        }
        self.push(out, Op::Aggregate(a, agg))
    }

    /// Edge-conditioned aggregation `out_i = Σ_e w_e · x_src(e) · K_e`, where
    /// row `e` of `kernels` holds the row-major `fin×fout` kernel of edge `e`.
    pub fn edge_conv(&mut self, x: Var, kernels: Var, plan: Rc<EdgePlan>, fin: usize, fout: usize) -> Var {
        let xv = self.value(x);
        let kv = self.value(kernels);
        let mut out = Mat::zeros((plan.rows, fout));
        let mut contrib = Mat::zeros((plan.edges.len(), fout));
        for (e, &(src, _, w)) in plan.edges.iter().enumerate() {
            let kernel = kv.row(e);
            for b in 0..fout {
                let mut acc = 0.0;
                for a in 0..fin {
                    acc += xv[[src, a]] * kernel[a * fout + b];
                }
                contrib[[e, b]] = w * acc;
            }
        }
        let mut terms = Vec::new();
        for (target, edges) in plan.incoming.iter().enumerate() {
            for b in 0..fout {
                terms.clear();
                terms.extend(edges.iter().map(|&e| contrib[[e, b]]));
                out[[target, b]] = canonical_sum(&mut terms);
            }
        }
        self.push(
            out,
            Op::EdgeConv {
                x,
                kernels,
                plan,
                fin,
                fout,
            },
        )
    }

    /// Sums rows `start..end` of each segment into one output row.
    pub fn segment_sum(&mut self, a: Var, segments: Rc<Vec<(usize, usize)>>) -> Var {
        let input = self.value(a);
        let cols = input.ncols();
        let mut out = Mat::zeros((segments.len(), cols));
        let mut terms = Vec::new();
        for (g, &(start, end)) in segments.iter().enumerate() {
            for c in 0..cols {
                terms.clear();
                terms.extend((start..end).map(|r| input[[r, c]]));
                out[[g, c]] = canonical_sum(&mut terms);
            }
        }
        self.push(out, Op::SegmentSum(a, segments))
    }

    /// Differentiable map of every latent block onto its manifold: radial
    /// normalisation on spheres, the hyperboloid lift
    /// `(s, sqrt(|s|² + 1/|κ|))` on hyperbolic blocks, identity when flat.
    pub fn project_blocks(&mut self, a: Var, geometry: Rc<BlockGeometry>) -> Var {
        let mut out = self.value(a).clone();
        let bd = geometry.block;
        for mut row in out.rows_mut() {
            for (blk, &kappa) in geometry.kappas.iter().enumerate() {
                let mut z = row.slice_mut(s![blk * bd..(blk + 1) * bd]);
                if kappa > 0.0 {
                    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    let sc = 1.0 / (kappa.sqrt() * norm);
                    z.mapv_inplace(|v| v * sc);
                } else if kappa < 0.0 {
                    let head: f64 = z.iter().take(bd - 1).map(|v| v * v).sum();
                    z[bd - 1] = (head + 1.0 / kappa.abs()).sqrt();
                }
            }
        }
        self.push(out, Op::ProjectBlocks(a, geometry))
    }

    /// Batch normalisation with batch statistics; returns the output and the
    /// batch mean and (biased) variance for running-average updates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        let m = xv.nrows() as f64;
        let mean = xv.mean_axis(Axis(0)).expect("nonempty batch");
        let centred = xv - &mean;
        let var = centred.mapv(|v| v * v).sum_axis(Axis(0)) / m;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut normalized = centred;
        for mut row in normalized.rows_mut() {
            for (v, is) in row.iter_mut().zip(&inv_std) {
                *v *= is;
            }
        }
        let out = &normalized * &self.value(gamma).row(0) + self.value(beta).row(0);
        let (mean, var) = (mean.to_vec(), var.to_vec());
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        );
        (v, mean, var)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x * x).sum::<f64>();
        self.push(Mat::from_elem((1, 1), v), Op::SumSquares(a))
    }

    /// `-Σ w·[t ln p + (1-t) ln(1-p)]` with `p` clamped to `[eps, 1-eps]`.
    pub fn bce(&mut self, p: Var, target: Rc<Mat>, weight: Rc<Mat>, eps: f64) -> Var {
        let pv = self.value(p);
        let mut total = 0.0;
        for ((pi, ti), wi) in pv.iter().zip(target.iter()).zip(weight.iter()) {
            if *wi == 0.0 {
                continue;
            }
            let pc = pi.clamp(eps, 1.0 - eps);
            total -= wi * (ti * pc.ln() + (1.0 - ti) * (1.0 - pc).ln());
        }
        self.push(Mat::from_elem((1, 1), total), Op::Bce { p, target, weight, eps })
    }

    /// `Σ w·(x - t)²`.
    pub fn squared_error(&mut self, x: Var, target: Rc<Mat>, weight: Rc<Mat>) -> Var {
        let xv = self.value(x);
        let total: f64 = xv
            .iter()
            .zip(target.iter())
            .zip(weight.iter())
            .map(|((x, t), w)| w * (x - t) * (x - t))
            .sum();
        self.push(Mat::from_elem((1, 1), total), Op::SquaredError { x, target, weight })
    }

    /// Mean over rows of `-ln(D(z) + eps)`, where `D` averages the block
    /// memberships.
    pub fn geometric_loss(&mut self, z: Var, geometry: Rc<BlockGeometry>, sigma: f64, eps: f64) -> Var {
        let zv = self.value(z);
        let bd = geometry.block;
        let c = geometry.kappas.len() as f64;
        let mut total = 0.0;
        for row in zv.rows() {
            let row = row.to_vec();
            let d: f64 = geometry
                .kappas
                .iter()
                .enumerate()
                .map(|(blk, &k)| block_membership(&row[blk * bd..(blk + 1) * bd], k, sigma).0)
                .sum::<f64>()
                / c;
            total -= (d + eps).ln();
        }
        let v = total / zv.nrows() as f64;
        self.push(
            Mat::from_elem((1, 1), v),
            Op::GeometricLoss {
                z,
                geometry,
                sigma,
                eps,
            },
        )
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::ones(self.nodes[output.0].value.dim()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        fn acc(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        }
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.dot(&self.value(*b).t());
                let db = self.value(*a).t().dot(g);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::AddBias(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g * self.value(*b));
                acc(grads, *b, g * self.value(*a));
            }
            Op::MulConst(a, c) => acc(grads, *a, g * &**c),
            Op::Scale(a, c) => acc(grads, *a, g * *c),
            Op::Relu(a) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(grads, *a, g * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(grads, *a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    acc(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                acc(grads, *a, d);
            }
            Op::Aggregate(a, agg) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (row, entries) in agg.entries.iter().enumerate() {
                    for &(src, w) in entries {
                        let gr = g.row(row);
                        let mut dr = d.row_mut(src);
                        dr.scaled_add(w, &gr);
                    }
                }
                acc(grads, *a, d);
            }
            Op::EdgeConv {
                x,
                kernels,
                plan,
                fin,
                fout,
            } => {
                let xv = self.value(*x);
                let kv = self.value(*kernels);
                let mut dx = Mat::zeros(xv.dim());
                let mut dk = Mat::zeros(kv.dim());
                for (e, &(src, target, w)) in plan.edges.iter().enumerate() {
                    for a in 0..*fin {
                        let mut sx = 0.0;
                        for b in 0..*fout {
                            let gb = g[[target, b]] * w;
                            sx += kv[[e, a * fout + b]] * gb;
                            dk[[e, a * fout + b]] += xv[[src, a]] * gb;
                        }
                        dx[[src, a]] += sx;
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *kernels, dk);
            }
            Op::SegmentSum(a, segments) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (gi, &(start, end)) in segments.iter().enumerate() {
                    for r in start..end {
                        d.row_mut(r).assign(&g.row(gi));
                    }
                }
                acc(grads, *a, d);
            }
            Op::ProjectBlocks(a, geometry) => {
                let zv = self.value(*a);
                let mut d = g.clone();
                let bd = geometry.block;
                for (r, mut drow) in d.rows_mut().into_iter().enumerate() {
                    for (blk, &kappa) in geometry.kappas.iter().enumerate() {
                        let z = zv.slice(s![r, blk * bd..(blk + 1) * bd]);
                        let mut dz = drow.slice_mut(s![blk * bd..(blk + 1) * bd]);
                        if kappa > 0.0 {
                            let r2: f64 = z.iter().map(|v| v * v).sum::<f64>().max(1e-24);
                            let norm = r2.sqrt();
                            let zg: f64 = z.iter().zip(dz.iter()).map(|(a, b)| a * b).sum();
                            let sc = 1.0 / (kappa.sqrt() * norm);
                            for (dv, zi) in dz.iter_mut().zip(z.iter()) {
                                *dv = (*dv - zg * zi / r2) * sc;
                            }
                        } else if kappa < 0.0 {
                            let head: f64 = z.iter().take(bd - 1).map(|v| v * v).sum();
                            let t = (head + 1.0 / kappa.abs()).sqrt();
                            let gl = dz[bd - 1];
                            for i in 0..bd - 1 {
                                dz[i] += gl * z[i] / t;
                            }
                            dz[bd - 1] = 0.0;
                        }
                    }
                }
                acc(grads, *a, d);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gamma).row(0).to_owned();
                let m = normalized.nrows() as f64;
                let dgamma = (g * normalized).sum_axis(Axis(0));
                let dbeta = g.sum_axis(Axis(0));
                let dxhat = g * &gv;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * normalized).sum_axis(Axis(0));
                let mut dx = Mat::zeros(normalized.dim());
                for r in 0..normalized.nrows() {
                    for c in 0..normalized.ncols() {
                        dx[[r, c]] = inv_std[c] / m
                            * (m * dxhat[[r, c]] - sum_dxhat[c] - normalized[[r, c]] * sum_dxhat_xhat[c]);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gamma, dgamma.insert_axis(Axis(0)));
                acc(grads, *beta, dbeta.insert_axis(Axis(0)));
            }
            Op::SumSquares(a) => {
                let s = g[[0, 0]] * 2.0;
                acc(grads, *a, self.value(*a) * s);
            }
            Op::Bce { p, target, weight, eps } => {
                let s = g[[0, 0]];
                let pv = self.value(*p);
                let mut d = Mat::zeros(pv.dim());
                ndarray::Zip::from(&mut d)
                    .and(pv)
                    .and(&**target)
                    .and(&**weight)
                    .for_each(|d, &p, &t, &w| {
                        if w != 0.0 && p > *eps && p < 1.0 - *eps {
                            *d = -s * w * (t / p - (1.0 - t) / (1.0 - p));
                        }
                    });
                acc(grads, *p, d);
            }
            Op::SquaredError { x, target, weight } => {
                let s = g[[0, 0]];
                let xv = self.value(*x);
                let d = (xv - &**target) * &**weight * (2.0 * s);
                acc(grads, *x, d);
            }
            Op::GeometricLoss {
                z,
                geometry,
                sigma,
                eps,
            } => {
                let s = g[[0, 0]];
                let zv = self.value(*z);
                let bd = geometry.block;
                let c = geometry.kappas.len() as f64;
                let nrows = zv.nrows() as f64;
                let mut d = Mat::zeros(zv.dim());
                for (r, row) in zv.rows().into_iter().enumerate() {
                    let row = row.to_vec();
                    let parts: Vec<(f64, f64)> = geometry
                        .kappas
                        .iter()
                        .enumerate()
                        .map(|(blk, &k)| block_membership(&row[blk * bd..(blk + 1) * bd], k, *sigma))
                        .collect();
                    let dval: f64 = parts.iter().map(|p| p.0).sum::<f64>() / c;
                    let outer = -s / (nrows * (dval + eps));
                    for (blk, &k) in geometry.kappas.iter().enumerate() {
                        if k == 0.0 {
                            continue;
                        }
                        let (m, residual) = parts[blk];
                        // dm/dz = m · (-residual/ς²) · 2·J·z
                        let coef = outer / c * m * (-residual / (sigma * sigma)) * 2.0;
                        for i in 0..bd {
                            let sign = if k < 0.0 && i == bd - 1 { -1.0 } else { 1.0 };
                            d[[r, blk * bd + i]] = coef * sign * row[blk * bd + i];
                        }
                    }
                }
                acc(grads, *z, d);
            }
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}
