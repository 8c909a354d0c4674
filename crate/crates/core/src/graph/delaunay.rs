//! Bowyer–Watson Delaunay triangulation.
//!
//! Instead of a finite super-triangle, the hull is closed with "ghost"
//! triangles sharing one symbolic vertex at infinity, so hull edges are never
//! lost to a super-triangle that is too small. Points are inserted in
//! lexicographic order and the circumcircle test is strict, which breaks
//! cocircular ties deterministically.

use ndarray::Array2;

use super::{GraphError, Result};

const INF: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    n: usize,
    /// Counter-clockwise vertex triples.
    triangles: Vec<[usize; 3]>,
}

impl Triangulation {
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Symmetric binary adjacency matrix with zero diagonal.
    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for (i, j) in self.edges() {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `d` is strictly inside the circumcircle of the CCW triangle `abc`.
fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

struct Mesh<'a> {
    pts: &'a [[f64; 2]],
    tris: Vec<[usize; 3]>,
}

impl Mesh<'_> {
    fn conflicts(&self, t: [usize; 3], p: [f64; 2]) -> bool {
        if t[2] == INF {
            // Ghost over hull edge (u, v); the outside lies to the left of u→v.
            let (u, v) = (self.pts[t[0]], self.pts[t[1]]);
            let o = orient(u, v, p);
            if o > 0.0 {
                return true;
            }
            if o == 0.0 {
                let dot = (p[0] - u[0]) * (v[0] - u[0]) + (p[1] - u[1]) * (v[1] - u[1]);
                let len = (v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2);
                return dot > 0.0 && dot < len;
            }
            false
        } else {
            incircle(self.pts[t[0]], self.pts[t[1]], self.pts[t[2]], p) > 0.0
        }
    }

    fn insert(&mut self, k: usize) -> Result<()> {
        let p = self.pts[k];
        let conflict: Vec<bool> = self.tris.iter().map(|&t| self.conflicts(t, p)).collect();
        let seed = conflict
            .iter()
            .position(|&c| c)
            .ok_or_else(|| GraphError::Degenerate(format!("point {k} conflicts with no triangle")))?;
        // Grow a connected cavity from the seed across shared edges.
        let mut in_cavity = vec![false; self.tris.len()];
        in_cavity[seed] = true;
        let mut stack = vec![seed];
        while let Some(ti) = stack.pop() {
            let t = self.tris[ti];
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                if let Some(nj) = self.neighbour(b, a) {
                    if conflict[nj] && !in_cavity[nj] {
                        in_cavity[nj] = true;
                        stack.push(nj);
                    }
                }
            }
        }
        let mut boundary = Vec::new();
        for (ti, t) in self.tris.iter().enumerate() {
            if !in_cavity[ti] {
                continue;
            }
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                let shared = self.neighbour(b, a).map(|nj| in_cavity[nj]).unwrap_or(false);
                if !shared {
                    boundary.push((a, b));
                }
            }
        }
        let mut kept: Vec<[usize; 3]> = self
            .tris
            .iter()
            .zip(&in_cavity)
            .filter(|(_, &c)| !c)
            .map(|(t, _)| *t)
            .collect();
        for (a, b) in boundary {
            let t = if b == INF {
                [k, a, INF]
            } else if a == INF {
                [b, k, INF]
            } else {
                if orient(self.pts[a], self.pts[b], p) <= 0.0 {
                    return Err(GraphError::Degenerate(format!(
                        "cavity for point {k} is not star-shaped"
                    )));
                }
                [a, b, k]
            };
            kept.push(t);
        }
        self.tris = kept;
        Ok(())
    }

    /// Index of the triangle containing directed edge `a → b`.
    fn neighbour(&self, a: usize, b: usize) -> Option<usize> {
        self.tris
            .iter()
            .position(|t| (t[0] == a && t[1] == b) || (t[1] == a && t[2] == b) || (t[2] == a && t[0] == b))
    }
}

/// Delaunay triangulation of a planar point set.
///
/// Fails on fewer than three points, duplicates, or all-collinear input.
pub fn delaunay_triangulate(points: &[[f64; 2]]) -> Result<Triangulation> {
    let n = points.len();
    if n < 3 {
        return Err(GraphError::Degenerate(format!("need at least 3 points, got {n}")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GraphError::Degenerate("non-finite coordinate".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        points[i][0]
            .total_cmp(&points[j][0])
            .then(points[i][1].total_cmp(&points[j][1]))
    });
    for w in order.windows(2) {
        if points[w[0]] == points[w[1]] {
            return Err(GraphError::Degenerate(format!(
                "duplicate points {} and {}",
                w[0], w[1]
            )));
        }
    }
    let (p0, p1) = (order[0], order[1]);
    let third = order[2..]
        .iter()
        .position(|&k| orient(points[p0], points[p1], points[k]) != 0.0)
        .map(|pos| pos + 2)
        .ok_or_else(|| GraphError::Degenerate("all points are collinear".into()))?;
    let p2 = order[third];
    let (a, b, c) = if orient(points[p0], points[p1], points[p2]) > 0.0 {
        (p0, p1, p2)
    } else {
        (p0, p2, p1)
    };
    let mut mesh = Mesh {
        pts: points,
        tris: vec![[a, b, c], [b, a, INF], [c, b, INF], [a, c, INF]],
    };
    for (pos, &k) in order.iter().enumerate() {
        if pos == 0 || pos == 1 || pos == third {
            continue;
        }
        mesh.insert(k)?;
    }
    let triangles: Vec<[usize; 3]> = mesh.tris.into_iter().filter(|t| t[2] != INF).collect();
    Ok(Triangulation { n, triangles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// All non-collinear triples whose circumcircle strictly contains no
    /// other point.
    fn brute_force_edges(pts: &[[f64; 2]]) -> Vec<(usize, usize)> {
        let n = pts.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let o = orient(pts[i], pts[j], pts[k]);
                    if o == 0.0 {
                        continue;
                    }
                    let (a, b, c) = if o > 0.0 { (i, j, k) } else { (i, k, j) };
                    let empty = (0..n)
                        .filter(|&m| m != i && m != j && m != k)
                        .all(|m| incircle(pts[a], pts[b], pts[c], pts[m]) <= 0.0);
                    if empty {
                        edges.extend([(i, j), (i, k), (j, k)]);
                    }
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
            .collect()
    }

    fn hull_area(pts: &[[f64; 2]]) -> f64 {
        let mut p: Vec<[f64; 2]> = pts.to_vec();
        p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &q in &p {
            while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
                lower.pop();
            }
            lower.push(q);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &q in p.iter().rev() {
            while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
                upper.pop();
            }
            upper.push(q);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        let h = lower;
        (0..h.len())
            .map(|i| {
                let (a, b) = (h[i], h[(i + 1) % h.len()]);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
            / 2.0
    }

    #[test]
    fn three_points_form_one_triangle() {
        let t = delaunay_triangulate(&[[0., 0.], [1., 0.], [0., 1.]]).unwrap();
        assert_eq!(t.triangles().len(), 1);
        assert_eq!(t.edges(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn unit_square_gets_one_diagonal() {
        let pts = [[0., 0.], [1., 0.], [1., 1.], [0., 1.]];
        let t = delaunay_triangulate(&pts).unwrap();
        assert_eq!(t.edges().len(), 5);
        // Deterministic tie-break: the diagonal between (1,0) and (0,1).
        assert!(t.edges().contains(&(1, 3)));
        for tri in t.triangles() {
            for m in 0..4 {
                if !tri.contains(&m) {
                    assert!(incircle(pts[tri[0]], pts[tri[1]], pts[tri[2]], pts[m]) <= 0.0);
                }
            }
        }
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(delaunay_triangulate(&[[0., 0.], [1., 1.]]).is_err());
        assert!(delaunay_triangulate(&[[0., 0.], [1., 1.], [2., 2.], [3., 3.]]).is_err());
        assert!(delaunay_triangulate(&[[0., 0.], [1., 0.], [0., 1.], [1., 0.]]).is_err());
    }

    #[test]
    fn collinear_prefix_is_handled() {
        let pts = [[0., 0.], [0., 1.], [0., 2.], [0., 3.], [1., 1.5]];
        let t = delaunay_triangulate(&pts).unwrap();
        assert_eq!(t.edges(), brute_force_edges(&pts));
        assert_eq!(t.triangles().len(), 3);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..100 {
            let n = 3 + case % 8;
            let pts = random_points(&mut rng, n);
            let t = delaunay_triangulate(&pts).unwrap();
            assert_eq!(t.edges(), brute_force_edges(&pts), "case {case}");
            assert!(t.edges().len() <= 3 * n - 6 || n == 3);
            let area: f64 = t
                .triangles()
                .iter()
                .map(|tri| orient(pts[tri[0]], pts[tri[1]], pts[tri[2]]) / 2.0)
                .sum();
            assert!((area - hull_area(&pts)).abs() < 1e-9, "case {case}");
            let a = t.adjacency();
            assert_eq!(a, a.t());
            assert!((0..n).all(|i| a[[i, i]] == 0.0));
        }
    }

    #[test]
    fn larger_instances_cover_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = random_points(&mut rng, 300);
        let t = delaunay_triangulate(&pts).unwrap();
        let area: f64 = t
            .triangles()
            .iter()
            .map(|tri| orient(pts[tri[0]], pts[tri[1]], pts[tri[2]]) / 2.0)
            .sum();
        assert!((area - hull_area(&pts)).abs() < 1e-8);
        assert!(t.edges().len() <= 3 * 300 - 6);
    }
}
