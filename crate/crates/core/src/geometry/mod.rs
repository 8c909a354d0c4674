//! Closed-form geometry of constant-curvature manifolds (CCMs).
//!
//! A CCM of dimension `d` and curvature `κ ≠ 0` is represented in a
//! `(d+1)`-dimensional ambient space as the set `{x : ⟨x, x⟩_κ = 1/κ}`, where
//! `⟨·,·⟩_κ` is the Euclidean product for `κ > 0` and the Minkowski product
//! (negative last coordinate) for `κ < 0`. For `κ = 0` the whole
//! `(d+1)`-dimensional latent space is used as a flat manifold.
//!
//! Hyperbolic points live on the upper sheet of the hyperboloid
//! (positive last coordinate).

mod frechet;
mod sampling;

pub use frechet::{frechet_mean, frechet_mean_with, FrechetOptions};
pub use sampling::{sample_prior, sample_prior_with};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Slack allowed on manifold and tangency constraints.
pub const CONSTRAINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },
    #[error("curvature must be finite, got {0}")]
    InvalidCurvature(f64),
    #[error("point is not on the manifold: {0}")]
    InvalidPoint(String),
    #[error("vector is not tangent at the base point (residual {residual:e})")]
    InvalidTangent { residual: f64 },
    #[error("log-map undefined for antipodal points on a spherical manifold")]
    Antipodal,
    #[error("projection undefined for the zero vector on a spherical manifold")]
    UndefinedProjection,
    #[error("vector lies outside the future light cone (⟨z,z⟩ = {product:e}, last = {last:e})")]
    OutsideCone { product: f64, last: f64 },
    #[error("empty point set")]
    Empty,
    #[error("Fréchet mean did not converge after {iterations} iterations (step norm {step_norm:e})")]
    NoConvergence {
        iterations: usize,
        step_norm: f64,
        last: CcmPoint,
    },
    #[error("degenerate tangent basis")]
    DegenerateBasis,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Sign class of a curvature value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeometryKind {
    Spherical,
    Flat,
    Hyperbolic,
}

/// Sectional curvature of a CCM.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub const SPHERICAL: Curvature = Curvature(1.0);
    pub const FLAT: Curvature = Curvature(0.0);
    pub const HYPERBOLIC: Curvature = Curvature(-1.0);

    pub fn new(kappa: f64) -> Result<Self> {
        if kappa.is_finite() {
            Ok(Curvature(kappa))
        } else {
            Err(GeometryError::InvalidCurvature(kappa))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn kind(self) -> GeometryKind {
        if self.0 > 0.0 {
            GeometryKind::Spherical
        } else if self.0 < 0.0 {
            GeometryKind::Hyperbolic
        } else {
            GeometryKind::Flat
        }
    }

    pub fn is_flat(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for Curvature {
    type Error = GeometryError;
    fn try_from(value: f64) -> Result<Self> {
        Curvature::new(value)
    }
}

impl From<Curvature> for f64 {
    fn from(k: Curvature) -> f64 {
        k.0
    }
}

impl fmt::Display for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Curvature-dependent scalar product in the ambient space.
pub fn inner_product(kappa: Curvature, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(inner_unchecked(kappa, x, y))
}

pub(crate) fn inner_unchecked(kappa: Curvature, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let head: f64 = x[..n - 1].iter().zip(&y[..n - 1]).map(|(a, b)| a * b).sum();
    let last = x[n - 1] * y[n - 1];
    if kappa.value() < 0.0 {
        head - last
    } else {
        head + last
    }
}

fn euclidean_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A manifold `M_κ` of intrinsic dimension `dim`.
///
/// The ambient space always has `dim + 1` coordinates; for the flat member
/// this means the manifold itself is `(dim+1)`-dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ccm {
    pub kappa: Curvature,
    pub dim: usize,
}

impl Ccm {
    pub fn new(kappa: Curvature, dim: usize) -> Self {
        Ccm { kappa, dim }
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim + 1
    }

    /// Dimension of the tangent space, i.e. the number of tangent coordinates.
    pub fn tangent_dim(&self) -> usize {
        if self.kappa.is_flat() {
            self.dim + 1
        } else {
            self.dim
        }
    }

    /// Point with zero leading coordinates and last coordinate `|κ|^{-1/2}`
    /// (the zero vector on the flat manifold).
    pub fn origin(&self) -> CcmPoint {
        let mut coords = vec![0.0; self.ambient_dim()];
        if !self.kappa.is_flat() {
            coords[self.dim] = 1.0 / self.kappa.value().abs().sqrt();
        }
        CcmPoint {
            kappa: self.kappa,
            coords,
        }
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<CcmPoint> {
        if coords.len() != self.ambient_dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.ambient_dim(),
                actual: coords.len(),
            });
        }
        CcmPoint::new(self.kappa, coords)
    }
}

impl fmt::Display for Ccm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kappa.kind() {
            GeometryKind::Spherical => write!(f, "S(k={},d={})", self.kappa, self.dim),
            GeometryKind::Flat => write!(f, "E(d={})", self.dim + 1),
            GeometryKind::Hyperbolic => write!(f, "H(k={},d={})", self.kappa, self.dim),
        }
    }
}

/// A point on a CCM given by its ambient coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcmPoint {
    kappa: Curvature,
    coords: Vec<f64>,
}

impl CcmPoint {
    /// Checks the on-manifold constraint (and the upper-sheet condition for
    /// hyperbolic points).
    pub fn new(kappa: Curvature, coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 && !kappa.is_flat() {
            return Err(GeometryError::InvalidPoint(
                "curved manifolds need at least two ambient coordinates".into(),
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidPoint("non-finite coordinate".into()));
        }
        if !kappa.is_flat() {
            let k = kappa.value();
            let residual = inner_unchecked(kappa, &coords, &coords) - 1.0 / k;
            // Relative slack for large hyperbolic coordinates.
            let scale = 1.0f64.max(coords.iter().map(|c| c * c).sum::<f64>() * k.abs());
            if residual.abs() > CONSTRAINT_TOL * scale {
                return Err(GeometryError::InvalidPoint(format!("constraint residual {residual:e}")));
            }
            if k < 0.0 && coords[coords.len() - 1] <= 0.0 {
                return Err(GeometryError::InvalidPoint(
                    "hyperbolic point on the lower sheet".into(),
                ));
            }
        }
        Ok(CcmPoint { kappa, coords })
    }

    pub(crate) fn new_unchecked(kappa: Curvature, coords: Vec<f64>) -> Self {
        CcmPoint { kappa, coords }
    }

    pub fn kappa(&self) -> Curvature {
        self.kappa
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn ambient_dim(&self) -> usize {
        self.coords.len()
    }

    pub fn manifold(&self) -> Ccm {
        Ccm::new(self.kappa, self.coords.len() - 1)
    }
}

/// A tangent vector at `base`, in ambient coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    base: CcmPoint,
    coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: &CcmPoint, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != base.ambient_dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: base.ambient_dim(),
                actual: coords.len(),
            });
        }
        if !base.kappa.is_flat() {
            let residual = inner_unchecked(base.kappa, &base.coords, &coords);
            let scale = 1.0f64.max(euclidean_norm(&coords) * euclidean_norm(&base.coords));
            if residual.abs() > CONSTRAINT_TOL * scale {
                return Err(GeometryError::InvalidTangent { residual });
            }
        }
        Ok(TangentVector {
            base: base.clone(),
            coords,
        })
    }

    pub fn zero(base: &CcmPoint) -> Self {
        TangentVector {
            base: base.clone(),
            coords: vec![0.0; base.ambient_dim()],
        }
    }

    pub fn base(&self) -> &CcmPoint {
        &self.base
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Riemannian norm of the vector (Minkowski norm on the hyperboloid).
    pub fn norm(&self) -> f64 {
        inner_unchecked(self.base.kappa, &self.coords, &self.coords)
            .max(0.0)
            .sqrt()
    }
}

fn check_same(x: &CcmPoint, y: &CcmPoint) -> Result<()> {
    if x.kappa != y.kappa {
        return Err(GeometryError::CurvatureMismatch {
            left: x.kappa.value(),
            right: y.kappa.value(),
        });
    }
    if x.coords.len() != y.coords.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: x.coords.len(),
            actual: y.coords.len(),
        });
    }
    Ok(())
}

/// Geodesic distance between two points on the same CCM.
///
/// The closed forms `arccos(κ⟨x,y⟩)/√κ` and `arccosh(κ⟨x,y⟩)/√-κ` are
/// evaluated through the equivalent chord formulas, which stay accurate for
/// nearby points. The arccos/arccosh argument is still checked against its
/// domain.
pub fn geodesic_distance(x: &CcmPoint, y: &CcmPoint) -> Result<f64> {
    check_same(x, y)?;
    let kappa = x.kappa;
    let k = kappa.value();
    let diff: Vec<f64> = x.coords.iter().zip(&y.coords).map(|(a, b)| a - b).collect();
    match kappa.kind() {
        GeometryKind::Flat => Ok(euclidean_norm(&diff)),
        GeometryKind::Spherical => {
            let arg = k * inner_unchecked(kappa, &x.coords, &y.coords);
            if arg.abs() > 1.0 + CONSTRAINT_TOL {
                return Err(GeometryError::InvalidPoint(format!(
                    "arccos argument {arg} outside [-1, 1]"
                )));
            }
            let sk = k.sqrt();
            let half_chord = (sk * euclidean_norm(&diff) / 2.0).min(1.0);
            Ok(2.0 * half_chord.asin() / sk)
        }
        GeometryKind::Hyperbolic => {
            let arg = k * inner_unchecked(kappa, &x.coords, &y.coords);
            if arg < 1.0 - CONSTRAINT_TOL * arg.abs().max(1.0) {
                return Err(GeometryError::InvalidPoint(format!("arccosh argument {arg} below 1")));
            }
            let sk = (-k).sqrt();
            let chord = inner_unchecked(kappa, &diff, &diff).max(0.0).sqrt();
            Ok(2.0 * (sk * chord / 2.0).asinh() / sk)
        }
    }
}

/// Riemannian exponential map at `x`.
pub fn exp_map(x: &CcmPoint, v: &TangentVector) -> Result<CcmPoint> {
    check_same(x, &v.base)?;
    let kappa = x.kappa;
    if kappa.is_flat() {
        let coords = x.coords.iter().zip(&v.coords).map(|(a, b)| a + b).collect();
        return Ok(CcmPoint::new_unchecked(kappa, coords));
    }
    let residual = inner_unchecked(kappa, &x.coords, &v.coords);
    let scale = 1.0f64.max(euclidean_norm(&v.coords) * euclidean_norm(&x.coords));
    if residual.abs() > CONSTRAINT_TOL * scale {
        return Err(GeometryError::InvalidTangent { residual });
    }
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(x.clone());
    }
    let sk = kappa.value().abs().sqrt();
    let t = sk * norm;
    let (a, b) = if kappa.value() > 0.0 {
        (t.cos(), t.sin() / t)
    } else {
        (t.cosh(), t.sinh() / t)
    };
    let coords = x.coords.iter().zip(&v.coords).map(|(xi, vi)| a * xi + b * vi).collect();
    Ok(CcmPoint::new_unchecked(kappa, coords))
}

/// Riemannian logarithmic map: the tangent vector at `x` pointing to `y`
/// whose norm equals the geodesic distance.
pub fn log_map(x: &CcmPoint, y: &CcmPoint) -> Result<TangentVector> {
    check_same(x, y)?;
    let kappa = x.kappa;
    if kappa.is_flat() {
        let coords = y.coords.iter().zip(&x.coords).map(|(a, b)| a - b).collect();
        return Ok(TangentVector {
            base: x.clone(),
            coords,
        });
    }
    let k = kappa.value();
    let arg = k * inner_unchecked(kappa, &x.coords, &y.coords);
    if k > 0.0 && arg < -1.0 + CONSTRAINT_TOL {
        return Err(GeometryError::Antipodal);
    }
    let dist = geodesic_distance(x, y)?;
    if dist == 0.0 {
        return Ok(TangentVector::zero(x));
    }
    // Component of y orthogonal to x, rescaled to the geodesic length.
    let mut u: Vec<f64> = y.coords.iter().zip(&x.coords).map(|(yi, xi)| yi - arg * xi).collect();
    // One re-orthogonalisation pass against x.
    let c = k * inner_unchecked(kappa, &x.coords, &u);
    for (ui, xi) in u.iter_mut().zip(&x.coords) {
        *ui -= c * xi;
    }
    let unorm = inner_unchecked(kappa, &u, &u).max(0.0).sqrt();
    if unorm == 0.0 {
        return Ok(TangentVector::zero(x));
    }
    let s = dist / unorm;
    Ok(TangentVector {
        base: x.clone(),
        coords: u.into_iter().map(|ui| ui * s).collect(),
    })
}

/// Orthogonal projection of an ambient vector onto the CCM.
///
/// Spheres rescale radially to norm `1/√κ`; hyperboloids rescale so that
/// `⟨z,z⟩_κ = 1/κ`, which needs `z` inside the future light cone.
pub fn project_to_ccm(kappa: Curvature, z: &[f64]) -> Result<CcmPoint> {
    let k = kappa.value();
    match kappa.kind() {
        GeometryKind::Flat => Ok(CcmPoint::new_unchecked(kappa, z.to_vec())),
        GeometryKind::Spherical => {
            let norm = euclidean_norm(z);
            if norm == 0.0 || !norm.is_finite() {
                return Err(GeometryError::UndefinedProjection);
            }
            let s = 1.0 / (k.sqrt() * norm);
            Ok(CcmPoint::new_unchecked(kappa, z.iter().map(|v| v * s).collect()))
        }
        GeometryKind::Hyperbolic => {
            let product = inner_unchecked(kappa, z, z);
            let last = z.last().copied().unwrap_or(0.0);
            if !(product < 0.0) || !(last > 0.0) {
                return Err(GeometryError::OutsideCone { product, last });
            }
            let s = 1.0 / (k * product).sqrt();
            Ok(CcmPoint::new_unchecked(kappa, z.iter().map(|v| v * s).collect()))
        }
    }
}

/// How ambient vectors are pulled onto hyperboloids. Spheres and flat
/// members are handled identically by both rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionRule {
    /// Rescaling by [`project_to_ccm`]; fails outside the future light cone.
    Rescale,
    /// Keeps the spatial coordinates and solves for the last one, which is
    /// defined for every input.
    #[default]
    Lift,
}

/// Projection under `rule`. The lift sets the last coordinate to
/// `sqrt(‖s‖² + 1/|κ|)` for spatial part `s`.
pub fn project_with_rule(kappa: Curvature, z: &[f64], rule: ProjectionRule) -> Result<CcmPoint> {
    if rule == ProjectionRule::Rescale || kappa.kind() != GeometryKind::Hyperbolic {
        return project_to_ccm(kappa, z);
    }
    if z.len() < 2 || z.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidPoint(
            "cannot lift a short or non-finite vector".into(),
        ));
    }
    let spatial = &z[..z.len() - 1];
    let head: f64 = spatial.iter().map(|v| v * v).sum();
    let mut coords = spatial.to_vec();
    coords.push((head + 1.0 / kappa.value().abs()).sqrt());
    Ok(CcmPoint::new_unchecked(kappa, coords))
}

/// Deterministic orthonormal basis of the tangent space at a point.
///
/// Canonical axes are orthogonalised (twice, for stability) against the base
/// point and previously accepted axes in fixed order under the curvature's
/// product. Axes whose residual vanishes are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    base: CcmPoint,
    vectors: Vec<Vec<f64>>,
}

impl TangentBasis {
    pub fn at(base: &CcmPoint) -> Result<Self> {
        let kappa = base.kappa;
        let n = base.ambient_dim();
        if kappa.is_flat() {
            let vectors = (0..n)
                .map(|i| {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    e
                })
                .collect();
            return Ok(TangentBasis {
                base: base.clone(),
                vectors,
            });
        }
        let k = kappa.value();
        let want = n - 1;
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(want);
        for axis in 0..n {
            if vectors.len() == want {
                break;
            }
            let mut w = vec![0.0; n];
            w[axis] = 1.0;
            for _ in 0..2 {
                let c = k * inner_unchecked(kappa, &base.coords, &w);
                for (wi, xi) in w.iter_mut().zip(&base.coords) {
                    *wi -= c * xi;
                }
                for b in &vectors {
                    let c = inner_unchecked(kappa, b, &w);
                    for (wi, bi) in w.iter_mut().zip(b) {
                        *wi -= c * bi;
                    }
                }
            }
            let norm2 = inner_unchecked(kappa, &w, &w);
            if norm2 > 1e-12 {
                let norm = norm2.sqrt();
                vectors.push(w.into_iter().map(|v| v / norm).collect());
            }
        }
        if vectors.len() != want {
            return Err(GeometryError::DegenerateBasis);
        }
        Ok(TangentBasis {
            base: base.clone(),
            vectors,
        })
    }

    pub fn base(&self) -> &CcmPoint {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Coordinates of `v` in this basis.
    pub fn coords_of(&self, v: &TangentVector) -> Result<Vec<f64>> {
        check_same(&self.base, &v.base)?;
        if v.base.coords != self.base.coords {
            return Err(GeometryError::InvalidTangent { residual: f64::NAN });
        }
        Ok(self
            .vectors
            .iter()
            .map(|b| inner_unchecked(self.base.kappa, b, &v.coords))
            .collect())
    }

    /// Rebuilds the ambient tangent vector from basis coordinates.
    pub fn vector_from(&self, coords: &[f64]) -> Result<TangentVector> {
        if coords.len() != self.vectors.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.vectors.len(),
                actual: coords.len(),
            });
        }
        let mut out = vec![0.0; self.base.ambient_dim()];
        for (c, b) in coords.iter().zip(&self.vectors) {
            for (o, bi) in out.iter_mut().zip(b) {
                *o += c * bi;
            }
        }
        Ok(TangentVector {
            base: self.base.clone(),
            coords: out,
        })
    }
}

/// Coordinates of a tangent vector in the deterministic orthonormal basis at `x`.
pub fn tangent_coords(x: &CcmPoint, v: &TangentVector) -> Result<Vec<f64>> {
    TangentBasis::at(x)?.coords_of(v)
}

/// Ordered list of CCMs forming a product-space ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<Ccm>,
}

impl Ensemble {
    pub fn new(members: Vec<Ccm>) -> Result<Self> {
        if members.is_empty() {
            return Err(GeometryError::Empty);
        }
        let dim = members[0].dim;
        if let Some(m) = members.iter().find(|m| m.dim != dim) {
            return Err(GeometryError::DimensionMismatch {
                expected: dim,
                actual: m.dim,
            });
        }
        Ok(Ensemble { members })
    }

    pub fn single(ccm: Ccm) -> Self {
        Ensemble { members: vec![ccm] }
    }

    /// The three-member ensemble `M_-1 × M_0 × M_1` of dimension `dim`.
    pub fn standard(dim: usize) -> Self {
        Ensemble {
            members: vec![
                Ccm::new(Curvature::HYPERBOLIC, dim),
                Ccm::new(Curvature::FLAT, dim),
                Ccm::new(Curvature::SPHERICAL, dim),
            ],
        }
    }

    pub fn members(&self) -> &[Ccm] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Ambient dimension of every member.
    pub fn block_dim(&self) -> usize {
        self.members[0].ambient_dim()
    }

    /// Length of the concatenated latent vector, `c(d+1)`.
    pub fn latent_dim(&self) -> usize {
        self.members.len() * self.block_dim()
    }

    /// Projects each `(d+1)`-block of a raw latent vector onto its member
    /// with [`project_to_ccm`].
    pub fn project(&self, raw: &[f64]) -> Result<Vec<CcmPoint>> {
        self.project_with(raw, ProjectionRule::Rescale)
    }

    /// Projects each `(d+1)`-block of a raw latent vector under `rule`.
    pub fn project_with(&self, raw: &[f64], rule: ProjectionRule) -> Result<Vec<CcmPoint>> {
        if raw.len() != self.latent_dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.latent_dim(),
                actual: raw.len(),
            });
        }
        self.members
            .iter()
            .zip(raw.chunks(self.block_dim()))
            .map(|(m, block)| project_with_rule(m.kappa, block, rule))
            .collect()
    }
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.members.iter().map(|m| m.to_string()).collect();
        write!(f, "{}", parts.join(" x "))
    }
}
