use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{exp_map, Ccm, CcmPoint, Curvature, Result, TangentVector};

/// Draws `count` points from the push-forward of a standard normal on the
/// tangent plane at the manifold origin.
pub fn sample_prior(kappa: Curvature, dim: usize, count: usize, seed: u64) -> Result<Vec<CcmPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| sample_prior_with(Ccm::new(kappa, dim), &mut rng))
        .collect()
}

/// One prior draw using a caller-owned generator.
///
/// On the flat manifold the raw `(d+1)`-dimensional normal sample is returned.
pub fn sample_prior_with<R: Rng + ?Sized>(ccm: Ccm, rng: &mut R) -> Result<CcmPoint> {
    let n = ccm.ambient_dim();
    if ccm.kappa.is_flat() {
        let coords = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        return Ok(CcmPoint::new_unchecked(ccm.kappa, coords));
    }
    let mut v = vec![0.0; n];
    for c in v.iter_mut().take(ccm.dim) {
        *c = rng.sample(StandardNormal);
    }
    push_forward(ccm, v)
}

fn push_forward(ccm: Ccm, tangent_at_origin: Vec<f64>) -> Result<CcmPoint> {
    let origin = ccm.origin();
    let v = TangentVector::new(&origin, tangent_at_origin)?;
    exp_map(&origin, &v)
}
