//! Latin hypercube designs.

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Number of initial design points for a `dims`-dimensional search: `2D + 1`.
pub fn initial_design_size(dims: usize) -> usize {
    2 * dims + 1
}

/// `n` points such that, on every axis, each of the `n` equal-width strata of
/// `[lower, upper]` holds exactly one coordinate. Strata are assigned by an
/// independent random permutation per axis; the coordinate is jittered
/// uniformly inside its stratum.
pub fn latin_hypercube(domain: &Domain, n: usize, rng: &mut RandomStream) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("latin hypercube needs n >= 1".into()));
    }
    let dims = domain.dims();
    let mut points = vec![vec![0.0; dims]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        rng.shuffle(&mut strata);
        let (lo, hi) = (domain.lower()[d], domain.upper()[d]);
        let width = (hi - lo) / n as f64;
        for (p, &s) in points.iter_mut().zip(&strata) {
            let v = lo + (s as f64 + rng.uniform()) * width;
            p[d] = v.min(hi);
        }
    }
    Ok(points)
}
