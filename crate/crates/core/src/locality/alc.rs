use serde::{Deserialize, Serialize};

use super::{NeighborSource, Neighborhood, NeighborhoodMethod};
use crate::error::{Error, Result};
use crate::gp::corr_matrix;
use crate::kernel::Hyperparams;
use crate::linalg::{dot, Cholesky};
use crate::points::Points;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlcOptions {
    /// Nearest neighbors used to seed the design.
    pub n0: usize,
    /// Size of the candidate pool (nearest points to the site).
    pub cand_limit: usize,
}

impl Default for AlcOptions {
    fn default() -> Self {
        AlcOptions { n0: 6, cand_limit: 1000 }
    }
}

/// Greedy neighborhood of size `m` around `x`: seeded with the `n0` nearest
/// points, then repeatedly adding the candidate that most reduces the
/// predictive variance at `x`. Depends on the inputs and `phi` only.
pub fn alc_select<S: NeighborSource + ?Sized>(
    index: &S,
    x: &[f64],
    m: usize,
    opts: &AlcOptions,
    phi: &Hyperparams,
) -> Result<Neighborhood> {
    let n = index.len();
    if !(opts.n0 >= 1 && opts.n0 < m && m <= n) {
        return Err(Error::invalid("m", format!("need 1 <= n0 < m <= n, got n0={}, m={m}, n={n}", opts.n0)));
    }
    let pool_size = opts.cand_limit.max(m).min(n);
    let pool: Vec<usize> = index.knn(x, pool_size).into_iter().map(|(i, _)| i).collect();
    let pts: Vec<Vec<f64>> = pool.iter().map(|&i| index.point(i).to_vec()).collect();
    let k = &phi.kernel;
    let g = phi.g;

    let seed = Points::from_rows(&pts[..opts.n0])?;
    let kg = corr_matrix(k, g, &seed)?;
    let (chol, _) = Cholesky::factor_with_retry(kg.as_ref(), 6)?;
    let mut vx = chol.solve_lower_vec(&k.cross(x, &seed));

    let rest = pool_size - opts.n0;
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(rest);
    let mut s = Vec::with_capacity(rest);
    let mut c = Vec::with_capacity(rest);
    for p in &pts[opts.n0..] {
        let mut vj = chol.solve_lower_vec(&k.cross(p, &seed));
        vj.reserve(m - opts.n0);
        s.push(1.0 + g - dot(&vj, &vj));
        c.push(k.eval(x, p) - dot(&vx, &vj));
        v.push(vj);
    }
    let mut alive = vec![true; rest];
    let mut chosen: Vec<usize> = pool[..opts.n0].to_vec();
    let mut skipped = 0;

    while chosen.len() < m {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..rest {
            if !alive[j] {
                continue;
            }
            if !(s[j] > 1e-10) {
                alive[j] = false;
                skipped += 1;
                continue;
            }
            let red = c[j] * c[j] / s[j];
            if best.is_none_or(|(_, b)| red > b) {
                best = Some((j, red));
            }
        }
        let Some((jb, _)) = best else {
            return Err(Error::Failed(format!("ALC ran out of usable candidates after {} points", chosen.len())));
        };
        alive[jb] = false;
        chosen.push(pool[opts.n0 + jb]);
        let lnn = s[jb].sqrt();
        let vb = std::mem::take(&mut v[jb]);
        let pb = &pts[opts.n0 + jb];
        let ex = c[jb] / lnn;
        for j in 0..rest {
            if !alive[j] {
                continue;
            }
            let e = (k.eval(pb, &pts[opts.n0 + j]) - dot(&vb, &v[j])) / lnn;
            v[j].push(e);
            s[j] -= e * e;
            c[j] -= ex * e;
        }
        vx.push(ex);
    }
    if skipped > 0 {
        log::warn!("ALC skipped {skipped} candidates with degenerate covariance");
    }
    Ok(Neighborhood { indices: chosen, method: NeighborhoodMethod::Alc, center: x.to_vec() })
}
