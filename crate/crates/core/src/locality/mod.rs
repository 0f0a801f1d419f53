//! Spatial indexing and neighborhood construction: k-d tree queries, greedy
//! ALC selection, maximin ordering and anisotropic pre-scaling.

mod alc;
mod kdtree;
mod maximin;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use alc::{alc_select, AlcOptions};
pub(crate) use kdtree::cmp_pair;
pub use kdtree::SpatialIndex;
pub use maximin::{maximin_order, MaximinOrder};

use crate::error::{Error, Result};
use crate::gp::{default_init, fit_mle, MleOptions};
use crate::kernel::Family;
use crate::points::Points;
use crate::rng::Rng;

/// Anything that can answer nearest-neighbor queries over indexed points.
pub trait NeighborSource: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn dim(&self) -> usize;
    /// The `k` nearest points as `(index, squared distance)`, ordered by
    /// distance then index.
    fn knn(&self, x: &[f64], k: usize) -> Vec<(usize, f64)>;
    fn point(&self, i: usize) -> &[f64];
}

impl NeighborSource for SpatialIndex {
    fn len(&self) -> usize {
        SpatialIndex::len(self)
    }
    fn dim(&self) -> usize {
        SpatialIndex::dim(self)
    }
    fn knn(&self, x: &[f64], k: usize) -> Vec<(usize, f64)> {
        SpatialIndex::knn(self, x, k)
    }
    fn point(&self, i: usize) -> &[f64] {
        SpatialIndex::point(self, i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborhoodMethod {
    Nn,
    Alc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    /// Training indices; nearest first for [`NeighborhoodMethod::Nn`],
    /// selection order for [`NeighborhoodMethod::Alc`].
    pub indices: Vec<usize>,
    pub method: NeighborhoodMethod,
    pub center: Vec<f64>,
}

/// The `m` nearest training points to `x`.
pub fn nn_search(index: &SpatialIndex, x: &[f64], m: usize) -> Result<Neighborhood> {
    if m > index.len() {
        return Err(Error::invalid("m", format!("{m} neighbors requested from {} points", index.len())));
    }
    if x.len() != index.dim() {
        return Err(Error::DimensionMismatch { expected: index.dim(), found: x.len() });
    }
    Ok(Neighborhood {
        indices: index.knn(x, m).into_iter().map(|(i, _)| i).collect(),
        method: NeighborhoodMethod::Nn,
        center: x.to_vec(),
    })
}

/// Divides column `k` by `√θ_k`. A single `θ` applies to every column.
pub fn prescale_inputs(x: &Points, theta: &[f64]) -> Result<Points> {
    if let Some(t) = theta.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::invalid("theta", format!("nonpositive lengthscale {t}")));
    }
    let s: Vec<f64> = match theta.len() {
        1 => vec![theta[0].sqrt(); x.dim()],
        l if l == x.dim() => theta.iter().map(|t| t.sqrt()).collect(),
        l => return Err(Error::DimensionMismatch { expected: x.dim(), found: l }),
    };
    Ok(x.divide_columns(&s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalScales {
    /// Per-coordinate geometric mean of the block lengthscales.
    pub theta: Vec<f64>,
    /// Median block nugget.
    pub g: f64,
    /// Blocks whose fit succeeded.
    pub n_fitted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalScaleOptions {
    pub n_blocks: usize,
    /// Defaults to `min(1000, n/10)` when unset.
    pub block_size: Option<usize>,
    pub family: Family,
    pub mle: MleOptions,
    pub parallel: bool,
}

impl Default for GlobalScaleOptions {
    fn default() -> Self {
        GlobalScaleOptions {
            n_blocks: 10,
            block_size: None,
            family: Family::GAUSSIAN,
            mle: MleOptions::default(),
            parallel: true,
        }
    }
}

/// ARD lengthscales estimated from exact fits on random disjoint blocks.
pub fn estimate_global_lengthscales(
    x: &Points,
    y: &[f64],
    opts: &GlobalScaleOptions,
    rng: &mut Rng,
) -> Result<GlobalScales> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    let block = opts.block_size.unwrap_or((n / 10).min(1000)).max(2);
    if block > n {
        return Err(Error::invalid("block_size", format!("{block} exceeds {n} points")));
    }
    let n_blocks = opts.n_blocks.clamp(1, n / block);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let fit_block = |b: usize| {
        let idx = &perm[b * block..(b + 1) * block];
        let xb = x.select(idx);
        let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let init = default_init(&xb, opts.family, true)?;
        fit_mle(&xb, &yb, &init, &opts.mle)
    };
    let fits: Vec<_> = if opts.parallel {
        (0..n_blocks).into_par_iter().map(fit_block).collect()
    } else {
        (0..n_blocks).map(fit_block).collect()
    };
    let ok: Vec<_> = fits.into_iter().filter_map(|f| f.ok()).collect();
    if ok.is_empty() {
        return Err(Error::Failed("every block fit failed".into()));
    }
    let d = x.dim();
    let theta = (0..d)
        .map(|k| {
            let s: f64 = ok.iter().map(|f| f.phi.kernel.lengthscales()[k].ln()).sum();
            (s / ok.len() as f64).exp()
        })
        .collect();
    let mut gs: Vec<f64> = ok.iter().map(|f| f.phi.g).collect();
    Ok(GlobalScales { theta, g: median(&mut gs), n_fitted: ok.len() })
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
