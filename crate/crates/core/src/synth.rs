//! Synthetic data: the one-dimensional sinusoid toys and a borehole
//! generator that mimics drill-hole assay geometry.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::censoring::{CensorDirection, CensorSpec};
use crate::data::{Coding, Dataset, RawAssay};
use crate::error::{Error, Result};
use crate::kernel::{Family, Hyperparams, Kernel, MaternNu};
use crate::linalg::small_cholesky;
use crate::locality::maximin_order;
use crate::points::{sq_dist, Points};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toy1d {
    /// `f(x) = 2 + 2 sin(4πx)`.
    #[default]
    Shifted,
    /// `f(x) = 2 sin(4πx)`.
    Centered,
}

impl Toy1d {
    pub fn truth(self, x: f64) -> f64 {
        let s = 2.0 * (4.0 * std::f64::consts::PI * x).sin();
        match self {
            Toy1d::Shifted => 2.0 + s,
            Toy1d::Centered => s,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic1d {
    pub dataset: Dataset,
    /// Noise-free response at each input.
    pub f: Vec<f64>,
    /// Uncensored noisy response.
    pub y_full: Vec<f64>,
    pub variant: Toy1d,
}

impl Synthetic1d {
    pub fn truth(&self, x: f64) -> f64 {
        self.variant.truth(x)
    }
}

/// `n` uniform inputs on `[0, 1]` with `y = f(x) + ε`, `ε ~ N(0, noise_var)`.
/// With a threshold, every response at or below it is left-censored there.
pub fn gen_synthetic_1d(
    n: usize,
    noise_var: f64,
    threshold: Option<f64>,
    variant: Toy1d,
    rng: &mut Rng,
) -> Result<Synthetic1d> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least two points"));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::invalid("noise_var", format!("{noise_var} is negative")));
    }
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let f: Vec<f64> = x.iter().map(|&v| variant.truth(v)).collect();
    let sd = noise_var.sqrt();
    let y_full: Vec<f64> =
        f.iter().map(|v| v + sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect();
    let (y, censor) = match threshold {
        None => (y_full.clone(), CensorSpec::none(n)),
        Some(t) => {
            let c: Vec<bool> = y_full.iter().map(|v| *v <= t).collect();
            let y = y_full.iter().map(|v| v.max(t)).collect();
            let th = c.iter().map(|&b| b.then_some(t)).collect();
            (y, CensorSpec::new(c, th, CensorDirection::Left)?)
        }
    };
    let dataset = Dataset::new(
        Points::from_column(&x),
        y,
        (0..n).map(|i| format!("P{i:05}")).collect(),
        censor,
        Coding::identity(1),
    )?;
    Ok(Synthetic1d { dataset, f, y_full, variant })
}

/// Raw extent and drilling pattern for [`gen_synthetic_boreholes`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoreholeDomain {
    /// Easting, northing and depth extent in meters.
    pub extent: [f64; 3],
    /// Distance between samples along a hole, in meters.
    pub spacing: f64,
    /// Largest deviation of a hole from vertical, in degrees.
    pub max_inclination_deg: f64,
}

impl Default for BoreholeDomain {
    fn default() -> Self {
        BoreholeDomain { extent: [2000.0, 2000.0, 500.0], spacing: 5.0, max_inclination_deg: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoreholeConfig {
    pub n_holes: usize,
    pub pts_per_hole: usize,
    pub domain: BoreholeDomain,
    /// Response law on the coded unit cube.
    pub truth: Hyperparams,
    pub censor_frac: f64,
    /// Each hole is drawn conditionally on this many earlier neighbors.
    pub cond_holes: usize,
}

impl BoreholeConfig {
    pub fn default_truth() -> Hyperparams {
        Hyperparams {
            tau2: 1.0,
            g: 0.1,
            kernel: Kernel::new(Family::Matern { nu: MaternNu::FiveHalves }, vec![0.02, 0.02, 0.04])
                .expect("valid lengthscales"),
        }
    }
}

impl Default for BoreholeConfig {
    fn default() -> Self {
        BoreholeConfig {
            n_holes: 4000,
            pts_per_hole: 40,
            domain: BoreholeDomain::default(),
            truth: BoreholeConfig::default_truth(),
            censor_frac: 0.4,
            cond_holes: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticBoreholes {
    pub dataset: Dataset,
    /// Raw meters and raw values, as an assay file would hold them.
    pub raw: RawAssay,
    /// Latent field at each record.
    pub latent: Vec<f64>,
    /// Noisy response before censoring.
    pub y_full: Vec<f64>,
    pub threshold: Option<f64>,
}

/// Collars uniform over the plan extent; each hole leaves the top of the
/// domain in a random direction within the inclination limit and is sampled
/// at equal spacing. The response is a draw from `truth` on the coded
/// inputs, simulated hole by hole in maximin collar order, each hole exactly
/// conditioned on the latent values of its nearest earlier holes. Left
/// censoring is applied at the empirical `censor_frac` quantile.
pub fn gen_synthetic_boreholes(cfg: &BoreholeConfig, rng: &mut Rng) -> Result<SyntheticBoreholes> {
    if cfg.n_holes == 0 || cfg.pts_per_hole == 0 {
        return Err(Error::invalid("n_holes", "hole and sample counts must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.censor_frac) {
        return Err(Error::invalid("censor_frac", format!("{} is outside [0, 1)", cfg.censor_frac)));
    }
    cfg.truth.validate()?;
    cfg.truth.kernel.check_dim(3)?;
    let dom = &cfg.domain;
    let depth = dom.spacing * (cfg.pts_per_hole - 1) as f64;
    if depth > dom.extent[2] {
        return Err(Error::invalid("pts_per_hole", "holes are longer than the domain is deep"));
    }
    let (nh, np) = (cfg.n_holes, cfg.pts_per_hole);
    let mut collars = Vec::with_capacity(nh);
    let mut raw = Vec::with_capacity(nh * np * 3);
    let max_inc = dom.max_inclination_deg.to_radians();
    for _ in 0..nh {
        let c = [rng.random::<f64>() * dom.extent[0], rng.random::<f64>() * dom.extent[1]];
        let inc = rng.random::<f64>() * max_inc;
        let az = rng.random::<f64>() * std::f64::consts::TAU;
        let dir = [inc.sin() * az.cos(), inc.sin() * az.sin(), -inc.cos()];
        for k in 0..np {
            let s = dom.spacing * k as f64;
            raw.extend_from_slice(&[c[0] + s * dir[0], c[1] + s * dir[1], dom.extent[2] + s * dir[2]]);
        }
        collars.extend_from_slice(&c);
    }
    let raw_x = Points::new(raw, 3)?;
    let coding = Coding::fit(&raw_x, &[0.0], false)?;
    let x = coding.code_x(&raw_x)?;

    let collars = Points::new(collars, 2)?;
    let order = maximin_order(&collars).perm;
    let mut latent = vec![0.0; nh * np];
    let k = &cfg.truth.kernel;
    let tau2 = cfg.truth.tau2;
    for (rank, &h) in order.iter().enumerate() {
        let mut prev: Vec<(f64, usize)> =
            order[..rank].iter().map(|&o| (sq_dist(collars.row(h), collars.row(o)), o)).collect();
        let nc_holes = cfg.cond_holes.min(prev.len());
        if nc_holes > 0 {
            prev.select_nth_unstable_by(nc_holes - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        let mut rows: Vec<usize> = prev[..nc_holes].iter().flat_map(|&(_, o)| o * np..(o + 1) * np).collect();
        let nc = rows.len();
        rows.extend(h * np..(h + 1) * np);
        let n = rows.len();
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                base[i * n + j] = tau2 * k.eval(x.row(rows[i]), x.row(rows[j]));
            }
        }
        let mut l = base.clone();
        let mut jitter = 1e-10 * tau2;
        while !small_cholesky(&mut l, n) {
            if jitter > 1e-3 * tau2 {
                return Err(Error::NotPositiveDefinite);
            }
            l.copy_from_slice(&base);
            for i in 0..n {
                l[i * n + i] += jitter;
            }
            jitter *= 10.0;
        }
        let mut v = vec![0.0; n];
        for i in 0..n {
            let s: f64 = (0..i).map(|c| l[i * n + c] * v[c]).sum();
            if i < nc {
                v[i] = (latent[rows[i]] - s) / l[i * n + i];
            } else {
                let z: f64 = StandardNormal.sample(rng);
                v[i] = z;
                latent[rows[i]] = s + l[i * n + i] * z;
            }
        }
    }
    let noise_sd = (tau2 * cfg.truth.g).sqrt();
    let y_full: Vec<f64> = latent
        .iter()
        .map(|f| f + noise_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();

    let n = nh * np;
    let n_cens = (cfg.censor_frac * n as f64).round() as usize;
    let threshold = (n_cens > 0).then(|| {
        let mut s = y_full.clone();
        s.sort_by(f64::total_cmp);
        s[n_cens - 1]
    });
    let censored: Vec<bool> = y_full.iter().map(|v| threshold.is_some_and(|t| *v <= t)).collect();
    let value: Vec<f64> = y_full.iter().map(|v| threshold.map_or(*v, |t| v.max(t))).collect();
    let censor = CensorSpec::new(
        censored.clone(),
        censored.iter().map(|&c| if c { threshold } else { None }).collect(),
        CensorDirection::Left,
    )?;
    let hole_id: Vec<String> = (0..n).map(|i| format!("H{:05}", i / np + 1)).collect();
    let raw = RawAssay { x: raw_x, value, hole_id, censor };
    let dataset = raw.code_using(&coding)?;
    Ok(SyntheticBoreholes { dataset, raw, latent, y_full, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn noiseless_toy_is_exact() {
        let s = gen_synthetic_1d(20, 0.0, None, Toy1d::Shifted, &mut Rng::seed_from_u64(7)).unwrap();
        for (i, y) in s.dataset.y.iter().enumerate() {
            assert_eq!(*y, s.truth(s.dataset.x.row(i)[0]));
        }
    }

    #[test]
    fn small_borehole_draw() {
        let cfg = BoreholeConfig { n_holes: 30, pts_per_hole: 10, ..BoreholeConfig::default() };
        let s = gen_synthetic_boreholes(&cfg, &mut Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.dataset.len(), 300);
        assert_eq!(s.dataset.censor.n_censored(), 120);
        let t = s.threshold.unwrap();
        for i in 0..300 {
            if s.dataset.censor.censored[i] {
                assert_eq!(s.raw.value[i], t);
            }
        }
        assert_eq!(s.dataset.holes().len(), 30);
    }
}
