//! Kernels, hyperparameters and dense covariance assembly.
//!
//! Lengthscales multiply the squared distance for the power-exponential
//! family (`exp(-|h|^p / θ)`) and enter the Matérn family through
//! `sqrt(2ν/θ)·|h|`. A kernel with a single lengthscale is isotropic and
//! uses the Euclidean distance in any dimension; a kernel with `d`
//! lengthscales is the separable (ARD) product of univariate kernels.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{sq_dist, Points};

/// Smoothness of the Matérn family. Only the closed forms are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Family {
    PowerExp { p: f64 },
    Matern { nu: MaternNu },
}

impl Family {
    pub const GAUSSIAN: Family = Family::PowerExp { p: 2.0 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            Family::PowerExp { p } if !(p > 0.0 && p <= 2.0) => {
                Err(Error::invalid("p", format!("power {p} outside (0, 2]")))
            }
            _ => Ok(()),
        }
    }

    /// Correlation at squared distance `h2` for lengthscale `theta`.
    #[inline]
    pub fn radial(&self, h2: f64, theta: f64) -> f64 {
        match *self {
            Family::PowerExp { p } => {
                if p == 2.0 {
                    (-h2 / theta).exp()
                } else {
                    (-h2.powf(0.5 * p) / theta).exp()
                }
            }
            Family::Matern { nu } => {
                let a = (2.0 * nu.value() * h2 / theta).sqrt();
                match nu {
                    MaternNu::ThreeHalves => (1.0 + a) * (-a).exp(),
                    MaternNu::FiveHalves => (1.0 + a + a * a / 3.0) * (-a).exp(),
                }
            }
        }
    }

    /// Derivative of [`Family::radial`] with respect to `theta`.
    #[inline]
    pub fn radial_dtheta(&self, h2: f64, theta: f64) -> f64 {
        match *self {
            Family::PowerExp { p } => {
                let hp = if p == 2.0 { h2 } else { h2.powf(0.5 * p) };
                hp / (theta * theta) * (-hp / theta).exp()
            }
            Family::Matern { nu } => {
                let a = (2.0 * nu.value() * h2 / theta).sqrt();
                let e = (-a).exp();
                match nu {
                    MaternNu::ThreeHalves => a * a * e / (2.0 * theta),
                    MaternNu::FiveHalves => a * a * (1.0 + a) * e / (6.0 * theta),
                }
            }
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::PowerExp { p } if *p == 2.0 => write!(f, "gaussian"),
            Family::PowerExp { p } if *p == 1.0 => write!(f, "exponential"),
            Family::PowerExp { p } => write!(f, "powexp({p})"),
            Family::Matern { nu: MaternNu::ThreeHalves } => write!(f, "matern32"),
            Family::Matern { nu: MaternNu::FiveHalves } => write!(f, "matern52"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::GAUSSIAN),
            "exponential" => Ok(Family::PowerExp { p: 1.0 }),
            "matern32" => Ok(Family::Matern { nu: MaternNu::ThreeHalves }),
            "matern52" => Ok(Family::Matern { nu: MaternNu::FiveHalves }),
            other => {
                let p = other
                    .strip_prefix("powexp(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|r| r.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid("family", format!("unknown family `{other}`")))?;
                let fam = Family::PowerExp { p };
                fam.validate()?;
                Ok(fam)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    family: Family,
    lengthscales: Vec<f64>,
}

impl Kernel {
    pub fn new(family: Family, lengthscales: Vec<f64>) -> Result<Self> {
        family.validate()?;
        if lengthscales.is_empty() {
            return Err(Error::invalid("lengthscales", "at least one lengthscale required"));
        }
        if let Some(t) = lengthscales.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::invalid("lengthscales", format!("nonpositive lengthscale {t}")));
        }
        Ok(Kernel { family, lengthscales })
    }

    pub fn gaussian(lengthscales: Vec<f64>) -> Result<Self> {
        Kernel::new(Family::GAUSSIAN, lengthscales)
    }

    pub fn isotropic(family: Family, theta: f64) -> Result<Self> {
        Kernel::new(family, vec![theta])
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn is_isotropic(&self) -> bool {
        self.lengthscales.len() == 1
    }

    pub fn with_lengthscales(&self, lengthscales: Vec<f64>) -> Result<Self> {
        Kernel::new(self.family, lengthscales)
    }

    /// Checks that points of dimension `d` can be fed to this kernel.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.is_isotropic() || self.lengthscales.len() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.lengthscales.len(), found: d })
        }
    }

    /// Kernel value without dimension checks.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.is_isotropic() {
            return self.family.radial(sq_dist(a, b), self.lengthscales[0]);
        }
        match self.family {
            Family::PowerExp { p: 2.0 } => {
                let mut s = 0.0;
                for ((x, y), t) in a.iter().zip(b).zip(&self.lengthscales) {
                    let h = x - y;
                    s += h * h / t;
                }
                (-s).exp()
            }
            fam => {
                a.iter().zip(b).zip(&self.lengthscales).map(|((x, y), t)| fam.radial((x - y) * (x - y), *t)).product()
            }
        }
    }

    /// Derivative of [`Kernel::eval`] with respect to lengthscale `coord`.
    #[inline]
    pub fn eval_dtheta(&self, a: &[f64], b: &[f64], coord: usize) -> f64 {
        if self.is_isotropic() {
            return self.family.radial_dtheta(sq_dist(a, b), self.lengthscales[0]);
        }
        let mut out = 1.0;
        for (k, ((x, y), t)) in a.iter().zip(b).zip(&self.lengthscales).enumerate() {
            let h2 = (x - y) * (x - y);
            out *= if k == coord { self.family.radial_dtheta(h2, *t) } else { self.family.radial(h2, *t) };
        }
        out
    }

    /// Kernel value, with the derivative for every lengthscale written to
    /// `grad` (length equal to the number of lengthscales).
    #[inline]
    pub fn eval_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        if self.is_isotropic() {
            let h2 = sq_dist(a, b);
            let t = self.lengthscales[0];
            grad[0] = self.family.radial_dtheta(h2, t);
            return self.family.radial(h2, t);
        }
        match self.family {
            Family::PowerExp { p } => {
                let mut s = 0.0;
                for (k, ((x, y), t)) in a.iter().zip(b).zip(&self.lengthscales).enumerate() {
                    let h = (x - y).abs();
                    let hp = if p == 2.0 { h * h } else { h.powf(p) };
                    s += hp / t;
                    grad[k] = hp / (t * t);
                }
                let v = (-s).exp();
                for gk in grad.iter_mut() {
                    *gk *= v;
                }
                v
            }
            fam => {
                let d = self.lengthscales.len();
                let mut m = [0.0f64; 8];
                let mut dm = [0.0f64; 8];
                if d > 8 {
                    for (k, gk) in grad.iter_mut().enumerate() {
                        *gk = self.eval_dtheta(a, b, k);
                    }
                    return self.eval(a, b);
                }
                for k in 0..d {
                    let h2 = (a[k] - b[k]) * (a[k] - b[k]);
                    m[k] = fam.radial(h2, self.lengthscales[k]);
                    dm[k] = fam.radial_dtheta(h2, self.lengthscales[k]);
                }
                for k in 0..d {
                    grad[k] = (0..d).map(|j| if j == k { dm[j] } else { m[j] }).product();
                }
                m[..d].iter().product()
            }
        }
    }

    /// Kernel values between `x` and every row of `points`.
    pub fn cross(&self, x: &[f64], points: &Points) -> Vec<f64> {
        points.rows().map(|r| self.eval(x, r)).collect()
    }
}

/// Checked kernel evaluation.
pub fn kernel_eval(k: &Kernel, x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch { expected: x1.len(), found: x2.len() });
    }
    k.check_dim(x1.len())?;
    Ok(k.eval(x1, x2))
}

/// Cross-kernel matrix with entry `(i, j) = k(X1_i, X2_j)`.
pub fn kernel_matrix(k: &Kernel, x1: &Points, x2: &Points) -> Result<Mat<f64>> {
    if x1.dim() != x2.dim() {
        return Err(Error::DimensionMismatch { expected: x1.dim(), found: x2.dim() });
    }
    k.check_dim(x1.dim())?;
    Ok(Mat::from_fn(x1.len(), x2.len(), |i, j| k.eval(x1.row(i), x2.row(j))))
}

/// Symmetric kernel matrix of `x` with itself, computed on one triangle.
pub fn kernel_matrix_sym(k: &Kernel, x: &Points) -> Result<Mat<f64>> {
    k.check_dim(x.dim())?;
    let n = x.len();
    let mut m = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = 1.0;
        for i in j + 1..n {
            let v = k.eval(x.row(i), x.row(j));
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Elementwise derivative of the kernel matrix of `x` with respect to
/// lengthscale `coord`.
pub fn kernel_grad_theta(k: &Kernel, x: &Points, coord: usize) -> Result<Mat<f64>> {
    k.check_dim(x.dim())?;
    if coord >= k.lengthscales.len() {
        return Err(Error::invalid("coord", format!("{coord} out of range for {} lengthscales", k.lengthscales.len())));
    }
    let n = x.len();
    let mut m = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j + 1..n {
            let v = k.eval_dtheta(x.row(i), x.row(j), coord);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Scale `tau2`, multiplicative nugget `g` and correlation kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub tau2: f64,
    pub g: f64,
    pub kernel: Kernel,
}

impl Hyperparams {
    pub fn new(tau2: f64, g: f64, kernel: Kernel) -> Result<Self> {
        let phi = Hyperparams { tau2, g, kernel };
        phi.validate()?;
        Ok(phi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return Err(Error::invalid("tau2", format!("{} is not positive", self.tau2)));
        }
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return Err(Error::invalid("g", format!("{} is negative", self.g)));
        }
        Ok(())
    }

    /// Covariance between two distinct data elements.
    #[inline]
    pub fn cov(&self, a: &[f64], b: &[f64]) -> f64 {
        self.tau2 * self.kernel.eval(a, b)
    }

    /// Variance of one noisy observation, `τ²(1+g)`.
    pub fn noisy_var(&self) -> f64 {
        self.tau2 * (1.0 + self.g)
    }
}

/// Dense covariance `τ²(K + gI)`.
#[derive(Clone, Debug)]
pub struct CovMatrix {
    pub matrix: Mat<f64>,
    pub includes_nugget: bool,
}

pub fn cov_assemble(phi: &Hyperparams, x: &Points) -> Result<CovMatrix> {
    phi.validate()?;
    if x.is_empty() {
        return Err(Error::InsufficientData("no points".into()));
    }
    let mut m = kernel_matrix_sym(&phi.kernel, x)?;
    for j in 0..x.len() {
        m[(j, j)] += phi.g;
    }
    for j in 0..x.len() {
        for i in 0..x.len() {
            m[(i, j)] *= phi.tau2;
        }
    }
    Ok(CovMatrix { matrix: m, includes_nugget: true })
}
