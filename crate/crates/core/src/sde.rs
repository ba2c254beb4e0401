//! Diffusion models and their one-step Euler and weak-order-2 update coefficients.

use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use thiserror::Error;

use crate::quantize::Support;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} is outside its domain ({expected})")]
    Domain { name: &'static str, value: f64, expected: &'static str },
    #[error("correlation matrix is not a valid correlation matrix")]
    Correlation,
    #[error("dimension {0} is out of range")]
    Dimension(usize),
    #[error("zero diffusion at the codeword; the update is a point mass at {c}")]
    DegenerateDiffusion { c: f64 },
    #[error("dimension {0} depends on other coordinates; the WO2 scheme needs an autonomous coordinate")]
    NotAutonomous(usize),
    #[error("WO2 coefficients undefined here (b * db/dx = {bdb})")]
    Wo2Unsupported { bdb: f64 },
    #[error("schedule: {0}")]
    Schedule(&'static str),
}

/// Drift and diffusion of one coordinate with their first two derivatives
/// in that coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScalarCoeffs {
    pub a: f64,
    pub da: f64,
    pub d2a: f64,
    pub b: f64,
    pub db: f64,
    pub d2b: f64,
}

/// `dX = a(X) dt + diag(b(X)) dW` with `d<W^i, W^j> = rho_ij dt`.
pub trait SdeModel {
    fn dim(&self) -> usize;
    fn initial_state(&self) -> Vec<f64>;
    fn drift(&self, x: &[f64], n: usize) -> f64;
    fn diffusion(&self, x: &[f64], n: usize) -> f64;
    /// Entry `(i, j)` of the Brownian correlation matrix.
    fn correlation(&self, i: usize, j: usize) -> f64;
    /// Lower edge of the state space of coordinate `n`, if any.
    fn lower_bound(&self, n: usize) -> Option<f64>;
    /// Coefficients of coordinate `n` when they depend on `x^n` alone.
    fn autonomous(&self, n: usize, xn: f64) -> Option<ScalarCoeffs>;
    /// Continuously compounded discount rate.
    fn rate(&self) -> f64;

    fn is_autonomous(&self, n: usize) -> bool {
        self.autonomous(n, self.initial_state()[n]).is_some()
    }

    fn support(&self, n: usize) -> Support {
        Support::new(self.lower_bound(n).unwrap_or(f64::NEG_INFINITY), f64::INFINITY)
    }

    /// True when drift and diffusion of coordinate `n` are proportional to
    /// `x^n`, so path simulation may step `ln x^n` instead.
    fn log_coordinate(&self, _n: usize) -> bool {
        false
    }
}

/// Per-coordinate discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Scheme {
    Euler,
    Wo2,
}

/// `T`, `K` and the codeword count per coordinate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Schedule {
    pub horizon: f64,
    pub steps: usize,
    pub codewords: Vec<usize>,
}

impl Schedule {
    pub fn new(horizon: f64, steps: usize, codewords: Vec<usize>) -> Result<Self, ModelError> {
        let s = Self { horizon, steps, codewords };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ModelError::Schedule("horizon must be positive"));
        }
        if self.steps == 0 {
            return Err(ModelError::Schedule("at least one time step is required"));
        }
        if self.codewords.is_empty() || self.codewords.contains(&0) {
            return Err(ModelError::Schedule("every coordinate needs at least one codeword"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt()
    }
}

/// Euler update `x^n + a^n(x) dt + b^n(x) sqrt(dt) Z` as `(c, m)`.
pub fn euler_coeffs<M: SdeModel + ?Sized>(model: &M, x: &[f64], n: usize, dt: f64) -> Result<(f64, f64), ModelError> {
    if n >= model.dim() {
        return Err(ModelError::Dimension(n));
    }
    let c = x[n] + model.drift(x, n) * dt;
    let m = model.diffusion(x, n) * sqrt(dt);
    if !(m > 0.0) {
        return Err(ModelError::DegenerateDiffusion { c });
    }
    Ok((c, m))
}

/// Simplified weak-order-2 update `mbar (Z + sqrt(lambda))^2 + cbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wo2Coeffs {
    pub mbar: f64,
    pub cbar: f64,
    pub lambda: f64,
    /// `cbar + mbar * lambda`, evaluated without the cancelling `h^2` terms.
    pub center: f64,
}

/// Weak-order-2 coefficients of an autonomous coordinate at `xn`.
///
/// With `h = b + (a' b + a b' + b'' b^2 / 2) dt / 2`:
/// `mbar = b b' dt / 2`, `lambda = (h / (b b' sqrt(dt)))^2` and
/// `cbar = x + (a - b b' / 2) dt + (a a' + a'' b^2 / 2) dt^2 / 2 - h^2 / (2 b b')`.
pub fn wo2_coeffs<M: SdeModel + ?Sized>(model: &M, xn: f64, n: usize, dt: f64) -> Result<Wo2Coeffs, ModelError> {
    if n >= model.dim() {
        return Err(ModelError::Dimension(n));
    }
    let k = model.autonomous(n, xn).ok_or(ModelError::NotAutonomous(n))?;
    let bdb = k.b * k.db;
    if !(bdb > 0.0 && bdb.is_finite()) {
        return Err(ModelError::Wo2Unsupported { bdb });
    }
    let h = k.b + 0.5 * (k.da * k.b + k.a * k.db + 0.5 * k.d2b * k.b * k.b) * dt;
    let mbar = 0.5 * bdb * dt;
    let lambda = {
        let r = h / (bdb * sqrt(dt));
        r * r
    };
    let center = xn + (k.a - 0.5 * bdb) * dt + 0.5 * (k.a * k.da + 0.5 * k.d2a * k.b * k.b) * dt * dt;
    let cbar = center - h * h / (2.0 * bdb);
    if ![mbar, lambda, center, cbar].iter().all(|v| v.is_finite()) {
        return Err(ModelError::Wo2Unsupported { bdb });
    }
    Ok(Wo2Coeffs { mbar, cbar, lambda, center })
}

fn check(name: &'static str, value: f64, ok: bool, expected: &'static str) -> Result<(), ModelError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Domain { name, value, expected })
    }
}

/// Correlated geometric Brownian motions `dX^n = r X^n dt + sigma_n X^n dW^n`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Gbm {
    pub x0: Vec<f64>,
    pub sigma: Vec<f64>,
    pub r: f64,
    /// Row-major correlation matrix; empty means independent.
    #[cfg_attr(feature = "serde", serde(default))]
    pub corr: Vec<f64>,
}

impl Gbm {
    pub fn new(x0: Vec<f64>, sigma: Vec<f64>, r: f64, corr: Vec<f64>) -> Result<Self, ModelError> {
        let g = Self { x0, sigma, r, corr };
        g.validate()?;
        Ok(g)
    }

    pub fn one_dim(x0: f64, sigma: f64, r: f64) -> Result<Self, ModelError> {
        Self::new(vec![x0], vec![sigma], r, vec![])
    }

    pub fn two_dim(x0: [f64; 2], sigma: [f64; 2], r: f64, rho: f64) -> Result<Self, ModelError> {
        Self::new(x0.to_vec(), sigma.to_vec(), r, vec![1.0, rho, rho, 1.0])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let d = self.x0.len();
        if d == 0 || self.sigma.len() != d {
            return Err(ModelError::Domain {
                name: "sigma",
                value: self.sigma.len() as f64,
                expected: "one volatility per asset",
            });
        }
        for &x in &self.x0 {
            check("x0", x, x > 0.0, "> 0")?;
        }
        for &s in &self.sigma {
            check("sigma", s, s >= 0.0, ">= 0")?;
        }
        check("r", self.r, true, "finite")?;
        if !self.corr.is_empty() {
            validate_correlation(&self.corr, d)?;
        }
        Ok(())
    }
}

fn validate_correlation(c: &[f64], d: usize) -> Result<(), ModelError> {
    if c.len() != d * d {
        return Err(ModelError::Correlation);
    }
    for i in 0..d {
        if c[i * d + i] != 1.0 {
            return Err(ModelError::Correlation);
        }
        for j in 0..d {
            let v = c[i * d + j];
            if !(v.abs() <= 1.0) || v != c[j * d + i] {
                return Err(ModelError::Correlation);
            }
        }
    }
    crate::linalg::cholesky_lower(c, d).map(|_| ()).ok_or(ModelError::Correlation)
}

impl SdeModel for Gbm {
    fn dim(&self) -> usize {
        self.x0.len()
    }
    fn initial_state(&self) -> Vec<f64> {
        self.x0.clone()
    }
    fn drift(&self, x: &[f64], n: usize) -> f64 {
        self.r * x[n]
    }
    fn diffusion(&self, x: &[f64], n: usize) -> f64 {
        self.sigma[n] * x[n]
    }
    fn correlation(&self, i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else if self.corr.is_empty() {
            0.0
        } else {
            self.corr[i * self.dim() + j]
        }
    }
    fn lower_bound(&self, _n: usize) -> Option<f64> {
        Some(0.0)
    }
    fn autonomous(&self, n: usize, xn: f64) -> Option<ScalarCoeffs> {
        let s = self.sigma[n];
        Some(ScalarCoeffs { a: self.r * xn, da: self.r, d2a: 0.0, b: s * xn, db: s, d2b: 0.0 })
    }
    fn rate(&self) -> f64 {
        self.r
    }
    fn log_coordinate(&self, _n: usize) -> bool {
        true
    }
}

/// `dS = r S dt + sqrt(v) S dW^1`, `dv = kappa (theta - v) dt + sigma sqrt(v) dW^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Heston {
    pub s0: f64,
    pub v0: f64,
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub r: f64,
    pub rho: f64,
}

impl Heston {
    pub fn new(s0: f64, v0: f64, kappa: f64, theta: f64, sigma: f64, r: f64, rho: f64) -> Result<Self, ModelError> {
        let h = Self { s0, v0, kappa, theta, sigma, r, rho };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check("s0", self.s0, self.s0 > 0.0, "> 0")?;
        check("v0", self.v0, self.v0 > 0.0, "> 0")?;
        check("kappa", self.kappa, self.kappa > 0.0, "> 0")?;
        check("theta", self.theta, self.theta > 0.0, "> 0")?;
        check("sigma", self.sigma, self.sigma > 0.0, "> 0")?;
        check("r", self.r, true, "finite")?;
        check("rho", self.rho, self.rho.abs() < 1.0, "in (-1, 1)")
    }

    pub fn feller_ratio(&self) -> f64 {
        2.0 * self.kappa * self.theta / (self.sigma * self.sigma)
    }
}

impl SdeModel for Heston {
    fn dim(&self) -> usize {
        2
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![self.s0, self.v0]
    }
    fn drift(&self, x: &[f64], n: usize) -> f64 {
        match n {
            0 => self.r * x[0],
            _ => self.kappa * (self.theta - x[1]),
        }
    }
    fn diffusion(&self, x: &[f64], n: usize) -> f64 {
        let sv = sqrt(x[1].max(0.0));
        match n {
            0 => sv * x[0],
            _ => self.sigma * sv,
        }
    }
    fn correlation(&self, i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            self.rho
        }
    }
    fn lower_bound(&self, _n: usize) -> Option<f64> {
        Some(0.0)
    }
    fn autonomous(&self, n: usize, v: f64) -> Option<ScalarCoeffs> {
        if n != 1 {
            return None;
        }
        let sv = sqrt(v.max(0.0));
        Some(ScalarCoeffs {
            a: self.kappa * (self.theta - v),
            da: -self.kappa,
            d2a: 0.0,
            b: self.sigma * sv,
            db: self.sigma / (2.0 * sv),
            d2b: -self.sigma / (4.0 * sv * sv * sv),
        })
    }
    fn rate(&self) -> f64 {
        self.r
    }
    fn log_coordinate(&self, n: usize) -> bool {
        n == 0
    }
}

/// `dF = y F^beta dW^1`, `dy = nu y dW^2` on the forward `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Sabr {
    /// Initial forward `S0 exp(r T)`.
    pub f0: f64,
    pub y0: f64,
    pub beta: f64,
    pub nu: f64,
    pub rho: f64,
    /// Rate used to discount payoffs on the forward.
    pub r: f64,
}

impl Sabr {
    pub fn new(f0: f64, y0: f64, beta: f64, nu: f64, rho: f64, r: f64) -> Result<Self, ModelError> {
        let s = Self { f0, y0, beta, nu, rho, r };
        s.validate()?;
        Ok(s)
    }

    /// Forward to `horizon` of spot `s0` at flat rate `r`.
    pub fn from_spot(s0: f64, horizon: f64, y0: f64, beta: f64, nu: f64, rho: f64, r: f64) -> Result<Self, ModelError> {
        Self::new(s0 * libm::exp(r * horizon), y0, beta, nu, rho, r)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check("f0", self.f0, self.f0 > 0.0, "> 0")?;
        check("y0", self.y0, self.y0 > 0.0, "> 0")?;
        check("beta", self.beta, (0.0..=1.0).contains(&self.beta), "in [0, 1]")?;
        check("nu", self.nu, self.nu > 0.0, "> 0")?;
        check("rho", self.rho, self.rho.abs() < 1.0, "in (-1, 1)")?;
        check("r", self.r, true, "finite")
    }
}

impl SdeModel for Sabr {
    fn dim(&self) -> usize {
        2
    }
    fn initial_state(&self) -> Vec<f64> {
        vec![self.f0, self.y0]
    }
    fn drift(&self, _x: &[f64], _n: usize) -> f64 {
        0.0
    }
    fn diffusion(&self, x: &[f64], n: usize) -> f64 {
        let y = x[1].max(0.0);
        match n {
            0 => y * libm::pow(x[0].max(0.0), self.beta),
            _ => self.nu * y,
        }
    }
    fn correlation(&self, i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            self.rho
        }
    }
    fn lower_bound(&self, _n: usize) -> Option<f64> {
        Some(0.0)
    }
    fn autonomous(&self, n: usize, y: f64) -> Option<ScalarCoeffs> {
        if n != 1 {
            return None;
        }
        Some(ScalarCoeffs { a: 0.0, da: 0.0, d2a: 0.0, b: self.nu * y, db: self.nu, d2b: 0.0 })
    }
    fn rate(&self) -> f64 {
        self.r
    }
    fn log_coordinate(&self, n: usize) -> bool {
        n == 1
    }
}

/// The model catalog.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "id", rename_all = "lowercase"))]
pub enum BuiltinModel {
    Gbm(Gbm),
    Heston(Heston),
    Sabr(Sabr),
}

impl BuiltinModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            BuiltinModel::Gbm(m) => m.validate(),
            BuiltinModel::Heston(m) => m.validate(),
            BuiltinModel::Sabr(m) => m.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinModel::Gbm(_) => "gbm",
            BuiltinModel::Heston(_) => "heston",
            BuiltinModel::Sabr(_) => "sabr",
        }
    }

    fn inner(&self) -> &dyn SdeModel {
        match self {
            BuiltinModel::Gbm(m) => m,
            BuiltinModel::Heston(m) => m,
            BuiltinModel::Sabr(m) => m,
        }
    }
}

impl SdeModel for BuiltinModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn initial_state(&self) -> Vec<f64> {
        self.inner().initial_state()
    }
    fn drift(&self, x: &[f64], n: usize) -> f64 {
        self.inner().drift(x, n)
    }
    fn diffusion(&self, x: &[f64], n: usize) -> f64 {
        self.inner().diffusion(x, n)
    }
    fn correlation(&self, i: usize, j: usize) -> f64 {
        self.inner().correlation(i, j)
    }
    fn lower_bound(&self, n: usize) -> Option<f64> {
        self.inner().lower_bound(n)
    }
    fn autonomous(&self, n: usize, xn: f64) -> Option<ScalarCoeffs> {
        self.inner().autonomous(n, xn)
    }
    fn rate(&self) -> f64 {
        self.inner().rate()
    }
    fn log_coordinate(&self, n: usize) -> bool {
        self.inner().log_coordinate(n)
    }
}

/// Reference instances: two correlated GBM assets, Heston on the Feller
/// boundary and SABR on a one-year forward.
pub fn builtin_models() -> Vec<BuiltinModel> {
    vec![
        BuiltinModel::Gbm(Gbm::two_dim([110.0, 90.0], [0.1, 0.3], 0.05, -0.6).expect("valid")),
        BuiltinModel::Heston(Heston::new(100.0, 0.09, 2.0, 0.09, 0.6, 0.05, -0.3).expect("valid")),
        BuiltinModel::Sabr(Sabr::from_spot(100.0, 1.0, 0.4, 0.9, 0.4, -0.3, 0.1).expect("valid")),
    ]
}
