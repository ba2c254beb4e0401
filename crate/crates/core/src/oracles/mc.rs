//! Fully-truncated Euler Monte Carlo.
//!
//! Coefficients are evaluated at the state clamped to the lower bound of
//! each coordinate. Coordinates flagged by [`SdeModel::log_coordinate`] are
//! stepped in logarithms. Paths are simulated in blocks of
//! [`BLOCK_PATHS`]; block `b` draws from ChaCha8 seeded with `seed` on
//! stream `b`, so results are reproducible and independent of scheduling.

use alloc::vec;
use alloc::vec::Vec;

use libm::{ceil, exp, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::cholesky_lower;
use crate::sde::SdeModel;

pub const BLOCK_PATHS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct McConfig {
    /// Number of samples; with antithetics each sample is a path pair.
    pub paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { paths: 100_000, steps_per_year: 120, seed: 1, antithetic: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    /// `(x - mean) / stderr`, infinite when the estimate is exact and differs.
    pub fn z_score(&self, x: f64) -> f64 {
        let d = x - self.mean;
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY * d.signum()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum McError {
    #[error("path count and steps per year must be positive")]
    Config,
    #[error("horizon must be positive and observation count at least 1")]
    Schedule,
    #[error("correlation matrix is not positive definite")]
    Correlation,
}

/// Clamped states of one path at the observation times
/// `k * horizon / observations`, `k = 0..=observations`.
pub struct PathView<'a> {
    states: &'a [f64],
    dim: usize,
}

impl PathView<'_> {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn observations(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn coordinate(&self, k: usize, n: usize) -> f64 {
        self.states[k * self.dim + n]
    }
}

/// A path functional returning the payoff paid at the horizon.
pub type Payoff<'a> = &'a dyn Fn(&PathView<'_>) -> f64;

/// Discounted mean of each payoff over a common set of paths.
///
/// Each observation interval is split into
/// `ceil(steps_per_year * horizon / observations)` Euler steps.
pub fn mc_price_many<M: SdeModel + ?Sized>(
    model: &M,
    horizon: f64,
    observations: usize,
    payoffs: &[Payoff<'_>],
    cfg: &McConfig,
) -> Result<Vec<McEstimate>, McError> {
    if cfg.paths == 0 || cfg.steps_per_year == 0 {
        return Err(McError::Config);
    }
    if !(horizon > 0.0 && horizon.is_finite()) || observations == 0 {
        return Err(McError::Schedule);
    }
    let d = model.dim();
    let mut corr = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            corr[i * d + j] = model.correlation(i, j);
        }
    }
    let chol = cholesky_lower(&corr, d).ok_or(McError::Correlation)?;
    let sub = (ceil(cfg.steps_per_year as f64 * horizon / observations as f64) as usize).max(1);
    let dt = horizon / (observations * sub) as f64;
    let sim = Simulator {
        model,
        d,
        chol,
        sub,
        dt,
        sqrt_dt: sqrt(dt),
        observations,
        x0: model.initial_state(),
        lower: (0..d).map(|n| model.lower_bound(n).unwrap_or(f64::NEG_INFINITY)).collect(),
        log: (0..d).map(|n| model.log_coordinate(n)).collect(),
    };
    let df = exp(-model.rate() * horizon);
    let mut acc = vec![Welford::default(); payoffs.len()];
    let mut z = vec![0.0; sim.steps() * d];
    let mut states = vec![0.0; (observations + 1) * d];
    let mut values = vec![0.0; payoffs.len()];
    let blocks = cfg.paths.div_ceil(BLOCK_PATHS);
    for b in 0..blocks {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(b as u64);
        let count = BLOCK_PATHS.min(cfg.paths - b * BLOCK_PATHS);
        for _ in 0..count {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            sim.run(&z, 1.0, &mut states);
            let view = PathView { states: &states, dim: d };
            for (v, p) in values.iter_mut().zip(payoffs) {
                *v = p(&view);
            }
            if cfg.antithetic {
                sim.run(&z, -1.0, &mut states);
                let view = PathView { states: &states, dim: d };
                for (v, p) in values.iter_mut().zip(payoffs) {
                    *v = 0.5 * (*v + p(&view));
                }
            }
            for (a, v) in acc.iter_mut().zip(&values) {
                a.push(*v);
            }
        }
    }
    Ok(acc.iter().map(|a| McEstimate { mean: df * a.mean, stderr: df * a.stderr() }).collect())
}

/// Single-payoff form of [`mc_price_many`].
pub fn mc_price<M: SdeModel + ?Sized>(
    model: &M,
    horizon: f64,
    observations: usize,
    payoff: impl Fn(&PathView<'_>) -> f64,
    cfg: &McConfig,
) -> Result<McEstimate, McError> {
    Ok(mc_price_many(model, horizon, observations, &[&payoff], cfg)?[0])
}

struct Simulator<'a, M: ?Sized> {
    model: &'a M,
    d: usize,
    chol: Vec<f64>,
    sub: usize,
    dt: f64,
    sqrt_dt: f64,
    observations: usize,
    x0: Vec<f64>,
    lower: Vec<f64>,
    log: Vec<bool>,
}

impl<M: SdeModel + ?Sized> Simulator<'_, M> {
    fn steps(&self) -> usize {
        self.sub * self.observations
    }

    fn run(&self, z: &[f64], sign: f64, out: &mut [f64]) {
        let d = self.d;
        let mut x = self.x0.clone();
        let mut xc = vec![0.0; d];
        let mut w = vec![0.0; d];
        let clamp = |x: &[f64], xc: &mut [f64]| {
            for n in 0..d {
                xc[n] = x[n].max(self.lower[n]);
            }
        };
        clamp(&x, &mut xc);
        out[..d].copy_from_slice(&xc);
        for k in 0..self.steps() {
            let zk = &z[k * d..(k + 1) * d];
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = sign * (0..=i).map(|j| self.chol[i * d + j] * zk[j]).sum::<f64>();
            }
            for n in 0..d {
                let a = self.model.drift(&xc, n);
                let b = self.model.diffusion(&xc, n);
                if self.log[n] && xc[n] > 0.0 {
                    let (mu, s) = (a / xc[n], b / xc[n]);
                    x[n] = xc[n] * exp((mu - 0.5 * s * s) * self.dt + s * self.sqrt_dt * w[n]);
                } else {
                    x[n] += a * self.dt + b * self.sqrt_dt * w[n];
                }
            }
            clamp(&x, &mut xc);
            if (k + 1) % self.sub == 0 {
                let o = (k + 1) / self.sub;
                out[o * d..(o + 1) * d].copy_from_slice(&xc);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        sqrt((self.m2 / (self.n - 1) as f64).max(0.0) / self.n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::heston_cf::heston_cf_price;
    use crate::sde::{Gbm, Heston};

    fn cfg(paths: usize, seed: u64) -> McConfig {
        McConfig { paths, steps_per_year: 120, seed, antithetic: false }
    }

    #[test]
    fn zero_vol_gbm_is_deterministic() {
        let m = Gbm::one_dim(100.0, 0.0, 0.05).unwrap();
        let e = mc_price(&m, 1.0, 12, |p| p.coordinate(12, 0), &cfg(500, 3)).unwrap();
        assert!((e.mean * exp(0.05) - 100.0 * exp(0.05)).abs() < 1e-9);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn gbm_martingale() {
        let m = Gbm::one_dim(100.0, 0.3, 0.05).unwrap();
        let e = mc_price(&m, 1.0, 1, |p| p.coordinate(1, 0), &cfg(20_000, 7)).unwrap();
        assert!((e.mean - 100.0).abs() < 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn seeds_reproduce_and_agree() {
        let m = Gbm::one_dim(100.0, 0.2, 0.01).unwrap();
        let put = |p: &PathView<'_>| (100.0 - p.coordinate(4, 0)).max(0.0);
        let a = mc_price(&m, 1.0, 4, put, &cfg(3000, 11)).unwrap();
        let b = mc_price(&m, 1.0, 4, put, &cfg(3000, 11)).unwrap();
        assert_eq!(a, b);
        let c = mc_price(&m, 1.0, 4, put, &cfg(3000, 12)).unwrap();
        assert_ne!(a, c);
        let pooled = sqrt(a.stderr * a.stderr + c.stderr * c.stderr);
        assert!((a.mean - c.mean).abs() < 4.0 * pooled);
    }

    #[test]
    fn antithetic_reduces_error() {
        let m = Gbm::one_dim(100.0, 0.2, 0.01).unwrap();
        let call = |p: &PathView<'_>| (p.coordinate(1, 0) - 100.0).max(0.0);
        let plain = mc_price(&m, 1.0, 1, call, &cfg(4000, 5)).unwrap();
        let anti = mc_price(&m, 1.0, 1, call, &McConfig { antithetic: true, ..cfg(2000, 5) }).unwrap();
        assert!(anti.stderr < plain.stderr);
    }

    #[test]
    fn heston_put_matches_cf() {
        let m = Heston::new(100.0, 0.09, 2.0, 0.09, 0.6, 0.05, -0.3).unwrap();
        let e = mc_price(&m, 1.0, 1, |p| (100.0 - p.coordinate(1, 0)).max(0.0), &cfg(20_000, 2)).unwrap();
        let cf = heston_cf_price(&m, 100.0, 1.0, false).unwrap();
        assert!(e.z_score(cf).abs() < 3.0, "{e:?} vs {cf}");
    }

    #[test]
    fn rejects_bad_config() {
        let m = Gbm::one_dim(100.0, 0.2, 0.01).unwrap();
        assert_eq!(mc_price(&m, 1.0, 1, |_| 0.0, &cfg(0, 1)), Err(McError::Config));
        assert_eq!(mc_price(&m, 0.0, 1, |_| 0.0, &cfg(1, 1)), Err(McError::Schedule));
    }
}
