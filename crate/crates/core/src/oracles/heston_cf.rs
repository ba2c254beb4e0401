//! Semi-analytic Heston prices and distribution function from the
//! characteristic function of `ln S_T` in its "little trap" form.
//!
//! The form is rearranged so that nothing divides by `sigma^2`: with
//! `beta = kappa - rho sigma i u`, `beta - d = -sigma^2 (iu + u^2) / (beta + d)`,
//! which keeps the degenerate small-vol-of-vol limit exact.

use core::f64::consts::PI;

use libm::{exp, log};
use num_complex::Complex64;
use thiserror::Error;

use super::quad::adaptive_lobatto;
use crate::sde::Heston;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CfError {
    #[error("quadrature did not reach the target accuracy (achieved {achieved:e})")]
    Accuracy { achieved: f64 },
    #[error("invalid inputs")]
    Input,
}

const PANEL_TOL: f64 = 1e-11;
const BASE_LIMIT: f64 = 200.0;
const MAX_LIMIT: f64 = 1e5;
const TAIL_TOL: f64 = 1e-12;

/// `log(1 + z) / z`, accurate for small `z`.
fn log1p_over(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        Complex64::new(1.0, 0.0) - z / 2.0 + z * z / 3.0 - z * z * z / 4.0
    } else {
        (Complex64::new(1.0, 0.0) + z).ln() / z
    }
}

/// `ln E[exp(i u ln S_T)]` for complex `u`.
pub fn log_cf(p: &Heston, t: f64, u: Complex64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    let iu = i * u;
    let s2 = p.sigma * p.sigma;
    let iu_u2 = iu + u * u;
    let beta = Complex64::new(p.kappa, 0.0) - p.rho * p.sigma * iu;
    let mut d = (beta * beta + s2 * iu_u2).sqrt();
    if d.re < 0.0 {
        d = -d;
    }
    let bpd = beta + d;
    // (beta - d) / sigma^2 and g / sigma^2
    let bmd_s = -iu_u2 / bpd;
    let gs = bmd_s / bpd;
    let g = gs * s2;
    let e = (-d * t).exp();
    let ge = g * e;
    let log_ratio_s = -gs * e * log1p_over(-ge) + gs * log1p_over(-g);
    let a = p.r * iu * t + p.kappa * p.theta * (bmd_s * t - 2.0 * log_ratio_s);
    let b = bmd_s * (Complex64::new(1.0, 0.0) - e) / (Complex64::new(1.0, 0.0) - ge);
    a + b * p.v0 + iu * log(p.s0)
}

/// Characteristic function of `ln S_T`.
pub fn cf(p: &Heston, t: f64, u: Complex64) -> Complex64 {
    log_cf(p, t, u).exp()
}

fn integrate<F: Fn(f64) -> f64>(f: F) -> Result<f64, CfError> {
    // the integrands have finite limits at 0 but evaluate as 0/0 there
    let g = |u: f64| f(u.max(1e-9));
    let mut limit = BASE_LIMIT;
    while g(limit).abs() > TAIL_TOL && limit < MAX_LIMIT {
        limit *= 2.0;
    }
    let q = adaptive_lobatto(g, 0.0, limit, PANEL_TOL);
    let tail = g(limit).abs();
    if !q.converged || !q.value.is_finite() || tail > 1e-8 {
        return Err(CfError::Accuracy { achieved: q.error.max(tail * limit) });
    }
    Ok(q.value)
}

/// European call or put on the spot.
pub fn heston_cf_price(p: &Heston, strike: f64, t: f64, call: bool) -> Result<f64, CfError> {
    if !(strike > 0.0 && t > 0.0) {
        return Err(CfError::Input);
    }
    let lk = log(strike);
    let df = exp(-p.r * t);
    let i = Complex64::new(0.0, 1.0);
    let integrand = |u: f64| {
        let uc = Complex64::new(u, 0.0);
        let v = cf(p, t, uc - i) - strike * cf(p, t, uc);
        ((-i * u * lk).exp() / (i * u) * v).re
    };
    let c = 0.5 * (p.s0 - strike * df) + df / PI * integrate(integrand)?;
    Ok(if call { c } else { c - p.s0 + strike * df })
}

/// `P(S_T < x)` by Gil-Pelaez inversion.
pub fn heston_cdf(p: &Heston, x: f64, t: f64) -> Result<f64, CfError> {
    if !(x > 0.0) {
        return Ok(0.0);
    }
    let lx = log(x);
    let i = Complex64::new(0.0, 1.0);
    let integrand = |u: f64| ((-i * u * lx).exp() * cf(p, t, Complex64::new(u, 0.0)) / (i * u)).re;
    Ok((0.5 - integrate(integrand)? / PI).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::black::black_price;

    fn params() -> Heston {
        Heston::new(100.0, 0.09, 2.0, 0.09, 0.6, 0.05, -0.3).unwrap()
    }

    #[test]
    fn cf_normalization_and_martingale() {
        let p = params();
        let one = cf(&p, 1.0, Complex64::new(0.0, 0.0));
        assert!((one.re - 1.0).abs() < 1e-14 && one.im.abs() < 1e-14);
        let fwd = cf(&p, 1.0, Complex64::new(0.0, -1.0));
        assert!((fwd.re - 100.0 * exp(0.05)).abs() < 1e-10);
    }

    #[test]
    fn degenerate_vol_of_vol_is_black_scholes() {
        let p = Heston::new(100.0, 0.09, 2.0, 0.09, 1e-8, 0.05, -0.3).unwrap();
        for k in [80.0, 100.0, 125.0] {
            let h = heston_cf_price(&p, k, 1.0, false).unwrap();
            let b = black_price(100.0 * exp(0.05), k, 1.0, 0.3, exp(-0.05), false);
            assert!((h - b).abs() < 1e-5, "K={k}: {h} vs {b}");
        }
    }

    #[test]
    fn limits_and_parity() {
        let p = params();
        assert!(heston_cf_price(&p, 1e-3, 1.0, false).unwrap().abs() < 1e-8);
        let deep = heston_cf_price(&p, 500.0, 1.0, false).unwrap();
        assert!((deep - (500.0 * exp(-0.05) - 100.0)).abs() < 0.01);
        for k in [70.0, 100.0, 130.0] {
            let c = heston_cf_price(&p, k, 1.0, true).unwrap();
            let q = heston_cf_price(&p, k, 1.0, false).unwrap();
            assert!((c - q - (100.0 - k * exp(-0.05))).abs() < 1e-8);
            assert!(q > 0.0 && c > 0.0);
        }
    }

    #[test]
    fn cdf_is_strike_derivative_of_put() {
        let p = params();
        let k = 105.0;
        let h = 1e-3;
        let dp = (heston_cf_price(&p, k + h, 1.0, false).unwrap() - heston_cf_price(&p, k - h, 1.0, false).unwrap())
            / (2.0 * h);
        let cdf = heston_cdf(&p, k, 1.0).unwrap();
        assert!((dp - exp(-0.05) * cdf).abs() < 1e-6, "{dp} vs {cdf}");
        assert!(heston_cdf(&p, 1e-6, 1.0).unwrap() < 1e-8);
        assert!(heston_cdf(&p, 1e4, 1.0).unwrap() > 1.0 - 1e-8);
    }
}
