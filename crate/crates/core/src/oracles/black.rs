//! Black-76 prices on a forward and implied volatility inversion.

use libm::{log, sqrt};
use thiserror::Error;

use crate::math::{norm_cdf, norm_pdf};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ImpliedVolError {
    #[error("price {price} is outside the no-arbitrage range [{lower}, {upper}]")]
    NoSolution { price: f64, lower: f64, upper: f64 },
    #[error("invalid inputs")]
    Input,
}

/// Volatilities above this are not searched.
pub const MAX_VOL: f64 = 20.0;

/// `df * E[(F e^{...} - K)^+]` for a call, or the put payoff.
pub fn black_price(forward: f64, strike: f64, t: f64, vol: f64, df: f64, call: bool) -> f64 {
    let intrinsic = if call { (forward - strike).max(0.0) } else { (strike - forward).max(0.0) };
    let sd = vol * sqrt(t);
    if !(sd > 0.0) {
        return df * intrinsic;
    }
    let d1 = log(forward / strike) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    if call {
        df * (forward * norm_cdf(d1) - strike * norm_cdf(d2))
    } else {
        df * (strike * norm_cdf(-d2) - forward * norm_cdf(-d1))
    }
}

fn vega(forward: f64, strike: f64, t: f64, vol: f64, df: f64) -> f64 {
    let sd = vol * sqrt(t);
    let d1 = log(forward / strike) / sd + 0.5 * sd;
    df * forward * norm_pdf(d1) * sqrt(t)
}

/// Black-76 implied volatility by Newton's method safeguarded with bisection.
///
/// A price equal to the intrinsic value returns 0; prices outside
/// `[df * intrinsic, df * F]` (call) or `[df * intrinsic, df * K]` (put) fail.
pub fn implied_vol(price: f64, forward: f64, strike: f64, t: f64, df: f64, call: bool) -> Result<f64, ImpliedVolError> {
    if !(forward > 0.0 && strike > 0.0 && t > 0.0 && df > 0.0 && price.is_finite()) {
        return Err(ImpliedVolError::Input);
    }
    let lower = df * if call { (forward - strike).max(0.0) } else { (strike - forward).max(0.0) };
    let upper = df * if call { forward } else { strike };
    if price < lower || price >= upper {
        return Err(ImpliedVolError::NoSolution { price, lower, upper });
    }
    if price == lower {
        return Ok(0.0);
    }
    let f = |v: f64| black_price(forward, strike, t, v, df, call) - price;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > MAX_VOL {
            return Err(ImpliedVolError::NoSolution { price, lower, upper });
        }
    }
    // Brenner-Subrahmanyam start, moved into the bracket if needed
    let mut v = (price / (df * forward)) * sqrt(2.0 * core::f64::consts::PI / t);
    if !(v > lo && v < hi) {
        v = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let fv = f(v);
        if fv == 0.0 {
            return Ok(v);
        }
        if fv < 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let k = vega(forward, strike, t, v, df);
        let newton = v - fv / k;
        let next = if k > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - v).abs() < 1e-14 * v.max(1e-3) || hi - lo < 1e-15 {
            return Ok(next);
        }
        v = next;
    }
    Ok(v)
}
