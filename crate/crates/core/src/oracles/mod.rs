//! Independent reference prices: Monte Carlo, Heston characteristic
//! function inversion and Black-76.

pub mod black;
pub mod heston_cf;
pub mod mc;
pub mod quad;

pub use black::{black_price, implied_vol, ImpliedVolError};
pub use heston_cf::{heston_cdf, heston_cf_price, CfError};
pub use mc::{mc_price, mc_price_many, McConfig, McError, McEstimate, PathView, Payoff};
pub use quad::{adaptive_lobatto, Quadrature};
