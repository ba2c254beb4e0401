//! Option pricing on grid sequences.
//!
//! European prices are terminal expectations, discrete up-and-out puts use
//! forward induction of the surviving mass, and Bermudan puts use backward
//! induction through the transition matrices.

use alloc::vec;
use alloc::vec::Vec;

use libm::exp;
use thiserror::Error;

use crate::grid::{GridSequence, ProductGridStep};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error("strike must be positive and finite, got {0}")]
    Strike(f64),
    #[error("maturity step {step} is beyond the last grid step {last}")]
    Maturity { step: usize, last: usize },
    #[error("date step {step} is outside 1..={maturity}")]
    Date { step: usize, maturity: usize },
    #[error("up-and-out option needs a positive barrier")]
    Barrier,
    #[error("grid step {0} has no transition matrix")]
    MissingTransition(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum OptionKind {
    EuropeanPut,
    EuropeanCall,
    UpAndOutPut,
    BermudanPut,
}

/// How the first coordinate relates to the traded asset.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "kebab-case"))]
pub enum Underlying {
    /// The coordinate is the spot price.
    Spot,
    /// The coordinate is the forward to `horizon`; the spot at time `t` is
    /// `x exp(-r (horizon - t))`.
    Forward { horizon: f64 },
}

/// One option contract on the first coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionSpec {
    pub kind: OptionKind,
    pub strike: f64,
    /// Grid step of expiry.
    pub maturity_step: usize,
    /// Knockout level for [`OptionKind::UpAndOutPut`].
    pub barrier: Option<f64>,
    /// Monitoring steps (barrier) or exercise steps (Bermudan); empty means
    /// every step from 1 to the maturity.
    pub dates: Vec<usize>,
    pub rate: f64,
    pub underlying: Underlying,
}

impl OptionSpec {
    pub fn new(kind: OptionKind, strike: f64, maturity_step: usize, rate: f64) -> Self {
        Self { kind, strike, maturity_step, barrier: None, dates: Vec::new(), rate, underlying: Underlying::Spot }
    }

    pub fn with_barrier(mut self, barrier: f64) -> Self {
        self.barrier = Some(barrier);
        self
    }

    pub fn with_dates(mut self, dates: Vec<usize>) -> Self {
        self.dates = dates;
        self
    }

    pub fn on_forward(mut self, horizon: f64) -> Self {
        self.underlying = Underlying::Forward { horizon };
        self
    }

    fn spot_factor(&self, t: f64) -> f64 {
        match self.underlying {
            Underlying::Spot => 1.0,
            Underlying::Forward { horizon } => exp(-self.rate * (horizon - t)),
        }
    }

    fn is_date(&self, k: usize) -> bool {
        k >= 1 && k <= self.maturity_step && (self.dates.is_empty() || self.dates.contains(&k))
    }

    fn validate(&self, seq: &GridSequence) -> Result<(), PricingError> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(PricingError::Strike(self.strike));
        }
        let last = seq.steps().len() - 1;
        if self.maturity_step > last {
            return Err(PricingError::Maturity { step: self.maturity_step, last });
        }
        for &d in &self.dates {
            if d == 0 || d > self.maturity_step {
                return Err(PricingError::Date { step: d, maturity: self.maturity_step });
            }
        }
        if self.kind == OptionKind::UpAndOutPut && !self.barrier.is_some_and(|b| b > 0.0) {
            return Err(PricingError::Barrier);
        }
        Ok(())
    }
}

/// `sum_i p_i H(x_i)` on one step.
pub fn expectation<F: FnMut(&[f64]) -> f64>(step: &ProductGridStep, payoff: F) -> f64 {
    step.expectation(payoff)
}

fn spots(seq: &GridSequence, k: usize, spec: &OptionSpec) -> Vec<f64> {
    let step = seq.step(k);
    let f = spec.spot_factor(seq.time(k));
    let n1 = step.grids[0].len();
    let stride = step.len() / n1;
    (0..step.len()).map(|i| step.grids[0].codewords()[i / stride] * f).collect()
}

fn put(strike: f64, s: f64) -> f64 {
    (strike - s).max(0.0)
}

/// Discounted terminal expectation of the put or call payoff.
pub fn price_european(seq: &GridSequence, spec: &OptionSpec) -> Result<f64, PricingError> {
    spec.validate(seq)?;
    let k = spec.maturity_step;
    let s = spots(seq, k, spec);
    let w = &seq.step(k).joint_weights;
    let call = spec.kind == OptionKind::EuropeanCall;
    let e: f64 =
        s.iter().zip(w).map(|(&s, &p)| p * if call { (s - spec.strike).max(0.0) } else { put(spec.strike, s) }).sum();
    Ok(exp(-spec.rate * seq.time(k)) * e)
}

/// Discretely monitored up-and-out put: mass on codewords with spot at or
/// above the barrier is removed at each monitoring step.
pub fn price_barrier_up_out(seq: &GridSequence, spec: &OptionSpec) -> Result<f64, PricingError> {
    spec.validate(seq)?;
    let barrier = spec.barrier.ok_or(PricingError::Barrier)?;
    let mut mass = vec![1.0];
    for k in 1..=spec.maturity_step {
        let t = seq.step(k).transition.as_ref().ok_or(PricingError::MissingTransition(k))?;
        mass = t.push_forward(&mass);
        if spec.is_date(k) {
            for (m, s) in mass.iter_mut().zip(spots(seq, k, spec)) {
                if s >= barrier {
                    *m = 0.0;
                }
            }
        }
    }
    let k = spec.maturity_step;
    let e: f64 = mass.iter().zip(spots(seq, k, spec)).map(|(m, s)| m * put(spec.strike, s)).sum();
    Ok(exp(-spec.rate * seq.time(k)) * e)
}

/// Bermudan put by backward induction; exercise is always allowed at maturity.
pub fn price_bermudan_put(seq: &GridSequence, spec: &OptionSpec) -> Result<f64, PricingError> {
    spec.validate(seq)?;
    let m = spec.maturity_step;
    if m == 0 {
        return Ok(put(spec.strike, spots(seq, 0, spec)[0]));
    }
    let mut v: Vec<f64> = spots(seq, m, spec).iter().map(|&s| put(spec.strike, s)).collect();
    for k in (0..m).rev() {
        let t = seq.step(k + 1).transition.as_ref().ok_or(PricingError::MissingTransition(k + 1))?;
        let df = exp(-spec.rate * (seq.time(k + 1) - seq.time(k)));
        let mut cont = t.apply(&v);
        cont.iter_mut().for_each(|c| *c *= df);
        if spec.is_date(k) {
            for (c, s) in cont.iter_mut().zip(spots(seq, k, spec)) {
                *c = c.max(put(spec.strike, s));
            }
        }
        v = cont;
    }
    Ok(v[0])
}

/// Dispatches on `spec.kind`.
pub fn price(seq: &GridSequence, spec: &OptionSpec) -> Result<f64, PricingError> {
    match spec.kind {
        OptionKind::EuropeanPut | OptionKind::EuropeanCall => price_european(seq, spec),
        OptionKind::UpAndOutPut => price_barrier_up_out(seq, spec),
        OptionKind::BermudanPut => price_bermudan_put(seq, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::pmq;
    use crate::quantize::OptimizerConfig;
    use crate::sde::{Gbm, Heston, Sabr, Schedule, Scheme};

    fn heston_seq() -> GridSequence {
        let h = Heston::new(100.0, 0.09, 2.0, 0.09, 0.6, 0.05, -0.3).unwrap();
        let sched = Schedule::new(1.0, 12, vec![16, 8]).unwrap();
        pmq(&h, &sched, &[Scheme::Euler, Scheme::Wo2], &OptimizerConfig::default()).unwrap()
    }

    #[test]
    fn expectation_basics() {
        let seq = heston_seq();
        assert!((expectation(seq.last(), |_| 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(expectation(seq.step(0), |x| x[0]), 100.0);
    }

    #[test]
    fn lognormal_second_moment() {
        let g = Gbm::one_dim(100.0, 0.2, 0.05).unwrap();
        let sched = Schedule::new(1.0, 12, vec![30]).unwrap();
        let seq = pmq(&g, &sched, &[Scheme::Euler], &OptimizerConfig::default()).unwrap();
        let m2 = expectation(seq.last(), |x| x[0] * x[0]);
        let want = 1e4 * libm::exp(2.0 * 0.05 + 0.04);
        assert!((m2 / want - 1.0).abs() < 0.01, "{m2} vs {want}");
    }

    #[test]
    fn parity_and_bounds() {
        let seq = heston_seq();
        let r = 0.05;
        for strike in [60.0, 100.0, 140.0] {
            let p = price(&seq, &OptionSpec::new(OptionKind::EuropeanPut, strike, 12, r)).unwrap();
            let c = price(&seq, &OptionSpec::new(OptionKind::EuropeanCall, strike, 12, r)).unwrap();
            let mean = expectation(seq.last(), |x| x[0]);
            assert!((p - c - libm::exp(-r) * (strike - mean)).abs() < 1e-12);
            assert!(p >= 0.0 && p <= libm::exp(-r) * strike);
        }
        let tiny = price(&seq, &OptionSpec::new(OptionKind::EuropeanPut, 1e-6, 12, r)).unwrap();
        assert_eq!(tiny, 0.0);
    }

    #[test]
    fn barrier_properties() {
        let seq = heston_seq();
        let euro = price(&seq, &OptionSpec::new(OptionKind::EuropeanPut, 100.0, 12, 0.05)).unwrap();
        let spec = |b: f64| OptionSpec::new(OptionKind::UpAndOutPut, 100.0, 12, 0.05).with_barrier(b);
        let far = price(&seq, &spec(1e12)).unwrap();
        assert!((far - euro).abs() < 1e-12);
        let mut last = 0.0;
        for b in [90.0, 105.0, 110.0, 120.0, 140.0, 180.0] {
            let p = price(&seq, &spec(b)).unwrap();
            assert!(p >= last - 1e-15 && p <= euro + 1e-12);
            last = p;
        }
        let low = price(&seq, &spec(1e-3)).unwrap();
        assert_eq!(low, 0.0);
        assert!(matches!(
            price(&seq, &OptionSpec::new(OptionKind::UpAndOutPut, 100.0, 12, 0.05)),
            Err(PricingError::Barrier)
        ));
    }

    #[test]
    fn bermudan_properties() {
        let s = Sabr::from_spot(100.0, 1.0, 0.4, 0.9, 0.4, -0.3, 0.1).unwrap();
        let sched = Schedule::new(1.0, 12, vec![16, 8]).unwrap();
        let seq = pmq(&s, &sched, &[Scheme::Euler, Scheme::Wo2], &OptimizerConfig::default()).unwrap();
        let mut last = 0.0;
        for strike in [80.0, 90.0, 100.0, 110.0, 120.0] {
            let e = price(&seq, &OptionSpec::new(OptionKind::EuropeanPut, strike, 12, 0.1).on_forward(1.0)).unwrap();
            let b = price(&seq, &OptionSpec::new(OptionKind::BermudanPut, strike, 12, 0.1).on_forward(1.0)).unwrap();
            let one = price(
                &seq,
                &OptionSpec::new(OptionKind::BermudanPut, strike, 12, 0.1).on_forward(1.0).with_dates(vec![12]),
            )
            .unwrap();
            assert!(b >= e);
            assert!((one - e).abs() < 1e-12, "{one} vs {e}");
            assert!(b >= last);
            last = b;
        }
        assert!(matches!(
            price(&seq, &OptionSpec::new(OptionKind::EuropeanPut, 100.0, 13, 0.1)),
            Err(PricingError::Maturity { .. })
        ));
    }
}
