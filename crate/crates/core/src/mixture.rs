//! One-step update laws: finite mixtures of Gaussian, scaled non-central
//! chi-square and point-mass components, plus their bivariate joint
//! distribution functions.
//!
//! Every component is an affine or quadratic function of one standard normal
//! `Z`, and the event `{X < x}` is an interval in `Z`. All partial moments
//! are therefore truncated normal moments, which keeps the non-central
//! chi-square case stable even for very large non-centrality.

use alloc::vec::Vec;

use thiserror::Error;

use crate::math::{norm_cdf, norm_pdf, pow_pdf, BivariateNormal};
use crate::quantize::{Dist1D, PartialMoments, Support};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MixtureError {
    #[error("mixture has no components")]
    Empty,
    #[error("{components} components but {weights} weights")]
    LengthMismatch { components: usize, weights: usize },
    #[error("weight {index} is {value}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("weights sum to {0}")]
    WeightSum(f64),
    #[error("gaussian scale must be positive and finite, got {0}")]
    GaussScale(f64),
    #[error("chi-square scale must be positive and finite, got {0}")]
    Wo2Scale(f64),
    #[error("non-centrality must be non-negative and finite, got {0}")]
    NonCentrality(f64),
    #[error("non-finite location {0}")]
    Location(f64),
}

/// `X = c + m Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussComponent {
    pub c: f64,
    pub m: f64,
}

impl GaussComponent {
    pub fn new(c: f64, m: f64) -> Result<Self, MixtureError> {
        if !c.is_finite() {
            return Err(MixtureError::Location(c));
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(MixtureError::GaussScale(m));
        }
        Ok(Self { c, m })
    }
}

/// `X = mbar (Z + sqrt(lambda))^2 + cbar`, i.e. a scaled and shifted
/// non-central chi-square with one degree of freedom.
///
/// `center = cbar + mbar * lambda` is kept alongside because for large
/// `lambda` it is the well-conditioned location parameter: expanding the
/// square gives `X = mbar Z^2 + 2 mbar sqrt(lambda) Z + center`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Wo2Component {
    pub mbar: f64,
    pub cbar: f64,
    pub lambda: f64,
    pub center: f64,
}

impl Wo2Component {
    pub fn new(mbar: f64, cbar: f64, lambda: f64) -> Result<Self, MixtureError> {
        Self::check(mbar, lambda)?;
        if !cbar.is_finite() {
            return Err(MixtureError::Location(cbar));
        }
        Ok(Self { mbar, cbar, lambda, center: cbar + mbar * lambda })
    }

    /// Builds from the centre, which the scheme coefficients give without
    /// the cancellation inherent in `cbar`.
    pub fn from_center(mbar: f64, center: f64, lambda: f64) -> Result<Self, MixtureError> {
        Self::check(mbar, lambda)?;
        if !center.is_finite() {
            return Err(MixtureError::Location(center));
        }
        Ok(Self { mbar, cbar: center - mbar * lambda, lambda, center })
    }

    fn check(mbar: f64, lambda: f64) -> Result<(), MixtureError> {
        if !(mbar > 0.0 && mbar.is_finite()) {
            return Err(MixtureError::Wo2Scale(mbar));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(MixtureError::NonCentrality(lambda));
        }
        Ok(())
    }

    fn mu(&self) -> f64 {
        libm::sqrt(self.lambda)
    }
}

/// One mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Component {
    Gauss(GaussComponent),
    Wo2(Wo2Component),
    /// Degenerate update (zero diffusion).
    Point(f64),
}

/// `{Z in (lo, hi)}`; `None` is the empty event.
pub type ZInterval = Option<(f64, f64)>;

const FULL: ZInterval = Some((f64::NEG_INFINITY, f64::INFINITY));

/// Truncated standard normal moments `E[Z^k 1{lo < Z < hi}]`, `k = 0..=4`.
fn z_moments(lo: f64, hi: f64, order: usize) -> [f64; 5] {
    let mut e = [0.0; 5];
    e[0] = if lo > 0.0 { norm_cdf(-lo) - norm_cdf(-hi) } else { norm_cdf(hi) - norm_cdf(lo) };
    let (pl, ph) = (norm_pdf(lo), norm_pdf(hi));
    if order >= 1 {
        e[1] = pl - ph;
    }
    for k in 2..=order.min(4) {
        e[k] = (k as f64 - 1.0) * e[k - 2] + pow_pdf(lo, k as i32 - 1) - pow_pdf(hi, k as i32 - 1);
    }
    e
}

impl Component {
    /// The event `{X < x}` as an interval of the driving normal.
    pub fn z_interval(&self, x: f64) -> ZInterval {
        if x == f64::INFINITY {
            return FULL;
        }
        if x == f64::NEG_INFINITY {
            return None;
        }
        match *self {
            Component::Gauss(g) => Some((f64::NEG_INFINITY, (x - g.c) / g.m)),
            Component::Wo2(w) => {
                let q = (x - w.cbar) / w.mbar;
                if !(q > 0.0) {
                    return None;
                }
                let s = libm::sqrt(q);
                let mu = w.mu();
                // s - mu without cancellation
                let hi = ((x - w.center) / w.mbar) / (s + mu);
                Some((-s - mu, hi))
            }
            Component::Point(c) => {
                if c < x {
                    FULL
                } else {
                    None
                }
            }
        }
    }

    /// Coefficients of `X = alpha Z^2 + beta Z + gamma`.
    fn poly(&self) -> (f64, f64, f64) {
        match *self {
            Component::Gauss(g) => (0.0, g.m, g.c),
            Component::Wo2(w) => (w.mbar, 2.0 * w.mbar * w.mu(), w.center),
            Component::Point(c) => (0.0, 0.0, c),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.z_interval(x) {
            None => 0.0,
            Some((lo, hi)) => z_moments(lo, hi, 0)[0],
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Component::Gauss(g) => norm_pdf((x - g.c) / g.m) / g.m,
            Component::Wo2(w) => match self.z_interval(x) {
                Some((lo, hi)) if x.is_finite() => {
                    let s = 0.5 * (hi - lo);
                    (norm_pdf(lo) + norm_pdf(hi)) / (2.0 * s * w.mbar)
                }
                _ => 0.0,
            },
            Component::Point(_) => 0.0,
        }
    }

    fn lpe_on(&self, iv: ZInterval, order: usize) -> [f64; 3] {
        let Some((lo, hi)) = iv else { return [0.0; 3] };
        if let Component::Point(c) = *self {
            return [1.0, c, c * c];
        }
        let e = z_moments(lo, hi, 2 * order);
        let (a, b, g) = self.poly();
        let m1 = a * e[2] + b * e[1] + g * e[0];
        let m2 = if order >= 2 {
            a * a * e[4] + 2.0 * a * b * e[3] + (b * b + 2.0 * a * g) * e[2] + 2.0 * b * g * e[1] + g * g * e[0]
        } else {
            0.0
        };
        [e[0], m1, m2]
    }

    /// `E[X 1{X < x}]`.
    pub fn lpe1(&self, x: f64) -> f64 {
        self.lpe_on(self.z_interval(x), 1)[1]
    }

    /// `E[X^2 1{X < x}]`.
    pub fn lpe2(&self, x: f64) -> f64 {
        self.lpe_on(self.z_interval(x), 2)[2]
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Component::Gauss(g) => g.c,
            Component::Wo2(w) => w.center + w.mbar,
            Component::Point(c) => c,
        }
    }

    pub fn second_moment(&self) -> f64 {
        let mean = self.mean();
        let var = match *self {
            Component::Gauss(g) => g.m * g.m,
            Component::Wo2(w) => 2.0 * w.mbar * w.mbar * (1.0 + 2.0 * w.lambda),
            Component::Point(_) => 0.0,
        };
        var + mean * mean
    }

    pub fn support(&self) -> Support {
        match *self {
            Component::Gauss(_) => Support::REAL,
            Component::Wo2(w) => Support::new(w.cbar, f64::INFINITY),
            Component::Point(c) => Support::new(c, c),
        }
    }

    /// `E[(X - at)^2 1{lo <= X < hi}]`.
    pub fn region_distortion(&self, lo: f64, hi: f64, at: f64) -> f64 {
        if !(hi > lo) {
            return 0.0;
        }
        let (a, b, g) = self.poly();
        let g = g - at;
        let sq = |l: f64, h: f64| -> f64 {
            if !(h > l) {
                return 0.0;
            }
            let e = z_moments(l, h, 4);
            a * a * e[4] + 2.0 * a * b * e[3] + (b * b + 2.0 * a * g) * e[2] + 2.0 * b * g * e[1] + g * g * e[0]
        };
        let d = match *self {
            Component::Point(c) => {
                if lo <= c && c < hi {
                    g * g
                } else {
                    0.0
                }
            }
            Component::Gauss(gc) => {
                let zl = if lo == f64::NEG_INFINITY { lo } else { (lo - gc.c) / gc.m };
                let zh = if hi == f64::INFINITY { hi } else { (hi - gc.c) / gc.m };
                sq(zl, zh)
            }
            Component::Wo2(_) => match (self.z_interval(lo), self.z_interval(hi)) {
                (_, None) => 0.0,
                (None, Some((l, h))) => sq(l, h),
                (Some((il, ih)), Some((l, h))) => sq(l, il) + sq(ih, h),
            },
        };
        d.max(0.0)
    }
}

/// Weighted mixture of components, optionally censored from below.
///
/// With a floor `f` whose value exceeds the lower end of the mixture's
/// support, the law is that of `max(X, f)`: the mass below `f` sits in an
/// atom at `f`. This keeps positive processes on `[f, inf)` while conserving
/// probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    components: Vec<Component>,
    weights: Vec<f64>,
    inner_support: Support,
    inner_mean: f64,
    inner_second: f64,
    censor: Option<Censor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Censor {
    floor: f64,
    atom: f64,
    lpe1: f64,
    lpe2: f64,
}

impl Mixture {
    /// Weights must be non-negative and sum to one within `1e-9`.
    pub fn new(components: Vec<Component>, weights: Vec<f64>) -> Result<Self, MixtureError> {
        if components.is_empty() {
            return Err(MixtureError::Empty);
        }
        if components.len() != weights.len() {
            return Err(MixtureError::LengthMismatch { components: components.len(), weights: weights.len() });
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(MixtureError::InvalidWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MixtureError::WeightSum(total));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut mean = 0.0;
        let mut second = 0.0;
        for (c, &p) in components.iter().zip(&weights) {
            if p == 0.0 {
                continue;
            }
            let s = c.support();
            lo = lo.min(s.lo);
            hi = hi.max(s.hi);
            mean += p * c.mean();
            second += p * c.second_moment();
        }
        Ok(Self {
            components,
            weights,
            inner_support: Support::new(lo, hi),
            inner_mean: mean,
            inner_second: second,
            censor: None,
        })
    }

    pub fn gaussian(c: &[f64], m: &[f64], p: &[f64]) -> Result<Self, MixtureError> {
        let comps = c
            .iter()
            .zip(m)
            .map(|(&c, &m)| GaussComponent::new(c, m).map(Component::Gauss))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(comps, p.to_vec())
    }

    pub fn wo2(mbar: &[f64], cbar: &[f64], lambda: &[f64], p: &[f64]) -> Result<Self, MixtureError> {
        let comps = mbar
            .iter()
            .zip(cbar)
            .zip(lambda)
            .map(|((&m, &c), &l)| Wo2Component::new(m, c, l).map(Component::Wo2))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(comps, p.to_vec())
    }

    /// Censors at `floor` when the support extends below it; otherwise a no-op.
    pub fn censored_at(mut self, floor: f64) -> Self {
        self.censor = None;
        if self.inner_support.lo < floor && floor < self.inner_support.hi {
            let [atom, lpe1, lpe2] = self.inner_lpe(floor, 2);
            self.censor = Some(Censor { floor, atom: atom.min(1.0), lpe1, lpe2 });
        } else if floor >= self.inner_support.hi {
            // everything is below the floor
            self.components = alloc::vec![Component::Point(floor)];
            self.weights = alloc::vec![1.0];
            self.inner_support = Support::new(floor, floor);
            self.inner_mean = floor;
            self.inner_second = floor * floor;
        }
        self
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mass moved onto the floor by censoring.
    pub fn atom(&self) -> f64 {
        self.censor.map_or(0.0, |c| c.atom)
    }

    pub fn floor(&self) -> Option<f64> {
        self.censor.map(|c| c.floor)
    }

    fn inner_lpe(&self, x: f64, order: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, &p) in self.components.iter().zip(&self.weights) {
            if p == 0.0 {
                continue;
            }
            let v = c.lpe_on(c.z_interval(x), order);
            for k in 0..=order {
                out[k] += p * v[k];
            }
        }
        out
    }

    fn inner_pdf(&self, x: f64) -> f64 {
        self.components.iter().zip(&self.weights).map(|(c, &p)| p * c.pdf(x)).sum()
    }

    fn inner_moments(&self, x: f64) -> PartialMoments {
        let mut m = PartialMoments::default();
        for (c, &p) in self.components.iter().zip(&self.weights) {
            if p == 0.0 {
                continue;
            }
            let v = c.lpe_on(c.z_interval(x), 1);
            m.cdf += p * v[0];
            m.lpe1 += p * v[1];
            m.pdf += p * c.pdf(x);
        }
        m
    }

    fn inner_region(&self, lo: f64, hi: f64, at: f64) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, &p)| if p == 0.0 { 0.0 } else { p * c.region_distortion(lo, hi, at) })
            .sum()
    }
}

impl Dist1D for Mixture {
    fn cdf(&self, x: f64) -> f64 {
        match self.censor {
            Some(c) if x <= c.floor => 0.0,
            _ => self.inner_lpe(x, 0)[0],
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        match self.censor {
            Some(c) if x <= c.floor => 0.0,
            _ => self.inner_pdf(x),
        }
    }

    fn lpe1(&self, x: f64) -> f64 {
        match self.censor {
            Some(c) if x <= c.floor => 0.0,
            Some(c) => c.floor * c.atom + self.inner_lpe(x, 1)[1] - c.lpe1,
            None => self.inner_lpe(x, 1)[1],
        }
    }

    fn lpe2(&self, x: f64) -> f64 {
        match self.censor {
            Some(c) if x <= c.floor => 0.0,
            Some(c) => c.floor * c.floor * c.atom + self.inner_lpe(x, 2)[2] - c.lpe2,
            None => self.inner_lpe(x, 2)[2],
        }
    }

    fn mean(&self) -> f64 {
        match self.censor {
            Some(c) => c.floor * c.atom + self.inner_mean - c.lpe1,
            None => self.inner_mean,
        }
    }

    fn second_moment(&self) -> f64 {
        match self.censor {
            Some(c) => c.floor * c.floor * c.atom + self.inner_second - c.lpe2,
            None => self.inner_second,
        }
    }

    fn support(&self) -> Support {
        match self.censor {
            Some(c) => Support::new(c.floor, self.inner_support.hi),
            None => self.inner_support,
        }
    }

    fn moments(&self, x: f64) -> PartialMoments {
        match self.censor {
            Some(c) if x <= c.floor => PartialMoments::default(),
            Some(c) => {
                let mut m = self.inner_moments(x);
                m.lpe1 += c.floor * c.atom - c.lpe1;
                m
            }
            None => self.inner_moments(x),
        }
    }

    fn region_distortion(&self, lo: f64, hi: f64, at: f64) -> f64 {
        match self.censor {
            Some(c) if hi <= c.floor => 0.0,
            Some(c) if lo <= c.floor => {
                let d = c.floor - at;
                c.atom * d * d + self.inner_region(c.floor, hi, at)
            }
            _ => self.inner_region(lo, hi, at),
        }
    }
}

/// Distribution function of a non-central chi-square with one degree of
/// freedom: `Phi(sqrt(x) - sqrt(lambda)) - Phi(-sqrt(x) - sqrt(lambda))`.
pub fn ncchi2_cdf_1dof(x: f64, lambda: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    let (s, mu) = (libm::sqrt(x), libm::sqrt(lambda));
    let hi = (x - lambda) / (s + mu);
    z_moments(-s - mu, hi, 0)[0]
}

/// Density of a non-central chi-square with one degree of freedom.
pub fn ncchi2_pdf_1dof(x: f64, lambda: f64) -> f64 {
    if !(x > 0.0) || x.is_infinite() {
        return 0.0;
    }
    let (s, mu) = (libm::sqrt(x), libm::sqrt(lambda));
    (norm_pdf(s - mu) + norm_pdf(s + mu)) / (2.0 * s)
}

/// Joint one-step law of a two-dimensional update: per component, one
/// marginal component per coordinate, driven by normals with correlation `rho`.
#[derive(Debug, Clone)]
pub struct JointLaw2D {
    pub components: Vec<(Component, Component)>,
    pub weights: Vec<f64>,
    bvn: BivariateNormal,
}

impl JointLaw2D {
    pub fn new(components: Vec<(Component, Component)>, weights: Vec<f64>, rho: f64) -> Result<Self, MixtureError> {
        if components.len() != weights.len() {
            return Err(MixtureError::LengthMismatch { components: components.len(), weights: weights.len() });
        }
        if components.is_empty() {
            return Err(MixtureError::Empty);
        }
        Ok(Self { components, weights, bvn: BivariateNormal::new(rho) })
    }

    pub fn rho(&self) -> f64 {
        self.bvn.rho()
    }

    /// `P(X1 < x, X2 < y)` of the uncensored law.
    pub fn cdf(&self, x: f64, y: f64) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|((c1, c2), &p)| p * joint_interval_prob(&self.bvn, c1.z_interval(x), c2.z_interval(y)))
            .sum()
    }
}

/// `P(Z1 in a, Z2 in b)` for correlated standard normals.
pub fn joint_interval_prob(bvn: &BivariateNormal, a: ZInterval, b: ZInterval) -> f64 {
    match (a, b) {
        (Some((al, ah)), Some((bl, bh))) => bvn.rect(al, ah, bl, bh),
        _ => 0.0,
    }
}

/// `P(X1 < x, X2 < y)` under `law`.
pub fn joint_cdf_2d(law: &JointLaw2D, x: f64, y: f64) -> f64 {
    law.cdf(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    /// Poisson mixture of central chi-squares with odd degrees of freedom,
    /// each via the regularized lower incomplete gamma series.
    fn ncchi2_series(x: f64, lambda: f64) -> f64 {
        let half = x / 2.0;
        let reg_gamma = |a: f64| -> f64 {
            let mut term = libm::exp(-half + a * libm::log(half) - libm::lgamma(a + 1.0));
            let mut sum = term;
            let mut k = 1.0;
            while term > 1e-18 * sum {
                term *= half / (a + k);
                sum += term;
                k += 1.0;
            }
            sum
        };
        let mut total = 0.0;
        let mut pois = libm::exp(-lambda / 2.0);
        for j in 0..400 {
            if j > 0 {
                pois *= (lambda / 2.0) / j as f64;
            }
            total += pois * reg_gamma(0.5 + j as f64);
            if j as f64 > lambda && pois < 1e-18 {
                break;
            }
        }
        total
    }

    #[test]
    fn gauss_cdf_examples() {
        let one = Mixture::gaussian(&[0.0], &[1.0], &[1.0]).unwrap();
        assert_eq!(one.cdf(0.0), 0.5);
        let sym = Mixture::gaussian(&[-1.0, 1.0], &[1.0, 1.0], &[0.5, 0.5]).unwrap();
        assert!((sym.cdf(0.0) - 0.5).abs() < 1e-15);
        let m = Mixture::gaussian(&[0.0, 2.0], &[1.0, 1.0], &[0.3, 0.7]).unwrap();
        let want = 0.3 * norm_cdf(1.0) + 0.7 * norm_cdf(-1.0);
        assert!((m.cdf(1.0) - want).abs() < 1e-15);
        assert!((m.cdf(1.0) - 0.363_462_1).abs() < 1e-6);
    }

    #[test]
    fn gauss_lpe_examples() {
        let m = Mixture::gaussian(&[1.0, 3.0], &[0.5, 2.0], &[0.5, 0.5]).unwrap();
        assert!((m.lpe1(f64::INFINITY) - 2.0).abs() < 1e-15);
        assert_eq!(m.lpe1(f64::NEG_INFINITY), 0.0);
        let x = 2.3;
        let quad = simpson(|t| t * m.pdf(t), -20.0, x, 20_000);
        assert!((m.lpe1(x) - quad).abs() < 1e-8);
        let quad2 = simpson(|t| t * t * m.pdf(t), -20.0, x, 20_000);
        assert!((m.lpe2(x) - quad2).abs() < 1e-8);
    }

    #[test]
    fn ncchi2_examples() {
        assert!((ncchi2_cdf_1dof(1.0, 0.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        assert_eq!(ncchi2_cdf_1dof(0.0, 3.0), 0.0);
        assert!((ncchi2_cdf_1dof(1e4, 2.0) - 1.0).abs() < 1e-15);
        for &(x, l) in &[(0.3, 0.0), (1.0, 0.5), (2.5, 1.7), (7.0, 4.0), (30.0, 20.0), (0.01, 9.0)] {
            let a = ncchi2_cdf_1dof(x, l);
            let b = ncchi2_series(x, l);
            assert!((a - b).abs() < 1e-12, "x={x} l={l}: {a} vs {b}");
            let h = 1e-6 * x;
            let fd = (ncchi2_cdf_1dof(x + h, l) - ncchi2_cdf_1dof(x - h, l)) / (2.0 * h);
            assert!((fd - ncchi2_pdf_1dof(x, l)).abs() < 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn wo2_examples() {
        let m = Mixture::wo2(&[1.0], &[0.0], &[0.0], &[1.0]).unwrap();
        assert!((m.cdf(1.0) - 0.682689).abs() < 1e-6);
        assert_eq!(m.cdf(-0.5), 0.0);
        let m = Mixture::wo2(&[0.5, 2.0], &[-1.0, 0.3], &[0.7, 3.0], &[0.4, 0.6]).unwrap();
        let want = 0.4 * (0.5 * 1.7 - 1.0) + 0.6 * (2.0 * 4.0 + 0.3);
        assert!((m.mean() - want).abs() < 1e-13);
        assert!((m.lpe1(f64::INFINITY) - want).abs() < 1e-13);
        assert_eq!(m.support().lo, -1.0);
        assert_eq!(m.cdf(-1.0), 0.0);
        assert!(Mixture::wo2(&[-0.1], &[0.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn wo2_mean_by_sampling() {
        let w = Wo2Component::new(0.3, -0.2, 1.4).unwrap();
        let mu = libm::sqrt(1.4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 400_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let x = 0.3 * (z + mu) * (z + mu) - 0.2;
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let se = libm::sqrt((s2 / n as f64 - mean * mean) / n as f64);
        assert!((Component::Wo2(w).mean() - mean).abs() < 4.0 * se);
        let var = s2 / n as f64 - mean * mean;
        let want = Component::Wo2(w).second_moment() - Component::Wo2(w).mean().powi(2);
        assert!((var - want).abs() < 0.02 * want);
    }

    #[test]
    fn wo2_large_noncentrality_is_stable() {
        let w = Wo2Component::from_center(1e-4, 0.09, 4e6).unwrap();
        let c = Component::Wo2(w);
        // effectively gaussian with sd 2 * mbar * sqrt(lambda) = 0.4
        let sd = 2.0 * 1e-4 * 2e3;
        for &x in &[-0.5, 0.0, 0.09, 0.4, 1.0] {
            let g = norm_cdf((x - 0.09) / sd);
            assert!((c.cdf(x) - g).abs() < 2e-3, "x={x}");
        }
        assert!((c.lpe1(f64::INFINITY) - c.mean()).abs() < 1e-12);
    }

    #[test]
    fn censoring_moves_mass_to_floor() {
        let m = Mixture::gaussian(&[0.05], &[0.1], &[1.0]).unwrap().censored_at(0.0);
        let atom = norm_cdf(-0.5);
        assert!((m.atom() - atom).abs() < 1e-15);
        assert_eq!(m.cdf(0.0), 0.0);
        assert!((m.cdf(1e-12) - atom).abs() < 1e-9);
        assert_eq!(m.support().lo, 0.0);
        // E[max(X, 0)] = c Phi(c/m) + m phi(c/m)
        let want = 0.05 * norm_cdf(0.5) + 0.1 * norm_pdf(0.5);
        assert!((m.mean() - want).abs() < 1e-15);
        assert!((m.lpe1(f64::INFINITY) - want).abs() < 1e-15);
        let d = m.region_distortion(0.0, f64::INFINITY, m.mean());
        let var = m.second_moment() - want * want;
        assert!((d - var).abs() < 1e-14);
        // no-op when support is already above the floor
        let w = Mixture::wo2(&[1.0], &[0.5], &[1.0], &[1.0]).unwrap().censored_at(0.0);
        assert!(w.floor().is_none());
    }

    #[test]
    fn joint_cdf_marginalizes() {
        let law = JointLaw2D::new(
            vec![
                (
                    Component::Gauss(GaussComponent::new(0.1, 0.9).unwrap()),
                    Component::Wo2(Wo2Component::new(0.2, 0.05, 2.0).unwrap()),
                ),
                (
                    Component::Gauss(GaussComponent::new(-0.4, 1.3).unwrap()),
                    Component::Gauss(GaussComponent::new(0.3, 0.2).unwrap()),
                ),
            ],
            vec![0.35, 0.65],
            -0.45,
        )
        .unwrap();
        let y_marg = 0.35 * law.components[0].1.cdf(0.7) + 0.65 * law.components[1].1.cdf(0.7);
        assert!((law.cdf(f64::INFINITY, 0.7) - y_marg).abs() < 1e-15);
        let x_marg = 0.35 * law.components[0].0.cdf(0.2) + 0.65 * law.components[1].0.cdf(0.2);
        assert!((joint_cdf_2d(&law, 0.2, f64::INFINITY) - x_marg).abs() < 1e-15);
        let indep = JointLaw2D::new(law.components[..1].to_vec(), vec![1.0], 0.0).unwrap();
        let (c1, c2) = indep.components[0];
        assert!((indep.cdf(0.3, 0.6) - c1.cdf(0.3) * c2.cdf(0.6)).abs() < 1e-15);
    }

    #[test]
    fn euler_wo2_joint_against_sampling() {
        let g = Component::Gauss(GaussComponent::new(0.0, 1.0).unwrap());
        let w = Component::Wo2(Wo2Component::new(1.0, 0.0, 0.8).unwrap());
        let rho = 0.6;
        let law = JointLaw2D::new(vec![(g, w)], vec![1.0], rho).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        let mu = libm::sqrt(0.8);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let z1: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                let z2 = rho * z1 + libm::sqrt(1.0 - rho * rho) * e;
                (z1, (z2 + mu) * (z2 + mu))
            })
            .collect();
        let mut worst: f64 = 0.0;
        for &x in &[-1.0, 0.0, 0.8] {
            for &y in &[0.3, 1.0, 2.5, 5.0] {
                let emp = pts.iter().filter(|&&(a, b)| a < x && b < y).count() as f64 / n as f64;
                worst = worst.max((emp - law.cdf(x, y)).abs());
            }
        }
        assert!(worst < 3e-3, "sup error {worst}");
    }

    fn arb_mixture() -> impl Strategy<Value = Mixture> {
        let comp = prop_oneof![
            (-3.0..3.0f64, 0.05..2.0f64).prop_map(|(c, m)| Component::Gauss(GaussComponent::new(c, m).unwrap())),
            (0.01..1.0f64, -1.0..1.0f64, 0.0..6.0f64)
                .prop_map(|(m, c, l)| Component::Wo2(Wo2Component::new(m, c, l).unwrap())),
        ];
        proptest::collection::vec((comp, 0.05..1.0f64), 1..6).prop_map(|v| {
            let total: f64 = v.iter().map(|x| x.1).sum();
            let (c, p): (Vec<_>, Vec<_>) = v.into_iter().map(|(c, p)| (c, p / total)).unzip();
            Mixture::new(c, p).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dist_validity(m in arb_mixture(), x in -3.0..6.0f64) {
            let lo = m.support().lo;
            prop_assume!(x - lo > 1e-2);
            let h = 1e-5;
            prop_assert!(m.cdf(x + h) >= m.cdf(x));
            let fd = (m.cdf(x + h) - m.cdf(x - h)) / (2.0 * h);
            let pdf = m.pdf(x);
            prop_assert!((fd - pdf).abs() <= 1e-5 * pdf.max(1e-2), "cdf' {} pdf {}", fd, pdf);
            let fd1 = (m.lpe1(x + h) - m.lpe1(x - h)) / (2.0 * h);
            prop_assert!((fd1 - x * pdf).abs() <= 1e-6 * (x * pdf).abs().max(1.0));
            let a = m.lpe2(x);
            let b = m.region_distortion(f64::NEG_INFINITY, x, 0.0);
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }

        #[test]
        fn joint_rectangles_non_negative(
            m in arb_mixture(), rho in -0.95..0.95f64,
            x in -2.0..2.0f64, dx in 0.0..1.0f64, y in -1.0..4.0f64, dy in 0.0..1.0f64,
        ) {
            let comps: Vec<_> = m.components().iter().map(|&c| (c, c)).collect();
            let law = JointLaw2D::new(comps, m.weights().to_vec(), rho).unwrap();
            let r = law.cdf(x + dx, y + dy) - law.cdf(x, y + dy) - law.cdf(x + dx, y) + law.cdf(x, y);
            prop_assert!(r >= -1e-12);
            prop_assert!(law.cdf(x + dx, y) >= law.cdf(x, y) - 1e-15);
        }
    }
}
