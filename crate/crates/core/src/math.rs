//! Scalar special functions: the standard normal distribution and the
//! bivariate normal distribution function.
//!
//! The bivariate routine follows Genz's double-precision refinement of the
//! Drezner-Wesolowsky method (Gauss-Legendre rules of order 6, 12 and 20,
//! with an asymptotic expansion for `|rho| > 0.925`). Its absolute error is
//! around `1e-15`, which matters because joint region weights are four-term
//! differences of this function.
#![allow(clippy::excessive_precision)]

use core::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::{asin, erfc, exp, sin, sqrt};

/// `1 / sqrt(2 pi)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_677_94;

/// Arguments beyond this are treated as infinite by [`BivariateNormal`].
/// `Phi(-9) ~ 1.1e-19`, far below the target accuracy.
const TAIL_CUTOFF: f64 = 9.0;

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density. Returns 0 for infinite arguments.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        INV_SQRT_2PI * exp(-0.5 * x * x)
    }
}

/// `x^k * phi(x)`, taken as 0 when `x` is infinite.
#[inline]
pub(crate) fn pow_pdf(x: f64, k: i32) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        libm::pow(x, k as f64) * norm_pdf(x)
    }
}

// Gauss-Legendre abscissae (negative half) and weights from tvpack.
const GL6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, -0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, -0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, -0.238_619_186_083_197_0),
];
const GL12: [(f64, f64); 6] = [
    (0.471_753_363_865_117_7e-1, -0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, -0.904_117_256_370_475_0),
    (0.160_078_328_543_346_4, -0.769_902_674_194_305_0),
    (0.203_167_426_723_065_9, -0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, -0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, -0.125_233_408_511_469_2),
];
const GL20: [(f64, f64); 10] = [
    (0.176_140_071_391_521_2e-1, -0.993_128_599_185_094_9),
    (0.406_014_298_003_869_4e-1, -0.963_971_927_277_913_8),
    (0.626_720_483_341_090_6e-1, -0.912_234_428_251_325_9),
    (0.832_767_415_767_047_5e-1, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515_0),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.765_265_211_334_973_3e-1),
];

fn gauss_legendre(rho_abs: f64) -> &'static [(f64, f64)] {
    if rho_abs < 0.3 {
        &GL6
    } else if rho_abs < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

const MAX_NODES: usize = 20;

#[derive(Debug, Clone, Copy)]
enum Kernel {
    Independent,
    /// `|rho| <= 0.925`: nodes `(w * asin(rho) / 4pi, sin, 1 / (1 - sin^2))`.
    Moderate {
        nodes: [(f64, f64, f64); MAX_NODES],
        len: usize,
    },
    /// `0.925 < |rho| < 1`: precomputed `(a * w, xs, rs)` for the tail series.
    Strong {
        a_s: f64,
        a: f64,
        nodes: [(f64, f64, f64); MAX_NODES],
        len: usize,
    },
    Comonotone,
    Countermonotone,
}

/// Standard bivariate normal distribution function for a fixed correlation.
///
/// Everything that depends only on `rho` is computed once in [`new`](Self::new),
/// so repeated evaluations (one per grid corner) cost a handful of `exp` calls.
#[derive(Debug, Clone, Copy)]
pub struct BivariateNormal {
    rho: f64,
    kernel: Kernel,
}

impl BivariateNormal {
    /// Panics if `rho` is outside `[-1, 1]` or NaN.
    pub fn new(rho: f64) -> Self {
        assert!((-1.0..=1.0).contains(&rho), "correlation {rho} outside [-1, 1]");
        let r_abs = rho.abs();
        let rule = gauss_legendre(r_abs);
        let kernel = if rho == 0.0 {
            Kernel::Independent
        } else if rho == 1.0 {
            Kernel::Comonotone
        } else if rho == -1.0 {
            Kernel::Countermonotone
        } else if r_abs <= 0.925 {
            let asr = asin(rho);
            let scale = asr / (4.0 * PI);
            let mut nodes = [(0.0, 0.0, 0.0); MAX_NODES];
            let mut len = 0;
            for &(w, x) in rule {
                for sgn in [1.0, -1.0] {
                    let sn = sin(asr * (sgn * x + 1.0) / 2.0);
                    nodes[len] = (w * scale, sn, 1.0 / (1.0 - sn * sn));
                    len += 1;
                }
            }
            Kernel::Moderate { nodes, len }
        } else {
            let a_s = (1.0 - rho) * (1.0 + rho);
            let a = sqrt(a_s);
            let half = a / 2.0;
            let mut nodes = [(0.0, 0.0, 0.0); MAX_NODES];
            let mut len = 0;
            for &(w, x) in rule {
                let xs = (half * (x + 1.0)) * (half * (x + 1.0));
                nodes[len] = (half * w, xs, sqrt(1.0 - xs));
                len += 1;
                let xs = a_s * (1.0 - x) * (1.0 - x) / 4.0;
                nodes[len] = (half * w, xs, sqrt(1.0 - xs));
                len += 1;
            }
            Kernel::Strong { a_s, a, nodes, len }
        };
        Self { rho, kernel }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `P(Z1 <= x, Z2 <= y)`.
    pub fn cdf(&self, x: f64, y: f64) -> f64 {
        if x < -TAIL_CUTOFF || y < -TAIL_CUTOFF {
            return 0.0;
        }
        if x > TAIL_CUTOFF {
            return norm_cdf(y);
        }
        if y > TAIL_CUTOFF {
            return norm_cdf(x);
        }
        self.upper_orthant(-x, -y)
    }

    /// Probability of the rectangle `(x_lo, x_hi] x (y_lo, y_hi]`.
    pub fn rect(&self, x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> f64 {
        if x_lo >= x_hi || y_lo >= y_hi {
            return 0.0;
        }
        let mut p = self.cdf(x_hi, y_hi);
        if x_lo > -TAIL_CUTOFF {
            p -= self.cdf(x_lo, y_hi);
        }
        if y_lo > -TAIL_CUTOFF {
            p -= self.cdf(x_hi, y_lo);
            if x_lo > -TAIL_CUTOFF {
                p += self.cdf(x_lo, y_lo);
            }
        }
        p
    }

    /// `P(Z1 > h, Z2 > k)` (tvpack's `BVND`).
    fn upper_orthant(&self, h: f64, k: f64) -> f64 {
        match self.kernel {
            Kernel::Independent => norm_cdf(-h) * norm_cdf(-k),
            Kernel::Comonotone => norm_cdf(-h.max(k)),
            Kernel::Countermonotone => (norm_cdf(-h) - norm_cdf(k)).max(0.0),
            Kernel::Moderate { nodes, len } => {
                let hk = h * k;
                let hs = (h * h + k * k) / 2.0;
                let mut bvn = 0.0;
                for &(w, sn, inv) in &nodes[..len] {
                    bvn += w * exp((sn * hk - hs) * inv);
                }
                bvn + norm_cdf(-h) * norm_cdf(-k)
            }
            Kernel::Strong { a_s, a, nodes, len } => {
                let (k, hk) = if self.rho < 0.0 { (-k, -h * k) } else { (k, h * k) };
                let b_s = (h - k) * (h - k);
                let c = (4.0 - hk) / 8.0;
                let d = (12.0 - hk) / 16.0;
                let mut bvn = a
                    * exp(-(b_s / a_s + hk) / 2.0)
                    * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
                if hk > -160.0 {
                    let b = sqrt(b_s);
                    bvn -= exp(-hk / 2.0)
                        * sqrt(2.0 * PI)
                        * norm_cdf(-b / a)
                        * b
                        * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
                }
                for &(aw, xs, rs) in &nodes[..len] {
                    let asr = -(b_s / xs + hk) / 2.0;
                    if asr > -100.0 {
                        bvn += aw
                            * exp(asr)
                            * (exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs - (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
                bvn = -bvn / (2.0 * PI);
                if self.rho > 0.0 {
                    bvn + norm_cdf(-h.max(k))
                } else {
                    -bvn + (norm_cdf(-h) - norm_cdf(-k)).max(0.0)
                }
            }
        }
    }
}

/// Standard bivariate normal distribution function `Phi_2(x, y; rho)`.
pub fn bivariate_normal_cdf(x: f64, y: f64, rho: f64) -> f64 {
    BivariateNormal::new(rho).cdf(x, y)
}
