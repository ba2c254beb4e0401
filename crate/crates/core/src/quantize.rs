//! One-dimensional optimal quantization.
//!
//! A distribution is exposed through its distribution function, density and
//! lower partial expectations ([`Dist1D`]). From those, the distortion of a
//! grid, its gradient and tridiagonal Hessian are closed-form, so the optimal
//! grid can be found with Newton-Raphson or with Lloyd's fixed-point
//! iteration. [`optimize_grid`] runs Newton-Raphson while the Hessian is well
//! conditioned and falls back to Anderson-accelerated Lloyd otherwise.
//!
//! Convention: `cdf(x) = P(X < x)` and `lpe1(x) = E[X 1{X < x}]`, so an atom
//! sitting exactly on the lower support edge belongs to the first region.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::{cholesky_solve, Tridiagonal};

/// Region masses below this are treated as empty by Lloyd's iteration.
pub const EMPTY_REGION_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantizeError {
    #[error("grid has no codewords")]
    EmptyGrid,
    #[error("codewords are not strictly increasing at index {index}")]
    InvalidGrid { index: usize },
    #[error("initial codeword {index} = {value} lies outside the support [{lo}, {hi}]")]
    InvalidInit { index: usize, value: f64, lo: f64, hi: f64 },
    #[error("region {index} has probability {mass:e}")]
    EmptyRegion { index: usize, mass: f64 },
    #[error("hessian is ill-conditioned (reciprocal condition {rcond:e})")]
    SingularHessian { rcond: f64 },
    #[error("newton step rejected: {0}")]
    StepRejected(StepRejection),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StepRejection {
    NotIncreasing,
    OutsideSupport,
    NonFinite,
}

impl core::fmt::Display for StepRejection {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            StepRejection::NotIncreasing => "codewords no longer strictly increasing",
            StepRejection::OutsideSupport => "codeword left the support",
            StepRejection::NonFinite => "non-finite codeword",
        })
    }
}

/// Closed interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
}

impl Support {
    pub const REAL: Support = Support { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn hull(self, other: Support) -> Support {
        Support { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }
}

/// Distribution function, density and first lower partial expectation at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PartialMoments {
    pub cdf: f64,
    pub pdf: f64,
    pub lpe1: f64,
}

/// A one-dimensional law seen through `(F, f, M^1, M^2)`.
pub trait Dist1D {
    /// `P(X < x)`.
    fn cdf(&self, x: f64) -> f64;
    fn pdf(&self, x: f64) -> f64;
    /// `E[X 1{X < x}]`.
    fn lpe1(&self, x: f64) -> f64;
    /// `E[X^2 1{X < x}]`.
    fn lpe2(&self, x: f64) -> f64;
    fn mean(&self) -> f64;
    fn support(&self) -> Support;

    /// `E[X^2]`; override when a closed form is cheaper.
    fn second_moment(&self) -> f64 {
        self.lpe2(f64::INFINITY)
    }

    /// All of `cdf`, `pdf` and `lpe1` at once. Mixtures override this to
    /// share the per-component work.
    fn moments(&self, x: f64) -> PartialMoments {
        PartialMoments { cdf: self.cdf(x), pdf: self.pdf(x), lpe1: self.lpe1(x) }
    }

    /// `E[(X - at)^2 1{lo <= X < hi}]`. The default expands the square;
    /// implementations with a centred closed form should override it.
    fn region_distortion(&self, lo: f64, hi: f64, at: f64) -> f64 {
        let df = self.cdf(hi) - self.cdf(lo);
        let d1 = self.lpe1(hi) - self.lpe1(lo);
        let d2 = self.lpe2(hi) - self.lpe2(lo);
        (d2 - 2.0 * at * d1 + at * at * df).max(0.0)
    }
}

impl<D: Dist1D + ?Sized> Dist1D for &D {
    fn cdf(&self, x: f64) -> f64 {
        (**self).cdf(x)
    }
    fn pdf(&self, x: f64) -> f64 {
        (**self).pdf(x)
    }
    fn lpe1(&self, x: f64) -> f64 {
        (**self).lpe1(x)
    }
    fn lpe2(&self, x: f64) -> f64 {
        (**self).lpe2(x)
    }
    fn mean(&self) -> f64 {
        (**self).mean()
    }
    fn support(&self) -> Support {
        (**self).support()
    }
    fn second_moment(&self) -> f64 {
        (**self).second_moment()
    }
    fn moments(&self, x: f64) -> PartialMoments {
        (**self).moments(x)
    }
    fn region_distortion(&self, lo: f64, hi: f64, at: f64) -> f64 {
        (**self).region_distortion(lo, hi, at)
    }
}

/// A scalar quantizer: strictly increasing codewords, optional weights and
/// the support the regions are clipped to.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid1D {
    codewords: Vec<f64>,
    weights: Vec<f64>,
    support: Support,
}

impl Grid1D {
    pub fn new(codewords: Vec<f64>, support: Support) -> Result<Self, QuantizeError> {
        check_increasing(&codewords)?;
        Ok(Self { codewords, weights: Vec::new(), support })
    }

    /// Single codeword with weight one.
    pub fn point(x: f64) -> Self {
        Self { codewords: vec![x], weights: vec![1.0], support: Support::new(x, x) }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.codewords.len(), "one weight per codeword");
        self.weights = weights;
        self
    }

    pub fn codewords(&self) -> &[f64] {
        &self.codewords
    }

    /// Empty until the grid has been optimized.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    /// The `N + 1` region boundaries, outermost ones at the support ends.
    pub fn edge_points(&self) -> Vec<f64> {
        edge_points(&self.codewords, self.support)
    }

    pub(crate) fn replace_codewords(&self, codewords: Vec<f64>) -> Self {
        Self { codewords, weights: Vec::new(), support: self.support }
    }
}

fn check_increasing(codewords: &[f64]) -> Result<(), QuantizeError> {
    if codewords.is_empty() {
        return Err(QuantizeError::EmptyGrid);
    }
    for (i, w) in codewords.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(QuantizeError::InvalidGrid { index: i + 1 });
        }
    }
    Ok(())
}

fn edge_points(codewords: &[f64], support: Support) -> Vec<f64> {
    let n = codewords.len();
    let mut e = Vec::with_capacity(n + 1);
    e.push(support.lo);
    for w in codewords.windows(2) {
        e.push(0.5 * (w[0] + w[1]));
    }
    e.push(support.hi);
    e
}

/// Region boundaries `(x^{i-}, x^{i+})` for each codeword.
pub fn region_edges(grid: &Grid1D) -> Result<Vec<(f64, f64)>, QuantizeError> {
    check_increasing(grid.codewords())?;
    let e = grid.edge_points();
    Ok(e.windows(2).map(|w| (w[0], w[1])).collect())
}

/// `(F, f, M^1)` at every edge. The outer edges take the exact boundary
/// values `F = 0, M^1 = 0` and `F = 1, M^1 = E[X]`; their density is unused.
fn edge_moments<D: Dist1D + ?Sized>(edges: &[f64], dist: &D) -> Vec<PartialMoments> {
    let last = edges.len() - 1;
    edges
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            if j == 0 {
                PartialMoments::default()
            } else if j == last {
                PartialMoments { cdf: 1.0, pdf: 0.0, lpe1: dist.mean() }
            } else {
                dist.moments(x)
            }
        })
        .collect()
}

/// `D(grid) = E[(X - X_hat)^2]`.
pub fn distortion<D: Dist1D + ?Sized>(grid: &Grid1D, dist: &D) -> Result<f64, QuantizeError> {
    check_increasing(grid.codewords())?;
    let e = grid.edge_points();
    Ok(grid.codewords().iter().enumerate().map(|(i, &x)| dist.region_distortion(e[i], e[i + 1], x)).sum())
}

fn gradient_from(codewords: &[f64], m: &[PartialMoments]) -> Vec<f64> {
    codewords
        .iter()
        .enumerate()
        .map(|(i, &x)| 2.0 * x * (m[i + 1].cdf - m[i].cdf) - 2.0 * (m[i + 1].lpe1 - m[i].lpe1))
        .collect()
}

fn hessian_from(codewords: &[f64], m: &[PartialMoments]) -> Tridiagonal {
    let n = codewords.len();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    for i in 0..n {
        diag[i] = 2.0 * (m[i + 1].cdf - m[i].cdf);
        if i + 1 < n {
            let o = 0.5 * m[i + 1].pdf * (codewords[i] - codewords[i + 1]);
            off[i] = o;
            diag[i] += o;
        }
        if i > 0 {
            diag[i] += 0.5 * m[i].pdf * (codewords[i - 1] - codewords[i]);
        }
    }
    Tridiagonal { lower: off.clone(), diag, upper: off }
}

/// `dD/dx^i = 2 x^i (F(x^{i+}) - F(x^{i-})) - 2 (M^1(x^{i+}) - M^1(x^{i-}))`.
pub fn distortion_gradient<D: Dist1D + ?Sized>(grid: &Grid1D, dist: &D) -> Result<Vec<f64>, QuantizeError> {
    check_increasing(grid.codewords())?;
    let m = edge_moments(&grid.edge_points(), dist);
    Ok(gradient_from(grid.codewords(), &m))
}

/// Symmetric tridiagonal Hessian of the distortion.
pub fn distortion_hessian<D: Dist1D + ?Sized>(grid: &Grid1D, dist: &D) -> Result<Tridiagonal, QuantizeError> {
    check_increasing(grid.codewords())?;
    let m = edge_moments(&grid.edge_points(), dist);
    Ok(hessian_from(grid.codewords(), &m))
}

/// One Lloyd iteration: every codeword moves to the centroid of its region.
/// Fails on a region whose probability is below [`EMPTY_REGION_FLOOR`].
pub fn lloyd_step<D: Dist1D + ?Sized>(grid: &Grid1D, dist: &D) -> Result<Grid1D, QuantizeError> {
    check_increasing(grid.codewords())?;
    let m = edge_moments(&grid.edge_points(), dist);
    let mut next = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let mass = m[i + 1].cdf - m[i].cdf;
        if !(mass > EMPTY_REGION_FLOOR) {
            return Err(QuantizeError::EmptyRegion { index: i, mass });
        }
        next.push((m[i + 1].lpe1 - m[i].lpe1) / mass);
    }
    Ok(grid.replace_codewords(next))
}

/// One Newton-Raphson iteration `x <- x - H^{-1} grad`.
///
/// Fails with [`QuantizeError::SingularHessian`] when the reciprocal condition
/// of the Hessian is below `cond_threshold`, and with
/// [`QuantizeError::StepRejected`] when the new codewords are unordered or
/// leave the support.
pub fn newton_step<D: Dist1D + ?Sized>(grid: &Grid1D, dist: &D, cond_threshold: f64) -> Result<Grid1D, QuantizeError> {
    check_increasing(grid.codewords())?;
    let m = edge_moments(&grid.edge_points(), dist);
    let g = gradient_from(grid.codewords(), &m);
    newton_update(grid, &m, &g, cond_threshold)
}

fn newton_update(grid: &Grid1D, m: &[PartialMoments], g: &[f64], cond_threshold: f64) -> Result<Grid1D, QuantizeError> {
    let h = hessian_from(grid.codewords(), m);
    let rcond = h.rcond();
    if !(rcond >= cond_threshold) {
        return Err(QuantizeError::SingularHessian { rcond });
    }
    let step = h.solve(g).ok_or(QuantizeError::SingularHessian { rcond: 0.0 })?;
    let next: Vec<f64> = grid.codewords().iter().zip(&step).map(|(x, s)| x - s).collect();
    validate_candidate(&next, grid.support()).map_err(QuantizeError::StepRejected)?;
    Ok(grid.replace_codewords(next))
}

fn validate_candidate(x: &[f64], support: Support) -> Result<(), StepRejection> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(StepRejection::NonFinite);
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(StepRejection::NotIncreasing);
    }
    if x.iter().any(|&v| !support.contains(v)) {
        return Err(StepRejection::OutsideSupport);
    }
    Ok(())
}

/// Anderson mixing over the most recent `depth + 1` pairs `(x, g(x))`.
///
/// Minimizes `|f_k - dF gamma|^2 + ridge |gamma|^2` over the residual
/// differences (`f = g(x) - x`) and returns `g(x_k) - dG gamma`. With a single
/// pair, or when the regularized normal equations cannot be solved, this is
/// the plain fixed-point step `g(x_k)`.
pub fn anderson_accelerate(history: &[(Vec<f64>, Vec<f64>)], depth: usize, ridge: f64) -> Vec<f64> {
    let (x_last, g_last) = history.last().expect("at least one history pair");
    let n = x_last.len();
    let used = history.len().min(depth + 1);
    let window = &history[history.len() - used..];
    let cols = used - 1;
    if cols == 0 {
        return g_last.clone();
    }
    let resid = |j: usize| -> Vec<f64> { window[j].1.iter().zip(&window[j].0).map(|(g, x)| g - x).collect() };
    let f: Vec<Vec<f64>> = (0..used).map(resid).collect();
    let f_last = &f[cols];
    // dF_j = f_{j+1} - f_j, dG_j = g_{j+1} - g_j
    let df: Vec<Vec<f64>> = (0..cols).map(|j| f[j + 1].iter().zip(&f[j]).map(|(a, b)| a - b).collect()).collect();
    let mut gram = vec![0.0; cols * cols];
    let mut rhs = vec![0.0; cols];
    for a in 0..cols {
        for b in 0..=a {
            let v: f64 = df[a].iter().zip(&df[b]).map(|(p, q)| p * q).sum();
            gram[a * cols + b] = v;
            gram[b * cols + a] = v;
        }
        rhs[a] = df[a].iter().zip(f_last).map(|(p, q)| p * q).sum();
    }
    let trace: f64 = (0..cols).map(|a| gram[a * cols + a]).sum();
    if !(trace > 0.0) || !trace.is_finite() {
        return g_last.clone();
    }
    let lambda = ridge * trace / cols as f64;
    for a in 0..cols {
        gram[a * cols + a] += lambda;
    }
    if cholesky_solve(&mut gram, &mut rhs, cols).is_none() || rhs.iter().any(|v| !v.is_finite()) {
        return g_last.clone();
    }
    let mut out = g_last.clone();
    for (j, gamma) in rhs.iter().enumerate() {
        let (g_next, g_prev) = (&window[j + 1].1, &window[j].1);
        for i in 0..n {
            out[i] -= gamma * (g_next[i] - g_prev[i]);
        }
    }
    out
}

/// Settings for [`optimize_grid`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OptimizerConfig {
    pub nr_max_iters: usize,
    pub lloyd_max_iters: usize,
    /// Convergence threshold on `max |dD/dx^i|`, relative to the larger of
    /// the initial gradient and `1e-3` standard deviations of the target.
    pub grad_tol: f64,
    /// Lower bound on the Hessian's reciprocal condition number.
    pub cond_threshold: f64,
    pub anderson_depth: usize,
    pub anderson_ridge: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            nr_max_iters: 25,
            lloyd_max_iters: 200,
            grad_tol: 1e-9,
            cond_threshold: 1e-12,
            anderson_depth: 5,
            anderson_ridge: 1e-10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), QuantizeError> {
        if self.nr_max_iters == 0 && self.lloyd_max_iters == 0 {
            return Err(QuantizeError::InvalidConfig("no iterations allowed"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(QuantizeError::InvalidConfig("grad_tol must be positive"));
        }
        if !(self.cond_threshold > 0.0 && self.cond_threshold < 1.0) {
            return Err(QuantizeError::InvalidConfig("cond_threshold must lie in (0, 1)"));
        }
        if self.anderson_depth == 0 {
            return Err(QuantizeError::InvalidConfig("anderson_depth must be at least 1"));
        }
        if !(self.anderson_ridge >= 0.0) {
            return Err(QuantizeError::InvalidConfig("anderson_ridge must be non-negative"));
        }
        Ok(())
    }
}

/// Why Newton-Raphson handed over to Lloyd's iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Fallback {
    SingularHessian,
    StepRejected(StepRejection),
    /// Iteration budget spent without meeting the tolerance.
    Exhausted,
}

/// What happened inside one [`optimize_grid`] call.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizeReport {
    pub converged: bool,
    pub nr_iters: usize,
    pub lloyd_iters: usize,
    pub fallback: Option<Fallback>,
    /// Lloyd iterations in which an empty region was merged toward a neighbour.
    pub empty_region_merges: usize,
    /// Accelerated candidates discarded in favour of the plain Lloyd step.
    pub anderson_rejections: usize,
    pub final_grad: f64,
    pub tolerance: f64,
}

impl OptimizeReport {
    pub fn fell_back(&self) -> bool {
        self.fallback.is_some()
    }
}

/// Optimized grid (weights populated) with its report.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub grid: Grid1D,
    pub report: OptimizeReport,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Hybrid Newton-Raphson / Anderson-accelerated Lloyd optimization.
///
/// Newton-Raphson runs while the Hessian is well conditioned, steps stay
/// ordered inside the support and iterations remain. If it has not converged
/// by then, accelerated Lloyd continues from the last accepted iterate for up
/// to `lloyd_max_iters` iterations. The init's support is replaced by the
/// distribution's support.
pub fn optimize_grid<D: Dist1D + ?Sized>(
    init: &Grid1D,
    dist: &D,
    cfg: &OptimizerConfig,
) -> Result<Optimized, QuantizeError> {
    cfg.validate()?;
    check_increasing(init.codewords())?;
    let support = dist.support();
    for (index, &value) in init.codewords().iter().enumerate() {
        if !support.contains(value) {
            return Err(QuantizeError::InvalidInit { index, value, lo: support.lo, hi: support.hi });
        }
    }
    if support.is_degenerate() {
        let grid = Grid1D::point(support.lo);
        let report = OptimizeReport { converged: true, ..OptimizeReport::default() };
        return Ok(Optimized { grid, report });
    }

    let mut grid = Grid1D { codewords: init.codewords().to_vec(), weights: Vec::new(), support };
    let mut report = OptimizeReport::default();

    let mut m = edge_moments(&grid.edge_points(), dist);
    let mut g = gradient_from(grid.codewords(), &m);
    let var = (dist.second_moment() - dist.mean() * dist.mean()).max(0.0);
    let scale = max_abs(&g).max(1e-3 * libm::sqrt(var));
    let tol = cfg.grad_tol * if scale > 0.0 { scale } else { 1.0 };
    report.tolerance = tol;

    let mut converged = max_abs(&g) <= tol;
    while !converged && report.nr_iters < cfg.nr_max_iters {
        match newton_update(&grid, &m, &g, cfg.cond_threshold) {
            Ok(next) => {
                grid = next;
                report.nr_iters += 1;
                m = edge_moments(&grid.edge_points(), dist);
                g = gradient_from(grid.codewords(), &m);
                converged = max_abs(&g) <= tol;
            }
            Err(QuantizeError::SingularHessian { .. }) => {
                report.fallback = Some(Fallback::SingularHessian);
                break;
            }
            Err(QuantizeError::StepRejected(why)) => {
                report.fallback = Some(Fallback::StepRejected(why));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if !converged && report.fallback.is_none() && cfg.nr_max_iters > 0 {
        report.fallback = Some(Fallback::Exhausted);
    }

    if !converged {
        let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
        while report.lloyd_iters < cfg.lloyd_max_iters {
            let (centroids, merged) = centroids_with_merge(grid.codewords(), &m);
            if merged {
                report.empty_region_merges += 1;
                history.clear();
            }
            history.push_back((grid.codewords().to_vec(), centroids.clone()));
            while history.len() > cfg.anderson_depth + 1 {
                history.pop_front();
            }
            let candidate = if history.len() > 1 {
                let slice: Vec<(Vec<f64>, Vec<f64>)> = history.iter().cloned().collect();
                let acc = anderson_accelerate(&slice, cfg.anderson_depth, cfg.anderson_ridge);
                if validate_candidate(&acc, support).is_ok() {
                    acc
                } else {
                    report.anderson_rejections += 1;
                    history.clear();
                    history.push_back((grid.codewords().to_vec(), centroids.clone()));
                    centroids
                }
            } else {
                centroids
            };
            if validate_candidate(&candidate, support).is_err() {
                // centroids of ordered disjoint regions can only tie through round-off
                break;
            }
            grid = grid.replace_codewords(candidate);
            report.lloyd_iters += 1;
            m = edge_moments(&grid.edge_points(), dist);
            g = gradient_from(grid.codewords(), &m);
            if max_abs(&g) <= tol {
                converged = true;
                break;
            }
        }
    }

    report.converged = converged;
    report.final_grad = max_abs(&g);
    let weights: Vec<f64> = (0..grid.len()).map(|i| (m[i + 1].cdf - m[i].cdf).max(0.0)).collect();
    Ok(Optimized { grid: grid.with_weights(weights), report })
}

/// Lloyd centroids; an empty region moves its codeword halfway toward the
/// edge it shares with its nearest neighbour.
fn centroids_with_merge(x: &[f64], m: &[PartialMoments]) -> (Vec<f64>, bool) {
    let n = x.len();
    let mut merged = false;
    let out = (0..n)
        .map(|i| {
            let mass = m[i + 1].cdf - m[i].cdf;
            if mass > EMPTY_REGION_FLOOR {
                let c = (m[i + 1].lpe1 - m[i].lpe1) / mass;
                // round-off can push a centroid a hair outside its region
                let lo = if i > 0 { 0.5 * (x[i - 1] + x[i]) } else { f64::NEG_INFINITY };
                let hi = if i + 1 < n { 0.5 * (x[i] + x[i + 1]) } else { f64::INFINITY };
                c.clamp(lo, hi)
            } else {
                merged = true;
                let left = if i > 0 { x[i] - x[i - 1] } else { f64::INFINITY };
                let right = if i + 1 < n { x[i + 1] - x[i] } else { f64::INFINITY };
                if left <= right {
                    x[i] - 0.25 * left
                } else if right.is_finite() {
                    x[i] + 0.25 * right
                } else {
                    x[i]
                }
            }
        })
        .collect();
    (out, merged)
}

/// Codewords at the quantiles `i / (N + 1)` of `dist`, found by bisection on
/// the distribution function. Ties (from atoms) are spread apart slightly so
/// the result is strictly increasing.
pub fn quantile_grid<D: Dist1D + ?Sized>(dist: &D, n: usize) -> Result<Grid1D, QuantizeError> {
    if n == 0 {
        return Err(QuantizeError::EmptyGrid);
    }
    let support = dist.support();
    if support.is_degenerate() {
        return Ok(Grid1D { codewords: vec![support.lo], weights: Vec::new(), support });
    }
    let mean = dist.mean();
    let sd = libm::sqrt((dist.second_moment() - mean * mean).max(0.0));
    let spread = if sd > 0.0 { sd } else { 1.0 };
    let mut lo = if support.lo.is_finite() { support.lo } else { mean - spread };
    while support.lo.is_infinite() && dist.cdf(lo) > 0.5 / (n as f64 + 1.0) {
        lo = mean - 2.0 * (mean - lo);
    }
    let mut hi = if support.hi.is_finite() { support.hi } else { mean + spread };
    while support.hi.is_infinite() && dist.cdf(hi) < 1.0 - 0.5 / (n as f64 + 1.0) {
        hi = mean + 2.0 * (hi - mean);
    }
    let mut q = Vec::with_capacity(n);
    for i in 1..=n {
        let target = i as f64 / (n as f64 + 1.0);
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if dist.cdf(mid) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        q.push(0.5 * (a + b));
    }
    let nudge = 1e-6 * spread;
    for i in 1..n {
        if q[i] <= q[i - 1] {
            q[i] = q[i - 1] + nudge;
        }
    }
    if let Some(last) = q.last().copied() {
        if last > support.hi {
            // atoms at the top edge: pack downward instead
            q[n - 1] = support.hi;
            for i in (0..n - 1).rev() {
                if q[i] >= q[i + 1] {
                    q[i] = q[i + 1] - nudge;
                }
            }
        }
    }
    q.iter_mut().for_each(|v| *v = v.clamp(support.lo, support.hi));
    Grid1D::new(q, support)
}
