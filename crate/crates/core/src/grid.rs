//! Grid sequences: recursive marginal quantization in one dimension and
//! product Markovian quantization in several.
//!
//! At every step each coordinate's one-step update law is a mixture over the
//! current joint codewords. The marginal mixtures are quantized separately,
//! the product of the marginal grids forms the next joint grid, and the
//! transition probabilities between joint codewords are rectangle
//! probabilities of each codeword's joint update law.
//!
//! Joint codewords are indexed row-major: the last coordinate varies fastest.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::math::BivariateNormal;
use crate::mixture::{joint_interval_prob, Component, GaussComponent, Mixture, MixtureError, Wo2Component, ZInterval};
use crate::quantize::{
    distortion, optimize_grid, quantile_grid, Dist1D, Grid1D, OptimizeReport, OptimizerConfig, QuantizeError,
};
use crate::sde::{euler_coeffs, wo2_coeffs, ModelError, Schedule, Scheme, SdeModel};

/// Row sums further than this from one are renormalized (and counted).
pub const RENORMALIZE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {step}: {source}")]
    Mixture { step: usize, source: MixtureError },
    #[error("step {step}, dimension {dim}: {source}")]
    Quantize { step: usize, dim: usize, source: QuantizeError },
    #[error("configuration: {0}")]
    Config(&'static str),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("grid sequence is malformed: {0}")]
    Malformed(&'static str),
}

/// Dense row-major matrix of transition probabilities.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Transition {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Transition {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GridError> {
        if data.len() != rows * cols {
            return Err(GridError::Malformed("transition data length"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `p^T T`.
    pub fn push_forward(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (o, t) in out.iter_mut().zip(self.row(i)) {
                *o += pi * t;
            }
        }
        out
    }

    /// `T v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().zip(v).map(|(t, x)| t * x).sum()).collect()
    }
}

/// Build statistics for one step.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepDiagnostics {
    /// One optimizer report per coordinate.
    pub reports: Vec<OptimizeReport>,
    /// Distortion of each marginal grid against its mixture.
    pub distortion: Vec<f64>,
    /// Codewords whose WO2 coefficients were undefined and used Euler instead.
    pub wo2_fallbacks: usize,
    /// Components with zero diffusion, replaced by point masses.
    pub point_components: usize,
    /// Negative transition entries from round-off, set to zero.
    pub clipped_entries: usize,
    /// Transition rows renormalized because their sum was off by more than [`RENORMALIZE_TOL`].
    pub renormalized_rows: usize,
}

impl StepDiagnostics {
    pub fn fallbacks(&self) -> usize {
        self.reports.iter().filter(|r| r.fell_back()).count()
    }
}

/// Marginal grids, joint weights and the transition from the previous step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProductGridStep {
    pub step: usize,
    pub grids: Vec<Grid1D>,
    pub joint_weights: Vec<f64>,
    /// From step `step - 1`; `None` at step 0.
    pub transition: Option<Transition>,
    pub diagnostics: StepDiagnostics,
}

impl ProductGridStep {
    pub fn dims(&self) -> Vec<usize> {
        self.grids.iter().map(Grid1D::len).collect()
    }

    pub fn len(&self) -> usize {
        self.joint_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_weights.is_empty()
    }

    /// Coordinates of joint codeword `flat`.
    pub fn codeword(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grids.len()];
        self.codeword_into(flat, &mut out);
        out
    }

    pub fn codeword_into(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for n in (0..self.grids.len()).rev() {
            let len = self.grids[n].len();
            out[n] = self.grids[n].codewords()[rest % len];
            rest /= len;
        }
    }

    /// Per-coordinate indices of joint codeword `flat`.
    pub fn index(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.grids.len()];
        let mut rest = flat;
        for n in (0..self.grids.len()).rev() {
            let len = self.grids[n].len();
            out[n] = rest % len;
            rest /= len;
        }
        out
    }

    /// Sum of the joint weights over all coordinates except `n`.
    pub fn marginal_weights(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grids[n].len()];
        let mut idx = vec![0; self.grids.len()];
        for (flat, &p) in self.joint_weights.iter().enumerate() {
            decode(flat, &self.dims(), &mut idx);
            out[idx[n]] += p;
        }
        out
    }

    /// `sum_i p_i H(x_i)` over the joint codewords.
    pub fn expectation<F: FnMut(&[f64]) -> f64>(&self, mut payoff: F) -> f64 {
        let mut x = vec![0.0; self.grids.len()];
        self.joint_weights
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                self.codeword_into(i, &mut x);
                p * payoff(&x)
            })
            .sum()
    }
}

fn decode(flat: usize, dims: &[usize], out: &mut [usize]) {
    let mut rest = flat;
    for n in (0..dims.len()).rev() {
        out[n] = rest % dims[n];
        rest /= dims[n];
    }
}

/// Steps `0..=K`, step 0 being the point mass at the initial state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSequence {
    schedule: Schedule,
    schemes: Vec<Scheme>,
    steps: Vec<ProductGridStep>,
}

impl GridSequence {
    /// Reassembles a sequence (e.g. from a file), checking shapes.
    pub fn from_parts(
        schedule: Schedule,
        schemes: Vec<Scheme>,
        steps: Vec<ProductGridStep>,
    ) -> Result<Self, GridError> {
        schedule.validate()?;
        if steps.len() != schedule.steps + 1 {
            return Err(GridError::Malformed("step count does not match the schedule"));
        }
        if schemes.len() != schedule.codewords.len() {
            return Err(GridError::Malformed("one scheme per coordinate"));
        }
        for (k, s) in steps.iter().enumerate() {
            if s.grids.len() != schemes.len() {
                return Err(GridError::Malformed("grid count does not match the dimension"));
            }
            let n: usize = s.dims().iter().product();
            if s.joint_weights.len() != n {
                return Err(GridError::Malformed("joint weight length"));
            }
            match (&s.transition, k) {
                (None, 0) => {}
                (Some(t), k) if k > 0 => {
                    if t.rows != steps[k - 1].len() || t.cols != n {
                        return Err(GridError::Malformed("transition shape"));
                    }
                }
                _ => return Err(GridError::Malformed("transition presence")),
            }
        }
        Ok(Self { schedule, schemes, steps })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn schemes(&self) -> &[Scheme] {
        &self.schemes
    }

    pub fn steps(&self) -> &[ProductGridStep] {
        &self.steps
    }

    pub fn step(&self, k: usize) -> &ProductGridStep {
        &self.steps[k]
    }

    pub fn last(&self) -> &ProductGridStep {
        self.steps.last().expect("step 0 always exists")
    }

    pub fn dim(&self) -> usize {
        self.schemes.len()
    }

    pub fn dt(&self) -> f64 {
        self.schedule.dt()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.schedule.time(k)
    }

    /// Total optimizer fallbacks over all steps and coordinates.
    pub fn fallbacks(&self) -> usize {
        self.steps.iter().map(|s| s.diagnostics.fallbacks()).sum()
    }

    /// True when every marginal optimization met its tolerance.
    pub fn converged(&self) -> bool {
        self.steps.iter().all(|s| s.diagnostics.reports.iter().all(|r| r.converged))
    }
}

/// One coordinate's update components over the current joint codewords.
#[derive(Debug, Clone)]
enum DimLaw {
    /// Autonomous coordinate: one component per own-grid codeword.
    Own(Vec<Component>),
    /// One component per joint codeword.
    Joint(Vec<Component>),
}

impl DimLaw {
    fn get(&self, flat: usize, own: usize) -> Component {
        match self {
            DimLaw::Own(c) => c[own],
            DimLaw::Joint(c) => c[flat],
        }
    }
}

#[derive(Debug, Clone)]
struct StepLaw {
    dims: Vec<DimLaw>,
    wo2_fallbacks: usize,
    point_components: usize,
}

fn to_component(res: Result<(f64, f64), ModelError>, points: &mut usize) -> Result<Component, GridError> {
    match res {
        Ok((c, m)) => Ok(Component::Gauss(GaussComponent { c, m })),
        Err(ModelError::DegenerateDiffusion { c }) => {
            *points += 1;
            Ok(Component::Point(c))
        }
        Err(e) => Err(e.into()),
    }
}

fn component_at<M: SdeModel + ?Sized>(
    model: &M,
    scheme: Scheme,
    x: &[f64],
    n: usize,
    dt: f64,
    law: &mut StepLaw,
) -> Result<Component, GridError> {
    if scheme == Scheme::Wo2 {
        match wo2_coeffs(model, x[n], n, dt) {
            Ok(w) => {
                if let Ok(c) = Wo2Component::from_center(w.mbar, w.center, w.lambda) {
                    return Ok(Component::Wo2(c));
                }
                law.wo2_fallbacks += 1;
            }
            Err(ModelError::Wo2Unsupported { .. }) => law.wo2_fallbacks += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let comp = to_component(euler_coeffs(model, x, n, dt), &mut law.point_components)?;
    if let Component::Gauss(g) = comp {
        if !(g.c.is_finite() && g.m.is_finite()) {
            return Err(ModelError::Domain { name: "state", value: g.c, expected: "finite update" }.into());
        }
    }
    Ok(comp)
}

fn step_law<M: SdeModel + ?Sized>(
    model: &M,
    schemes: &[Scheme],
    prev: &ProductGridStep,
    dt: f64,
) -> Result<StepLaw, GridError> {
    let d = schemes.len();
    let dims = prev.dims();
    let mut law = StepLaw { dims: Vec::with_capacity(d), wo2_fallbacks: 0, point_components: 0 };
    let mut x = vec![0.0; d];
    for n in 0..d {
        let dl = if model.is_autonomous(n) {
            let mut comps = Vec::with_capacity(dims[n]);
            // other coordinates are irrelevant; take index 0
            prev.codeword_into(0, &mut x);
            for &xn in prev.grids[n].codewords() {
                x[n] = xn;
                comps.push(component_at(model, schemes[n], &x, n, dt, &mut law)?);
            }
            DimLaw::Own(comps)
        } else {
            let mut comps = Vec::with_capacity(prev.len());
            for flat in 0..prev.len() {
                prev.codeword_into(flat, &mut x);
                comps.push(component_at(model, schemes[n], &x, n, dt, &mut law)?);
            }
            DimLaw::Joint(comps)
        };
        law.dims.push(dl);
    }
    Ok(law)
}

/// Weights of an autonomous coordinate's own grid. Using the 1-D weights
/// rather than sums of the joint tensor makes its grids independent of the
/// other coordinates bit for bit.
fn own_weights(prev: &ProductGridStep, n: usize) -> Vec<f64> {
    let w = prev.grids[n].weights();
    if w.len() == prev.grids[n].len() {
        w.to_vec()
    } else {
        prev.marginal_weights(n)
    }
}

fn marginal_mixture<M: SdeModel + ?Sized>(
    model: &M,
    law: &StepLaw,
    prev: &ProductGridStep,
    n: usize,
    step: usize,
) -> Result<Mixture, GridError> {
    let (comps, weights) = match &law.dims[n] {
        DimLaw::Own(c) => (c.clone(), own_weights(prev, n)),
        DimLaw::Joint(c) => (c.clone(), prev.joint_weights.clone()),
    };
    let mix = Mixture::new(comps, weights).map_err(|source| GridError::Mixture { step, source })?;
    Ok(match model.lower_bound(n) {
        Some(floor) => mix.censored_at(floor),
        None => mix,
    })
}

fn check_schemes<M: SdeModel + ?Sized>(model: &M, schedule: &Schedule, schemes: &[Scheme]) -> Result<(), GridError> {
    schedule.validate()?;
    let d = model.dim();
    if schemes.len() != d || schedule.codewords.len() != d {
        return Err(GridError::Config("one scheme and one codeword count per coordinate"));
    }
    for (n, s) in schemes.iter().enumerate() {
        if *s == Scheme::Wo2 && !model.is_autonomous(n) {
            return Err(GridError::Model(ModelError::NotAutonomous(n)));
        }
    }
    if d > 2 {
        for i in 0..d {
            for j in 0..d {
                if i != j && model.correlation(i, j) != 0.0 {
                    return Err(GridError::Unsupported("joint weights for more than two correlated coordinates"));
                }
            }
        }
    }
    Ok(())
}

fn initial_step<M: SdeModel + ?Sized>(model: &M) -> ProductGridStep {
    let x0 = model.initial_state();
    ProductGridStep {
        step: 0,
        grids: x0.iter().map(|&x| Grid1D::point(x)).collect(),
        joint_weights: vec![1.0],
        transition: None,
        diagnostics: StepDiagnostics::default(),
    }
}

/// Product Markovian quantization over `schedule`.
pub fn pmq<M: SdeModel + ?Sized>(
    model: &M,
    schedule: &Schedule,
    schemes: &[Scheme],
    cfg: &OptimizerConfig,
) -> Result<GridSequence, GridError> {
    check_schemes(model, schedule, schemes)?;
    cfg.validate().map_err(|source| GridError::Quantize { step: 0, dim: 0, source })?;
    let dt = schedule.dt();
    let d = model.dim();
    let mut steps = vec![initial_step(model)];
    for k in 1..=schedule.steps {
        let prev = &steps[k - 1];
        let law = step_law(model, schemes, prev, dt)?;
        let mut grids = Vec::with_capacity(d);
        let mut diag = StepDiagnostics {
            wo2_fallbacks: law.wo2_fallbacks,
            point_components: law.point_components,
            ..StepDiagnostics::default()
        };
        for n in 0..d {
            let mix = marginal_mixture(model, &law, prev, n, k)?;
            let q = |source| GridError::Quantize { step: k, dim: n, source };
            let target = schedule.codewords[n];
            let support = mix.support();
            let warm = &prev.grids[n];
            let init = if warm.len() == target && warm.codewords().iter().all(|&x| support.contains(x)) {
                Grid1D::new(warm.codewords().to_vec(), support).map_err(q)?
            } else {
                quantile_grid(&mix, target).map_err(q)?
            };
            let out = optimize_grid(&init, &mix, cfg).map_err(q)?;
            diag.distortion.push(distortion(&out.grid, &mix).map_err(q)?);
            diag.reports.push(out.report);
            grids.push(out.grid);
        }
        let t = transition_matrix(model, &law, prev, &grids, &mut diag)?;
        let joint_weights = joint_weights(&t, &prev.joint_weights);
        steps.push(ProductGridStep { step: k, grids, joint_weights, transition: Some(t), diagnostics: diag });
    }
    Ok(GridSequence { schedule: schedule.clone(), schemes: schemes.to_vec(), steps })
}

/// Recursive marginal quantization of a scalar diffusion.
pub fn rmq_1d<M: SdeModel + ?Sized>(
    model: &M,
    schedule: &Schedule,
    scheme: Scheme,
    cfg: &OptimizerConfig,
) -> Result<GridSequence, GridError> {
    if model.dim() != 1 {
        return Err(GridError::Config("rmq_1d needs a one-dimensional model"));
    }
    pmq(model, schedule, &[scheme], cfg)
}

/// `p^T T` with tiny negative entries clipped.
pub fn joint_weights(t: &Transition, prev: &[f64]) -> Vec<f64> {
    let mut w = t.push_forward(prev);
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > RENORMALIZE_TOL && total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    }
    w
}

/// Region edges with the outermost ones at infinity, so every update law's
/// whole mass is accounted for (censored mass lands in the first region).
fn open_edges(g: &Grid1D) -> Vec<f64> {
    let mut e = g.edge_points();
    let last = e.len() - 1;
    e[0] = f64::NEG_INFINITY;
    e[last] = f64::INFINITY;
    e
}

fn transition_matrix<M: SdeModel + ?Sized>(
    model: &M,
    law: &StepLaw,
    prev: &ProductGridStep,
    next: &[Grid1D],
    diag: &mut StepDiagnostics,
) -> Result<Transition, GridError> {
    let d = next.len();
    let rows = prev.len();
    let dims_next: Vec<usize> = next.iter().map(Grid1D::len).collect();
    let cols: usize = dims_next.iter().product();
    let edges: Vec<Vec<f64>> = next.iter().map(open_edges).collect();
    let mut data = vec![0.0; rows * cols];
    let mut idx = vec![0; d];
    let prev_dims = prev.dims();
    let bvn = if d == 2 { Some(BivariateNormal::new(model.correlation(0, 1))) } else { None };
    let mut corner = Vec::new();
    let mut iv1: Vec<ZInterval> = Vec::new();
    let mut iv2: Vec<ZInterval> = Vec::new();
    for i in 0..rows {
        decode(i, &prev_dims, &mut idx);
        let row = &mut data[i * cols..(i + 1) * cols];
        match bvn {
            Some(bvn) => {
                let c1 = law.dims[0].get(i, idx[0]);
                let c2 = law.dims[1].get(i, idx[1]);
                iv1.clear();
                iv1.extend(edges[0].iter().map(|&e| c1.z_interval(e)));
                iv2.clear();
                iv2.extend(edges[1].iter().map(|&e| c2.z_interval(e)));
                let (n1, n2) = (dims_next[0], dims_next[1]);
                corner.clear();
                corner.resize((n1 + 1) * (n2 + 1), 0.0);
                for a in 1..=n1 {
                    for b in 1..=n2 {
                        corner[a * (n2 + 1) + b] = joint_interval_prob(&bvn, iv1[a], iv2[b]);
                    }
                }
                for a in 0..n1 {
                    for b in 0..n2 {
                        let c = |p: usize, q: usize| corner[p * (n2 + 1) + q];
                        row[a * n2 + b] = c(a + 1, b + 1) - c(a, b + 1) - c(a + 1, b) + c(a, b);
                    }
                }
            }
            None => {
                // independent coordinates: product of marginal probabilities
                let probs: Vec<Vec<f64>> = (0..d)
                    .map(|n| {
                        let c = law.dims[n].get(i, idx[n]);
                        let cdf: Vec<f64> = edges[n].iter().map(|&e| c.cdf(e)).collect();
                        cdf.windows(2).map(|w| w[1] - w[0]).collect()
                    })
                    .collect();
                let mut jdx = vec![0; d];
                for (j, v) in row.iter_mut().enumerate() {
                    decode(j, &dims_next, &mut jdx);
                    *v = (0..d).map(|n| probs[n][jdx[n]]).product();
                }
            }
        }
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                diag.clipped_entries += 1;
            }
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > RENORMALIZE_TOL && total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
            diag.renormalized_rows += 1;
        }
    }
    Transition::new(rows, cols, data)
}

/// The coordinate-`n` update law that was quantized to produce step `step`
/// (`step >= 1`), rebuilt from step `step - 1`.
pub fn marginal_law<M: SdeModel + ?Sized>(
    model: &M,
    seq: &GridSequence,
    step: usize,
    n: usize,
) -> Result<Mixture, GridError> {
    if step == 0 || step >= seq.steps.len() {
        return Err(GridError::Config("marginal_law needs 1 <= step <= K"));
    }
    if n >= seq.dim() {
        return Err(GridError::Model(ModelError::Dimension(n)));
    }
    let prev = &seq.steps[step - 1];
    let law = step_law(model, &seq.schemes, prev, seq.dt())?;
    marginal_mixture(model, &law, prev, n, step)
}

/// Weighted mean of coordinate `n` at step `k`.
pub fn marginal_mean(step: &ProductGridStep, n: usize) -> f64 {
    step.marginal_weights(n).iter().zip(step.grids[n].codewords()).map(|(p, x)| p * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{Gbm, Heston, Sabr};

    fn cfg() -> OptimizerConfig {
        OptimizerConfig::default()
    }

    fn assert_conservation(seq: &GridSequence) {
        for s in seq.steps() {
            let total: f64 = s.joint_weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-10, "step {} total {}", s.step, total);
            for n in 0..seq.dim() {
                let m = s.marginal_weights(n);
                if s.step > 0 {
                    for (a, b) in m.iter().zip(s.grids[n].weights()) {
                        assert!((a - b).abs() < 1e-9, "step {} dim {} {} vs {}", s.step, n, a, b);
                    }
                }
            }
            if let Some(t) = &s.transition {
                for i in 0..t.rows() {
                    let r: f64 = t.row(i).iter().sum();
                    assert!((r - 1.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn one_step_equals_direct_quantization() {
        let g = Gbm::one_dim(100.0, 0.2, 0.05).unwrap();
        let sched = Schedule::new(0.5, 1, vec![8]).unwrap();
        let seq = rmq_1d(&g, &sched, Scheme::Euler, &cfg()).unwrap();
        let direct = Mixture::gaussian(&[100.0 * (1.0 + 0.05 * 0.5)], &[100.0 * 0.2 * libm::sqrt(0.5)], &[1.0])
            .unwrap()
            .censored_at(0.0);
        let init = quantile_grid(&direct, 8).unwrap();
        let want = optimize_grid(&init, &direct, &cfg()).unwrap();
        for (a, b) in seq.last().grids[0].codewords().iter().zip(want.grid.codewords()) {
            assert!((a - b).abs() < 1e-9);
        }
        let t = seq.last().transition.as_ref().unwrap();
        assert_eq!(t.rows(), 1);
        for (a, b) in t.row(0).iter().zip(&seq.last().joint_weights) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_codeword_tracks_mean() {
        let g = Gbm::one_dim(100.0, 0.3, 0.0).unwrap();
        let sched = Schedule::new(1.0, 6, vec![1]).unwrap();
        let seq = rmq_1d(&g, &sched, Scheme::Euler, &cfg()).unwrap();
        for s in seq.steps() {
            assert!((s.grids[0].codewords()[0] - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gbm_mean_and_conservation() {
        let g = Gbm::one_dim(100.0, 0.2, 0.05).unwrap();
        let sched = Schedule::new(1.0, 12, vec![20]).unwrap();
        let seq = rmq_1d(&g, &sched, Scheme::Euler, &cfg()).unwrap();
        let mean = marginal_mean(seq.last(), 0);
        assert!((mean / (100.0 * libm::exp(0.05)) - 1.0).abs() < 1e-3, "{mean}");
        assert_conservation(&seq);
        assert!(seq.converged());
        let wo2 = rmq_1d(&g, &sched, Scheme::Wo2, &cfg()).unwrap();
        let mean = marginal_mean(wo2.last(), 0);
        assert!((mean / (100.0 * libm::exp(0.05)) - 1.0).abs() < 1e-3, "{mean}");
    }

    #[test]
    fn pmq_in_one_dimension_is_rmq() {
        let g = Gbm::one_dim(50.0, 0.4, 0.02).unwrap();
        let sched = Schedule::new(1.0, 4, vec![10]).unwrap();
        let a = rmq_1d(&g, &sched, Scheme::Euler, &cfg()).unwrap();
        let b = pmq(&g, &sched, &[Scheme::Euler], &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_asset_gbm_marginals_ignore_sign_of_correlation() {
        let sched = Schedule::new(1.0, 12, vec![10, 20]).unwrap();
        let a = Gbm::two_dim([110.0, 90.0], [0.1, 0.3], 0.05, -0.6).unwrap();
        let b = Gbm::two_dim([110.0, 90.0], [0.1, 0.3], 0.05, 0.6).unwrap();
        let sa = pmq(&a, &sched, &[Scheme::Euler; 2], &cfg()).unwrap();
        let sb = pmq(&b, &sched, &[Scheme::Euler; 2], &cfg()).unwrap();
        assert_conservation(&sa);
        for (x, y) in sa.steps().iter().zip(sb.steps()) {
            for n in 0..2 {
                for (p, q) in x.grids[n].codewords().iter().zip(y.grids[n].codewords()) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
        let diff: f64 = sa.last().joint_weights.iter().zip(&sb.last().joint_weights).map(|(p, q)| (p - q).abs()).sum();
        assert!(diff > 1e-2);
    }

    #[test]
    fn independent_first_step_factorizes() {
        let g = Gbm::two_dim([100.0, 80.0], [0.2, 0.3], 0.0, 0.0).unwrap();
        let sched = Schedule::new(0.25, 1, vec![5, 4]).unwrap();
        let seq = pmq(&g, &sched, &[Scheme::Euler; 2], &cfg()).unwrap();
        let s = seq.last();
        for i in 0..5 {
            for j in 0..4 {
                let want = s.grids[0].weights()[i] * s.grids[1].weights()[j];
                assert!((s.joint_weights[i * 4 + j] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn heston_chapman_kolmogorov() {
        let h = Heston::new(100.0, 0.09, 2.0, 0.09, 0.6, 0.05, -0.3).unwrap();
        let sched = Schedule::new(1.0, 4, vec![10, 6]).unwrap();
        let seq = pmq(&h, &sched, &[Scheme::Euler, Scheme::Wo2], &cfg()).unwrap();
        assert_conservation(&seq);
        let p1 = &seq.step(1).joint_weights;
        let t2 = seq.step(2).transition.as_ref().unwrap();
        let t3 = seq.step(3).transition.as_ref().unwrap();
        let p3 = t3.push_forward(&t2.push_forward(p1));
        for (a, b) in p3.iter().zip(&seq.step(3).joint_weights) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn wo2_on_dependent_coordinate_is_rejected() {
        let h = Heston::new(100.0, 0.09, 2.0, 0.09, 0.6, 0.05, -0.3).unwrap();
        let sched = Schedule::new(1.0, 2, vec![5, 5]).unwrap();
        let r = pmq(&h, &sched, &[Scheme::Wo2, Scheme::Wo2], &cfg());
        assert!(matches!(r, Err(GridError::Model(ModelError::NotAutonomous(0)))));
    }

    #[test]
    fn sabr_is_deterministic_and_driftless() {
        let s = Sabr::new(100.0, 0.4, 0.9, 0.4, -0.3, 0.0).unwrap();
        let sched = Schedule::new(1.0, 12, vec![12, 6]).unwrap();
        let a = pmq(&s, &sched, &[Scheme::Euler, Scheme::Wo2], &cfg()).unwrap();
        let b = pmq(&s, &sched, &[Scheme::Euler, Scheme::Wo2], &cfg()).unwrap();
        assert_eq!(a, b);
        for n in 0..2 {
            let m = marginal_mean(a.last(), n);
            let x0 = s.initial_state()[n];
            assert!((m / x0 - 1.0).abs() < 5e-3, "dim {n} mean {m}");
        }
    }
}
