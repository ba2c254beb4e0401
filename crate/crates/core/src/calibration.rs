//! Model calibration to implied volatility quotes by minimizing the
//! relative squared volatility error (RSVE) over model parameters.
//!
//! Every objective evaluation builds one grid sequence out to the longest
//! quoted maturity and prices all quotes off it. Parameters are searched by
//! Nelder-Mead in an unconstrained space: `log(x - lo)` for half-bounded
//! and `logit` for bounded parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use libm::{ceil, exp, log, round};
use thiserror::Error;

use crate::grid::{pmq, GridError, GridSequence};
use crate::oracles::black::implied_vol;
use crate::pricing::{price, OptionKind, OptionSpec, PricingError};
use crate::quantize::OptimizerConfig;
use crate::sde::{BuiltinModel, Heston, ModelError, Sabr, Schedule, Scheme};

/// Objective value for parameters whose grid cannot be built.
pub const BUILD_FAILURE: f64 = 1e6;
/// A failed inversion costs this multiple of the largest squared residual, at least 1.
pub const PENALTY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("quote {index}: {reason}")]
    Quote { index: usize, reason: &'static str },
    #[error("quote set is empty")]
    NoQuotes,
    #[error("spot must be positive and the rate finite")]
    Market,
    #[error("expected {expected} parameters, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("parameter {name} = {value} is outside [{lo}, {hi}]")]
    OutOfBounds { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("grid settings: {0}")]
    Settings(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error("quote {index}: model price {price} has no implied volatility")]
    Inversion { index: usize, price: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum QuoteKind {
    Call,
    Put,
    /// Priced as Bermudan on every grid step up to maturity.
    AmericanPut,
}

impl QuoteKind {
    pub fn name(self) -> &'static str {
        match self {
            QuoteKind::Call => "call",
            QuoteKind::Put => "put",
            QuoteKind::AmericanPut => "american-put",
        }
    }

    fn is_call(self) -> bool {
        self == QuoteKind::Call
    }

    fn option_kind(self) -> OptionKind {
        match self {
            QuoteKind::Call => OptionKind::EuropeanCall,
            QuoteKind::Put => OptionKind::EuropeanPut,
            QuoteKind::AmericanPut => OptionKind::BermudanPut,
        }
    }
}

impl FromStr for QuoteKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "call" | "c" | "european-call" => Ok(QuoteKind::Call),
            "put" | "p" | "european-put" => Ok(QuoteKind::Put),
            "american-put" | "american" | "ap" => Ok(QuoteKind::AmericanPut),
            other => Err(format!("unknown quote kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Quote {
    pub maturity: f64,
    pub strike: f64,
    pub kind: QuoteKind,
    /// Market Black implied volatility.
    pub vol: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuoteSet {
    pub spot: f64,
    /// Flat continuously compounded rate.
    pub rate: f64,
    pub quotes: Vec<Quote>,
}

impl QuoteSet {
    pub fn new(spot: f64, rate: f64, quotes: Vec<Quote>) -> Result<Self, CalibError> {
        let q = Self { spot, rate, quotes };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.spot > 0.0 && self.spot.is_finite() && self.rate.is_finite()) {
            return Err(CalibError::Market);
        }
        if self.quotes.is_empty() {
            return Err(CalibError::NoQuotes);
        }
        for (index, q) in self.quotes.iter().enumerate() {
            if !(q.maturity > 0.0 && q.maturity.is_finite()) {
                return Err(CalibError::Quote { index, reason: "maturity must be positive" });
            }
            if !(q.strike > 0.0 && q.strike.is_finite()) {
                return Err(CalibError::Quote { index, reason: "strike must be positive" });
            }
            if !(q.vol > 0.0 && q.vol.is_finite()) {
                return Err(CalibError::Quote { index, reason: "vol must be positive" });
            }
        }
        Ok(())
    }

    pub fn max_maturity(&self) -> f64 {
        self.quotes.iter().map(|q| q.maturity).fold(0.0, f64::max)
    }

    /// Keeps quotes with `|K / S0 - 1| <= band`.
    pub fn within_moneyness(&self, band: f64) -> Self {
        let quotes = self.quotes.iter().copied().filter(|q| (q.strike / self.spot - 1.0).abs() <= band).collect();
        Self { spot: self.spot, rate: self.rate, quotes }
    }
}

/// Grid resolution used inside the objective.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GridSettings {
    pub codewords: Vec<usize>,
    pub schemes: Vec<Scheme>,
    /// Time steps to the longest maturity; defaults to `max(4, ceil(12 T))`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub steps: Option<usize>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub optimizer: OptimizerConfig,
}

impl GridSettings {
    pub fn new(codewords: Vec<usize>, schemes: Vec<Scheme>) -> Self {
        Self { codewords, schemes, steps: None, optimizer: OptimizerConfig::default() }
    }

    pub fn steps_for(&self, horizon: f64) -> usize {
        self.steps.unwrap_or_else(|| (ceil(12.0 * horizon - 1e-9) as usize).max(4))
    }
}

/// Model family with its parameter vector layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CalibModel {
    /// `(y0, beta, nu, rho)` on the forward to the longest maturity.
    Sabr,
    /// `(v0, kappa, theta, sigma, rho)`.
    Heston,
}

impl CalibModel {
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            CalibModel::Sabr => &["y0", "beta", "nu", "rho"],
            CalibModel::Heston => &["v0", "kappa", "theta", "sigma", "rho"],
        }
    }

    pub fn default_bounds(self) -> Bounds {
        let inf = f64::INFINITY;
        match self {
            CalibModel::Sabr => Bounds::new(vec![0.0, 0.0, 0.0, -1.0], vec![inf, 1.0, inf, 1.0]),
            CalibModel::Heston => {
                Bounds::new(vec![0.0; 4].into_iter().chain([-1.0]).collect(), vec![inf, inf, inf, inf, 1.0])
            }
        }
    }

    pub fn build(self, params: &[f64], spot: f64, rate: f64, horizon: f64) -> Result<BuiltinModel, CalibError> {
        let expected = self.parameter_names().len();
        if params.len() != expected {
            return Err(CalibError::Arity { expected, got: params.len() });
        }
        Ok(match self {
            CalibModel::Sabr => {
                BuiltinModel::Sabr(Sabr::from_spot(spot, horizon, params[0], params[1], params[2], params[3], rate)?)
            }
            CalibModel::Heston => {
                BuiltinModel::Heston(Heston::new(spot, params[0], params[1], params[2], params[3], rate, params[4])?)
            }
        })
    }

    fn spec(self, spec: OptionSpec, horizon: f64) -> OptionSpec {
        match self {
            CalibModel::Sabr => spec.on_forward(horizon),
            CalibModel::Heston => spec,
        }
    }
}

/// Per-parameter box; either end may be infinite.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    fn transform(&self, i: usize) -> Transform {
        let (lo, hi) = (self.lo[i], self.hi[i]);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => Transform::Logit { lo, hi },
            (true, false) => Transform::Log { lo },
            (false, true) => Transform::NegLog { hi },
            (false, false) => Transform::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    Identity,
    Log { lo: f64 },
    NegLog { hi: f64 },
    Logit { lo: f64, hi: f64 },
}

/// Fraction of a finite box kept clear of each end when placing the start point.
const EDGE_MARGIN: f64 = 0.01;

impl Transform {
    fn clamps(self, x: f64) -> bool {
        match self {
            Transform::Logit { lo, hi } => {
                let p = (x - lo) / (hi - lo);
                !(EDGE_MARGIN..=1.0 - EDGE_MARGIN).contains(&p)
            }
            _ => false,
        }
    }

    fn to_internal(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log { lo } => log((x - lo).max(1e-300)),
            Transform::NegLog { hi } => log((hi - x).max(1e-300)),
            Transform::Logit { lo, hi } => {
                let w = hi - lo;
                let p = ((x - lo) / w).clamp(EDGE_MARGIN, 1.0 - EDGE_MARGIN);
                log(p / (1.0 - p))
            }
        }
    }

    fn to_external(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log { lo } => lo + exp(u),
            Transform::NegLog { hi } => hi - exp(u),
            Transform::Logit { lo, hi } => lo + (hi - lo) / (1.0 + exp(-u)),
        }
    }
}

/// Model prices and implied vols for every quote, off one grid sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelQuotes {
    pub prices: Vec<f64>,
    pub vols: Vec<Option<f64>>,
    /// Grid time each quote was priced at.
    pub times: Vec<f64>,
    pub fallbacks: usize,
}

fn snap(maturity: f64, horizon: f64, steps: usize) -> usize {
    (round(maturity / horizon * steps as f64) as usize).clamp(1, steps)
}

/// Builds the grid for `params` and prices every quote.
pub fn model_quotes(
    model: CalibModel,
    params: &[f64],
    quotes: &QuoteSet,
    settings: &GridSettings,
) -> Result<ModelQuotes, CalibError> {
    quotes.validate()?;
    let horizon = quotes.max_maturity();
    let steps = settings.steps_for(horizon);
    if settings.codewords.len() != settings.schemes.len() {
        return Err(CalibError::Settings("codewords and schemes must have one entry per dimension"));
    }
    let sde = model.build(params, quotes.spot, quotes.rate, horizon)?;
    let schedule = Schedule::new(horizon, steps, settings.codewords.clone())?;
    let seq = pmq(&sde, &schedule, &settings.schemes, &settings.optimizer)?;
    price_quotes(model, &seq, quotes)
}

fn price_quotes(model: CalibModel, seq: &GridSequence, quotes: &QuoteSet) -> Result<ModelQuotes, CalibError> {
    let horizon = seq.schedule().horizon;
    let steps = seq.schedule().steps;
    let n = quotes.quotes.len();
    let mut out = ModelQuotes {
        prices: Vec::with_capacity(n),
        vols: Vec::with_capacity(n),
        times: Vec::with_capacity(n),
        fallbacks: seq.fallbacks(),
    };
    for q in &quotes.quotes {
        let k = snap(q.maturity, horizon, steps);
        let spec = model.spec(OptionSpec::new(q.kind.option_kind(), q.strike, k, quotes.rate), horizon);
        let p = price(seq, &spec)?;
        let t = seq.time(k);
        let forward = quotes.spot * exp(quotes.rate * t);
        let vol = implied_vol(p, forward, q.strike, t, exp(-quotes.rate * t), q.kind.is_call()).ok();
        out.prices.push(p);
        out.vols.push(vol);
        out.times.push(t);
    }
    Ok(out)
}

/// Quotes whose market vols are the model's own implied vols at `params`.
pub fn synthetic_quotes(
    model: CalibModel,
    params: &[f64],
    spot: f64,
    rate: f64,
    instruments: &[(f64, f64, QuoteKind)],
    settings: &GridSettings,
) -> Result<QuoteSet, CalibError> {
    let placeholder =
        instruments.iter().map(|&(maturity, strike, kind)| Quote { maturity, strike, kind, vol: 1.0 }).collect();
    let mut set = QuoteSet::new(spot, rate, placeholder)?;
    let mq = model_quotes(model, params, &set, settings)?;
    for (index, (q, v)) in set.quotes.iter_mut().zip(&mq.vols).enumerate() {
        q.vol = v.ok_or(CalibError::Inversion { index, price: mq.prices[index] })?;
    }
    Ok(set)
}

/// RSVE from model vols; `None` entries are failed inversions.
///
/// Returns the objective and per-quote relative residuals.
pub fn rsve_from_vols(model_vols: &[Option<f64>], market: &[f64]) -> (f64, Vec<Option<f64>>) {
    let residuals: Vec<Option<f64>> = model_vols.iter().zip(market).map(|(m, &s)| m.map(|m| (m - s) / s)).collect();
    let worst = residuals.iter().flatten().map(|r| r * r).fold(1.0, f64::max);
    let value = residuals.iter().map(|r| r.map_or(PENALTY_FACTOR * worst, |r| r * r)).sum();
    (value, residuals)
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub residuals: Vec<Option<f64>>,
    /// Newton to Lloyd fallbacks recorded while building the grid.
    pub fallbacks: usize,
    pub failed_inversions: usize,
    /// Set when the grid could not be built; `value` is then [`BUILD_FAILURE`].
    pub build_error: Option<String>,
}

/// The RSVE objective; total over parameter space.
pub fn rsve(model: CalibModel, params: &[f64], quotes: &QuoteSet, settings: &GridSettings) -> Evaluation {
    match model_quotes(model, params, quotes, settings) {
        Ok(mq) => {
            let market: Vec<f64> = quotes.quotes.iter().map(|q| q.vol).collect();
            let (value, residuals) = rsve_from_vols(&mq.vols, &market);
            let failed_inversions = mq.vols.iter().filter(|v| v.is_none()).count();
            Evaluation { value, residuals, fallbacks: mq.fallbacks, failed_inversions, build_error: None }
        }
        Err(e) => Evaluation {
            value: BUILD_FAILURE,
            residuals: vec![None; quotes.quotes.len()],
            fallbacks: 0,
            failed_inversions: quotes.quotes.len(),
            build_error: Some(format!("{e}")),
        },
    }
}

/// Stopping rules for [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CalibBudget {
    pub max_evals: usize,
    /// Stop once the objective is at or below this.
    pub f_target: f64,
    /// Simplex diameter in transformed coordinates.
    pub x_tol: f64,
    /// Spread of objective values across the simplex.
    pub f_tol: f64,
    /// Initial simplex edge in transformed coordinates.
    pub initial_step: f64,
    /// Evaluations given to the simplex phase before polishing.
    pub simplex_evals: usize,
    /// Finish with finite-difference Levenberg-Marquardt on the residuals.
    pub polish: bool,
}

impl Default for CalibBudget {
    fn default() -> Self {
        Self {
            max_evals: 1000,
            f_target: 1e-14,
            x_tol: 1e-7,
            f_tol: 1e-16,
            initial_step: 0.15,
            simplex_evals: 150,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceEntry {
    pub eval: usize,
    pub params: Vec<f64>,
    pub value: f64,
    pub fallbacks: usize,
    pub failed_inversions: usize,
    pub build_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibResult {
    pub model: CalibModel,
    pub params: Vec<f64>,
    pub objective: f64,
    pub residuals: Vec<Option<f64>>,
    pub trace: Vec<TraceEntry>,
    /// A stopping rule fired before the evaluation budget ran out.
    pub converged: bool,
    pub budget_exhausted: bool,
}

impl CalibResult {
    pub fn evaluations(&self) -> usize {
        self.trace.len()
    }

    pub fn total_fallbacks(&self) -> usize {
        self.trace.iter().map(|t| t.fallbacks).sum()
    }

    pub fn failed_builds(&self) -> usize {
        self.trace.iter().filter(|t| t.build_failed).count()
    }
}

struct Objective<'a> {
    model: CalibModel,
    quotes: &'a QuoteSet,
    settings: &'a GridSettings,
    transforms: Vec<Transform>,
    /// Start point in both coordinates, so it is evaluated without round-off.
    start: (Vec<f64>, Vec<f64>),
    /// SABR forward `F0`: the search then uses `y0 F0^(beta - 1)` in place of `y0`.
    backbone: Option<f64>,
    trace: Vec<TraceEntry>,
    best: Option<Best>,
}

struct Best {
    value: f64,
    u: Vec<f64>,
    params: Vec<f64>,
    residuals: Vec<Option<f64>>,
    stacked: Vec<f64>,
}

/// Residual vector whose squared norm is the objective value.
fn stacked_residuals(e: &Evaluation) -> Vec<f64> {
    let l = e.residuals.len();
    if e.build_error.is_some() {
        return vec![libm::sqrt(e.value / l as f64); l];
    }
    let worst = e.residuals.iter().flatten().map(|r| r * r).fold(1.0, f64::max);
    e.residuals.iter().map(|r| r.unwrap_or(libm::sqrt(PENALTY_FACTOR * worst))).collect()
}

impl Objective<'_> {
    fn external(&self, u: &[f64]) -> Vec<f64> {
        if u == self.start.0.as_slice() {
            return self.start.1.clone();
        }
        let mut x: Vec<f64> = u.iter().zip(&self.transforms).map(|(&u, t)| t.to_external(u)).collect();
        if let Some(f0) = self.backbone {
            x[0] *= libm::pow(f0, 1.0 - x[1]);
        }
        x
    }

    fn eval(&mut self, u: &[f64]) -> f64 {
        self.eval_full(u).0
    }

    fn eval_full(&mut self, u: &[f64]) -> (f64, Vec<f64>) {
        let params = self.external(u);
        let e = rsve(self.model, &params, self.quotes, self.settings);
        self.trace.push(TraceEntry {
            eval: self.trace.len(),
            params: params.clone(),
            value: e.value,
            fallbacks: e.fallbacks,
            failed_inversions: e.failed_inversions,
            build_failed: e.build_error.is_some(),
        });
        let stacked = stacked_residuals(&e);
        if self.best.as_ref().is_none_or(|b| e.value < b.value) {
            self.best =
                Some(Best { value: e.value, u: u.to_vec(), params, residuals: e.residuals, stacked: stacked.clone() });
        }
        (e.value, stacked)
    }
}

/// Minimizes [`rsve`] from `init` inside `bounds`: Nelder-Mead first, then
/// optionally Levenberg-Marquardt from the best simplex vertex.
///
/// Start values of bounded parameters closer than 1% of the box width to an
/// edge are moved to that distance. The result never has a larger objective
/// than the start point.
pub fn calibrate(
    model: CalibModel,
    quotes: &QuoteSet,
    init: &[f64],
    bounds: &Bounds,
    settings: &GridSettings,
    budget: &CalibBudget,
) -> Result<CalibResult, CalibError> {
    let names = model.parameter_names();
    let d = names.len();
    if init.len() != d || bounds.lo.len() != d || bounds.hi.len() != d {
        return Err(CalibError::Arity { expected: d, got: init.len().min(bounds.lo.len()).min(bounds.hi.len()) });
    }
    for i in 0..d {
        let (lo, hi) = (bounds.lo[i], bounds.hi[i]);
        // bounded boxes clamp the start point; half-bounded ones cannot
        let half_open_violation = !hi.is_finite() && init[i] <= lo || !lo.is_finite() && init[i] >= hi;
        if !(lo < hi) || !init[i].is_finite() || half_open_violation {
            return Err(CalibError::OutOfBounds { name: names[i], value: init[i], lo, hi });
        }
    }
    if budget.max_evals == 0 {
        return Err(CalibError::Settings("evaluation budget must be positive"));
    }
    quotes.validate()?;
    let transforms: Vec<Transform> = (0..d).map(|i| bounds.transform(i)).collect();
    // y0 and beta trade off along y0 F0^(beta - 1) = const; searching in
    // that level keeps the valley axis-aligned
    let backbone = (model == CalibModel::Sabr && bounds.lo[0] == 0.0 && bounds.hi[0] == f64::INFINITY)
        .then(|| quotes.spot * exp(quotes.rate * quotes.max_maturity()));
    let x0: Vec<f64> = init
        .iter()
        .zip(&transforms)
        .map(|(&x, t)| if t.clamps(x) { t.to_external(t.to_internal(x)) } else { x })
        .collect();
    let mut search = x0.clone();
    if let Some(f0) = backbone {
        search[0] *= libm::pow(f0, search[1] - 1.0);
    }
    let u0: Vec<f64> = search.iter().zip(&transforms).map(|(&x, t)| t.to_internal(x)).collect();
    let mut obj = Objective {
        model,
        quotes,
        settings,
        transforms,
        start: (u0.clone(), x0),
        backbone,
        trace: Vec::new(),
        best: None,
    };
    let simplex_cap = if budget.polish { budget.simplex_evals.min(budget.max_evals) } else { budget.max_evals };
    let mut converged = nelder_mead(&mut obj, u0, &CalibBudget { max_evals: simplex_cap, ..*budget });
    let at_target = obj.best.as_ref().is_some_and(|b| b.value <= budget.f_target);
    if budget.polish && !at_target {
        converged = levenberg_marquardt(&mut obj, budget);
    }
    let budget_exhausted = !converged && obj.trace.len() >= budget.max_evals;
    let best = obj.best.take().expect("at least one evaluation");
    Ok(CalibResult {
        model,
        params: best.params,
        objective: best.value,
        residuals: best.residuals,
        trace: obj.trace,
        converged,
        budget_exhausted,
    })
}

/// Returns true when a stopping rule fired.
fn nelder_mead(obj: &mut Objective<'_>, u0: Vec<f64>, budget: &CalibBudget) -> bool {
    let d = u0.len();
    let f0 = obj.eval(&u0);
    if f0 <= budget.f_target {
        return true;
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(u0.clone(), f0)];
    for i in 0..d {
        if obj.trace.len() >= budget.max_evals {
            return false;
        }
        let mut u = u0.clone();
        u[i] += budget.initial_step;
        let f = obj.eval(&u);
        simplex.push((u, f));
    }
    let combine =
        |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        if best <= budget.f_target {
            return true;
        }
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(u, _)| u.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter <= budget.x_tol && worst - best <= budget.f_tol {
            return true;
        }
        if obj.trace.len() >= budget.max_evals {
            return false;
        }
        let mut centroid = vec![0.0; d];
        for (u, _) in &simplex[..d] {
            for (c, x) in centroid.iter_mut().zip(u) {
                *c += x / d as f64;
            }
        }
        let xr = combine(&centroid, &simplex[d].0, -1.0);
        let fr = obj.eval(&xr);
        if fr < best {
            if obj.trace.len() >= budget.max_evals {
                simplex[d] = (xr, fr);
                continue;
            }
            let xe = combine(&centroid, &simplex[d].0, -2.0);
            let fe = obj.eval(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        if obj.trace.len() >= budget.max_evals {
            return false;
        }
        let (xc, fc) = if fr < worst {
            let xc = combine(&centroid, &simplex[d].0, -0.5);
            let fc = obj.eval(&xc);
            (xc, fc)
        } else {
            let xc = combine(&centroid, &simplex[d].0, 0.5);
            let fc = obj.eval(&xc);
            (xc, fc)
        };
        if fc < fr.min(worst) {
            simplex[d] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0.clone();
        for s in simplex.iter_mut().skip(1) {
            if obj.trace.len() >= budget.max_evals {
                return false;
            }
            s.0 = combine(&x0, &s.0, 0.5);
            s.1 = obj.eval(&s.0);
        }
    }
}

/// Damped Gauss-Newton on the stacked residuals with central-difference
/// Jacobians, started from the best point seen so far.
fn levenberg_marquardt(obj: &mut Objective<'_>, budget: &CalibBudget) -> bool {
    const H: f64 = 1e-4;
    let best = obj.best.as_ref().expect("evaluated");
    let (mut u, mut f, mut r) = (best.u.clone(), best.value, best.stacked.clone());
    let d = u.len();
    let m = r.len();
    let mut lambda: Option<f64> = None;
    loop {
        if f <= budget.f_target {
            return true;
        }
        if obj.trace.len() + 2 * d >= budget.max_evals {
            return false;
        }
        let mut jac = vec![0.0; m * d];
        for j in 0..d {
            let mut up = u.clone();
            up[j] += H;
            let (_, rp) = obj.eval_full(&up);
            up[j] = u[j] - H;
            let (_, rm) = obj.eval_full(&up);
            for i in 0..m {
                jac[i * d + j] = (rp[i] - rm[i]) / (2.0 * H);
            }
        }
        let mut jtj = vec![0.0; d * d];
        let mut g = vec![0.0; d];
        for i in 0..m {
            for a in 0..d {
                g[a] += jac[i * d + a] * r[i];
                for b in 0..d {
                    jtj[a * d + b] += jac[i * d + a] * jac[i * d + b];
                }
            }
        }
        let scale = (0..d).map(|a| jtj[a * d + a]).fold(0.0, f64::max);
        if !(scale > 0.0 && scale.is_finite()) {
            return true;
        }
        let mut lam = lambda.unwrap_or(1e-3 * scale);
        loop {
            let mut a = jtj.clone();
            for k in 0..d {
                a[k * d + k] += lam * jtj[k * d + k].max(1e-12 * scale);
            }
            let mut step: Vec<f64> = g.iter().map(|x| -x).collect();
            if crate::linalg::cholesky_solve(&mut a, &mut step, d).is_none() {
                lam *= 10.0;
                continue;
            }
            if obj.trace.len() >= budget.max_evals {
                return false;
            }
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + b).collect();
            let (ft, rt) = obj.eval_full(&trial);
            if ft < f {
                let gain = (f - ft) / f;
                let size = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
                u = trial;
                f = ft;
                r = rt;
                lambda = Some(lam / 3.0);
                if gain < 1e-10 && size < budget.x_tol {
                    return true;
                }
                break;
            }
            lam *= 4.0;
            if lam > 1e12 * scale {
                // no descent left above the objective's numerical noise
                return true;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rsve_arithmetic() {
        let (f, r) = rsve_from_vols(&[Some(0.22); 4], &[0.2; 4]);
        assert!((f - 0.04).abs() < 1e-15);
        assert!(r.iter().all(|r| (r.unwrap() - 0.1).abs() < 1e-14));
        assert_eq!(rsve_from_vols(&[Some(0.3), Some(0.1)], &[0.3, 0.1]).0, 0.0);
        let (f, _) = rsve_from_vols(&[Some(0.22), None], &[0.2, 0.2]);
        assert!((f - (0.01 + PENALTY_FACTOR)).abs() < 1e-12);
    }

    #[test]
    fn transforms_round_trip() {
        for t in [
            Transform::Identity,
            Transform::Log { lo: 0.0 },
            Transform::NegLog { hi: 2.0 },
            Transform::Logit { lo: -1.0, hi: 1.0 },
        ] {
            for x in [-0.5, 0.3, 0.9] {
                let ok = match t {
                    Transform::Log { lo } => x > lo,
                    _ => true,
                };
                if ok {
                    assert!((t.to_external(t.to_internal(x)) - x).abs() < 1e-12);
                }
            }
        }
        let t = Transform::Logit { lo: 0.0, hi: 1.0 };
        assert!((t.to_external(t.to_internal(1.08)) - 0.99).abs() < 1e-12);
    }

    #[test]
    fn quote_kinds_parse() {
        assert_eq!("Put".parse::<QuoteKind>().unwrap(), QuoteKind::Put);
        assert_eq!("american-put".parse::<QuoteKind>().unwrap(), QuoteKind::AmericanPut);
        assert!("straddle".parse::<QuoteKind>().is_err());
    }

    #[test]
    fn quote_set_validation() {
        let q = |vol| Quote { maturity: 0.5, strike: 100.0, kind: QuoteKind::Put, vol };
        assert!(QuoteSet::new(100.0, 0.0, vec![q(0.2)]).is_ok());
        assert!(matches!(QuoteSet::new(100.0, 0.0, vec![q(0.0)]), Err(CalibError::Quote { index: 0, .. })));
        assert_eq!(QuoteSet::new(100.0, 0.0, vec![]), Err(CalibError::NoQuotes));
        let s = QuoteSet::new(100.0, 0.0, vec![q(0.2), Quote { strike: 150.0, ..q(0.2) }]).unwrap();
        assert_eq!(s.within_moneyness(0.3).quotes.len(), 1);
    }

    #[test]
    fn default_steps() {
        let g = GridSettings::new(vec![10, 5], vec![Scheme::Euler, Scheme::Wo2]);
        assert_eq!(g.steps_for(0.1), 4);
        assert_eq!(g.steps_for(1.0), 12);
        assert_eq!(g.steps_for(1.05), 13);
    }

    fn small() -> GridSettings {
        GridSettings::new(vec![10, 5], vec![Scheme::Euler, Scheme::Wo2])
    }

    #[test]
    fn objective_is_zero_at_generating_params_and_deterministic() {
        let p = [0.4, 0.9, 0.4, -0.3];
        let inst: Vec<_> = [90.0, 100.0, 110.0].iter().map(|&k| (0.5, k, QuoteKind::Put)).collect();
        let q = synthetic_quotes(CalibModel::Sabr, &p, 100.0, 0.05, &inst, &small()).unwrap();
        let a = rsve(CalibModel::Sabr, &p, &q, &small());
        assert_eq!(a.value, 0.0);
        assert_eq!(a, rsve(CalibModel::Sabr, &p, &q, &small()));
        let r =
            calibrate(CalibModel::Sabr, &q, &p, &CalibModel::Sabr.default_bounds(), &small(), &CalibBudget::default())
                .unwrap();
        assert_eq!(r.evaluations(), 1);
        assert_eq!(r.objective, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn invalid_params_give_sentinel() {
        let inst = [(0.5, 100.0, QuoteKind::Put)];
        let q = synthetic_quotes(CalibModel::Sabr, &[0.4, 0.9, 0.4, -0.3], 100.0, 0.05, &inst, &small()).unwrap();
        let e = rsve(CalibModel::Sabr, &[0.4, 0.9, 0.4, -1.5], &q, &small());
        assert_eq!(e.value, BUILD_FAILURE);
        assert!(e.build_error.is_some());
    }

    #[test]
    fn budget_exhaustion_keeps_best() {
        let inst: Vec<_> = [90.0, 110.0].iter().map(|&k| (0.5, k, QuoteKind::Put)).collect();
        let q = synthetic_quotes(CalibModel::Sabr, &[0.4, 0.9, 0.4, -0.3], 100.0, 0.05, &inst, &small()).unwrap();
        let init = [0.5, 0.8, 0.5, -0.2];
        let f0 = rsve(CalibModel::Sabr, &init, &q, &small()).value;
        let budget = CalibBudget { max_evals: 8, ..CalibBudget::default() };
        let r = calibrate(CalibModel::Sabr, &q, &init, &CalibModel::Sabr.default_bounds(), &small(), &budget).unwrap();
        assert!(r.budget_exhausted && !r.converged);
        assert_eq!(r.evaluations(), 8);
        assert!(r.objective <= f0);
        assert!(r.trace.iter().all(|t| t.params[1] > 0.0 && t.params[1] < 1.0 && t.params[3].abs() < 1.0));
    }
}
