//! The four tasks: quantize, price, compare-mc and calibrate.

use std::path::{Path, PathBuf};

use pmq_core::calibration::{calibrate, model_quotes, CalibError, QuoteSet};
use pmq_core::grid::{pmq, GridError, GridSequence};
use pmq_core::oracles::{mc_price_many, McConfig, McEstimate, PathView, Payoff};
use pmq_core::pricing::{price, OptionKind, OptionSpec, PricingError, Underlying};
use pmq_core::sde::{BuiltinModel, SdeModel};
use serde_json::json;

use crate::config::{BuildPlan, Loaded, RunConfig, Task};
use crate::error::{CliError, Result};
use crate::gridfile::{model_hash, GridFile};
use crate::quotes::QuoteFile;
use crate::report::{Cell, Table};

pub const GRID_BINARY: &str = "grid.pmq";
pub const GRID_TEXT: &str = "grid.txt";
pub const QUANTIZE_SUMMARY: &str = "quantize_summary.csv";
pub const PRICES: &str = "prices.csv";
pub const COMPARE: &str = "compare_mc.csv";
pub const CALIBRATION_REPORT: &str = "calibration.json";
pub const CALIBRATION_TRACE: &str = "calibration_trace.csv";
pub const CALIBRATION_FIT: &str = "calibration_fit.csv";
pub const DIAGNOSTICS: &str = "diagnostics.json";
pub const RUN_RECORD: &str = "run.json";

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    /// Accepted for interface stability; computation is single-threaded.
    pub threads: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A loaded config with its resolved output directory.
pub struct Context {
    pub loaded: Loaded,
    pub globals: Globals,
    pub out: PathBuf,
    pub task: Task,
}

impl Context {
    pub fn new(loaded: Loaded, globals: Globals, task: Task) -> Result<Self> {
        let out = match &globals.out {
            Some(p) => p.clone(),
            None => loaded.resolve(&loaded.config.output.dir),
        };
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let stale = out.join(DIAGNOSTICS);
        if stale.exists() {
            std::fs::remove_file(&stale).map_err(|e| CliError::io(&stale, e))?;
        }
        Ok(Self { loaded, globals, out, task })
    }

    fn config(&self) -> &RunConfig {
        &self.loaded.config
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes the diagnostics file and returns the exit-4 error.
    fn numerical(&self, message: String, details: serde_json::Value) -> CliError {
        let path = self.path(DIAGNOSTICS);
        let body = json!({ "command": self.task.name(), "error": message, "details": details });
        let text = serde_json::to_string_pretty(&body).expect("diagnostics serialize");
        if let Err(e) = std::fs::write(&path, text + "\n") {
            return CliError::io(&path, e);
        }
        CliError::Numerical { message, diagnostics: path }
    }

    fn record(&self, extra: serde_json::Value) -> Result<()> {
        let body = json!({
            "command": self.task.name(),
            "config": self.loaded.path.display().to_string(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.globals.seed,
            "threads": self.globals.threads,
            "result": extra,
        });
        let path = self.path(RUN_RECORD);
        let text = serde_json::to_string_pretty(&body).expect("record serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    fn build(&self, plan: &BuildPlan) -> Result<GridSequence> {
        let context = || json!({ "model": plan.model, "schedule": plan.schedule, "schemes": plan.schemes });
        let seq = pmq(&plan.model, &plan.schedule, &plan.schemes, &plan.optimizer).map_err(|e| match e {
            GridError::Config(_) | GridError::Unsupported(_) | GridError::Model(_) => {
                CliError::Config(format!("[schedule]: {e}"))
            }
            other => self.numerical(format!("grid build failed: {other}"), context()),
        })?;
        if let Some((step, what)) = non_finite(&seq) {
            let mut details = context();
            details["summary"] = json!(summary(&seq).to_csv());
            return Err(self.numerical(format!("grid step {step}: non-finite {what}"), details));
        }
        if !seq.converged() {
            eprintln!("warning: some marginal optimizations did not meet the tolerance; see the converged column");
        }
        Ok(seq)
    }

    /// The grid from `grid` (or the config's `grid_file`) after provenance
    /// checks, otherwise freshly built from the config.
    fn grid(&self, grid: Option<&Path>) -> Result<GridFile> {
        let path =
            grid.map(Path::to_path_buf).or_else(|| self.config().grid_file.as_ref().map(|p| self.loaded.resolve(p)));
        let Some(path) = path else {
            let plan = self.config().build_plan()?;
            let seq = self.build(&plan)?;
            return Ok(GridFile::new(plan.model, plan.optimizer, seq));
        };
        let file = GridFile::read(&path)?;
        let h = &file.header;
        if let Some(model) = self.config().model_for(h.schedule.horizon)? {
            let want = model_hash(&model);
            if want != h.model_hash {
                return Err(CliError::Provenance(format!(
                    "{} was built for model hash {}, config model has {want}",
                    path.display(),
                    h.model_hash
                )));
            }
        }
        if let Some(s) = &self.config().schedule {
            let same =
                s.horizon == h.schedule.horizon && s.steps == h.schedule.steps && s.codewords == h.schedule.codewords;
            if !same || s.schemes != h.schemes {
                return Err(CliError::Provenance(format!(
                    "{} has schedule {:?} with schemes {:?}, config has {s:?}",
                    path.display(),
                    h.schedule,
                    h.schemes
                )));
            }
        }
        Ok(file)
    }
}

/// Builds the grid and writes the binary file, the text export and the summary.
pub fn quantize(ctx: &Context) -> Result<Table> {
    let plan = ctx.config().build_plan()?;
    let seq = ctx.build(&plan)?;
    let file = GridFile::new(plan.model, plan.optimizer, seq);
    file.write_binary(&ctx.path(GRID_BINARY))?;
    file.write_text(&ctx.path(GRID_TEXT))?;
    let table = summary(&file.sequence);
    table.write(&ctx.path(QUANTIZE_SUMMARY))?;
    let worst = file.sequence.steps().iter().map(weight_residual).fold(0.0, f64::max);
    ctx.record(json!({
        "model_hash": file.header.model_hash,
        "steps": file.sequence.schedule().steps,
        "fallbacks": file.sequence.fallbacks(),
        "converged": file.sequence.converged(),
        "max_weight_sum_residual": worst,
    }))?;
    Ok(table)
}

/// First step holding a non-finite codeword, weight, transition entry or
/// diagnostic, with what it was.
pub fn non_finite(seq: &GridSequence) -> Option<(usize, &'static str)> {
    let bad = |xs: &[f64]| xs.iter().any(|x| !x.is_finite());
    for s in seq.steps() {
        let what = if s.grids.iter().any(|g| bad(g.codewords()) || bad(g.weights())) {
            "codewords or weights"
        } else if bad(&s.joint_weights) {
            "joint weights"
        } else if s.transition.as_ref().is_some_and(|t| bad(t.data())) {
            "transition probabilities"
        } else if bad(&s.diagnostics.distortion)
            || s.diagnostics.reports.iter().any(|r| !r.final_grad.is_finite() || !r.tolerance.is_finite())
        {
            "distortion or gradient"
        } else {
            continue;
        };
        return Some((s.step, what));
    }
    None
}

fn weight_residual(s: &pmq_core::grid::ProductGridStep) -> f64 {
    (s.joint_weights.iter().sum::<f64>() - 1.0).abs()
}

/// One row per step.
pub fn summary(seq: &GridSequence) -> Table {
    let d = seq.dim();
    let mut cols: Vec<String> = vec!["step".into(), "time".into(), "joint_codewords".into()];
    cols.extend((1..=d).map(|n| format!("distortion_{n}")));
    cols.extend(
        [
            "nr_iters",
            "lloyd_iters",
            "fallbacks",
            "wo2_fallbacks",
            "point_components",
            "renormalized_rows",
            "converged",
            "weight_sum_residual",
        ]
        .map(String::from),
    );
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new(&refs);
    for s in seq.steps() {
        let g = &s.diagnostics;
        let mut row: Vec<Cell> = vec![s.step.into(), seq.time(s.step).into(), s.len().into()];
        for n in 0..d {
            row.push(g.distortion.get(n).copied().unwrap_or(0.0).into());
        }
        row.push(g.reports.iter().map(|r| r.nr_iters).sum::<usize>().into());
        row.push(g.reports.iter().map(|r| r.lloyd_iters).sum::<usize>().into());
        row.push(g.fallbacks().into());
        row.push(g.wo2_fallbacks.into());
        row.push(g.point_components.into());
        row.push(g.renormalized_rows.into());
        row.push(g.reports.iter().all(|r| r.converged).into());
        row.push(weight_residual(s).into());
        t.push(row);
    }
    t
}

/// A priced contract with its row label.
#[derive(Debug, Clone, PartialEq)]
pub struct Instrument {
    pub id: String,
    pub spec: OptionSpec,
}

pub fn kind_name(kind: OptionKind) -> &'static str {
    match kind {
        OptionKind::EuropeanPut => "european-put",
        OptionKind::EuropeanCall => "european-call",
        OptionKind::UpAndOutPut => "up-and-out-put",
        OptionKind::BermudanPut => "bermudan-put",
    }
}

/// Expands the `[[options]]` entries: one instrument per strike and barrier.
pub fn instruments(config: &RunConfig, seq: &GridSequence, model: &BuiltinModel) -> Result<Vec<Instrument>> {
    let horizon = seq.schedule().horizon;
    let last = seq.schedule().steps;
    let mut out = Vec::new();
    for (i, o) in config.options.iter().enumerate() {
        let bad = |msg: String| CliError::Config(format!("[[options]] entry {}: {msg}", i + 1));
        let barriers: Vec<Option<f64>> = match (&o.barrier, o.kind) {
            (Some(b), OptionKind::UpAndOutPut) => b.values().into_iter().map(Some).collect(),
            (None, OptionKind::UpAndOutPut) => return Err(bad("up-and-out-put needs a barrier".into())),
            (Some(_), k) => return Err(bad(format!("{} takes no barrier", kind_name(k)))),
            (None, _) => vec![None],
        };
        let strikes = o.strike.values();
        if strikes.is_empty() || barriers.is_empty() {
            return Err(bad("strike and barrier lists must not be empty".into()));
        }
        let maturity = o.maturity_step.unwrap_or(last);
        if maturity > last {
            return Err(bad(format!("maturity_step {maturity} is beyond the last grid step {last}")));
        }
        let count = strikes.len() * barriers.len();
        for (j, (&k, b)) in strikes.iter().flat_map(|k| barriers.iter().map(move |b| (k, b))).enumerate() {
            let mut spec = OptionSpec::new(o.kind, k, maturity, model.rate()).with_dates(o.dates.clone());
            if let Some(b) = b {
                spec = spec.with_barrier(*b);
            }
            if matches!(model, BuiltinModel::Sabr(_)) {
                spec = spec.on_forward(horizon);
            }
            let id = match &o.id {
                Some(base) if count == 1 => base.clone(),
                Some(base) => format!("{base}-{}", j + 1),
                None => {
                    let mut s = format!("{}-K{k}", kind_name(o.kind));
                    if let Some(b) = b {
                        s.push_str(&format!("-B{b}"));
                    }
                    s
                }
            };
            out.push(Instrument { id, spec });
        }
    }
    Ok(out)
}

fn price_all(ctx: &Context, seq: &GridSequence, items: &[Instrument]) -> Result<Vec<f64>> {
    items
        .iter()
        .map(|it| {
            price(seq, &it.spec).map_err(|e| match e {
                PricingError::MissingTransition(_) => {
                    ctx.numerical(format!("{}: {e}", it.id), json!({ "instrument": it.id }))
                }
                other => CliError::Config(format!("option {}: {other}", it.id)),
            })
        })
        .collect()
}

fn label_cells(it: &Instrument) -> Vec<Cell> {
    vec![it.id.clone().into(), kind_name(it.spec.kind).into(), it.spec.strike.into(), it.spec.barrier.into()]
}

/// Prices the option list on a grid from file or config.
pub fn price_book(ctx: &Context, grid: Option<&Path>) -> Result<Table> {
    let file = ctx.grid(grid)?;
    let items = instruments(ctx.config(), &file.sequence, &file.header.model)?;
    let prices = price_all(ctx, &file.sequence, &items)?;
    let mut t = Table::new(&["id", "kind", "strike", "barrier", "price"]);
    for (it, p) in items.iter().zip(&prices) {
        let mut row = label_cells(it);
        row.push((*p).into());
        t.push(row);
    }
    t.write(&ctx.path(PRICES))?;
    ctx.record(json!({ "model_hash": file.header.model_hash, "instruments": items.len() }))?;
    Ok(t)
}

type BoxedPayoff = Box<dyn Fn(&PathView<'_>) -> f64>;

/// Path functional matching the grid price, rescaled so the simulator's
/// discounting over the full horizon gives the discount to maturity.
/// `None` for Bermudan exercise, which needs a regression estimator.
pub fn mc_payoff(spec: &OptionSpec, seq: &GridSequence, rate: f64) -> Option<BoxedPayoff> {
    let horizon = seq.schedule().horizon;
    let times: Vec<f64> = (0..=seq.schedule().steps).map(|k| seq.time(k)).collect();
    let factors: Vec<f64> = times
        .iter()
        .map(|&t| match spec.underlying {
            Underlying::Spot => 1.0,
            Underlying::Forward { horizon } => (-rate * (horizon - t)).exp(),
        })
        .collect();
    let k = spec.maturity_step;
    let strike = spec.strike;
    let carry = (rate * (horizon - times[k])).exp();
    let spot = move |p: &PathView<'_>, j: usize| p.coordinate(j, 0) * factors[j];
    match spec.kind {
        OptionKind::EuropeanPut => Some(Box::new(move |p| carry * (strike - spot(p, k)).max(0.0))),
        OptionKind::EuropeanCall => Some(Box::new(move |p| carry * (spot(p, k) - strike).max(0.0))),
        OptionKind::UpAndOutPut => {
            let barrier = spec.barrier?;
            let dates: Vec<usize> = if spec.dates.is_empty() { (1..=k).collect() } else { spec.dates.clone() };
            Some(Box::new(move |p| {
                if dates.iter().any(|&j| spot(p, j) >= barrier) {
                    0.0
                } else {
                    carry * (strike - spot(p, k)).max(0.0)
                }
            }))
        }
        OptionKind::BermudanPut => None,
    }
}

/// Grid prices next to Monte Carlo estimates on the same model.
pub fn compare_mc(ctx: &Context) -> Result<Table> {
    let file = ctx.grid(None)?;
    let seq = &file.sequence;
    let model = &file.header.model;
    let items = instruments(ctx.config(), seq, model)?;
    let prices = price_all(ctx, seq, &items)?;
    let cfg = McConfig { seed: ctx.globals.seed.unwrap_or(ctx.config().mc.seed), ..ctx.config().mc };
    let payoffs: Vec<Option<BoxedPayoff>> = items.iter().map(|it| mc_payoff(&it.spec, seq, model.rate())).collect();
    let refs: Vec<Payoff<'_>> = payoffs.iter().flatten().map(|b| b.as_ref() as Payoff<'_>).collect();
    let estimates: Vec<McEstimate> = if refs.is_empty() {
        Vec::new()
    } else {
        mc_price_many(model, seq.schedule().horizon, seq.schedule().steps, &refs, &cfg)
            .map_err(|e| CliError::Config(format!("[mc]: {e}")))?
    };
    let mut est = estimates.into_iter();
    let mut t = Table::new(&["id", "kind", "strike", "barrier", "pmq_price", "mc_mean", "mc_stderr", "z_score"]);
    let mut outside = 0;
    for ((it, p), pay) in items.iter().zip(&prices).zip(&payoffs) {
        let mut row = label_cells(it);
        row.push((*p).into());
        match pay.as_ref().and_then(|_| est.next()) {
            Some(e) => {
                let z = e.z_score(*p);
                outside += usize::from(z.abs() > 3.0);
                row.extend([e.mean.into(), e.stderr.into(), z.into()]);
            }
            None => row.extend([Cell::Empty, Cell::Empty, Cell::Empty]),
        }
        t.push(row);
    }
    t.write(&ctx.path(COMPARE))?;
    ctx.record(json!({
        "model_hash": file.header.model_hash,
        "instruments": items.len(),
        "mc": { "paths": cfg.paths, "steps_per_year": cfg.steps_per_year, "seed": cfg.seed, "antithetic": cfg.antithetic },
        "outside_3_stderr": outside,
    }))?;
    Ok(t)
}

/// Calibrates to the quote file and writes the report, trace and fit tables.
pub fn calibrate_quotes(ctx: &Context) -> Result<Table> {
    let c =
        ctx.config().calibration.as_ref().ok_or_else(|| CliError::Config("missing [calibration] section".into()))?;
    let qpath = ctx.loaded.resolve(&c.quotes);
    let qname = qpath.display().to_string();
    let qfile = QuoteFile::read(&qpath)?;
    let set = qfile.quote_set(c.spot, c.rate, c.moneyness, &qname)?;
    let lines: Vec<u64> = qfile
        .quotes
        .iter()
        .zip(&qfile.lines)
        .filter(|(q, _)| (q.strike / c.spot - 1.0).abs() <= c.moneyness)
        .map(|(_, &l)| l)
        .collect();
    let bounds = c.bounds();
    let result = calibrate(c.model, &set, &c.init, &bounds, &c.grid, &c.budget).map_err(|e| match e {
        CalibError::Model(_) | CalibError::Grid(_) | CalibError::Pricing(_) | CalibError::Inversion { .. } => {
            ctx.numerical(format!("calibration failed: {e}"), json!({ "init": c.init }))
        }
        other => CliError::Config(format!("[calibration]: {other}")),
    })?;
    let names = c.model.parameter_names();

    let mut trace_cols: Vec<&str> = vec!["eval"];
    trace_cols.extend(names);
    trace_cols.extend(["objective", "fallbacks", "failed_inversions", "build_failed"]);
    let mut trace = Table::new(&trace_cols);
    for e in &result.trace {
        let mut row: Vec<Cell> = vec![e.eval.into()];
        row.extend(e.params.iter().map(|&x| Cell::from(x)));
        row.extend([e.value.into(), e.fallbacks.into(), e.failed_inversions.into(), e.build_failed.into()]);
        trace.push(row);
    }
    trace.write(&ctx.path(CALIBRATION_TRACE))?;

    let fit = fit_table(c.model, &result.params, &set, &c.grid, &lines, &result.residuals);
    fit.write(&ctx.path(CALIBRATION_FIT))?;

    let params: Vec<serde_json::Value> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            json!({
                "name": n,
                "init": c.init[i],
                "value": result.params[i],
                "lower": json_real(bounds.lo[i]),
                "upper": json_real(bounds.hi[i]),
            })
        })
        .collect();
    let report = json!({
        "model": c.model,
        "parameters": params,
        "objective": result.objective,
        "converged": result.converged,
        "budget_exhausted": result.budget_exhausted,
        "evaluations": result.evaluations(),
        "fallbacks": result.total_fallbacks(),
        "failed_builds": result.failed_builds(),
        "quotes_used": set.quotes.len(),
        "quotes_dropped_zero_volume": qfile.dropped_zero_volume,
        "quotes_outside_moneyness": qfile.quotes.len() - set.quotes.len(),
    });
    let path = ctx.path(CALIBRATION_REPORT);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    ctx.record(report)?;

    let mut t = Table::new(&["parameter", "init", "value"]);
    for (i, n) in names.iter().enumerate() {
        t.push(vec![(*n).into(), c.init[i].into(), result.params[i].into()]);
    }
    t.push(vec!["rsve".into(), Cell::Empty, result.objective.into()]);
    Ok(t)
}

/// Finite reals as numbers, others as `"inf"`, `"-inf"` or `"NaN"`.
fn json_real(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn fit_table(
    model: pmq_core::calibration::CalibModel,
    params: &[f64],
    set: &QuoteSet,
    grid: &pmq_core::calibration::GridSettings,
    lines: &[u64],
    residuals: &[Option<f64>],
) -> Table {
    let mq = model_quotes(model, params, set, grid).ok();
    let mut t =
        Table::new(&["line", "maturity", "strike", "kind", "market_vol", "model_price", "model_vol", "residual"]);
    for (i, q) in set.quotes.iter().enumerate() {
        let (p, v) = match &mq {
            Some(m) => (Some(m.prices[i]), m.vols[i]),
            None => (None, None),
        };
        t.push(vec![
            Cell::Int(lines[i]),
            q.maturity.into(),
            q.strike.into(),
            q.kind.name().into(),
            q.vol.into(),
            p.into(),
            v.into(),
            residuals.get(i).copied().flatten().into(),
        ]);
    }
    t
}
