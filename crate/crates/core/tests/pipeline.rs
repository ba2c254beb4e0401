//! Grid build, pricing and calibration through the public API.

use pmq_core::calibration::{calibrate, rsve, synthetic_quotes, CalibBudget, CalibModel, GridSettings, QuoteKind};
use pmq_core::grid::{pmq, rmq_1d};
use pmq_core::oracles::{black_price, heston_cf_price};
use pmq_core::pricing::{price, OptionKind, OptionSpec};
use pmq_core::quantize::OptimizerConfig;
use pmq_core::sde::{Gbm, Heston, Schedule, Scheme};

#[test]
fn gbm_european_puts_track_black() {
    let m = Gbm::one_dim(100.0, 0.2, 0.05).unwrap();
    let seq = rmq_1d(&m, &Schedule::new(1.0, 12, vec![40]).unwrap(), Scheme::Wo2, &OptimizerConfig::default()).unwrap();
    // 12 steps leave a discretization bias near 0.03.
    for k in [80.0, 90.0, 100.0, 110.0, 120.0] {
        let p = price(&seq, &OptionSpec::new(OptionKind::EuropeanPut, k, 12, 0.05)).unwrap();
        let df = (-0.05f64).exp();
        let b = black_price(100.0 / df, k, 1.0, 0.2, df, false);
        assert!((p - b).abs() < 0.05, "K = {k}: grid {p}, Black {b}");
    }
}

#[test]
fn heston_price_ordering_and_cf_agreement() {
    let h = Heston::new(100.0, 0.09, 2.0, 0.09, 0.6, 0.05, -0.3).unwrap();
    let seq = pmq(
        &h,
        &Schedule::new(1.0, 12, vec![24, 10]).unwrap(),
        &[Scheme::Euler, Scheme::Wo2],
        &OptimizerConfig::default(),
    )
    .unwrap();
    for k in [85.0, 100.0, 115.0] {
        let e = price(&seq, &OptionSpec::new(OptionKind::EuropeanPut, k, 12, 0.05)).unwrap();
        let b = price(&seq, &OptionSpec::new(OptionKind::BermudanPut, k, 12, 0.05)).unwrap();
        let u = price(&seq, &OptionSpec::new(OptionKind::UpAndOutPut, k, 12, 0.05).with_barrier(130.0)).unwrap();
        assert!(u <= e && e <= b, "K = {k}: barrier {u}, European {e}, Bermudan {b}");
        let cf = heston_cf_price(&h, k, 1.0, false).unwrap();
        assert!((e - cf).abs() < 0.15, "K = {k}: grid {e}, CF {cf}");
    }
}

#[test]
fn heston_calibration_improves_on_its_start() {
    let settings = GridSettings::new(vec![12, 6], vec![Scheme::Euler, Scheme::Wo2]);
    let truth = [0.09, 2.0, 0.09, 0.6, -0.3];
    let instruments: Vec<(f64, f64, QuoteKind)> =
        [0.5, 1.0].into_iter().flat_map(|m| [90.0, 100.0, 110.0].map(|k| (m, k, QuoteKind::Put))).collect();
    let quotes = synthetic_quotes(CalibModel::Heston, &truth, 100.0, 0.05, &instruments, &settings).unwrap();
    let init = [0.1, 2.2, 0.1, 0.65, -0.25];
    let start = rsve(CalibModel::Heston, &init, &quotes, &settings).value;
    let budget = CalibBudget { max_evals: 120, ..CalibBudget::default() };
    let r = calibrate(CalibModel::Heston, &quotes, &init, &CalibModel::Heston.default_bounds(), &settings, &budget)
        .unwrap();
    assert!(r.objective < 0.1 * start, "start {start}, end {}", r.objective);
    assert!(r.trace.iter().all(|t| t.value.is_finite()));
    assert!(r.evaluations() <= 120);
}
