//! Writes grid-priced SABR put quotes to a CSV quote file.
//!
//! Usage: `cargo run --release -p pmq --example synth_quotes -- OUT.csv`

use pmq_core::calibration::{synthetic_quotes, CalibModel, GridSettings, QuoteKind};
use pmq_core::sde::Scheme;

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "sabr_quotes.csv".into());
    let settings = GridSettings::new(vec![20, 8], vec![Scheme::Euler, Scheme::Wo2]);
    let truth = [0.4, 0.9, 0.4, -0.3];
    let instruments: Vec<(f64, f64, QuoteKind)> = [0.25, 0.5, 1.0]
        .into_iter()
        .flat_map(|m| (0..9).map(move |i| (m, 80.0 + 5.0 * i as f64, QuoteKind::Put)))
        .collect();
    let set = synthetic_quotes(CalibModel::Sabr, &truth, 100.0, 0.1, &instruments, &settings).expect("quotes");
    let file = std::fs::File::create(&out).expect("create output");
    pmq::quotes::write(file, &set.quotes).expect("write quotes");
    println!("wrote {} quotes to {out}", set.quotes.len());
}
