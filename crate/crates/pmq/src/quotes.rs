//! Quote files: a header line, then
//! `maturity_years,strike,kind,market_implied_vol,volume` rows.
//!
//! Rows with zero volume are dropped. `kind` is `call`, `put` or
//! `american-put` (short forms `c`, `p`, `ap` accepted).

use std::io::{Read, Write};
use std::path::Path;

use pmq_core::calibration::{CalibError, Quote, QuoteKind, QuoteSet};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const HEADER: [&str; 5] = ["maturity_years", "strike", "kind", "market_implied_vol", "volume"];

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Row {
    maturity_years: f64,
    strike: f64,
    kind: String,
    market_implied_vol: f64,
    volume: f64,
}

/// Parsed quotes with the file line of each.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteFile {
    pub quotes: Vec<Quote>,
    pub lines: Vec<u64>,
    pub dropped_zero_volume: usize,
}

pub fn parse<R: Read>(input: R, name: &str) -> Result<QuoteFile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| CliError::Data(format!("{name}: {e}")))?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(CliError::Data(format!("{name}: header must be `{}`", HEADER.join(","))));
    }
    let mut out = QuoteFile { quotes: Vec::new(), lines: Vec::new(), dropped_zero_volume: 0 };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("{name}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| CliError::Data(format!("{name} line {line}: {msg}"));
        let row: Row = rec.deserialize(Some(&headers)).map_err(|e| bad(e.to_string()))?;
        let kind: QuoteKind = row.kind.parse().map_err(|_| bad(format!("unknown kind `{}`", row.kind)))?;
        if !(row.volume >= 0.0) {
            return Err(bad(format!("volume must be non-negative, got {}", row.volume)));
        }
        if row.volume == 0.0 {
            out.dropped_zero_volume += 1;
            continue;
        }
        out.quotes.push(Quote { maturity: row.maturity_years, strike: row.strike, kind, vol: row.market_implied_vol });
        out.lines.push(line);
    }
    Ok(out)
}

impl QuoteFile {
    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        parse(f, &path.display().to_string())
    }

    /// Validated set restricted to strikes within `moneyness` of spot.
    pub fn quote_set(&self, spot: f64, rate: f64, moneyness: f64, name: &str) -> Result<QuoteSet> {
        if !(moneyness > 0.0) {
            return Err(CliError::Config(format!("[calibration]: moneyness must be positive, got {moneyness}")));
        }
        let set = QuoteSet { spot, rate, quotes: self.quotes.clone() };
        set.validate().map_err(|e| match e {
            CalibError::Quote { index, reason } => {
                CliError::Data(format!("{name} line {}: {reason}", self.lines[index]))
            }
            other => CliError::Config(format!("[calibration]: {other}")),
        })?;
        let kept = set.within_moneyness(moneyness);
        if kept.quotes.is_empty() {
            return Err(CliError::Data(format!("{name}: no quotes with non-zero volume inside the moneyness band")));
        }
        Ok(kept)
    }
}

/// Writes `quotes` with unit volume, reals in shortest round-trip form.
pub fn write<W: Write>(output: W, quotes: &[Quote]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(HEADER)?;
    for q in quotes {
        w.write_record([
            format!("{:e}", q.maturity),
            format!("{:e}", q.strike),
            q.kind.name().to_string(),
            format!("{:e}", q.vol),
            "1".to_string(),
        ])?;
    }
    w.flush()
}
