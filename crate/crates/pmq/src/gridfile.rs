//! Grid files.
//!
//! Binary layout, all integers `u64` and all reals `f64`, little-endian:
//!
//! ```text
//! magic        8 bytes  "PMQGRID1"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON:
//!              {format, version, model_hash, model, optimizer, schedule, schemes}
//! for each step k = 0..=K:
//!   step       u64
//!   for each coordinate:
//!     n        u64      codeword count
//!     codewords n reals
//!     m        u64      weight count (n, or 0 when unset)
//!     weights  m reals
//!     support  2 reals  lo, hi (may be infinite)
//!   j          u64      joint codeword count
//!   joint      j reals  row-major over the coordinates, last fastest
//!   flag       u8       1 when a transition from step k-1 follows
//!   rows, cols u64, u64    (flag 1 only)
//!   entries    rows*cols reals, row-major
//!   diag_len   u64
//!   diag       diag_len bytes of UTF-8 JSON step diagnostics
//! checksum     32 bytes SHA-256 of every preceding byte
//! ```
//!
//! The text export carries the same content line by line, reals in shortest
//! round-trip scientific notation, and reads back to an identical sequence.

use std::fmt::Write as _;
use std::path::Path;

use pmq_core::grid::{GridSequence, ProductGridStep, StepDiagnostics, Transition};
use pmq_core::quantize::{Grid1D, OptimizerConfig, Support};
use pmq_core::sde::{BuiltinModel, Schedule, Scheme};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"PMQGRID1";
pub const TEXT_MAGIC: &str = "# pmq grid text v1";
pub const FORMAT: &str = "pmq-grid-1";

/// Hex SHA-256 of the model's canonical JSON.
pub fn model_hash(model: &BuiltinModel) -> String {
    let json = serde_json::to_string(model).expect("model parameters serialize");
    hex(&Sha256::digest(json.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: String,
    pub model_hash: String,
    pub model: BuiltinModel,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub schemes: Vec<Scheme>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub header: Header,
    pub sequence: GridSequence,
}

impl GridFile {
    pub fn new(model: BuiltinModel, optimizer: OptimizerConfig, sequence: GridSequence) -> Self {
        let header = Header {
            format: FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            model_hash: model_hash(&model),
            model,
            optimizer,
            schedule: sequence.schedule().clone(),
            schemes: sequence.schemes().to_vec(),
        };
        Self { header, sequence }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        put_u64(&mut out, header.len());
        out.extend_from_slice(&header);
        for s in self.sequence.steps() {
            put_u64(&mut out, s.step);
            for g in &s.grids {
                put_reals(&mut out, g.codewords());
                put_reals(&mut out, g.weights());
                put_f64(&mut out, g.support().lo);
                put_f64(&mut out, g.support().hi);
            }
            put_reals(&mut out, &s.joint_weights);
            match &s.transition {
                None => out.push(0),
                Some(t) => {
                    out.push(1);
                    put_u64(&mut out, t.rows());
                    put_u64(&mut out, t.cols());
                    for &x in t.data() {
                        put_f64(&mut out, x);
                    }
                }
            }
            let diag = serde_json::to_vec(&s.diagnostics).expect("diagnostics serialize");
            put_u64(&mut out, diag.len());
            out.extend_from_slice(&diag);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
            return Err("not a binary grid file".into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err("checksum mismatch".into());
        }
        let mut r = Reader { buf: body, pos: 8 };
        let hlen = r.len()?;
        let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| format!("header: {e}"))?;
        check_header(&header)?;
        let dim = header.schemes.len();
        let mut steps = Vec::with_capacity(header.schedule.steps + 1);
        for _ in 0..=header.schedule.steps {
            let step = r.len()?;
            let mut grids = Vec::with_capacity(dim);
            for _ in 0..dim {
                let codewords = r.reals()?;
                let weights = r.reals()?;
                let support = Support::new(r.f64()?, r.f64()?);
                grids.push(grid(codewords, weights, support)?);
            }
            let joint_weights = r.reals()?;
            let transition = match r.take(1)?[0] {
                0 => None,
                1 => {
                    let (rows, cols) = (r.len()?, r.len()?);
                    let n = rows.checked_mul(cols).ok_or("transition size overflows")?;
                    let data = (0..n).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
                    Some(Transition::new(rows, cols, data).map_err(|e| e.to_string())?)
                }
                f => return Err(format!("bad transition flag {f}")),
            };
            let dlen = r.len()?;
            let diagnostics: StepDiagnostics =
                serde_json::from_slice(r.take(dlen)?).map_err(|e| format!("step {step} diagnostics: {e}"))?;
            steps.push(ProductGridStep { step, grids, joint_weights, transition, diagnostics });
        }
        if r.pos != body.len() {
            return Err("trailing bytes after the last step".into());
        }
        assemble(header, steps)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{TEXT_MAGIC}");
        let _ = writeln!(s, "header {}", serde_json::to_string(&self.header).expect("header serializes"));
        for st in self.sequence.steps() {
            let _ = writeln!(s, "step {}", st.step);
            for (n, g) in st.grids.iter().enumerate() {
                let _ = writeln!(s, "grid {n} support {} {}", real(g.support().lo), real(g.support().hi));
                line(&mut s, "codewords", g.codewords());
                line(&mut s, "weights", g.weights());
            }
            line(&mut s, "joint", &st.joint_weights);
            match &st.transition {
                None => s.push_str("transition none\n"),
                Some(t) => {
                    let _ = writeln!(s, "transition {} {}", t.rows(), t.cols());
                    for i in 0..t.rows() {
                        line(&mut s, "row", t.row(i));
                    }
                }
            }
            let diag = serde_json::to_string(&st.diagnostics).expect("diagnostics serialize");
            let _ = writeln!(s, "diagnostics {diag}");
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |want: &str| -> std::result::Result<(usize, &str), String> {
            let (no, l) = lines.next().ok_or_else(|| format!("unexpected end of file, expected `{want}`"))?;
            let rest =
                if l == want { "" } else { l.strip_prefix(want).and_then(|r| r.strip_prefix(' ')).unwrap_or("\0") };
            if rest == "\0" {
                return Err(format!("line {no}: expected `{want}`"));
            }
            Ok((no, rest))
        };
        let (no, magic) = next(TEXT_MAGIC)?;
        if !magic.is_empty() {
            return Err(format!("line {no}: bad magic"));
        }
        let (no, h) = next("header")?;
        let header: Header = serde_json::from_str(h).map_err(|e| format!("line {no}: header: {e}"))?;
        check_header(&header)?;
        let at = |no: usize| move |e: String| format!("line {no}: {e}");
        let mut steps = Vec::new();
        for _ in 0..=header.schedule.steps {
            let (no, v) = next("step")?;
            let step = v.parse().map_err(|_| format!("line {no}: bad step index"))?;
            let mut grids = Vec::new();
            for n in 0..header.schemes.len() {
                let (no, v) = next(&format!("grid {n} support"))?;
                let sup = parse_reals(v).map_err(at(no))?;
                if sup.len() != 2 {
                    return Err(format!("line {no}: support needs two reals"));
                }
                let (_, c) = next("codewords")?;
                let (wno, w) = next("weights")?;
                let g = grid(
                    parse_reals(c).map_err(at(wno))?,
                    parse_reals(w).map_err(at(wno))?,
                    Support::new(sup[0], sup[1]),
                )
                .map_err(at(wno))?;
                grids.push(g);
            }
            let (no, j) = next("joint")?;
            let joint_weights = parse_reals(j).map_err(at(no))?;
            let (no, t) = next("transition")?;
            let transition = if t == "none" {
                None
            } else {
                let dims: Vec<usize> = t
                    .split(' ')
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| format!("line {no}: bad transition shape"))?;
                if dims.len() != 2 {
                    return Err(format!("line {no}: bad transition shape"));
                }
                let mut data = Vec::with_capacity(dims[0] * dims[1]);
                for _ in 0..dims[0] {
                    let (no, r) = next("row")?;
                    data.extend(parse_reals(r).map_err(at(no))?);
                }
                Some(Transition::new(dims[0], dims[1], data).map_err(|e| format!("line {no}: {e}"))?)
            };
            let (no, d) = next("diagnostics")?;
            let diagnostics = serde_json::from_str(d).map_err(|e| format!("line {no}: diagnostics: {e}"))?;
            steps.push(ProductGridStep { step, grids, joint_weights, transition, diagnostics });
        }
        let (no, end) = next("end")?;
        if !end.is_empty() {
            return Err(format!("line {no}: expected `end`"));
        }
        assemble(header, steps)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    /// Reads either format, detected from the first bytes.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let parsed = if bytes.starts_with(MAGIC) {
            Self::from_bytes(&bytes)
        } else if bytes.starts_with(TEXT_MAGIC.as_bytes()) {
            std::str::from_utf8(&bytes).map_err(|e| e.to_string()).and_then(Self::from_text)
        } else {
            Err("not a grid file".into())
        };
        parsed.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

fn check_header(h: &Header) -> std::result::Result<(), String> {
    if h.format != FORMAT {
        return Err(format!("unsupported format `{}`", h.format));
    }
    if model_hash(&h.model) != h.model_hash {
        return Err("header model hash does not match its model".into());
    }
    Ok(())
}

fn assemble(header: Header, steps: Vec<ProductGridStep>) -> std::result::Result<GridFile, String> {
    let sequence =
        GridSequence::from_parts(header.schedule.clone(), header.schemes.clone(), steps).map_err(|e| e.to_string())?;
    Ok(GridFile { header, sequence })
}

fn grid(codewords: Vec<f64>, weights: Vec<f64>, support: Support) -> std::result::Result<Grid1D, String> {
    let g = Grid1D::new(codewords, support).map_err(|e| e.to_string())?;
    match weights.len() {
        0 => Ok(g),
        n if n == g.len() => Ok(g.with_weights(weights)),
        _ => Err("weight count does not match codeword count".into()),
    }
}

fn real(x: f64) -> String {
    format!("{x:e}")
}

fn line(s: &mut String, key: &str, xs: &[f64]) {
    s.push_str(key);
    for &x in xs {
        s.push(' ');
        s.push_str(&real(x));
    }
    s.push('\n');
}

fn parse_reals(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(' ').filter(|t| !t.is_empty()).map(|t| t.parse().map_err(|_| format!("bad real `{t}`"))).collect()
}

fn put_u64(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u64).to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, x: f64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_reals(out: &mut Vec<u8>, xs: &[f64]) {
    put_u64(out, xs.len());
    for &x in xs {
        put_f64(out, x);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated grid file")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len(&mut self) -> std::result::Result<usize, String> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| "length overflows".into())
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn reals(&mut self) -> std::result::Result<Vec<f64>, String> {
        let n = self.len()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err("truncated grid file".into());
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pmq_core::grid::pmq;
    use pmq_core::sde::{builtin_models, Heston};

    fn sample() -> GridFile {
        let h = Heston::new(100.0, 0.09, 2.0, 0.09, 0.6, 0.05, -0.3).unwrap();
        let sched = Schedule::new(0.5, 3, vec![6, 4]).unwrap();
        let seq = pmq(&h, &sched, &[Scheme::Euler, Scheme::Wo2], &OptimizerConfig::default()).unwrap();
        GridFile::new(BuiltinModel::Heston(h), OptimizerConfig::default(), seq)
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let f = sample();
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(GridFile::from_bytes(&bytes).unwrap(), f);
        assert_eq!(GridFile::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let f = sample();
        let text = f.to_text();
        assert!(text.contains("support 0e0 inf"));
        assert_eq!(GridFile::from_text(&text).unwrap(), f);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert_eq!(GridFile::from_bytes(&bytes).unwrap_err(), "checksum mismatch");
        assert!(GridFile::from_bytes(&bytes[..40]).is_err());
        let text = sample().to_text().replace("transition none", "transition nope");
        assert!(GridFile::from_text(&text).is_err());
    }

    #[test]
    fn hash_depends_on_parameters() {
        let models = builtin_models();
        let hashes: Vec<String> = models.iter().map(model_hash).collect();
        assert_eq!(hashes[0].len(), 64);
        assert_ne!(hashes[0], hashes[1]);
        let mut h = Heston::new(100.0, 0.09, 2.0, 0.09, 0.6, 0.05, -0.3).unwrap();
        let a = model_hash(&BuiltinModel::Heston(h));
        h.rho = -0.31;
        assert_ne!(a, model_hash(&BuiltinModel::Heston(h)));
    }
}
