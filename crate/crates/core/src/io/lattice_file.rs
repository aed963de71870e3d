//! Text format for non-uniform lattices, version 1.
//!
//! ```text
//! NULUT 1
//! N_S <n>
//! COORDS r <n values>
//! COORDS g <n values>
//! COORDS b <n values>
//! VALUES
//! <3 * n * n lines of n values: channel, i, j outer; k along the line>
//! END
//! ```
//!
//! An optional predictor section may follow:
//!
//! ```text
//! PREDICTOR
//! M <m>
//! DENSE intervals <in> <out>
//! <in lines of out weights>
//! <1 line of out biases>
//! DENSE blend <in> <out>
//! ...
//! DENSE basis <in> <out>
//! ...
//! END
//! ```
//!
//! Numbers are written with 17 significant digits, so reading back a written
//! file reproduces every value exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, LutTable, SamplingCoordinates, CHANNELS};
use crate::predictor::{Dense, PredictorParams};

pub const MAGIC: &str = "NULUT";
pub const VERSION: u32 = 1;

const CHANNEL_NAMES: [&str; CHANNELS] = ["r", "g", "b"];

/// Contents of a lattice file.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeFile {
    pub lattice: Lattice,
    pub predictor: Option<PredictorParams>,
}

fn push_numbers(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v:.16e}").expect("string write");
    }
    out.push('\n');
}

fn push_dense(out: &mut String, name: &str, d: &Dense) {
    writeln!(out, "DENSE {name} {} {}", d.in_dim, d.out_dim).expect("string write");
    for row in d.weights.chunks(d.out_dim.max(1)) {
        push_numbers(out, row);
    }
    push_numbers(out, &d.bias);
}

pub fn encode(file: &LatticeFile) -> String {
    let lattice = &file.lattice;
    let n = lattice.n_s();
    let mut out = format!("{MAGIC} {VERSION}\nN_S {n}\n");
    for (c, name) in CHANNEL_NAMES.iter().enumerate() {
        out.push_str("COORDS ");
        out.push_str(name);
        out.push(' ');
        push_numbers(&mut out, lattice.coords().row(c));
    }
    out.push_str("VALUES\n");
    for line in lattice.values().as_slice().chunks(n) {
        push_numbers(&mut out, line);
    }
    out.push_str("END\n");
    if let Some(p) = &file.predictor {
        writeln!(out, "PREDICTOR\nM {}", p.m).expect("string write");
        push_dense(&mut out, "intervals", &p.intervals);
        push_dense(&mut out, "blend", &p.blend);
        push_dense(&mut out, "basis", &p.basis);
        out.push_str("END\n");
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            line_no: 0,
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Format(format!("line {}: {msg}", self.line_no))
    }

    /// Next non-blank line, or `None` at end of input.
    fn next_opt(&mut self) -> Option<&'a str> {
        for (i, line) in self.inner.by_ref() {
            self.line_no = i + 1;
            let t = line.trim();
            if !t.is_empty() {
                return Some(t);
            }
        }
        None
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.next_opt()
            .ok_or_else(|| Error::Format(format!("unexpected end of file, expected {what}")))
    }

    fn keyword(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next(key)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected {key}, found {line:?}")));
        }
        Ok(parts.collect())
    }

    fn numbers(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let line = self.next(what)?;
        self.parse_numbers(line.split_whitespace(), expected, what)
    }

    fn parse_numbers<'b>(
        &self,
        fields: impl Iterator<Item = &'b str>,
        expected: usize,
        what: &str,
    ) -> Result<Vec<f64>> {
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| self.err(format!("invalid number {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != expected {
            return Err(self.err(format!(
                "{what}: expected {expected} values, found {}",
                values.len()
            )));
        }
        Ok(values)
    }

    fn usize_field(&self, fields: &[&str], idx: usize, what: &str) -> Result<usize> {
        fields
            .get(idx)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| self.err(format!("missing or invalid {what}")))
    }
}

fn parse_dense(lines: &mut Lines<'_>, name: &str) -> Result<Dense> {
    let fields = lines.keyword("DENSE")?;
    if fields.first() != Some(&name) {
        return Err(lines.err(format!("expected DENSE {name}")));
    }
    let in_dim = lines.usize_field(&fields, 1, "input size")?;
    let out_dim = lines.usize_field(&fields, 2, "output size")?;
    let mut weights = Vec::with_capacity(in_dim * out_dim);
    for _ in 0..in_dim {
        weights.extend(lines.numbers(out_dim, name)?);
    }
    let bias = lines.numbers(out_dim, name)?;
    Dense::new(in_dim, out_dim, weights, bias)
}

pub fn decode(text: &str) -> Result<LatticeFile> {
    let mut lines = Lines::new(text);
    let header = lines.keyword(MAGIC)?;
    match header.as_slice() {
        [v] if v.parse::<u32>().ok() == Some(VERSION) => {}
        _ => {
            return Err(lines.err(format!(
                "unsupported version {:?}, expected {VERSION}",
                header.join(" ")
            )))
        }
    }
    let n_fields = lines.keyword("N_S")?;
    let n = lines.usize_field(&n_fields, 0, "N_S")?;
    if n < 2 {
        return Err(lines.err(format!("N_S must be >= 2, got {n}")));
    }

    let mut coords = Vec::with_capacity(CHANNELS * n);
    for name in CHANNEL_NAMES {
        let fields = lines.keyword("COORDS")?;
        if fields.first() != Some(&name) {
            return Err(lines.err(format!("expected COORDS {name}")));
        }
        coords.extend(lines.parse_numbers(fields[1..].iter().copied(), n, "COORDS")?);
    }
    let coords = SamplingCoordinates::new(n, coords).map_err(|e| lines.err(e))?;

    lines.keyword("VALUES")?;
    let mut values = Vec::with_capacity(CHANNELS * n * n * n);
    loop {
        let line = lines.next("END")?;
        if line == "END" {
            break;
        }
        values.extend(lines.parse_numbers(line.split_whitespace(), n, "VALUES")?);
    }
    let expected = CHANNELS * n * n * n;
    if values.len() != expected {
        return Err(lines.err(format!(
            "table for N_S {n} needs {expected} values, found {}",
            values.len()
        )));
    }
    let values = LutTable::new(n, values).map_err(|e| lines.err(e))?;
    let lattice = Lattice::new(coords, values)?;

    let predictor = match lines.next_opt() {
        None => None,
        Some("PREDICTOR") => {
            let m_fields = lines.keyword("M")?;
            let m = lines.usize_field(&m_fields, 0, "M")?;
            let intervals = parse_dense(&mut lines, "intervals")?;
            let blend = parse_dense(&mut lines, "blend")?;
            let basis = parse_dense(&mut lines, "basis")?;
            lines.keyword("END")?;
            Some(PredictorParams::new(n, m, intervals, blend, basis).map_err(|e| lines.err(e))?)
        }
        Some(other) => return Err(lines.err(format!("unexpected {other:?}"))),
    };
    if let Some(extra) = lines.next_opt() {
        return Err(lines.err(format!("trailing content {extra:?}")));
    }
    Ok(LatticeFile { lattice, predictor })
}

pub fn save_file(file: &LatticeFile, path: &Path) -> Result<()> {
    fs::write(path, encode(file)).map_err(|e| Error::io(path, e))
}

pub fn load_file(path: &Path) -> Result<LatticeFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text)
}

pub fn save_lattice(lattice: &Lattice, path: &Path) -> Result<()> {
    save_file(
        &LatticeFile {
            lattice: lattice.clone(),
            predictor: None,
        },
        path,
    )
}

pub fn load_lattice(path: &Path) -> Result<Lattice> {
    Ok(load_file(path)?.lattice)
}
