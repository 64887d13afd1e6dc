//! CSV readers and writers.
//!
//! Matrices are plain row-major CSV without a header. Sample files carry a
//! header naming the columns (`x1..xd,g1..gd` for posterior samples, `g1..gd`
//! for joint samples). Numbers are written with 12 significant digits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::diagnostics::{JointSampleBatch, SampleBatch};
use crate::linalg::{LinalgError, SymMatrix};

/// Largest asymmetry tolerated silently when loading a symmetric matrix.
pub const ASYMMETRY_WARN: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}, column {col}: cannot parse {value:?} as a number")]
    Parse {
        line: usize,
        col: usize,
        value: String,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("bad header: expected {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("file is empty")]
    Empty,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Diagnostics(#[from] crate::diagnostics::DiagnosticsError),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IoError::Open {
        path: path.display().to_string(),
        source,
    })
}

type Rows = (Option<Vec<String>>, Vec<Vec<f64>>);

fn parse_rows<R: Read>(reader: R, has_header: bool) -> Result<Rows> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = if has_header {
        Some(rdr.headers()?.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = idx + 1 + usize::from(has_header);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(IoError::Ragged {
                line,
                expected,
                found: record.len(),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, s)| {
                s.parse::<f64>().map_err(|_| IoError::Parse {
                    line,
                    col: col + 1,
                    value: s.to_owned(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(IoError::Empty);
    }
    let c = rows[0].len();
    Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
}

/// Reads a dense headerless matrix.
pub fn read_dense(path: &Path) -> Result<DMatrix<f64>> {
    read_dense_from(open(path)?)
}

pub fn read_dense_from<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let (_, rows) = parse_rows(reader, false)?;
    to_matrix(&rows)
}

/// Reads a symmetric matrix, averaging it with its transpose.
pub fn read_sym(path: &Path) -> Result<SymMatrix> {
    read_sym_from(open(path)?)
}

pub fn read_sym_from<R: Read>(reader: R) -> Result<SymMatrix> {
    let m = read_dense_from(reader)?;
    if m.nrows() == m.ncols() {
        let asym = (&m - m.transpose()).amax();
        if asym > ASYMMETRY_WARN {
            log::warn!("matrix asymmetry {asym:e} exceeds {ASYMMETRY_WARN:e}; symmetrizing");
        }
    }
    Ok(SymMatrix::new(m)?)
}

fn expect_header(found: &[String], expected: &[String]) -> Result<()> {
    if found != expected {
        return Err(IoError::Header {
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

fn numbered(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("{prefix}{k}")).collect()
}

/// Reads posterior samples with header `x1..xd,g1..gd`.
pub fn read_samples(path: &Path) -> Result<SampleBatch> {
    read_samples_from(open(path)?)
}

pub fn read_samples_from<R: Read>(reader: R) -> Result<SampleBatch> {
    let (header, rows) = parse_rows(reader, true)?;
    let header = header.unwrap_or_default();
    if header.is_empty() || header.len() % 2 != 0 {
        return Err(IoError::Header {
            expected: "x1..xd,g1..gd".into(),
            found: header.join(","),
        });
    }
    let d = header.len() / 2;
    let mut expected = numbered("x", d);
    expected.extend(numbered("g", d));
    expect_header(&header, &expected)?;
    let all = to_matrix(&rows)?;
    let points = all.columns(0, d).into_owned();
    let grads = all.columns(d, d).into_owned();
    Ok(SampleBatch::new(points, grads)?)
}

/// Reads joint-law likelihood scores with header `g1..gd`.
pub fn read_joint(path: &Path) -> Result<JointSampleBatch> {
    read_joint_from(open(path)?)
}

pub fn read_joint_from<R: Read>(reader: R) -> Result<JointSampleBatch> {
    let (header, rows) = parse_rows(reader, true)?;
    let header = header.unwrap_or_default();
    expect_header(&header, &numbered("g", header.len()))?;
    Ok(JointSampleBatch::new(to_matrix(&rows)?)?)
}

/// Formats `x` with 12 significant digits, trimming trailing zeros.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    const DIGITS: i32 = 12;
    let exp = x.abs().log10().floor() as i32;
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, e) = sci.split_once('e').expect("scientific format");
    let exp10: i32 = e.parse().unwrap_or(exp);
    if (-5..DIGITS).contains(&exp10) {
        let decimals = (DIGITS - 1 - exp10).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp10)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s.to_owned()
    }
}

/// Writes a dense matrix as headerless CSV.
pub fn write_dense<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_num(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_dense_file(path: &Path, m: &DMatrix<f64>) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_dense(&mut f, m)?;
    f.flush()
}
