//! File formats.
//!
//! * Matrices: Matrix Market. Laplacians are written as `coordinate real
//!   symmetric` (lower triangle incl. diagonal, nonzeros only), covariances as
//!   `array real symmetric` (lower triangle, column-major). The reader accepts
//!   `coordinate`/`array` with `general` or `symmetric` symmetry.
//! * Samples: CSV with one sample per row and no header, or a little-endian
//!   binary file: the 8 magic bytes `LGMRFSMP`, `p: u64`, `n: u64`, then
//!   `n * p` `f64` values in row-major order.
//!
//! Floats are written in shortest round-trip exponent form, so reading a file
//! back reproduces the matrix bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_MAGIC: &[u8; 8] = b"LGMRFSMP";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut out: BufWriter<File>, path: &Path) -> Result<()> {
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_mm(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    body(&mut out).map_err(|e| Error::io(path, e))?;
    finish(out, path)
}

/// Writes a symmetric matrix in coordinate format (lower triangle, nonzeros).
pub fn write_mm_coordinate_symmetric(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension("symmetric output needs a square matrix".into()));
    }
    let p = m.nrows();
    let mut entries = Vec::new();
    for j in 0..p {
        for i in j..p {
            let v = m[(i, j)];
            if v != 0.0 {
                entries.push((i + 1, j + 1, v));
            }
        }
    }
    write_mm(path, |out| {
        writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(out, "{p} {p} {}", entries.len())?;
        for (i, j, v) in entries {
            writeln!(out, "{i} {j} {v:e}")?;
        }
        Ok(())
    })
}

/// Writes a symmetric matrix in dense array format (lower triangle, column-major).
pub fn write_mm_array_symmetric(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension("symmetric output needs a square matrix".into()));
    }
    let p = m.nrows();
    write_mm(path, |out| {
        writeln!(out, "%%MatrixMarket matrix array real symmetric")?;
        writeln!(out, "{p} {p}")?;
        for j in 0..p {
            for i in j..p {
                writeln!(out, "{:e}", m[(i, j)])?;
            }
        }
        Ok(())
    })
}

#[derive(Clone, Copy, PartialEq)]
enum MmFormat {
    Coordinate,
    Array,
}

/// Reads a real Matrix Market matrix; symmetric storage is mirrored.
pub fn read_matrix_market(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = BufReader::new(file).lines().enumerate();

    let (lineno, header) = match lines.next() {
        Some((n, l)) => (n + 1, l.map_err(|e| Error::io(path, e))?),
        None => return Err(parse_err(1, "empty file".into())),
    };
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(lineno, format!("bad banner `{header}`")));
    }
    let format = match tokens[2].as_str() {
        "coordinate" => MmFormat::Coordinate,
        "array" => MmFormat::Array,
        other => return Err(parse_err(lineno, format!("unsupported format `{other}`"))),
    };
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(parse_err(lineno, format!("unsupported field `{}`", tokens[3])));
    }
    let symmetric = match tokens[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => return Err(parse_err(lineno, format!("unsupported symmetry `{other}`"))),
    };

    let mut data = lines.filter_map(|(n, l)| match l {
        Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('%') => None,
        other => Some((n + 1, other)),
    });

    let (size_line, size) = match data.next() {
        Some((n, l)) => (n, l.map_err(|e| Error::io(path, e))?),
        None => return Err(parse_err(lineno + 1, "missing size line".into())),
    };
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(size_line, format!("bad size line: {e}")))?;
    let expected_dims = if format == MmFormat::Coordinate { 3 } else { 2 };
    if dims.len() != expected_dims {
        return Err(parse_err(size_line, format!("expected {expected_dims} size fields")));
    }
    let (rows, cols) = (dims[0], dims[1]);
    if symmetric && rows != cols {
        return Err(parse_err(size_line, "symmetric matrix must be square".into()));
    }
    let mut m = DMatrix::zeros(rows, cols);

    let parse_value = |n: usize, t: &str| {
        t.parse::<f64>()
            .map_err(|e| parse_err(n, format!("bad value `{t}`: {e}")))
    };

    match format {
        MmFormat::Coordinate => {
            let nnz = dims[2];
            let mut seen = 0;
            for (n, l) in data.by_ref() {
                let l = l.map_err(|e| Error::io(path, e))?;
                let t: Vec<&str> = l.split_whitespace().collect();
                if t.len() != 3 {
                    return Err(parse_err(n, format!("expected `i j value`, got `{l}`")));
                }
                let idx = |s: &str, bound: usize| -> Result<usize> {
                    match s.parse::<usize>() {
                        Ok(v) if v >= 1 && v <= bound => Ok(v - 1),
                        _ => Err(parse_err(n, format!("index `{s}` outside 1..={bound}"))),
                    }
                };
                let i = idx(t[0], rows)?;
                let j = idx(t[1], cols)?;
                let v = parse_value(n, t[2])?;
                if symmetric && i < j {
                    return Err(parse_err(n, "symmetric entries must lie in the lower triangle".into()));
                }
                m[(i, j)] = v;
                if symmetric {
                    m[(j, i)] = v;
                }
                seen += 1;
                if seen == nnz {
                    break;
                }
            }
            if seen != nnz {
                return Err(parse_err(size_line, format!("expected {nnz} entries, found {seen}")));
            }
        }
        MmFormat::Array => {
            let mut slots = Vec::new();
            for j in 0..cols {
                let start = if symmetric { j } else { 0 };
                for i in start..rows {
                    slots.push((i, j));
                }
            }
            let mut it = slots.into_iter();
            let mut filled = 0;
            let total = it.len();
            for (n, l) in data.by_ref() {
                let l = l.map_err(|e| Error::io(path, e))?;
                for tok in l.split_whitespace() {
                    let Some((i, j)) = it.next() else {
                        return Err(parse_err(n, "more values than the declared size".into()));
                    };
                    let v = parse_value(n, tok)?;
                    m[(i, j)] = v;
                    if symmetric {
                        m[(j, i)] = v;
                    }
                    filled += 1;
                }
                if filled == total {
                    break;
                }
            }
            if filled != total {
                return Err(parse_err(size_line, format!("expected {total} values, found {filled}")));
            }
        }
    }
    if let Some((n, _)) = data.next() {
        return Err(parse_err(n, "trailing data after the declared entries".into()));
    }
    Ok(m)
}

/// Writes samples as headerless CSV, one row per sample.
pub fn write_samples_csv(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    let mut record: Vec<String> = Vec::with_capacity(x.ncols());
    for row in x.row_iter() {
        record.clear();
        record.extend(row.iter().map(|v| format!("{v:e}")));
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 1;
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("expected {w} columns, found {}", rec.len()),
                })
            }
            _ => {}
        }
        for field in rec.iter() {
            values.push(field.parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad value `{field}`: {e}"),
            })?);
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_samples_bin(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let mut out = create(path)?;
    let body = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(SAMPLE_MAGIC)?;
        out.write_all(&(x.ncols() as u64).to_le_bytes())?;
        out.write_all(&(x.nrows() as u64).to_le_bytes())?;
        for row in x.row_iter() {
            for v in row.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    };
    body(&mut out).map_err(|e| Error::io(path, e))?;
    finish(out, path)
}

pub fn read_samples_bin(path: &Path) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.to_string(),
    };
    if bytes.len() < 24 || &bytes[..8] != SAMPLE_MAGIC {
        return Err(bad("missing sample-file magic"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let p = word(8) as usize;
    let n = word(16) as usize;
    let expected = n
        .checked_mul(p)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(24))
        .ok_or_else(|| bad("declared size overflows"))?;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "expected {expected} bytes for n = {n}, p = {p}, found {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(n, p, &values))
}

/// Reads samples, choosing the format from the magic bytes.
pub fn read_samples(path: &Path) -> Result<DMatrix<f64>> {
    let mut head = [0u8; 8];
    let is_bin = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?
        == 8
        && &head == SAMPLE_MAGIC;
    if is_bin {
        read_samples_bin(path)
    } else {
        read_samples_csv(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(out, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}
