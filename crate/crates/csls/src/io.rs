//! Matrix and label file I/O.
//!
//! Two matrix encodings are supported:
//!
//! * CSV: UTF-8, one row per line, comma-separated decimal floats, no header,
//!   LF line endings. Values are written with 17 significant digits, which
//!   round-trips any f64 exactly.
//! * Binary: magic bytes `CSLS`, version byte 0x01, u32 little-endian rows,
//!   u32 little-endian cols, then rows*cols IEEE-754 binary32 little-endian
//!   values in row-major order. Total size is 13 + 4*rows*cols bytes.
//!
//! The binary payload is 32-bit: writing demotes with round-to-nearest and
//! reading promotes, so write-then-read is the identity exactly when every
//! value is representable in binary32 (in particular, anything that came out
//! of a previous read). Values whose magnitude exceeds the binary32 range are
//! rejected at write time rather than silently becoming infinities.
//!
//! Label files are one nonnegative integer per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const BINARY_MAGIC: [u8; 4] = *b"CSLS";
pub const BINARY_VERSION: u8 = 0x01;
pub const BINARY_HEADER_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

/// Reads a matrix file. Empty matrices (zero rows or columns) are rejected
/// here: files always cross a CLI boundary.
pub fn read_matrix(path: impl AsRef<Path>, format: MatrixFormat) -> Result<Matrix> {
    let path = path.as_ref();
    match format {
        MatrixFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv_matrix(&text, path)
        }
        MatrixFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary_matrix(&bytes, path)
        }
    }
}

/// Writes a matrix file decodable by [`read_matrix`].
pub fn write_matrix(m: &Matrix, path: impl AsRef<Path>, format: MatrixFormat) -> Result<()> {
    let path = path.as_ref();
    if m.rows() == 0 {
        return Err(Error::InvalidData(
            "refusing to write an empty (0-row) matrix".into(),
        ));
    }
    let bytes = match format {
        MatrixFormat::Csv => matrix_to_csv_string(m).into_bytes(),
        MatrixFormat::Binary => encode_binary_matrix(m)?,
    };
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// CSV rendering with 17 significant digits per value.
pub fn matrix_to_csv_string(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 24);
    for row in m.rows_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

fn parse_csv_matrix(text: &str, path: &Path) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = 0usize;
    let mut rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                msg: "empty row".into(),
            });
        }
        let fields: Vec<&str> = line.split(',').collect();
        if rows == 0 {
            cols = fields.len();
        } else if fields.len() != cols {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("ragged row: expected {cols} fields, found {}", fields.len()),
            });
        }
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("not a decimal float: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("non-finite value {field:?}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: "empty matrix file".into(),
        });
    }
    Matrix::new(rows, cols, data)
}

fn encode_binary_matrix(m: &Matrix) -> Result<Vec<u8>> {
    if m.rows() > u32::MAX as usize || m.cols() > u32::MAX as usize {
        return Err(Error::InvalidData("matrix dimensions exceed u32".into()));
    }
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(&BINARY_MAGIC);
    out.push(BINARY_VERSION);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for (pos, &v) in m.data().iter().enumerate() {
        if v.abs() > f32::MAX as f64 {
            return Err(Error::InvalidData(format!(
                "value {v} at row {}, column {} exceeds the binary32 range",
                pos / m.cols(),
                pos % m.cols()
            )));
        }
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn decode_binary_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let berr = |offset: u64, msg: String| Error::Binary {
        path: path.into(),
        offset,
        msg,
    };
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(berr(
            bytes.len() as u64,
            format!("truncated header: {} of {BINARY_HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if bytes[0..4] != BINARY_MAGIC {
        return Err(berr(0, format!("bad magic {:02x?}", &bytes[0..4])));
    }
    if bytes[4] != BINARY_VERSION {
        return Err(berr(4, format!("unsupported version 0x{:02x}", bytes[4])));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(berr(5, format!("empty matrix ({rows}x{cols}) rejected")));
    }
    let expected = BINARY_HEADER_LEN as u64 + 4 * rows as u64 * cols as u64;
    if (bytes.len() as u64) < expected {
        return Err(berr(
            bytes.len() as u64,
            format!(
                "truncated file: {} of {expected} bytes for a {rows}x{cols} matrix",
                bytes.len()
            ),
        ));
    }
    if bytes.len() as u64 > expected {
        return Err(berr(
            expected,
            format!("trailing bytes: {} past expected size {expected}", bytes.len() as u64 - expected),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let off = BINARY_HEADER_LEN + 4 * i;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(berr(off as u64, format!("non-finite value {v}")));
        }
        data.push(v as f64);
    }
    Matrix::new(rows, cols, data)
}

/// Reads one nonnegative integer per line (label or count files).
pub fn read_nonneg_ints(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let v: usize = line.trim().parse().map_err(|_| Error::Parse {
            path: path.into(),
            line: lineno,
            msg: format!("not a nonnegative integer: {line:?}"),
        })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: "empty file".into(),
        });
    }
    Ok(out)
}

/// Reads one finite float per line (correction vectors).
pub fn read_float_column(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let v: f64 = line.trim().parse().map_err(|_| Error::Parse {
            path: path.into(),
            line: lineno,
            msg: format!("not a decimal float: {line:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("non-finite value {line:?}"),
            });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: "empty file".into(),
        });
    }
    Ok(out)
}
