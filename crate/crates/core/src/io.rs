//! Matrix file formats.
//!
//! Text: CSV or TSV, rows = variables, columns = samples, with an optional
//! header row and an optional leading row-name column (both auto-detected
//! unless forced through [`TextOptions`]).
//!
//! Binary: magic `CDPM`, `u32` rows, `u32` cols (little endian), followed by
//! `rows * cols` little-endian `f64` values in column-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::cdpa::PatternDecomposition;
use crate::dcca::SourceDecomposition;
use crate::error::{CdpaError, Result};
use crate::scalar::Scalar;

pub const BINARY_MAGIC: &[u8; 4] = b"CDPM";

/// Overrides for text parsing. `None` means auto-detect.
#[derive(Debug, Clone, Copy, Default)]
pub struct TextOptions {
    pub delimiter: Option<u8>,
    pub header: Option<bool>,
    pub row_names: Option<bool>,
}

/// Reads a matrix, choosing the binary reader when the file starts with the magic.
pub fn read_matrix<T: Scalar>(path: impl AsRef<Path>) -> Result<DMatrix<T>> {
    read_matrix_with(path, TextOptions::default())
}

pub fn read_matrix_with<T: Scalar>(path: impl AsRef<Path>, opts: TextOptions) -> Result<DMatrix<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let m = if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(&bytes)?
    } else {
        let delimiter = opts.delimiter.unwrap_or_else(|| sniff_delimiter(path, &bytes));
        parse_text(&bytes, delimiter, opts)?
    };
    Ok(m.map(T::lit))
}

fn sniff_delimiter(path: &Path, bytes: &[u8]) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("tsv") || e.eq_ignore_ascii_case("tab") => b'\t',
        Some(e) if e.eq_ignore_ascii_case("csv") => b',',
        _ => {
            let first = bytes.split(|&b| b == b'\n').next().unwrap_or(&[]);
            if first.contains(&b'\t') {
                b'\t'
            } else {
                b','
            }
        }
    }
}

fn parse_text(bytes: &[u8], delimiter: u8, opts: TextOptions) -> Result<DMatrix<f64>> {
    let mut reader =
        csv::ReaderBuilder::new().delimiter(delimiter).has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(bytes);

    let mut records: Vec<(usize, Vec<String>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CdpaError::Parse { line: e.position().map_or(0, |p| p.line() as usize), message: e.to_string() })?;
        let line = rec.position().map_or(records.len() + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        records.push((line, rec.iter().map(str::to_owned).collect()));
    }
    if records.is_empty() {
        return Err(CdpaError::Parse { line: 1, message: "no data rows".into() });
    }

    let numeric = |s: &str| s.parse::<f64>().is_ok();
    let header = opts.header.unwrap_or_else(|| {
        let first = &records[0].1;
        let skip = usize::from(first.len() > 1);
        // a header is a first row with a non-numeric field past the name column
        first.iter().skip(skip).any(|f| !numeric(f)) || (records.len() > 1 && first.iter().all(|f| !numeric(f)))
    });
    let data = if header { &records[1..] } else { &records[..] };
    if data.is_empty() {
        return Err(CdpaError::Parse { line: records[0].0, message: "header without data rows".into() });
    }
    let row_names = opts.row_names.unwrap_or_else(|| !numeric(&data[0].1[0]));
    let offset = usize::from(row_names);

    let ncols = data[0].1.len().saturating_sub(offset);
    if ncols == 0 {
        return Err(CdpaError::Parse { line: data[0].0, message: "row has no numeric columns".into() });
    }
    let nrows = data.len();
    let mut m = DMatrix::<f64>::zeros(nrows, ncols);
    for (i, (line, fields)) in data.iter().enumerate() {
        if fields.len() != ncols + offset {
            return Err(CdpaError::Parse { line: *line, message: format!("expected {} fields, found {}", ncols + offset, fields.len()) });
        }
        for (j, f) in fields[offset..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| CdpaError::Parse {
                line: *line,
                message: format!("column {}: cannot parse {f:?} as a number", j + 1 + offset),
            })?;
            if !v.is_finite() {
                return Err(CdpaError::Parse { line: *line, message: format!("column {}: non-finite value", j + 1 + offset) });
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn decode_binary(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 12 {
        return Err(CdpaError::Parse { line: 0, message: "binary header truncated".into() });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = 12 + rows * cols * 8;
    if bytes.len() != expected {
        return Err(CdpaError::Parse {
            line: 0,
            message: format!("binary payload is {} bytes, expected {expected} for {rows}x{cols}", bytes.len()),
        });
    }
    let values = bytes[12..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect::<Vec<_>>();
    Ok(DMatrix::from_vec(rows, cols, values))
}

/// Writes the binary format.
pub fn write_matrix_binary<T: Scalar>(path: impl AsRef<Path>, m: &DMatrix<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_binary(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn encode_binary<T: Scalar, W: Write>(w: &mut W, m: &DMatrix<T>) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| CdpaError::BadDimensions("too many rows".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| CdpaError::BadDimensions("too many columns".into()))?;
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    // DMatrix storage is already column-major
    for &x in m.as_slice() {
        w.write_all(&x.as_f64().to_le_bytes())?;
    }
    Ok(())
}

/// Reads the binary format only.
pub fn read_matrix_binary<T: Scalar>(path: impl AsRef<Path>) -> Result<DMatrix<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if !bytes.starts_with(BINARY_MAGIC) {
        return Err(CdpaError::Parse { line: 0, message: "missing CDPM magic".into() });
    }
    Ok(decode_binary(&bytes)?.map(T::lit))
}

/// Writes a headerless delimited text matrix.
pub fn write_matrix_text<T: Scalar>(path: impl AsRef<Path>, m: &DMatrix<T>, delimiter: u8) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let sep = delimiter as char;
    for i in 0..m.nrows() {
        let line = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)].as_f64())).collect::<Vec<_>>().join(&sep.to_string());
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// File names of the matrices written by [`write_decomposition`], in order.
pub const DECOMPOSITION_FILES: [&str; 11] = [
    "c.bin",
    "c_scaled1.bin",
    "c_scaled2.bin",
    "delta1.bin",
    "delta2.bin",
    "h1.bin",
    "h2.bin",
    "common_source1.bin",
    "common_source2.bin",
    "distinctive_source1.bin",
    "distinctive_source2.bin",
];

/// Writes `Ĉ`, `Ĉ^(k)`, `Δ̂_k`, `Ĥ_k` and the unaligned D-CCA sources `Ĉ_k`, `D̂_k`
/// into `dir` in the binary format. Returns the written paths.
pub fn write_decomposition<T: Scalar>(
    dir: impl AsRef<Path>,
    decomposition: &PatternDecomposition<T>,
    sources: &[SourceDecomposition<T>; 2],
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let d = decomposition;
    let mats = [
        &d.c,
        &d.c_scaled[0],
        &d.c_scaled[1],
        &d.delta[0],
        &d.delta[1],
        &d.h[0],
        &d.h[1],
        &sources[0].c_k,
        &sources[1].c_k,
        &sources[0].d_k,
        &sources[1].d_k,
    ];
    let mut paths = Vec::with_capacity(mats.len());
    for (name, m) in DECOMPOSITION_FILES.iter().zip(mats) {
        let path = dir.join(name);
        write_matrix_binary(&path, m)?;
        paths.push(path);
    }
    Ok(paths)
}
