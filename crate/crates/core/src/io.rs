//! Plain-text matrix files shared by the model archives: one matrix row per
//! line, comma separated, 17 significant digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn write_matrix_to<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Parses a dense matrix. Every line must have the same number of finite
/// fields; an empty input is a 0x0 matrix.
pub fn read_matrix_from<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let fallback = i as u64 + 1;
        let rec = rec.map_err(|e| Error::parse(e.position().map_or(fallback, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(fallback, |p| p.line());
        match ncols {
            None => ncols = Some(rec.len()),
            Some(n) if n != rec.len() => {
                return Err(Error::parse(line, format!("expected {n} columns, got {}", rec.len())))
            }
            _ => {}
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(line, format!("invalid number '{field}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("non-finite value '{field}'")));
            }
            data.push(v);
        }
        nrows += 1;
    }
    let ncols = ncols.unwrap_or(0);
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

pub fn write_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_matrix_to(m, BufWriter::new(f))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix_from(BufReader::new(f))
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}
