//! Plain-text numeric persistence shared by the on-disk artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every value bit for bit.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic<P: AsRef<Path>>(path: P, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn format_rows<I, R>(rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.as_ref().iter().map(|x| format!("{x}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_rows<P, I, R>(path: P, rows: I) -> Result<()>
where
    P: AsRef<Path>,
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    write_atomic(path, format_rows(rows).as_bytes())
}

pub fn write_matrix<P: AsRef<Path>>(path: P, m: &DMatrix<f64>) -> Result<()> {
    write_rows(
        path,
        m.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()),
    )
}

pub fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("cannot parse {tok:?} as a number"),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn read_rows<P: AsRef<Path>>(path: P) -> Result<Vec<Vec<f64>>> {
    parse_rows(&std::fs::read_to_string(path)?)
}

pub fn read_matrix<P: AsRef<Path>>(path: P) -> Result<DMatrix<f64>> {
    rows_to_matrix(&read_rows(path)?)
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
