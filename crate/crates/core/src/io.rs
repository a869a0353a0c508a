//! CSV and binary serialisation of measures and trajectories.
//!
//! Floats are printed with 17 significant digits so that a value survives a
//! text round trip bit for bit.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, GridCdf};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a header line followed by rows of floats.
pub fn write_rows<W: Write>(
    mut w: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line = row.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn read_rows<R: BufRead>(r: R, expected_header: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))??;
    if header.trim() != expected_header {
        return Err(Error::Parse(format!(
            "expected header {expected_header:?}, found {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("line {}: {f:?}: {e}", lineno + 2))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

impl GridCdf {
    /// Two columns `x,F`, one row per grid node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(
            w,
            &["x", "F"],
            self.nodes().zip(self.values()).map(|(x, &f)| vec![x, f]),
        )
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let rows = read_rows(r, "x,F")?;
        if rows.len() < 2 || rows.iter().any(|r| r.len() != 2) {
            return Err(Error::Parse("grid CDF needs >= 2 rows of (x, F)".into()));
        }
        let x_min = rows[0][0];
        let x_max = rows[rows.len() - 1][0];
        GridCdf::new(x_min, x_max, rows.into_iter().map(|r| r[1]).collect())
    }
}

impl EmpiricalMeasure {
    /// One column `x` of sorted atoms.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(w, &["x"], self.points().iter().map(|&x| vec![x]))
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let rows = read_rows(r, "x")?;
        if rows.iter().any(|r| r.len() != 1) {
            return Err(Error::Parse("expected a single column".into()));
        }
        EmpiricalMeasure::new(rows.into_iter().map(|r| r[0]).collect())
    }
}

/// Little-endian `f64` dump.
pub fn write_f64_le<W: Write>(mut w: W, data: &[f64]) -> Result<()> {
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}
