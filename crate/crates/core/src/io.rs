use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CssError, Result};
use crate::evolve::DiagRow;
use crate::gauge::GaugePotentials;
use crate::grid::{build_grid, Field};
use crate::virial::VirialRow;

/// Shape companion for a field CSV, stored next to the data as `<stem>.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldHeader {
    pub m: u32,
    pub n: usize,
    pub r_max: f64,
}

/// Fixed-width scientific notation; round-trips f64 exactly, so identical
/// inputs give byte-identical files.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = serde_json::to_string_pretty(value)?;
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

/// Writes `<stem>.csv` with columns r, re_u, im_u (plus a_theta, a_zero when
/// potentials are supplied) and the shape header `<stem>.json`. Returns the
/// CSV path.
pub fn write_field(stem: &Path, f: &Field, pots: Option<&GaugePotentials>) -> Result<PathBuf> {
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let csv_path = stem.with_extension("csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    match pots {
        Some(p) => {
            writeln!(w, "r,re_u,im_u,a_theta,a_zero")?;
            for j in 0..f.n() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    fmt_f64(f.grid.r[j]),
                    fmt_f64(f.u[j].re),
                    fmt_f64(f.u[j].im),
                    fmt_f64(p.a_theta[j]),
                    fmt_f64(p.a_zero[j])
                )?;
            }
        }
        None => {
            writeln!(w, "r,re_u,im_u")?;
            for j in 0..f.n() {
                writeln!(
                    w,
                    "{},{},{}",
                    fmt_f64(f.grid.r[j]),
                    fmt_f64(f.u[j].re),
                    fmt_f64(f.u[j].im)
                )?;
            }
        }
    }
    w.flush()?;
    write_json(
        &stem.with_extension("json"),
        &FieldHeader { m: f.m, n: f.n(), r_max: f.grid.r_max },
    )?;
    Ok(csv_path)
}

/// Reads a field written by `write_field`: the CSV plus its `<stem>.json`
/// shape header. The r column must match the reconstructed lattice.
pub fn read_field(csv_path: &Path) -> Result<Field> {
    let header_path = csv_path.with_extension("json");
    let header: FieldHeader = serde_json::from_str(&fs::read_to_string(&header_path).map_err(
        |e| CssError::Config(format!("missing field header {}: {e}", header_path.display())),
    )?)?;
    let grid = build_grid(header.r_max, header.n)?;
    let file = File::open(csv_path)?;
    let mut u = Vec::with_capacity(header.n);
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if k == 0 {
            continue;
        }
        let mut cols = line.split(',');
        let mut next = |name: &str| -> Result<f64> {
            cols.next()
                .ok_or_else(|| CssError::Config(format!("row {k}: missing column {name}")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| CssError::Config(format!("row {k}: bad {name}: {e}")))
        };
        let r = next("r")?;
        let re = next("re_u")?;
        let im = next("im_u")?;
        let j = u.len();
        if j >= header.n {
            return Err(CssError::Config(format!(
                "field CSV has more rows than the declared n = {}",
                header.n
            )));
        }
        if (r - grid.r[j]).abs() > 1e-9 * grid.h.max(1.0) {
            return Err(CssError::Config(format!(
                "row {k}: r = {r} does not sit on the declared lattice (expected {})",
                grid.r[j]
            )));
        }
        u.push(Complex64::new(re, im));
    }
    if u.len() != header.n {
        return Err(CssError::Config(format!(
            "field CSV has {} rows, header declares n = {}",
            u.len(),
            header.n
        )));
    }
    Field::new(header.m, &grid, u)
}

pub fn write_diagnostics(path: &Path, rows: &[DiagRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,charge,energy,h1m,l4")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.charge),
            fmt_f64(r.energy),
            fmt_f64(r.h1m),
            fmt_f64(r.l4)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_virial_series(path: &Path, rows: &[VirialRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,v,dv_fd,rate,sixteen_e")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.v),
            fmt_f64(r.dv_fd),
            fmt_f64(r.rate),
            fmt_f64(r.sixteen_e)
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::potentials;
    use crate::soliton::soliton;

    #[test]
    fn field_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let grid = build_grid(25.0, 512).unwrap();
        let q = soliton(1, &grid);
        let stem = dir.path().join("field");
        let csv = write_field(&stem, &q, Some(&potentials(&q))).unwrap();
        let back = read_field(&csv).unwrap();
        assert_eq!(back.m, 1);
        assert_eq!(back.n(), 512);
        for j in 0..512 {
            assert_eq!(back.u[j], q.u[j]);
        }
    }

    #[test]
    fn identical_fields_write_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let grid = build_grid(10.0, 64).unwrap();
        let q = soliton(0, &grid);
        let a = write_field(&dir.path().join("a"), &q, None).unwrap();
        let b = write_field(&dir.path().join("b"), &q, None).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn reader_rejects_off_lattice_rows() {
        let dir = tempfile::tempdir().unwrap();
        let grid = build_grid(16.0, 16).unwrap();
        let q = soliton(0, &grid);
        let csv = write_field(&dir.path().join("bad"), &q, None).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let shifted = text.replacen("5.", "6.", 1);
        assert_ne!(text, shifted);
        std::fs::write(&csv, shifted).unwrap();
        match read_field(&csv) {
            Err(CssError::Config(msg)) => assert!(msg.contains("lattice")),
            other => panic!("expected a lattice mismatch, got {other:?}"),
        }
    }
}
