//! CSV artifacts and atomic file output.
//!
//! Floats are written with 17 significant digits so that every value
//! survives a round trip.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{KlError, Result};
use crate::hermitian::HermitianMatrix;
use crate::linalg::{c, CMatrix};
use crate::solver::{IterationRecord, SpectrumRow};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| KlError::Io(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| KlError::Io(format!("{}: {e}", tmp.display())))?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| KlError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// One row per entry: `i,j,re,im`.
pub fn matrix_csv(m: &HermitianMatrix) -> String {
    let mut out = String::from("i,j,re,im\n");
    let a = m.matrix();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let z = a[(i, j)];
            let _ = writeln!(out, "{i},{j},{},{}", fmt_f64(z.re), fmt_f64(z.im));
        }
    }
    out
}

/// Inverse of [`matrix_csv`]. Every entry of the square matrix must appear
/// exactly once.
pub fn parse_matrix_csv(text: &str) -> Result<HermitianMatrix> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with('i')) {
            continue;
        }
        let bad = |what: &str| KlError::InvalidConfig(format!("line {}: {what}: `{line}`", lineno + 1));
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 columns i,j,re,im"));
        }
        let i: usize = cols[0].parse().map_err(|_| bad("bad row index"))?;
        let j: usize = cols[1].parse().map_err(|_| bad("bad column index"))?;
        let re: f64 = cols[2].parse().map_err(|_| bad("bad real part"))?;
        let im: f64 = cols[3].parse().map_err(|_| bad("bad imaginary part"))?;
        entries.push((i, j, c(re, im)));
    }
    let n = (entries.len() as f64).sqrt() as usize;
    if n == 0 || n * n != entries.len() {
        return Err(KlError::InvalidConfig(format!(
            "{} entries do not form a square matrix",
            entries.len()
        )));
    }
    let mut m = CMatrix::zeros(n, n);
    let mut seen = vec![false; n * n];
    for (i, j, z) in entries {
        if i >= n || j >= n || seen[i * n + j] {
            return Err(KlError::InvalidConfig(format!("entry ({i}, {j}) out of range or repeated")));
        }
        seen[i * n + j] = true;
        m[(i, j)] = z;
    }
    HermitianMatrix::new(m)
}

pub fn iterations_csv(log: &[IterationRecord]) -> String {
    let mut out = String::from("k,fp_gap,residual,dual_value,min_glg,min_eig\n");
    for (k, r) in log.iter().enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{}",
            fmt_f64(r.fp_gap),
            fmt_f64(r.residual),
            fmt_f64(r.dual_value),
            fmt_f64(r.min_glg),
            fmt_f64(r.min_eigenvalue)
        );
    }
    out
}

pub fn spectrum_csv(rows: &[SpectrumRow]) -> String {
    let mut out = String::from("theta,psi,phi_hat,g_lambda_g\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(r.theta),
            fmt_f64(r.psi),
            fmt_f64(r.phi_hat),
            fmt_f64(r.g_lambda_g)
        );
    }
    out
}

pub fn eigenvalue_csv(values: &[num_complex::Complex64], classes: &[&str]) -> String {
    let mut out = String::from("re_lambda,im_lambda,classified\n");
    for (z, class) in values.iter().zip(classes) {
        let _ = writeln!(out, "{},{},{class}", fmt_f64(z.re), fmt_f64(z.im));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[c(0.1, 0.0), c(1.0 / 3.0, -2e-17), c(1.0 / 3.0, 2e-17), c(std::f64::consts::PI, 0.0)],
        );
        let h = HermitianMatrix::new(m).unwrap();
        let back = parse_matrix_csv(&matrix_csv(&h)).unwrap();
        assert_eq!(back.matrix(), h.matrix());
    }

    #[test]
    fn rejects_incomplete_matrix() {
        assert!(parse_matrix_csv("i,j,re,im\n0,0,1,0\n0,1,0,0\n").is_err());
        assert!(parse_matrix_csv("i,j,re,im\n0,0,1,0\n0,0,1,0\n1,0,0,0\n1,1,1,0\n").is_err());
        assert!(parse_matrix_csv("0,0,x,0\n").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
