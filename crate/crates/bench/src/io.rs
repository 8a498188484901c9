//! CSV formats for samples, dictionaries, matrices and spectra.
//!
//! Samples and dictionary atoms are stored one per row. Complex files start
//! with the line `# field=complex` and interleave `re,im` pairs, so a
//! `K`-dimensional complex row has `2K` columns. Other lines starting with
//! `#` are comments.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use robust_scatter::numerics::{Field, Scalar};
use robust_scatter::tyler::SampleSet;

use crate::doa::MusicSpectrum;
use crate::error::{BenchError, Result};
use crate::estimators::{Matrix, Samples};

const COMPLEX_HEADER: &str = "# field=complex";
const REAL_HEADER: &str = "# field=real";

/// Parses a table of floats; rows are returned as a matrix with one row
/// per record.
pub fn parse_table(text: &str) -> Result<Matrix> {
    let field = match text.lines().map(str::trim).find(|l| !l.is_empty()) {
        Some(COMPLEX_HEADER) => Field::Complex,
        Some(l) if l.starts_with("# field=") && l != REAL_HEADER => {
            return Err(BenchError::invalid(format!("unknown field header '{l}'")));
        }
        _ => Field::Real,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| BenchError::invalid(format!("row {}: '{v}' is not a number", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || width == 0 {
        return Err(BenchError::invalid("table has no data rows"));
    }
    let n = rows.len();
    match field {
        Field::Real => Ok(Matrix::Real(DMatrix::from_fn(n, width, |i, j| rows[i][j]))),
        Field::Complex => {
            if width % 2 != 0 {
                return Err(BenchError::invalid(format!(
                    "complex rows need an even number of columns, got {width}"
                )));
            }
            Ok(Matrix::Complex(DMatrix::from_fn(n, width / 2, |i, j| {
                Complex64::new(rows[i][2 * j], rows[i][2 * j + 1])
            })))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| BenchError::io(path, e))
}

/// Reads a sample file (one sample per row).
pub fn read_samples(path: &Path) -> Result<Samples> {
    Ok(match parse_table(&read_text(path)?)? {
        Matrix::Real(rows) => Samples::Real(SampleSet::from_rows(&rows)?),
        Matrix::Complex(rows) => Samples::Complex(SampleSet::from_rows(&rows)?),
    })
}

/// Reads a dictionary file (one atom per row) and returns the atoms as
/// columns.
pub fn read_dictionary(path: &Path) -> Result<Matrix> {
    Ok(match parse_table(&read_text(path)?)? {
        Matrix::Real(rows) => Matrix::Real(rows.transpose()),
        Matrix::Complex(rows) => Matrix::Complex(rows.transpose()),
    })
}

/// Writes `m` row by row in the table format.
pub fn write_matrix<T: Scalar, W: Write>(out: W, m: &DMatrix<T>) -> Result<()> {
    write_rows(out, m, false)
}

/// Writes the columns of `m` as rows (the sample and dictionary layout).
pub fn write_columns<T: Scalar, W: Write>(out: W, m: &DMatrix<T>) -> Result<()> {
    write_rows(out, m, true)
}

fn write_rows<T: Scalar, W: Write>(mut out: W, m: &DMatrix<T>, transpose: bool) -> Result<()> {
    let complex = T::FIELD == Field::Complex;
    if complex {
        writeln!(out, "{COMPLEX_HEADER}").map_err(|e| BenchError::io("<output>", e))?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let (rows, cols) = if transpose { (m.ncols(), m.nrows()) } else { m.shape() };
    for i in 0..rows {
        let mut record = Vec::with_capacity(cols * 2);
        for j in 0..cols {
            let v = if transpose { m[(j, i)] } else { m[(i, j)] }.to_c64();
            record.push(v.re.to_string());
            if complex {
                record.push(v.im.to_string());
            }
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| BenchError::io("<output>", e))?;
    Ok(())
}

pub fn write_matrix_file<T: Scalar>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
    write_matrix(std::io::BufWriter::new(file), m)
}

/// `angle_deg,pseudospectrum` rows.
pub fn write_spectrum<W: Write>(out: W, music: &MusicSpectrum) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["angle_deg", "pseudospectrum"])?;
    for (theta, p) in music.grid.iter().zip(&music.spectrum) {
        w.write_record([theta.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| BenchError::io("<output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_table_with_comments() {
        let m = parse_table("# some comment\n1, 2, 3\n4,5,6\n").unwrap();
        let Matrix::Real(m) = m else { panic!() };
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    }

    #[test]
    fn complex_table_interleaves() {
        let m = parse_table("# field=complex\n1,2,3,4\n").unwrap();
        let Matrix::Complex(m) = m else { panic!() };
        assert_eq!(m.shape(), (1, 2));
        assert_eq!(m[(0, 1)], Complex64::new(3.0, 4.0));
        assert!(parse_table("# field=complex\n1,2,3\n").is_err());
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(parse_table("").is_err());
        assert!(parse_table("1,x\n").is_err());
        assert!(parse_table("1,2\n3\n").is_err());
        assert!(parse_table("# field=quaternion\n1\n").is_err());
    }

    #[test]
    fn matrix_roundtrip() {
        let m = DMatrix::from_fn(3, 2, |i, j| Complex64::new(i as f64 / 3.0, -(j as f64) * 1e-17));
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let Matrix::Complex(back) = parse_table(std::str::from_utf8(&buf).unwrap()).unwrap() else { panic!() };
        assert_eq!(back, m);

        let r = DMatrix::from_fn(2, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        let mut buf = Vec::new();
        write_columns(&mut buf, &r).unwrap();
        let Matrix::Real(back) = parse_table(std::str::from_utf8(&buf).unwrap()).unwrap() else { panic!() };
        assert_eq!(back, r.transpose());
    }

    #[test]
    fn sample_and_dictionary_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "1,0\n0,2\n1,1\n").unwrap();
        let Samples::Real(x) = read_samples(&path).unwrap() else { panic!() };
        assert_eq!((x.dim(), x.len()), (2, 3));
        let Matrix::Real(atoms) = read_dictionary(&path).unwrap() else { panic!() };
        assert_eq!(atoms.shape(), (2, 3));
        assert!(read_samples(&dir.path().join("missing.csv")).is_err());
        std::fs::write(&path, "0,0\n1,1\n").unwrap();
        assert!(read_samples(&path).is_err());
    }
}
