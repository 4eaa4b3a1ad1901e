//! Matrix files.
//!
//! Dense matrices are header-free CSV, one matrix row per line. Sparse matrices
//! are MatrixMarket coordinate files (`.mtx`); `symmetric` storage is expanded.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use nalgebra_sparse::io::{load_coo_from_matrix_market_file, save_to_matrix_market_file};
use nalgebra_sparse::CooMatrix;

use crate::error::{Error, Result};
use crate::operator::{CsrMatrix, DataMatrix, DenseOperator, SparseOperator, SymOperator};

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFile {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

impl MatrixFile {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixFile::Dense(m) => m.shape(),
            MatrixFile::Sparse(m) => (m.nrows(), m.ncols()),
        }
    }
}

pub fn is_matrix_market(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

pub fn read_dense_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        match ncols {
            None => ncols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::Parse(format!(
                    "{}: row {} has {} fields, expected {c}",
                    path.display(),
                    line + 1,
                    rec.len()
                )))
            }
            _ => {}
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("{}: row {}: bad number {field:?}", path.display(), line + 1)))?;
            data.push(v);
        }
        nrows += 1;
    }
    let ncols = ncols.ok_or_else(|| Error::Parse(format!("{}: empty matrix", path.display())))?;
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

pub fn write_dense_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(File::create(path)?));
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| format!("{v:e}"))).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_market(path: &Path) -> Result<CsrMatrix> {
    let coo: CooMatrix<f64> = load_coo_from_matrix_market_file(path).map_err(|e| {
        if !path.exists() {
            Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, path.display().to_string()))
        } else {
            Error::Parse(format!("{}: {e}", path.display()))
        }
    })?;
    let triplets: Vec<_> = coo.triplet_iter().map(|(r, c, &v)| (r, c, v)).collect();
    CsrMatrix::from_triplets(coo.nrows(), coo.ncols(), &triplets)
}

pub fn write_matrix_market(path: &Path, m: &CsrMatrix) -> Result<()> {
    let mut coo = CooMatrix::new(m.nrows(), m.ncols());
    for (r, c, v) in m.triplets() {
        coo.push(r, c, v);
    }
    save_to_matrix_market_file(&coo, path).map_err(Error::Io)
}

/// Reads either format, chosen by extension.
pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    if is_matrix_market(path) {
        read_matrix_market(path).map(MatrixFile::Sparse)
    } else {
        read_dense_csv(path).map(MatrixFile::Dense)
    }
}

/// Writes `m` in the format implied by the extension.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if is_matrix_market(path) {
        write_matrix_market(path, &CsrMatrix::from_dense(m))
    } else {
        write_dense_csv(path, m)
    }
}

/// A symmetric operator stored in a file.
pub fn read_operator(path: &Path) -> Result<Arc<dyn SymOperator>> {
    Ok(match read_matrix(path)? {
        MatrixFile::Dense(m) => Arc::new(DenseOperator::new(m)?),
        MatrixFile::Sparse(m) => Arc::new(SparseOperator::new(m)?),
    })
}

/// A samples-by-features data matrix stored in a file.
pub fn read_data(path: &Path) -> Result<DataMatrix> {
    Ok(match read_matrix(path)? {
        MatrixFile::Dense(m) => DataMatrix::dense(&m),
        MatrixFile::Sparse(m) => DataMatrix::sparse(m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn dense_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.0, 0.1, 1e-17, 6.0]);
        write_dense_csv(&p, &m).unwrap();
        assert_eq!(read_dense_csv(&p).unwrap(), m);
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 2);
    }

    #[test]
    fn dense_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(read_dense_csv(&p), Err(Error::Parse(_))));
        std::fs::write(&p, "1,x\n").unwrap();
        assert!(matches!(read_dense_csv(&p), Err(Error::Parse(_))));
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_dense_csv(&p), Err(Error::Parse(_))));
        assert!(matches!(read_dense_csv(&dir.path().join("missing.csv")), Err(Error::Io(_))));
    }

    #[test]
    fn matrix_market_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mtx");
        let m = CsrMatrix::from_triplets(3, 2, &[(0, 1, 2.0), (2, 0, -1.5)]).unwrap();
        write_matrix_market(&p, &m).unwrap();
        assert_eq!(read_matrix_market(&p).unwrap(), m);
        assert!(matches!(read_matrix(&p).unwrap(), MatrixFile::Sparse(_)));
    }

    #[test]
    fn matrix_market_symmetric_is_expanded() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.mtx");
        let mut f = File::create(&p).unwrap();
        writeln!(f, "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 4.0\n2 1 1.0").unwrap();
        drop(f);
        let dense = read_matrix_market(&p).unwrap().to_dense();
        assert_eq!(dense, DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 0.0]));
        let op = read_operator(&p).unwrap();
        assert_eq!(op.dim(), 2);
        std::fs::write(&p, "not a matrix").unwrap();
        assert!(matches!(read_matrix_market(&p), Err(Error::Parse(_))));
    }
}
