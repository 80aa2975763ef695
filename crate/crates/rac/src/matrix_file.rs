//! Indicator matrices as CSV: a header `algorithm,<indicator>,...` and one
//! row per algorithm.

use std::path::Path;

use rac_core::evalmodel::{EvalError, IndicatorMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatrixFileError {
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {value:?} is not a number")]
    NotNumber { line: u64, value: String },
    #[error("header needs an `algorithm` column followed by at least one indicator")]
    Header,
    #[error(transparent)]
    Matrix(#[from] EvalError),
}

pub fn read_matrix(r: impl std::io::Read) -> Result<IndicatorMatrix, MatrixFileError> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let header = rd.headers()?.clone();
    if header.len() < 2 || header.get(0) != Some("algorithm") {
        return Err(MatrixFileError::Header);
    }
    let (mut names, mut values) = (Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        names.push(rec[0].to_owned());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>().map_err(|_| MatrixFileError::NotNumber {
                    line,
                    value: v.to_owned(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        values.push(row);
    }
    let indicators = header.iter().skip(1).map(str::to_owned).collect();
    Ok(IndicatorMatrix::new(names, indicators, values)?)
}

pub fn load_matrix(path: &Path) -> Result<IndicatorMatrix, MatrixFileError> {
    read_matrix(std::fs::File::open(path).map_err(csv::Error::from)?)
}

pub fn write_matrix(m: &IndicatorMatrix, w: impl std::io::Write) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(std::iter::once("algorithm").chain(m.indicators().iter().map(String::as_str)))?;
    for (name, row) in m.algorithms().iter().zip(m.rows()) {
        wr.write_record(std::iter::once(name.clone()).chain(row.iter().map(f64::to_string)))?;
    }
    wr.flush()?;
    Ok(())
}
