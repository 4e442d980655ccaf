//! CSV input for sample matrices and labels.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::covsource::DataMatrix;
use crate::error::{PcsError, Result};

fn is_numeric_record(record: &csv::StringRecord) -> bool {
    record.iter().all(|f| f.trim().parse::<f64>().is_ok())
}

/// Reads samples (one per line, `p` numeric fields). A first line that does
/// not parse as numbers is treated as a header.
pub fn read_data_csv(reader: impl Read) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if line == 0 && !is_numeric_record(&record) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, f)| {
                f.parse::<f64>().map_err(|_| {
                    PcsError::InvalidInput(format!(
                        "line {}, field {}: {f:?} is not a number",
                        line + 1,
                        col + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    DataMatrix::from_rows(&rows)
}

pub fn read_data_file(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| PcsError::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    read_data_csv(BufReader::new(file))
}

/// Reads a single-column label file over {-1, 1} or {0, 1} (0 maps to -1).
/// An optional non-numeric header line is skipped.
pub fn read_labels(reader: impl BufRead) -> Result<Vec<i8>> {
    let mut labels = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        let value = match field.parse::<f64>() {
            Ok(v) => v,
            Err(_) if k == 0 => continue,
            Err(_) => {
                return Err(PcsError::InvalidInput(format!(
                    "label line {}: {field:?} is not a number",
                    k + 1
                )))
            }
        };
        labels.push(match value {
            1.0 => 1,
            v if v == 0.0 || v == -1.0 => -1,
            _ => {
                return Err(PcsError::InvalidInput(format!(
                    "label line {}: {field} is not one of -1, 0, 1",
                    k + 1
                )))
            }
        });
    }
    Ok(labels)
}

pub fn read_labels_file(path: impl AsRef<Path>) -> Result<Vec<i8>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| PcsError::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    read_labels(BufReader::new(file))
}

pub fn write_labels(w: &mut impl Write, labels: &[i8]) -> Result<()> {
    for y in labels {
        writeln!(w, "{y}")?;
    }
    Ok(())
}

/// Writes samples as headerless CSV with shortest round-trip decimals.
pub fn write_data_csv(w: &mut impl Write, data: &DataMatrix) -> Result<()> {
    for i in 0..data.n() {
        let line: Vec<String> = data.sample(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
