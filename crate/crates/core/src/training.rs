//! Training samples and their on-disk formats.
//!
//! Samples are stored as the columns of a `d × M` matrix. Two formats are
//! supported: CSV with one sample per row, and the `SBTS` binary dump
//! (8-byte header `"SBTS"`, `u16` dimension, `u16` reserved, followed by the
//! column-major `f64` payload, little-endian).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

const SBTS_MAGIC: &[u8; 4] = b"SBTS";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    data: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("training set needs d >= 1 and M >= 1"));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry in sample {}",
                k / data.nrows()
            )));
        }
        Ok(Self { data })
    }

    /// Builds a training set from row-major samples.
    pub fn from_samples<S: AsRef<[f64]>>(samples: &[S]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("no samples"))?;
        let d = first.as_ref().len();
        let mut data = DMatrix::zeros(d, samples.len());
        for (j, s) in samples.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: s.len(),
                });
            }
            data.column_mut(j).copy_from_slice(s);
        }
        Self::new(data)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn sample(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.column(i)
    }

    /// Contiguous slice of sample `i`.
    pub fn sample_slice(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data.as_slice()[i * d..(i + 1) * d]
    }

    /// Componentwise minimum and maximum over all samples.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        let lo = DVector::from_iterator(self.dim(), self.data.row_iter().map(|r| r.min()));
        let hi = DVector::from_iterator(self.dim(), self.data.row_iter().map(|r| r.max()));
        (lo, hi)
    }

    /// Keeps only the listed coordinates, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.dim() {
                return Err(Error::IndexOutOfRange {
                    index: r,
                    count: self.dim(),
                });
            }
        }
        Self::new(self.data.select_rows(rows))
    }

    pub fn read_csv(path: impl AsRef<Path>, header: bool) -> Result<Self> {
        Self::read_csv_from(File::open(path)?, header)
    }

    pub fn read_csv_from<R: Read>(reader: R, header: bool) -> Result<Self> {
        let samples = read_csv_rows(reader, header)?;
        Self::from_samples(&samples)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_csv_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        write_matrix_csv(writer, &self.data, None)
    }

    pub fn read_sbts(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_sbts_from(BufReader::new(File::open(path)?))
    }

    pub fn read_sbts_from<R: Read>(mut reader: R) -> Result<Self> {
        let mut header = [0u8; 8];
        reader.read_exact(&mut header)?;
        if &header[..4] != SBTS_MAGIC {
            return Err(Error::Format {
                format: "SBTS",
                reason: "bad magic".into(),
            });
        }
        let d = u16::from_le_bytes([header[4], header[5]]) as usize;
        if d == 0 {
            return Err(Error::Format {
                format: "SBTS",
                reason: "zero dimension".into(),
            });
        }
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        if payload.len() % (8 * d) != 0 {
            return Err(Error::Format {
                format: "SBTS",
                reason: format!("payload of {} bytes is not a whole number of samples", payload.len()),
            });
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let m = values.len() / d;
        Self::new(DMatrix::from_vec(d, m, values))
    }

    pub fn write_sbts(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_sbts_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_sbts_to<W: Write>(&self, mut writer: W) -> Result<()> {
        let d = u16::try_from(self.dim()).map_err(|_| Error::Format {
            format: "SBTS",
            reason: "dimension exceeds u16".into(),
        })?;
        writer.write_all(SBTS_MAGIC)?;
        writer.write_all(&d.to_le_bytes())?;
        writer.write_all(&0u16.to_le_bytes())?;
        for v in self.data.iter() {
            writer.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Loads CSV or SBTS depending on the file extension (`.sbts` is binary).
    pub fn load(path: impl AsRef<Path>, header: bool) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("sbts") => Self::read_sbts(path),
            _ => Self::read_csv(path, header),
        }
    }
}

pub fn read_csv_rows<R: Read>(reader: R, header: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|e| Error::Format {
                    format: "CSV",
                    reason: format!("record {}: {field:?}: {e}", line + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes the columns of `data` as CSV rows. When `time` is given its
/// entries form a leading column.
pub fn write_matrix_csv<W: Write>(
    writer: W,
    data: &DMatrix<f64>,
    time: Option<(&str, &[f64])>,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    if let Some((name, _)) = time {
        let mut head = vec![name.to_string()];
        head.extend((0..data.nrows()).map(|k| format!("x{}", k + 1)));
        wtr.write_record(&head)?;
    }
    let mut fields = Vec::with_capacity(data.nrows() + 1);
    for (j, col) in data.column_iter().enumerate() {
        fields.clear();
        if let Some((_, t)) = time {
            fields.push(t[j].to_string());
        }
        fields.extend(col.iter().map(|v| v.to_string()));
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_flag_skips_first_line() {
        let text = "a,b\n1.5,2\n-3,4e-3\n";
        let ts = TrainingSet::read_csv_from(text.as_bytes(), true).unwrap();
        assert_eq!(ts.dim(), 2);
        assert_eq!(ts.count(), 2);
        assert_eq!(ts.sample_slice(1), &[-3.0, 4e-3]);
        assert!(TrainingSet::read_csv_from(text.as_bytes(), false).is_err());
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let text = "1,2\n3\n";
        assert!(TrainingSet::read_csv_from(text.as_bytes(), false).is_err());
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        assert!(TrainingSet::from_samples(&[[1.0, f64::NAN]]).is_err());
        assert!(TrainingSet::new(DMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn sbts_header_layout() {
        let ts = TrainingSet::from_samples(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let mut buf = Vec::new();
        ts.write_sbts_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SBTS");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 3);
        assert_eq!(buf.len(), 8 + 6 * 8);
        // column-major: second value in the payload is x^(1)_2
        assert_eq!(f64::from_le_bytes(buf[16..24].try_into().unwrap()), 2.0);
        let back = TrainingSet::read_sbts_from(buf.as_slice()).unwrap();
        assert_eq!(back, ts);
    }

    #[test]
    fn sbts_rejects_truncated_payload() {
        let mut buf = b"SBTS".to_vec();
        buf.extend_from_slice(&2u16.to_le_bytes());
        buf.extend_from_slice(&0u16.to_le_bytes());
        buf.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(TrainingSet::read_sbts_from(buf.as_slice()).is_err());
    }

    #[test]
    fn bounding_box_is_componentwise() {
        let ts = TrainingSet::from_samples(&[[0.0, 5.0], [2.0, -1.0], [1.0, 3.0]]).unwrap();
        let (lo, hi) = ts.bounding_box();
        assert_eq!(lo.as_slice(), &[0.0, -1.0]);
        assert_eq!(hi.as_slice(), &[2.0, 5.0]);
    }
}
