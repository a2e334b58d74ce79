//! Dataset files.
//!
//! CSV: header `label,f0,f1,…`, one row per sample, floats in shortest
//! round-trip decimal form.
//!
//! Binary (little-endian throughout):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `MNDS`                              |
//! | 4     | format version, `u32` = 1                 |
//! | 8     | feature width `w`, `u64`                  |
//! | 8     | row count `n`, `u64`                      |
//! | 8·n·(w+1) | per row: label as `f64`, then `w` features as `f64` |

use std::io::{Read, Write};
use std::path::Path;

use crate::diffcore::DenseTensor;
use crate::error::{Error, Result};

use super::dataset::LabeledDataset;

const MAGIC: &[u8; 4] = b"MNDS";
const VERSION: u32 = 1;

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn write_csv<W: Write>(ds: &LabeledDataset<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.width()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_error)?;
    for (r, &y) in ds.labels().iter().enumerate() {
        let mut rec = vec![y.to_string()];
        rec.extend(ds.features().row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<LabeledDataset<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Format("empty dataset file: missing `label,f0,…` header".into()));
    }
    if &header[0] != "label" {
        return Err(Error::Parse {
            line: 1,
            message: format!("first column must be `label`, found `{}`", &header[0]),
        });
    }
    let width = header.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", width + 1, rec.len()),
            });
        }
        let y: usize = rec[0].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("label `{}` is not a non-negative integer", &rec[0]),
        })?;
        labels.push(y);
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("feature `{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("feature `{field}` is not finite"),
                });
            }
            data.push(v);
        }
    }
    LabeledDataset::new(DenseTensor::new(vec![labels.len(), width], data)?, labels)
}

pub fn save_dataset(ds: &LabeledDataset<f64>, path: &Path) -> Result<()> {
    write_csv(ds, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset<f64>> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_binary<W: Write>(ds: &LabeledDataset<f64>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(ds.width() as u64).to_le_bytes())?;
    out.write_all(&(ds.len() as u64).to_le_bytes())?;
    for (r, &y) in ds.labels().iter().enumerate() {
        out.write_all(&(y as f64).to_le_bytes())?;
        for v in ds.features().row(r) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    input
        .read_exact(&mut b)
        .map_err(|_| Error::Format("truncated binary header".into()))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_binary<R: Read>(mut input: R) -> Result<LabeledDataset<f64>> {
    let mut head = [0u8; 8];
    input
        .read_exact(&mut head)
        .map_err(|_| Error::Format("file too short for a binary dataset".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(head[4..].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported binary version {version}")));
    }
    let width = read_u64(&mut input)? as usize;
    let rows = read_u64(&mut input)? as usize;
    let mut labels = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * width);
    let mut b = [0u8; 8];
    for r in 0..rows {
        for j in 0..=width {
            input
                .read_exact(&mut b)
                .map_err(|_| Error::Format(format!("truncated at row {r}")))?;
            let v = f64::from_le_bytes(b);
            if j == 0 {
                if !(v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64) {
                    return Err(Error::Format(format!("row {r} has invalid label {v}")));
                }
                labels.push(v as usize);
            } else {
                data.push(v);
            }
        }
    }
    LabeledDataset::new(DenseTensor::new(vec![rows, width], data)?, labels)
}
