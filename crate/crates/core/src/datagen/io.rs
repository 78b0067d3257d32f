//! CSV (`f0,…,f{d-1},label`) and big-endian IDX readers.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use super::Dataset;
use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("byte {offset}: bad header: {reason}")]
    Header { offset: u64, reason: String },

    #[error("byte {offset}: bad magic number {found:#010x}, expected {expected:#010x}")]
    Magic {
        offset: u64,
        found: u32,
        expected: u32,
    },

    #[error("byte {offset}: expected {expected} fields, found {found}")]
    RowLength {
        offset: u64,
        expected: usize,
        found: usize,
    },

    #[error("byte {offset}: invalid number {text:?}")]
    Number { offset: u64, text: String },

    #[error("byte {offset}: label {label} out of range for {num_classes} classes")]
    LabelRange {
        offset: u64,
        label: usize,
        num_classes: usize,
    },

    #[error("byte {offset}: file truncated, {needed} more bytes expected")]
    Truncated { offset: u64, needed: u64 },

    #[error("byte {offset}: {images} images but {labels} labels")]
    CountMismatch {
        offset: u64,
        images: usize,
        labels: usize,
    },
}

#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    /// Number of classes; inferred as `max label + 1` when absent.
    pub num_classes: Option<usize>,
}

fn csv_error(e: csv::Error) -> ParseError {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    ParseError::Header {
        offset,
        reason: e.to_string(),
    }
}

pub fn parse_csv(name: &str, bytes: &[u8], schema: &CsvSchema) -> Result<Dataset, ParseError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = reader.headers().map_err(csv_error)?.clone();
    let width = header.len();
    if width < 2 {
        return Err(ParseError::Header {
            offset: 0,
            reason: "need at least one feature column and a label column".into(),
        });
    }
    for (j, h) in header.iter().enumerate() {
        let expected = if j + 1 == width {
            "label".to_string()
        } else {
            format!("f{j}")
        };
        if h.trim() != expected {
            return Err(ParseError::Header {
                offset: 0,
                reason: format!("column {j} is {h:?}, expected {expected:?}"),
            });
        }
    }
    let dim = width - 1;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut offsets = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let offset = record.position().map(|p| p.byte()).unwrap_or(0);
        if record.len() != width {
            return Err(ParseError::RowLength {
                offset,
                expected: width,
                found: record.len(),
            });
        }
        for field in record.iter().take(dim) {
            let v: f64 = field.trim().parse().map_err(|_| ParseError::Number {
                offset,
                text: field.to_string(),
            })?;
            values.push(v);
        }
        let raw = &record[dim];
        let label: usize = raw.trim().parse().map_err(|_| ParseError::Number {
            offset,
            text: raw.to_string(),
        })?;
        labels.push(label);
        offsets.push(offset);
    }

    let num_classes = match schema.num_classes {
        Some(k) => {
            if let Some(i) = labels.iter().position(|&y| y >= k) {
                return Err(ParseError::LabelRange {
                    offset: offsets[i],
                    label: labels[i],
                    num_classes: k,
                });
            }
            k
        }
        None => labels.iter().max().map_or(0, |m| m + 1),
    };
    let features =
        Array2::from_shape_vec((labels.len(), dim), values).expect("row widths validated");
    Ok(Dataset {
        name: name.to_string(),
        features,
        labels,
        num_classes,
        test_ids: Vec::new(),
        image_shape: None,
    })
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(parse_csv(&name, &bytes, schema)?)
}

/// Writes every row (test rows included) in the CSV format. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_csv<W: std::io::Write>(dataset: &Dataset, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..dataset.input_dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(dataset.input_dim() + 1);
    for (row, &y) in dataset.features.rows().into_iter().zip(&dataset.labels) {
        fields.clear();
        fields.extend(row.iter().map(|v| v.to_string()));
        fields.push(y.to_string());
        w.write_record(&fields)?;
    }
    w.flush()
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        if self.bytes.len() - self.pos < n {
            return Err(ParseError::Truncated {
                offset: self.bytes.len() as u64,
                needed: (n - (self.bytes.len() - self.pos)) as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ParseError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<(), ParseError> {
        let offset = self.pos as u64;
        let found = self.u32()?;
        if found != expected {
            return Err(ParseError::Magic {
                offset,
                found,
                expected,
            });
        }
        Ok(())
    }
}

/// Parses an IDX image file (`0x00000803`, u8 pixels) and label file
/// (`0x00000801`). Pixels are scaled to [0, 1] and flattened row-major.
pub fn parse_idx(name: &str, images: &[u8], labels: &[u8]) -> Result<Dataset, ParseError> {
    let mut ci = Cursor {
        bytes: images,
        pos: 0,
    };
    ci.magic(IDX_IMAGES_MAGIC)?;
    let n = ci.u32()? as usize;
    let h = ci.u32()? as usize;
    let w = ci.u32()? as usize;
    let pixels = ci.take(n * h * w)?;

    let mut cl = Cursor {
        bytes: labels,
        pos: 0,
    };
    cl.magic(IDX_LABELS_MAGIC)?;
    let count_offset = cl.pos as u64;
    let m = cl.u32()? as usize;
    if m != n {
        return Err(ParseError::CountMismatch {
            offset: count_offset,
            images: n,
            labels: m,
        });
    }
    let ys: Vec<usize> = cl.take(m)?.iter().map(|&b| b as usize).collect();

    let features = Array2::from_shape_vec(
        (n, h * w),
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .expect("pixel count matches header");
    let num_classes = ys.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        name: name.to_string(),
        features,
        labels: ys,
        num_classes,
        test_ids: Vec::new(),
        image_shape: Some((h, w)),
    })
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let name = ip
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(parse_idx(&name, &images, &labels)?)
}
