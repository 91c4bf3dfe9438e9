//! Dataset, label, and model file handling.
//!
//! CSV datasets are headerless float rows. fvecs records are a 32-bit
//! little-endian dimension followed by that many 32-bit little-endian reals;
//! every record must share one dimension. Label files carry an
//! `index,label` header with noise as -1. All writes go to a temp file that
//! is renamed into place.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::dbscan::{ClusterAssignment, PointLabel};
use crate::vecspace::Dataset;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Csv,
    Fvecs,
}

impl std::str::FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(InputFormat::Csv),
            "fvecs" => Ok(InputFormat::Fvecs),
            other => Err(format!("unknown input format: {other}")),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads a dataset with stable index order equal to file order.
pub fn load_dataset(path: &Path, format: InputFormat, normalize: bool) -> Result<Dataset, CliError> {
    let rows = match format {
        InputFormat::Csv => read_csv_rows(path)?,
        InputFormat::Fvecs => read_fvecs(path)?,
    };
    let built = if normalize {
        Dataset::from_rows_normalized(&rows)
    } else {
        Dataset::from_rows(&rows)
    };
    built.map_err(|e| parse_err(path, 0, e.to_string()))
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f32>>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in trimmed.split(',') {
            let value: f32 = field.trim().parse().map_err(|_| {
                parse_err(path, line_no, format!("cannot parse '{}' as a real", field.trim()))
            })?;
            if !value.is_finite() {
                return Err(parse_err(path, line_no, "non-finite value"));
            }
            row.push(value);
        }
        if let Some(d) = dim {
            if row.len() != d {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("ragged row: {} components, expected {d}", row.len()),
                ));
            }
        } else {
            dim = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 0, "no vectors in file"));
    }
    Ok(rows)
}

/// Reads fvecs records, rejecting inconsistent dimensions, non-finite
/// values, and trailing bytes, with the failing record number.
pub fn read_fvecs(path: &Path) -> Result<Vec<Vec<f32>>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut dim: Option<usize> = None;
    let mut record = 0usize;
    loop {
        record += 1;
        let mut header = [0u8; 4];
        match reader.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(io_err(path, e)),
        }
        let d = i32::from_le_bytes(header);
        if d <= 0 {
            return Err(parse_err(path, record, format!("invalid dimension {d}")));
        }
        let d = d as usize;
        if let Some(expected) = dim {
            if d != expected {
                return Err(parse_err(
                    path,
                    record,
                    format!("dimension {d} differs from the first record's {expected}"),
                ));
            }
        } else {
            dim = Some(d);
        }
        let mut buf = vec![0u8; d * 4];
        reader.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                parse_err(path, record, "truncated record")
            } else {
                io_err(path, e)
            }
        })?;
        let row: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if row.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, record, "non-finite value"));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 0, "no vectors in file"));
    }
    Ok(rows)
}

/// Writes a dataset as fvecs; a read-back reproduces the bytes exactly.
pub fn write_fvecs(path: &Path, dataset: &Dataset) -> Result<(), CliError> {
    write_atomic(path, |w| {
        for v in dataset.iter() {
            w.write_all(&(dataset.dim() as i32).to_le_bytes())?;
            for &x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    })
}

/// Writes one `index,label` row per point under a one-line header, noise as
/// -1.
pub fn write_labels(path: &Path, assignment: &ClusterAssignment) -> Result<(), CliError> {
    write_atomic(path, |w| {
        writeln!(w, "index,label")?;
        for (i, label) in assignment.labels().iter().enumerate() {
            let value: i64 = match label {
                PointLabel::Noise => -1,
                PointLabel::Cluster(c) => i64::from(*c),
                PointLabel::Undefined => {
                    return Err(std::io::Error::other("undefined label in completed run"))
                }
            };
            writeln!(w, "{i},{value}")?;
        }
        Ok(())
    })
}

pub fn read_labels(path: &Path) -> Result<ClusterAssignment, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if line_no == 1 {
            if trimmed != "index,label" {
                return Err(parse_err(path, 1, "expected header 'index,label'"));
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let (index_s, label_s) = trimmed
            .split_once(',')
            .ok_or_else(|| parse_err(path, line_no, "expected 'index,label'"))?;
        let index: usize = index_s
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad index"))?;
        if index != labels.len() {
            return Err(parse_err(
                path,
                line_no,
                format!("indices must be consecutive from 0, got {index}"),
            ));
        }
        let value: i64 = label_s
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad label"))?;
        let label = match value {
            -1 => PointLabel::Noise,
            v if v >= 1 && v <= i64::from(u32::MAX) => PointLabel::Cluster(v as u32),
            v => return Err(parse_err(path, line_no, format!("invalid label {v}"))),
        };
        labels.push(label);
    }
    ClusterAssignment::from_labels(labels).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// One eps value per line; `#` starts a comment.
pub fn read_thresholds_file(path: &Path) -> Result<Vec<f64>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut values = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let value: f64 = trimmed
            .parse()
            .map_err(|_| parse_err(path, idx + 1, "cannot parse threshold"))?;
        values.push(value);
    }
    Ok(values)
}

/// Runs `fill` against a temp file and renames it over `path` on success.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let tmp = tmp_path(path);
    let result = (|| -> std::io::Result<()> {
        let mut writer = BufWriter::new(File::create(&tmp)?);
        fill(&mut writer)?;
        writer.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => std::fs::rename(&tmp, path).map_err(|e| io_err(path, e)),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(io_err(path, e))
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
