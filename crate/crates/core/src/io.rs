//! JSON output at full precision and input-point readers.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::Formatter;

use crate::error::{Error, Result};

/// Compact JSON formatter that renders every double with 17 significant digits.
#[derive(Debug, Default, Clone, Copy)]
pub struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value == 0.0 {
            return writer.write_all(if value.is_sign_negative() { b"-0.0" } else { b"0.0" });
        }
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads input points from a JSON list of lists or a CSV file with one
/// point per row. A non-numeric first CSV row is treated as a header.
pub fn read_points(path: &Path) -> Result<Vec<DVector<f64>>> {
    let text = std::fs::read_to_string(path)?;
    parse_points(&text)
}

pub fn parse_points(text: &str) -> Result<Vec<DVector<f64>>> {
    let rows: Vec<Vec<f64>> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text)?
    } else {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::invalid(format!("points csv: {e}")))?;
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(Error::invalid(format!("points csv row {}: {e}", i + 1))),
            }
        }
        rows
    };
    if rows.is_empty() {
        return Err(Error::invalid("no input points"));
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.len(),
            context: "input points must share a dimension",
        });
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite input coordinate"));
    }
    Ok(rows.into_iter().map(DVector::from_vec).collect())
}
