//! On-disk formats: raw little-endian `f64` arrays with JSON sidecars, and
//! plot-ready CSV.
//!
//! A field stored at `name.f64` has its sidecar at `name.json`:
//! `{"n": 2, "N": 128, "L": 4.0, "name": "..."}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
    #[serde(rename = "L")]
    pub half_len: f64,
    pub name: String,
}

pub fn encode_raw(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_raw(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!("raw length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

/// Path of the JSON sidecar belonging to a raw file.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn write_raw(path: &Path, values: &[f64]) -> Result<()> {
    fs::write(path, encode_raw(values))?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Vec<f64>> {
    decode_raw(&fs::read(path)?)
}

/// Writes `path` (raw) and its sidecar.
pub fn save_field(path: &Path, field: &Field, name: &str) -> Result<()> {
    let g = field.grid();
    let meta = FieldSidecar { n: g.dim(), points: g.points(), half_len: g.half_len(), name: name.to_string() };
    write_raw(path, field.values())?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<(Field, FieldSidecar)> {
    let meta: FieldSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let grid = Grid::new(meta.n, meta.points, meta.half_len)?;
    let field = Field::new(grid, read_raw(path)?)?;
    Ok((field, meta))
}

/// CSV header for a field of the given dimension.
pub fn field_csv_header(dim: usize) -> &'static str {
    match dim {
        1 => "index,x,value",
        2 => "index,x,y,value",
        _ => "index,x,y,z,value",
    }
}

/// CSV with one row per grid point: index, coordinates, value. Floats use
/// the shortest round-trip representation.
pub fn field_to_csv(field: &Field) -> String {
    let g = field.grid();
    let mut out = String::with_capacity(field.values().len() * 32);
    out.push_str(field_csv_header(g.dim()));
    out.push('\n');
    for (i, v) in field.values().iter().enumerate() {
        let p = g.point(i);
        out.push_str(&i.to_string());
        for c in p.iter().take(g.dim()) {
            out.push(',');
            out.push_str(&format!("{c:?}"));
        }
        out.push(',');
        out.push_str(&format!("{v:?}"));
        out.push('\n');
    }
    out
}

/// Parses a field CSV back; the grid comes from the caller because the CSV
/// carries coordinates, not the box parameters.
pub fn field_from_csv(grid: Grid, text: &str) -> Result<Field> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty csv".into()))?;
    if header != field_csv_header(grid.dim()) {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut values = vec![0.0; grid.len()];
    let mut seen = 0usize;
    for line in lines.filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != grid.dim() + 2 {
            return Err(Error::Format(format!("bad row {line:?}")));
        }
        let idx: usize = cols[0].parse().map_err(|_| Error::Format(format!("bad index in {line:?}")))?;
        let v: f64 = cols[cols.len() - 1].parse().map_err(|_| Error::Format(format!("bad value in {line:?}")))?;
        *values.get_mut(idx).ok_or_else(|| Error::Format(format!("index {idx} out of range")))? = v;
        seen += 1;
    }
    if seen != grid.len() {
        return Err(Error::Format(format!("expected {} rows, found {seen}", grid.len())));
    }
    Field::new(grid, values)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_and_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(2, 8, 1.25).unwrap();
        let f = Field::from_fn(g, |p| (p[0] * 1.7).sin() * (p[1] + 0.1).exp() / 3.0);
        let path = dir.path().join("u.f64");
        save_field(&path, &f, "u").unwrap();
        let (back, meta) = load_field(&path).unwrap();
        assert_eq!(back, f);
        assert_eq!(meta.name, "u");
        let json = fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(json.contains("\"N\": 8") && json.contains("\"L\": 1.25"));

        let csv = field_to_csv(&f);
        assert!(csv.starts_with("index,x,y,value\n"));
        assert_eq!(field_from_csv(g, &csv).unwrap(), f);
    }

    #[test]
    fn odd_byte_count_rejected() {
        assert!(decode_raw(&[0u8; 12]).is_err());
    }
}
