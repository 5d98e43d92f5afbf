//! Re-encoding of raw artifacts as CSV or raw `f64`.

use std::path::{Path, PathBuf};

use fraclab_core::dplane::Sinogram;
use fraclab_core::io::{encode_raw, field_to_csv, load_field, sidecar_path};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cli::NotFound: {0}")]
    NotFound(String),
    #[error("cli::UnsupportedFormat: {0}")]
    UnsupportedFormat(String),
    #[error("{kind}: {0}", kind = .0.kind())]
    Numerical(#[from] fraclab_core::Error),
    #[error("cli::Io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Raw,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Raw => "f64",
        }
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = ExportError;

    fn from_str(s: &str) -> Result<Self, ExportError> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "raw" => Ok(ExportFormat::Raw),
            other => Err(ExportError::UnsupportedFormat(format!("{other:?} (expected csv or raw)"))),
        }
    }
}

enum Loaded {
    Field(fraclab_core::Field),
    Sinogram(Sinogram),
}

fn load(path: &Path) -> Result<Loaded, ExportError> {
    let side = sidecar_path(path);
    if !path.is_file() {
        return Err(ExportError::NotFound(path.display().to_string()));
    }
    if !side.is_file() {
        return Err(ExportError::NotFound(format!("sidecar {}", side.display())));
    }
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&side)?)
        .map_err(|e| ExportError::UnsupportedFormat(format!("sidecar {}: {e}", side.display())))?;
    if meta.get("directions").is_some() {
        Ok(Loaded::Sinogram(Sinogram::load(path)?))
    } else if meta.get("name").is_some() {
        Ok(Loaded::Field(load_field(path)?.0))
    } else {
        Err(ExportError::UnsupportedFormat(format!("{} describes neither a field nor a sinogram", side.display())))
    }
}

/// Writes `artifact` (a raw `.f64` with its JSON sidecar) in `format`.
///
/// Without `out` the result goes next to the artifact with the format's
/// extension; exporting raw onto itself is allowed and rewrites the same
/// bytes. Returns the written path.
pub fn export(artifact: &Path, format: ExportFormat, out: Option<&Path>) -> Result<PathBuf, ExportError> {
    let loaded = load(artifact)?;
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| artifact.with_extension(format.extension()));
    let bytes = match (format, &loaded) {
        (ExportFormat::Csv, Loaded::Field(f)) => field_to_csv(f).into_bytes(),
        (ExportFormat::Csv, Loaded::Sinogram(s)) => s.to_csv().into_bytes(),
        (ExportFormat::Raw, Loaded::Field(f)) => encode_raw(f.values()),
        (ExportFormat::Raw, Loaded::Sinogram(s)) => encode_raw(s.values()),
    };
    std::fs::write(&target, bytes)?;
    Ok(target)
}
