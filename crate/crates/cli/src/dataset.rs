//! Multi-view datasets on disk.
//!
//! A dataset is a TOML manifest listing one matrix file per view and an
//! optional label file. Matrix files are either the binary format below or
//! CSV with a header row.
//!
//! ```text
//! "GBMV"  u32 version (1)  u64 rows  u64 cols  rows*cols f64, row-major
//! ```
//!
//! All integers and floats are little-endian. Label files hold one
//! non-negative integer per line.

use std::fs;
use std::path::{Path, PathBuf};

use gbcc::{Error, Matrix, Result};
use serde::{Deserialize, Serialize};

pub const MATRIX_MAGIC: &[u8; 4] = b"GBMV";
pub const MATRIX_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    None,
    /// Each column mapped to [0, 1]; constant columns become 0.
    Minmax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MatrixFormat {
    #[default]
    Binary,
    Csv,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Binary => "gbmv",
            Self::Csv => "csv",
        }
    }

    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    pub name: String,
    pub views: Vec<Matrix>,
    pub labels: Option<Vec<usize>>,
}

impl MultiViewDataset {
    pub fn new(name: impl Into<String>, views: Vec<Matrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            views,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .views
            .first()
            .ok_or_else(|| Error::Ingestion("dataset has no views".into()))?;
        for (v, x) in self.views.iter().enumerate().skip(1) {
            if x.rows() != first.rows() {
                return Err(Error::Ingestion(format!(
                    "view rows differ: view 0 has {} rows, view {v} has {}",
                    first.rows(),
                    x.rows()
                )));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != first.rows() {
                return Err(Error::Ingestion(format!(
                    "labels have {} entries for {} samples",
                    l.len(),
                    first.rows()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.views[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::cols).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub scale: Scale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(rename = "view")]
    pub views: Vec<ViewEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn check_finite(path: &Path, m: &Matrix) -> Result<()> {
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::format(path, format!("non-finite value {v} at row {i}, column {j}")));
            }
        }
    }
    Ok(())
}

pub fn matrix_to_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn matrix_from_bytes(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < 24 || &bytes[..4] != MATRIX_MAGIC {
        return Err("not a GBMV matrix file".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MATRIX_VERSION {
        return Err(format!("unsupported matrix version {version}"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or("matrix size overflows")?;
    let payload = &bytes[24..];
    if payload.len() != expected {
        return Err(format!(
            "{rows}x{cols} matrix needs {expected} payload bytes, found {}",
            payload.len()
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}

fn read_csv_matrix(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let cols = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if rec.len() != cols {
            return Err(Error::format(path, format!("row {i} has {} cells, header has {cols}", rec.len())));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::format(path, format!("cannot parse {cell:?} at row {i}, column {j}")))?;
            data.push(v);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a matrix file; the format is detected from the magic bytes, with
/// CSV as the fallback. Non-finite cells are rejected with their position.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let m = if bytes.starts_with(MATRIX_MAGIC) {
        matrix_from_bytes(&bytes).map_err(|d| Error::format(path, d))?
    } else {
        read_csv_matrix(path)?
    };
    check_finite(path, &m)?;
    Ok(m)
}

/// Writes `m` in the format implied by the file extension (`.csv` or
/// binary otherwise).
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    match MatrixFormat::from_path(path) {
        MatrixFormat::Binary => fs::write(path, matrix_to_bytes(m)).map_err(|e| Error::io(path, e)),
        MatrixFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
            let header: Vec<String> = (0..m.cols()).map(|j| format!("c{j}")).collect();
            w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
            for row in m.iter_rows() {
                w.write_record(row.iter().map(|v| format!("{v:?}")))
                    .map_err(|e| Error::format(path, e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: {:?} is not a label", i + 1, l.trim())))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-column min-max scaling to [0, 1].
pub fn minmax_scale(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for j in 0..m.cols() {
        let col = (0..m.rows()).map(|i| m[(i, j)]);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for i in 0..m.rows() {
            out.row_mut(i)[j] = if span > 0.0 { (m[(i, j)] - lo) / span } else { 0.0 };
        }
    }
    out
}

/// Resolves a dataset path: a manifest file, or a directory holding
/// `manifest.toml`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn load_dataset(path: &Path) -> Result<MultiViewDataset> {
    let mpath = manifest_path(path);
    let manifest = Manifest::read(&mpath)?;
    let base = mpath.parent().unwrap_or(Path::new("."));
    if manifest.views.is_empty() {
        return Err(Error::Ingestion(format!("{} lists no views", mpath.display())));
    }
    let mut views = Vec::new();
    for entry in &manifest.views {
        let m = read_matrix(&base.join(&entry.path))?;
        views.push(match entry.scale {
            Scale::None => m,
            Scale::Minmax => minmax_scale(&m),
        });
    }
    let labels = manifest.labels.as_ref().map(|p| read_labels(&base.join(p))).transpose()?;
    MultiViewDataset::new(manifest.name, views, labels)
}

/// Writes every view, the labels and a manifest into `dir`; returns the
/// manifest path.
pub fn save_dataset(ds: &MultiViewDataset, dir: &Path, format: MatrixFormat) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::new();
    for (v, m) in ds.views.iter().enumerate() {
        let file = PathBuf::from(format!("view{v}.{}", format.extension()));
        write_matrix(&dir.join(&file), m)?;
        views.push(ViewEntry {
            path: file,
            scale: Scale::None,
        });
    }
    let labels = match &ds.labels {
        Some(l) => {
            let file = PathBuf::from("labels.txt");
            write_labels(&dir.join(&file), l)?;
            Some(file)
        }
        None => None,
    };
    let manifest = Manifest {
        name: ds.name.clone(),
        labels,
        views,
    };
    let path = dir.join(MANIFEST_NAME);
    manifest.write(&path)?;
    Ok(path)
}
