//! Cohort directory format.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<id>_<modality>.csv
//! ```
//!
//! The manifest holds `{d, z, n_slices, h, w, c_dim, subjects: [{id, label, files}]}`
//! where `files` maps each modality tag to a CSV path relative to the manifest.
//! CSVs are headerless, row-major, with 9 significant digits. Image volumes are
//! stored slice by slice stacked vertically (`n_slices·h` rows × `w` columns);
//! clinical vectors are a single row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{Cohort, CohortDims, SubjectRecord};
use crate::error::{Error, Result};
use crate::modality::ModalityKind;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    d: usize,
    z: usize,
    n_slices: usize,
    h: usize,
    w: usize,
    c_dim: usize,
    subjects: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    label: u8,
    files: BTreeMap<String, String>,
}

/// Writes the cohort under `dir` and returns the manifest path.
pub fn save_cohort(cohort: &Cohort, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = cohort.dims;
    let mut entries = Vec::with_capacity(cohort.len());
    for s in &cohort.subjects {
        let mut files = BTreeMap::new();
        for kind in ModalityKind::ALL {
            let name = format!("{}_{}.csv", s.subject_id, kind.tag());
            let (_, cols) = dims.csv_shape(kind);
            let path = dir.join(&name);
            fs::write(&path, to_csv(s.payload(kind), cols)).map_err(|e| Error::io(&path, e))?;
            files.insert(kind.tag().to_string(), name);
        }
        entries.push(ManifestEntry {
            id: s.subject_id.clone(),
            label: s.label,
            files,
        });
    }
    let manifest = Manifest {
        d: dims.d,
        z: dims.z,
        n_slices: dims.n_slices,
        h: dims.h,
        w: dims.w,
        c_dim: dims.c_dim,
        subjects: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads and validates a cohort from its manifest path (or the directory holding it).
pub fn load_cohort(manifest: impl AsRef<Path>) -> Result<Cohort> {
    let mut path = manifest.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dims = CohortDims {
        d: manifest.d,
        z: manifest.z,
        n_slices: manifest.n_slices,
        h: manifest.h,
        w: manifest.w,
        c_dim: manifest.c_dim,
    };

    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let mut payloads: Vec<Vec<f64>> = Vec::with_capacity(5);
        for kind in ModalityKind::ALL {
            let missing = || Error::MissingModality {
                modality: kind.tag().into(),
                subject: entry.id.clone(),
            };
            let rel = entry.files.get(kind.tag()).ok_or_else(missing)?;
            let file = base.join(rel);
            if !file.is_file() {
                return Err(missing());
            }
            payloads.push(read_csv(&file, &entry.id, dims.csv_shape(kind))?);
        }
        let mut it = payloads.into_iter();
        let mut next = || it.next().expect("five payloads");
        let record = SubjectRecord {
            subject_id: entry.id.clone(),
            radiomics: Array2::from_shape_vec((dims.d, dims.z), next()).expect("checked shape"),
            structural_connectome: Array2::from_shape_vec((dims.d, dims.d), next())
                .expect("checked shape"),
            functional_connectome: Array2::from_shape_vec((dims.d, dims.d), next())
                .expect("checked shape"),
            image_volume: Array3::from_shape_vec((dims.n_slices, dims.h, dims.w), next())
                .expect("checked shape"),
            clinical: Array1::from_vec(next()),
            label: entry.label,
        };
        subjects.push(record);
    }
    Cohort::new(dims, subjects)
}

fn to_csv(values: &[f64], cols: usize) -> String {
    let mut out = String::with_capacity(values.len() * 16);
    for row in values.chunks(cols) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.8e}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

fn read_csv(path: &Path, subject: &str, (rows, cols): (usize, usize)) -> Result<Vec<f64>> {
    let err = |message: String| Error::Load {
        subject: subject.to_string(),
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != rows {
        return Err(err(format!("expected {rows} rows, found {}", lines.len())));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for (r, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(err(format!(
                "row {r}: expected {cols} columns, found {}",
                fields.len()
            )));
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| err(format!("row {r} column {c}: cannot parse {field:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("row {r} column {c}: non-finite value")));
            }
            values.push(v);
        }
    }
    Ok(values)
}
