//! Subject records, cohorts, synthetic generation, persistence and fold planning.

mod folds;
mod io;
mod synth;

pub use folds::{stratified_folds, stratified_holdout, FoldPlan, Split};
pub use io::{load_cohort, save_cohort, MANIFEST_FILE};
pub use synth::{generate_synthetic_cohort, CohortConfig};

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::ModalityKind;

/// Payload dimensions shared by every record of a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortDims {
    /// ROI count.
    pub d: usize,
    /// Radiomic features per ROI.
    pub z: usize,
    pub n_slices: usize,
    pub h: usize,
    pub w: usize,
    pub c_dim: usize,
}

impl CohortDims {
    pub fn paper() -> Self {
        CohortDims {
            d: 87,
            z: 100,
            n_slices: 10,
            h: 32,
            w: 32,
            c_dim: 16,
        }
    }

    /// Reduced dimensions used by the desk profile.
    pub fn desk() -> Self {
        CohortDims {
            d: 16,
            z: 12,
            n_slices: 10,
            h: 16,
            w: 16,
            c_dim: 16,
        }
    }

    /// Number of scalars in one modality payload.
    pub fn payload_len(&self, kind: ModalityKind) -> usize {
        match kind {
            ModalityKind::Radiomics => self.d * self.z,
            ModalityKind::StructuralConnectome | ModalityKind::FunctionalConnectome => {
                self.d * self.d
            }
            ModalityKind::ImageVolume => self.n_slices * self.h * self.w,
            ModalityKind::Clinical => self.c_dim,
        }
    }

    /// Rows and columns of the on-disk CSV matrix for a modality.
    pub fn csv_shape(&self, kind: ModalityKind) -> (usize, usize) {
        match kind {
            ModalityKind::Radiomics => (self.d, self.z),
            ModalityKind::StructuralConnectome | ModalityKind::FunctionalConnectome => {
                (self.d, self.d)
            }
            ModalityKind::ImageVolume => (self.n_slices * self.h, self.w),
            ModalityKind::Clinical => (1, self.c_dim),
        }
    }
}

/// One subject: five modality payloads and a binary outcome (1 = high risk).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// d × z
    pub radiomics: Array2<f64>,
    /// d × d, symmetric, non-negative
    pub structural_connectome: Array2<f64>,
    /// d × d, symmetric, entries in [-1, 1], unit diagonal
    pub functional_connectome: Array2<f64>,
    /// n_slices × h × w, values in [0, 1]
    pub image_volume: Array3<f64>,
    pub clinical: Array1<f64>,
    pub label: u8,
}

const SYMMETRY_TOL: f64 = 1e-9;

impl SubjectRecord {
    pub fn dims(&self) -> CohortDims {
        let (n_slices, h, w) = self.image_volume.dim();
        CohortDims {
            d: self.radiomics.nrows(),
            z: self.radiomics.ncols(),
            n_slices,
            h,
            w,
            c_dim: self.clinical.len(),
        }
    }

    /// Flat row-major view of a modality payload.
    pub fn payload(&self, kind: ModalityKind) -> &[f64] {
        let slice = match kind {
            ModalityKind::Radiomics => self.radiomics.as_slice(),
            ModalityKind::StructuralConnectome => self.structural_connectome.as_slice(),
            ModalityKind::FunctionalConnectome => self.functional_connectome.as_slice(),
            ModalityKind::ImageVolume => self.image_volume.as_slice(),
            ModalityKind::Clinical => self.clinical.as_slice(),
        };
        slice.expect("record payloads are standard-layout")
    }

    /// Checks every record invariant against the expected cohort dimensions.
    pub fn validate(&self, dims: &CohortDims) -> Result<()> {
        let bad = |message: String| Error::InvalidRecord {
            subject: self.subject_id.clone(),
            message,
        };
        if self.label > 1 {
            return Err(bad(format!("label {} is not 0 or 1", self.label)));
        }
        if self.dims() != *dims
            || self.structural_connectome.dim() != (dims.d, dims.d)
            || self.functional_connectome.dim() != (dims.d, dims.d)
        {
            return Err(bad(format!(
                "payload dimensions do not match cohort dimensions {dims:?}"
            )));
        }
        for kind in ModalityKind::ALL {
            if let Some(pos) = self.payload(kind).iter().position(|v| !v.is_finite()) {
                return Err(bad(format!("non-finite value in {kind} at flat index {pos}")));
            }
        }
        let sc = &self.structural_connectome;
        let fc = &self.functional_connectome;
        for i in 0..dims.d {
            for j in 0..dims.d {
                if sc[[i, j]] < 0.0 {
                    return Err(bad(format!("structural_connectome[{i},{j}] is negative")));
                }
                if (sc[[i, j]] - sc[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(bad(format!("structural_connectome not symmetric at ({i},{j})")));
                }
                if (fc[[i, j]] - fc[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(bad(format!("functional_connectome not symmetric at ({i},{j})")));
                }
                if !(-1.0..=1.0).contains(&fc[[i, j]]) {
                    return Err(bad(format!("functional_connectome[{i},{j}] outside [-1, 1]")));
                }
            }
            if fc[[i, i]] != 1.0 {
                return Err(bad(format!(
                    "functional_connectome diagonal [{i},{i}] is {} (must be 1)",
                    fc[[i, i]]
                )));
            }
        }
        if let Some(v) = self.image_volume.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(bad(format!("image_volume value {v} outside [0, 1]")));
        }
        Ok(())
    }
}

/// A set of subjects sharing payload dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub dims: CohortDims,
    pub subjects: Vec<SubjectRecord>,
}

impl Cohort {
    pub fn new(dims: CohortDims, subjects: Vec<SubjectRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::InvalidRecord {
                    subject: s.subject_id.clone(),
                    message: "duplicate subject id".into(),
                });
            }
            s.validate(&dims)?;
        }
        Ok(Cohort { dims, subjects })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        class_counts(self.subjects.iter().map(|s| s.label))
    }

    /// Sub-cohort made of the given subject indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            dims: self.dims,
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    pub fn position(&self, subject_id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.subject_id == subject_id)
    }
}

pub(crate) fn class_counts(labels: impl IntoIterator<Item = u8>) -> [usize; 2] {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l as usize] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_record() -> SubjectRecord {
        let d = 2;
        SubjectRecord {
            subject_id: "s0".into(),
            radiomics: Array2::zeros((d, 3)),
            structural_connectome: Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            functional_connectome: Array2::from_shape_vec((2, 2), vec![1.0, 0.3, 0.3, 1.0]).unwrap(),
            image_volume: Array3::from_elem((1, 2, 2), 0.5),
            clinical: Array1::zeros(4),
            label: 1,
        }
    }

    #[test]
    fn valid_record_passes() {
        let r = tiny_record();
        r.validate(&r.dims()).unwrap();
    }

    #[test]
    fn fc_diagonal_must_be_one() {
        let mut r = tiny_record();
        r.functional_connectome[[0, 0]] = 0.9;
        let err = r.validate(&r.dims()).unwrap_err().to_string();
        assert!(err.contains("diagonal"), "{err}");
    }

    #[test]
    fn asymmetric_and_negative_sc_rejected() {
        let mut r = tiny_record();
        r.structural_connectome[[0, 1]] = 2.0;
        assert!(r.validate(&r.dims()).is_err());
        let mut r = tiny_record();
        r.structural_connectome[[0, 1]] = -1.0;
        r.structural_connectome[[1, 0]] = -1.0;
        assert!(r.validate(&r.dims()).is_err());
    }

    #[test]
    fn non_finite_and_image_range_rejected() {
        let mut r = tiny_record();
        r.clinical[2] = f64::NAN;
        assert!(r.validate(&r.dims()).unwrap_err().to_string().contains("non-finite"));
        let mut r = tiny_record();
        r.image_volume[[0, 1, 1]] = 1.5;
        assert!(r.validate(&r.dims()).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = tiny_record();
        assert!(Cohort::new(r.dims(), vec![r.clone(), r]).is_err());
    }
}
