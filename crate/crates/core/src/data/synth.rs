//! Shared-latent-factor generator for synthetic five-modality cohorts.
//!
//! Each subject draws a latent vector `h ~ N(±snr/2 · e, I)` whose mean depends
//! on the class. Every modality sees `coupling · h + (1 - coupling) · noise_u`
//! through its own fixed random linear map, then gets post-processed so the
//! payload satisfies its modality invariants.

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Cohort, CohortDims, SubjectRecord};
use crate::error::{Result, Violations};
use crate::modality::ModalityKind;
use crate::rng::{derive_seed, seeded, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_subjects: usize,
    pub d: usize,
    pub z: usize,
    pub n_slices: usize,
    pub h: usize,
    pub w: usize,
    pub c_dim: usize,
    /// Fraction of high-risk (label 1) subjects.
    pub class_balance: f64,
    pub latent_dim: usize,
    /// Distance between the two class means in latent units.
    pub snr: f64,
    pub cross_modality_coupling: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        let dims = CohortDims::paper();
        CohortConfig {
            n_subjects: 64,
            d: dims.d,
            z: dims.z,
            n_slices: dims.n_slices,
            h: dims.h,
            w: dims.w,
            c_dim: dims.c_dim,
            class_balance: 0.5,
            latent_dim: 8,
            snr: 4.0,
            cross_modality_coupling: 0.9,
            seed: 0,
        }
    }
}

impl CohortConfig {
    /// Defaults with the reduced desk-scale payload dimensions.
    pub fn desk() -> Self {
        CohortConfig::default().with_dims(CohortDims::desk())
    }

    pub fn with_dims(mut self, dims: CohortDims) -> Self {
        self.d = dims.d;
        self.z = dims.z;
        self.n_slices = dims.n_slices;
        self.h = dims.h;
        self.w = dims.w;
        self.c_dim = dims.c_dim;
        self
    }

    pub fn dims(&self) -> CohortDims {
        CohortDims {
            d: self.d,
            z: self.z,
            n_slices: self.n_slices,
            h: self.h,
            w: self.w,
            c_dim: self.c_dim,
        }
    }

    /// Number of label-1 subjects. Forced so that each class keeps at least two members.
    pub fn n_positive(&self) -> usize {
        let raw = (self.n_subjects as f64 * self.class_balance).round() as usize;
        raw.clamp(2, self.n_subjects.saturating_sub(2))
    }

    pub(crate) fn violations(&self) -> Violations {
        let mut v = Violations::default();
        v.check(self.n_subjects >= 4, "n_subjects", "must be at least 4");
        v.check(self.d >= 2, "d", "must be at least 2");
        for (key, val) in [
            ("z", self.z),
            ("n_slices", self.n_slices),
            ("h", self.h),
            ("w", self.w),
            ("c_dim", self.c_dim),
            ("latent_dim", self.latent_dim),
        ] {
            v.check(val >= 1, key, "must be at least 1");
        }
        v.check(
            self.class_balance > 0.0 && self.class_balance < 1.0,
            "class_balance",
            "must lie in (0, 1)",
        );
        let n_pos = (self.n_subjects as f64 * self.class_balance).round() as usize;
        v.check(
            n_pos >= 2 && self.n_subjects.saturating_sub(n_pos) >= 2,
            "class_balance",
            "must leave at least 2 subjects per class",
        );
        v.check(self.snr.is_finite() && self.snr >= 0.0, "snr", "must be finite and >= 0");
        v.check(
            (0.0..=1.0).contains(&self.cross_modality_coupling),
            "cross_modality_coupling",
            "must lie in [0, 1]",
        );
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.violations().into_result()
    }
}

/// Generates a cohort. Deterministic in `config` (including the seed); every
/// value is rounded to 9 significant digits so persistence round-trips exactly.
pub fn generate_synthetic_cohort(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let dims = config.dims();
    let latent = config.latent_dim;

    // Fixed per-cohort structure: class direction and one linear map per modality.
    let mut structure_rng = seeded(derive_seed(config.seed, "cohort-structure", &[]));
    let direction = unit_gaussian(&mut structure_rng, latent);
    let map_scale = 1.0 / (latent as f64).sqrt();
    let maps: Vec<Array2<f64>> = ModalityKind::ALL
        .iter()
        .map(|&kind| gaussian_matrix(&mut structure_rng, dims.payload_len(kind), latent, map_scale))
        .collect();

    let n_pos = config.n_positive();
    let mut labels: Vec<u8> = (0..config.n_subjects).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut seeded(derive_seed(config.seed, "labels", &[])));

    let coupling = config.cross_modality_coupling;
    let subjects = labels
        .iter()
        .enumerate()
        .map(|(idx, &label)| {
            let mut rng = seeded(derive_seed(config.seed, "subject", &[idx as u64]));
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let h: Array1<f64> = Array1::from_shape_fn(latent, |k| {
                sign * 0.5 * config.snr * direction[k] + rng.sample::<f64, _>(StandardNormal)
            });
            let mut raw = ModalityKind::ALL.iter().map(|&kind| {
                let noise: Array1<f64> =
                    Array1::from_shape_fn(latent, |_| rng.sample::<f64, _>(StandardNormal));
                let mixed = &h * coupling + &noise * (1.0 - coupling);
                maps[kind.index()].dot(&mixed)
            });
            let mut next = || raw.next().expect("five modalities");
            build_record(format!("s{idx}"), label, &dims, [next(), next(), next(), next(), next()])
        })
        .collect();

    Cohort::new(dims, subjects)
}

fn build_record(id: String, label: u8, dims: &CohortDims, raw: [Array1<f64>; 5]) -> SubjectRecord {
    let [r, sc, fc, img, clin] = raw;
    let d = dims.d;

    let radiomics = Array2::from_shape_vec((d, dims.z), r.to_vec())
        .expect("radiomics length")
        .mapv(quantize);

    let sc = symmetrize(Array2::from_shape_vec((d, d), sc.to_vec()).expect("sc length"));
    let mut structural = sc.mapv(|v| quantize(softplus(v)));
    for i in 0..d {
        structural[[i, i]] = 0.0;
    }

    let fc = symmetrize(Array2::from_shape_vec((d, d), fc.to_vec()).expect("fc length"));
    let mut functional = fc.mapv(|v| quantize(v.tanh()));
    for i in 0..d {
        functional[[i, i]] = 1.0;
    }

    let image_volume = Array3::from_shape_vec((dims.n_slices, dims.h, dims.w), img.to_vec())
        .expect("image length")
        .mapv(|v| quantize(sigmoid(v).clamp(0.0, 1.0)));

    SubjectRecord {
        subject_id: id,
        radiomics,
        structural_connectome: structural,
        functional_connectome: functional,
        image_volume,
        clinical: clin.mapv(quantize),
        label,
    }
}

/// (A + Aᵀ)/√2, which keeps unit-variance entries at unit variance.
fn symmetrize(a: Array2<f64>) -> Array2<f64> {
    (&a + &a.t()) / std::f64::consts::SQRT_2
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Rounds to the 9 significant digits used by the CSV format.
pub(crate) fn quantize(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

fn unit_gaussian(rng: &mut Rng, n: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CohortConfig {
        CohortConfig {
            n_subjects: 8,
            seed,
            ..CohortConfig::desk()
        }
    }

    #[test]
    fn balanced_labels() {
        let c = generate_synthetic_cohort(&CohortConfig {
            class_balance: 0.5,
            seed: 7,
            ..small(7)
        })
        .unwrap();
        assert_eq!(c.class_counts(), [4, 4]);
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_cohort(&small(3)).unwrap();
        let b = generate_synthetic_cohort(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_cohort(&small(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn records_satisfy_invariants() {
        let c = generate_synthetic_cohort(&small(11)).unwrap();
        for s in &c.subjects {
            s.validate(&c.dims).unwrap();
        }
    }

    #[test]
    fn invalid_config_names_bounds() {
        let cfg = CohortConfig {
            n_subjects: 3,
            d: 1,
            cross_modality_coupling: 1.5,
            ..CohortConfig::desk()
        };
        let err = generate_synthetic_cohort(&cfg).unwrap_err().to_string();
        for key in ["n_subjects", "d:", "cross_modality_coupling"] {
            assert!(err.contains(key), "{err} lacks {key}");
        }
    }

    #[test]
    fn quantize_is_idempotent() {
        for v in [0.1, 1.0 / 3.0, -123456.789012345, 1e-300, 0.0] {
            let q = quantize(v);
            assert_eq!(q, quantize(q));
        }
    }
}
