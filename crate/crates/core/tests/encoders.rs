mod common;

use cmcss::nn::{encode_subject, self_attention, AttentionParams, EncoderParams};
use cmcss::ModalityKind;
use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn random_matrix(r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.sample::<f64, _>(StandardNormal))
}

fn random_attention(r: &mut rand_chacha::ChaCha8Rng, w: usize) -> AttentionParams {
    AttentionParams {
        w_q: random_matrix(r, w, w),
        w_k: random_matrix(r, w, w),
        w_v: random_matrix(r, w, w),
    }
}

#[test]
fn attention_matches_scalar_loops() {
    let mut r = rng(4);
    for _ in 0..50 {
        let x = random_matrix(&mut r, 4, 3);
        let p = random_attention(&mut r, 3);
        let got = self_attention(x.view(), &p).unwrap();
        let (_, want) = attention(&to_rows(&x), &to_rows(&p.w_q), &to_rows(&p.w_k), &to_rows(&p.w_v));
        for (g, w) in got.rows().into_iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let mut r = rng(5);
    for _ in 0..200 {
        let x = random_matrix(&mut r, 6, 5);
        let p = random_attention(&mut r, 5);
        let cache = p.forward(x.view()).unwrap();
        for row in cache.attn.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&a| a >= 0.0));
        }
    }
}

#[test]
fn encoder_matches_composed_oracle() {
    let cohort = reduced_cohort(6, 2);
    for seed in 0..3 {
        let params = EncoderParams::init(cohort.dims, &reduced_model(), seed).unwrap();
        for record in &cohort.subjects {
            let got = encode_subject(record, &params).unwrap();
            for kind in ModalityKind::ALL {
                let want = encode_oracle(record, &params, kind);
                let have = got.get(kind).unwrap();
                for (a, b) in have.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-8, "{kind}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn default_architecture_matches_composed_oracle() {
    let cohort = cmcss::data::generate_synthetic_cohort(&cmcss::data::CohortConfig {
        n_subjects: 4,
        ..cmcss::data::CohortConfig::desk()
    })
    .unwrap();
    let params = EncoderParams::init(cohort.dims, &Default::default(), 9).unwrap();
    let record = &cohort.subjects[1];
    let got = encode_subject(record, &params).unwrap();
    for kind in ModalityKind::ALL {
        let want = encode_oracle(record, &params, kind);
        for (a, b) in got.get(kind).unwrap().iter().zip(&want) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_is_row_permutation_covariant(seed in any::<u64>(), rows in 2usize..9, perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut r = rng(seed);
        let x = random_matrix(&mut r, rows, rows);
        let p = random_attention(&mut r, rows);
        let mut perm: Vec<usize> = (0..rows).collect();
        perm.shuffle(&mut rng(perm_seed));
        let px = Array2::from_shape_fn((rows, rows), |(i, j)| x[[perm[i], j]]);
        let out = self_attention(x.view(), &p).unwrap();
        let pout = self_attention(px.view(), &p).unwrap();
        for i in 0..rows {
            for j in 0..rows {
                prop_assert!((pout[[i, j]] - out[[perm[i], j]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn embeddings_have_unit_norm(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let cohort = reduced_cohort(4, seed % 1000);
        let mut params = EncoderParams::init(cohort.dims, &reduced_model(), seed).unwrap();
        params.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x *= scale));
        let set = encode_subject(&cohort.subjects[0], &params);
        // Large scales can collapse a ReLU stack to zero; that is reported as an error, never NaN.
        if let Ok(set) = set {
            for kind in ModalityKind::ALL {
                let v = set.get(kind).unwrap();
                prop_assert!((v.dot(v).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }
}
