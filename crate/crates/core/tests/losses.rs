mod common;

use cmcss::losses::{
    cmc_loss, cmc_negative_prob, cmc_positive_prob, contrastive_loss_and_grad, css_loss, css_pair_prob, joint_loss,
    modality_pair_kernel, BatchView, ContrastiveTerms,
};
use cmcss::{ModalityKind, ModalitySet};
use common::*;
use proptest::prelude::*;

const E: usize = 8;

fn batch(emb: &Emb, kinds: &[ModalityKind], labels: Vec<u8>, tau: f64) -> BatchView {
    BatchView::from_sets(&to_sets(emb, kinds), labels).unwrap().with_tau(tau)
}

fn modality_sets() -> Vec<Vec<ModalityKind>> {
    let mut sets = vec![ModalityKind::ALL.to_vec()];
    for drop in ModalityKind::ALL {
        sets.push(ModalityKind::ALL.into_iter().filter(|&k| k != drop).collect());
    }
    sets
}

#[test]
fn losses_match_nested_loops() {
    let mut r = rng(100);
    for trial in 0..100 {
        let m = [2, 3, 4, 8][trial % 4];
        let kinds = &modality_sets()[trial % 6];
        let tau = if trial % 5 == 0 { 0.5 } else { 1.0 };
        let (emb, _) = random_batch(&mut r, m, kinds, E);
        let labels = random_labels(&mut r, m);
        let b = batch(&emb, kinds, labels.clone(), tau);
        assert!((cmc_loss(&b).unwrap() - cmc(&emb, tau)).abs() < 1e-10);
        assert!((css_loss(&b).unwrap().value - css(&emb, &labels, tau)).abs() < 1e-10);
        let lambda = 0.5 * (trial % 4) as f64;
        let j = joint_loss(&b, lambda).unwrap();
        assert!((j.total - (lambda * cmc(&emb, tau) + css(&emb, &labels, tau))).abs() < 1e-10);
    }
}

#[test]
fn probabilities_match_nested_loops() {
    let mut r = rng(7);
    for _ in 0..20 {
        let kinds = ModalityKind::ALL;
        let (emb, _) = random_batch(&mut r, 4, &kinds, E);
        let b = batch(&emb, &kinds, vec![0, 0, 1, 1], 1.0);
        for i in 0..4 {
            assert!((cmc_positive_prob(i, &b).unwrap() - p_positive(&emb, i, 1.0)).abs() < 1e-12);
            for k in 0..4 {
                let s = modality_pair_kernel(i, k, &b).unwrap();
                assert!((s - kernel(&emb, i, k, 1.0)).abs() < 1e-12);
                if k != i {
                    assert!((cmc_negative_prob(i, k, &b).unwrap() - p_negative(&emb, i, k, 1.0)).abs() < 1e-12);
                    assert!((css_pair_prob(i, k, &b).unwrap() - p_css(&emb, i, k, 1.0)).abs() < 1e-12);
                }
            }
        }
        assert!(cmc_negative_prob(1, 1, &b).is_err());
        assert!(css_pair_prob(2, 2, &b).is_err());
    }
}

#[test]
fn css_six_subjects_three_per_class() {
    let mut r = rng(66);
    let (emb, _) = random_batch(&mut r, 6, &ModalityKind::ALL, E);
    let labels = vec![0, 0, 0, 1, 1, 1];
    let b = batch(&emb, &ModalityKind::ALL, labels.clone(), 1.0);
    assert!((css_loss(&b).unwrap().value - css(&emb, &labels, 1.0)).abs() < 1e-10);
}

#[test]
fn drop_one_kernel_has_twelve_terms() {
    let kinds: Vec<ModalityKind> = ModalityKind::ALL[1..].to_vec();
    assert_eq!(ModalitySet::from_kinds(&kinds).unwrap().pairs().len(), 12);
    // orthogonal one-hot embeddings: every term is e⁰
    let emb: Emb = (0..2)
        .map(|s| (0..4).map(|u| one_hot(10, s * 4 + u)).collect())
        .collect();
    let b = batch(&emb, &kinds, vec![0, 0], 1.0);
    assert_eq!(modality_pair_kernel(0, 1, &b).unwrap(), 12.0);
}

fn one_hot(n: usize, at: usize) -> Vec<f64> {
    (0..n).map(|i| f64::from(u8::from(i == at))).collect()
}

#[test]
fn single_modality_kernel_pairs_with_itself() {
    let mut r = rng(3);
    let kinds = [ModalityKind::Clinical];
    let (emb, _) = random_batch(&mut r, 5, &kinds, E);
    let labels = vec![0, 1, 0, 1, 1];
    let b = batch(&emb, &kinds, labels.clone(), 1.0);
    let expected = (dot(&emb[0][0], &emb[3][0])).exp();
    assert!((modality_pair_kernel(0, 3, &b).unwrap() - expected).abs() < 1e-12);
    assert!((css_loss(&b).unwrap().value - css(&emb, &labels, 1.0)).abs() < 1e-10);
    assert!(cmc_loss(&b).is_err());
}

#[test]
fn embedding_gradients_match_finite_differences() {
    let mut r = rng(12);
    let kinds = ModalityKind::ALL;
    let (emb, _) = random_batch(&mut r, 5, &kinds, E);
    let labels = vec![0, 1, 0, 1, 0];
    let b = batch(&emb, &kinds, labels.clone(), 1.0);
    let (_, grads) = contrastive_loss_and_grad(&b, 1.0, ContrastiveTerms::Joint).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        for (slot, kind) in kinds.iter().enumerate() {
            for c in 0..E {
                let eval = |delta: f64| {
                    let mut e2 = emb.clone();
                    e2[i][slot][c] += delta;
                    cmc(&e2, 1.0) + css(&e2, &labels, 1.0)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = grads[kind.index()].as_ref().unwrap()[[i, c]];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst:e}");
}

fn permuted(emb: &Emb, labels: &[u8], perm: &[usize]) -> (Emb, Vec<u8>) {
    (perm.iter().map(|&p| emb[p].clone()).collect(), perm.iter().map(|&p| labels[p]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_permutation_invariant(seed in any::<u64>(), m in 2usize..9, perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut r = rng(seed);
        let kinds = ModalityKind::ALL;
        let (emb, _) = random_batch(&mut r, m, &kinds, E);
        let labels = random_labels(&mut r, m);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng(perm_seed));
        let (pe, pl) = permuted(&emb, &labels, &perm);
        let a = joint_loss(&batch(&emb, &kinds, labels, 1.0), 1.0).unwrap();
        let b = joint_loss(&batch(&pe, &kinds, pl, 1.0), 1.0).unwrap();
        prop_assert!((a.cmc - b.cmc).abs() < 1e-10);
        prop_assert!((a.css - b.css).abs() < 1e-10);
        prop_assert!((a.total - b.total).abs() < 1e-10);
    }

    #[test]
    fn kernel_is_symmetric(seed in any::<u64>(), m in 2usize..6) {
        let mut r = rng(seed);
        let kinds = ModalityKind::ALL;
        let (emb, _) = random_batch(&mut r, m, &kinds, E);
        let b = batch(&emb, &kinds, vec![0; m], 1.0);
        for i in 0..m {
            for j in 0..m {
                let (sij, sji) = (modality_pair_kernel(i, j, &b).unwrap(), modality_pair_kernel(j, i, &b).unwrap());
                prop_assert!((sij - sji).abs() <= 1e-12 * sij);
            }
        }
    }

    #[test]
    fn aligning_one_pair_raises_the_positive_probability(
        seed in any::<u64>(),
        m in 2usize..6,
        angle in 0.1f64..3.0,
        shrink in 0.05f64..0.95,
    ) {
        // Subject 0 uses coordinates 0..5 and everyone else 8..16. Only f_0(0)
        // and f_1(0) share a plane, so rotating f_1(0) towards f_0(0) changes
        // one same-subject similarity and nothing else.
        let mut r = rng(seed);
        let kinds = ModalityKind::ALL;
        let subject0 = |theta: f64| -> Vec<Vec<f64>> {
            let mut vs = vec![one_hot(16, 0)];
            let mut f1 = vec![0.0; 16];
            f1[0] = theta.cos();
            f1[1] = theta.sin();
            vs.push(f1);
            vs.extend((2..5).map(|c| one_hot(16, c)));
            vs
        };
        let others: Emb = (1..m)
            .map(|_| kinds.iter().map(|_| [vec![0.0; 8], random_unit(&mut r, 8)].concat()).collect())
            .collect();
        let build = |theta: f64| -> Emb {
            let mut e = vec![subject0(theta)];
            e.extend(others.iter().cloned());
            e
        };
        let labels = vec![0; m];
        let before = batch(&build(angle), &kinds, labels.clone(), 1.0);
        let after = batch(&build(angle * shrink), &kinds, labels, 1.0);
        for j in 1..m {
            let (b, a) = (modality_pair_kernel(0, j, &before).unwrap(), modality_pair_kernel(0, j, &after).unwrap());
            prop_assert!((b - a).abs() < 1e-12);
        }
        let (pb, pa) = (cmc_positive_prob(0, &before).unwrap(), cmc_positive_prob(0, &after).unwrap());
        prop_assert!(-pa.ln() < -pb.ln());
    }
}
