//! Independent reference implementations shared by the integration tests.
//! Everything here works on plain nested `Vec`s with scalar loops.
#![allow(dead_code)]

use cmcss::data::{generate_synthetic_cohort, Cohort, CohortConfig, CohortDims, SubjectRecord};
use cmcss::nn::{EmbeddingSet, EncoderParams, Linear, ModelConfig};
use cmcss::train::{compute_gradients, Objective};
use cmcss::{ModalityKind, ModalitySet};
use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------- losses ----------

/// `emb[subject][slot]`: unit vectors for the active modalities, in a fixed slot order.
pub type Emb = Vec<Vec<Vec<f64>>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn random_unit(rng: &mut ChaCha8Rng, e: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..e).map(|_| rng.sample(StandardNormal)).collect();
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Ordered pairs `u ≠ v` over the slots; a lone slot pairs with itself.
pub fn kernel(emb: &Emb, i: usize, j: usize, tau: f64) -> f64 {
    let slots = emb[i].len();
    let mut s = 0.0;
    for u in 0..slots {
        for v in 0..slots {
            if u != v || slots == 1 {
                s += (dot(&emb[i][u], &emb[j][v]) / tau).exp();
            }
        }
    }
    s
}

pub fn p_positive(emb: &Emb, i: usize, tau: f64) -> f64 {
    let den: f64 = (0..emb.len()).filter(|&j| j != i).map(|j| kernel(emb, i, j, tau)).sum();
    kernel(emb, i, i, tau) / den
}

pub fn p_negative(emb: &Emb, i: usize, k: usize, tau: f64) -> f64 {
    let den: f64 = (0..emb.len()).filter(|&j| j != k).map(|j| kernel(emb, j, k, tau)).sum();
    kernel(emb, i, k, tau) / den
}

pub fn p_css(emb: &Emb, i: usize, g: usize, tau: f64) -> f64 {
    let den: f64 = (0..emb.len()).filter(|&j| j != i).map(|j| kernel(emb, i, j, tau)).sum();
    kernel(emb, i, g, tau) / den
}

pub fn cmc(emb: &Emb, tau: f64) -> f64 {
    let m = emb.len();
    let mut pos = 0.0;
    let mut neg = 0.0;
    for i in 0..m {
        pos += p_positive(emb, i, tau).ln();
        for k in 0..m {
            if k != i {
                neg += p_negative(emb, i, k, tau).ln();
            }
        }
    }
    -(pos - neg) / m as f64
}

pub fn css(emb: &Emb, labels: &[u8], tau: f64) -> f64 {
    let m = emb.len();
    let mut total = 0.0;
    for i in 0..m {
        let group: Vec<usize> = (0..m).filter(|&g| g != i && labels[g] == labels[i]).collect();
        if group.is_empty() {
            continue;
        }
        let s: f64 = group.iter().map(|&g| p_css(emb, i, g, tau).ln()).sum();
        total += s / group.len() as f64;
    }
    -total / m as f64
}

/// Random unit embeddings for `kinds` plus library-side embedding sets.
pub fn random_batch(rng: &mut ChaCha8Rng, m: usize, kinds: &[ModalityKind], e: usize) -> (Emb, Vec<EmbeddingSet>) {
    let emb: Emb = (0..m)
        .map(|_| kinds.iter().map(|_| random_unit(rng, e)).collect())
        .collect();
    let sets = to_sets(&emb, kinds);
    (emb, sets)
}

pub fn to_sets(emb: &Emb, kinds: &[ModalityKind]) -> Vec<EmbeddingSet> {
    emb.iter()
        .map(|subject| {
            let mut vectors: [Option<Array1<f64>>; ModalityKind::COUNT] = Default::default();
            for (slot, kind) in kinds.iter().enumerate() {
                vectors[kind.index()] = Some(Array1::from(subject[slot].clone()));
            }
            EmbeddingSet::new(vectors)
        })
        .collect()
}

pub fn random_labels(rng: &mut ChaCha8Rng, m: usize) -> Vec<u8> {
    (0..m).map(|_| rng.random_range(0..2u8)).collect()
}

// ---------- encoders ----------

pub fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            (0..n)
                .map(|c| row.iter().enumerate().map(|(k, x)| x * b[k][c]).sum())
                .collect()
        })
        .collect()
}

/// `softmax(x W_q (x W_k)ᵀ / √rows) · x W_v`, plus the attention matrix.
pub fn attention(x: &[Vec<f64>], wq: &[Vec<f64>], wk: &[Vec<f64>], wv: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let q = matmul(x, wq);
    let k = matmul(x, wk);
    let v = matmul(x, wv);
    let rows = x.len();
    let scale = (rows as f64).sqrt();
    let mut attn = vec![vec![0.0; rows]; rows];
    for i in 0..rows {
        let logits: Vec<f64> = (0..rows).map(|j| dot(&q[i], &k[j]) / scale).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..rows {
            attn[i][j] = exps[j] / z;
        }
    }
    let out = matmul(&attn, &v);
    (attn, out)
}

fn linear(x: &[f64], layer: &Linear) -> Vec<f64> {
    let w = to_rows(&layer.weight);
    (0..layer.bias.len())
        .map(|o| layer.bias[o] + x.iter().enumerate().map(|(i, v)| v * w[i][o]).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Straight-line re-evaluation of one subject's embedding (ReLU models only).
pub fn encode_oracle(record: &SubjectRecord, params: &EncoderParams, kind: ModalityKind) -> Vec<f64> {
    match kind {
        ModalityKind::Radiomics | ModalityKind::StructuralConnectome | ModalityKind::FunctionalConnectome => {
            let (x, enc) = match kind {
                ModalityKind::Radiomics => (&record.radiomics, &params.radiomics),
                ModalityKind::StructuralConnectome => (&record.structural_connectome, &params.structural_connectome),
                _ => (&record.functional_connectome, &params.functional_connectome),
            };
            let (_, a) = attention(
                &to_rows(x),
                &to_rows(&enc.attention.w_q),
                &to_rows(&enc.attention.w_k),
                &to_rows(&enc.attention.w_v),
            );
            let mut flat = Vec::new();
            for row in &a {
                flat.extend(linear(row, &enc.reduce_fc));
            }
            let mut h = flat;
            for layer in &enc.mlp {
                h = relu(linear(&h, layer));
            }
            normalize(linear(&h, &enc.project))
        }
        ModalityKind::ImageVolume => {
            let enc = &params.image_volume;
            let (c, hgt, wid) = record.image_volume.dim();
            // map[y][x][channel]
            let mut map: Vec<Vec<Vec<f64>>> = (0..hgt)
                .map(|y| (0..wid).map(|x| (0..c).map(|ch| record.image_volume[[ch, y, x]]).collect()).collect())
                .collect();
            for conv in &enc.convs {
                let (h_in, w_in) = (map.len(), map[0].len());
                let cin = conv.in_channels;
                let cout = conv.bias.len();
                let k = conv.kernel;
                let h_out = (h_in + 2 * conv.padding - k) / conv.stride + 1;
                let w_out = (w_in + 2 * conv.padding - k) / conv.stride + 1;
                let mut next = vec![vec![vec![0.0; cout]; w_out]; h_out];
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        for co in 0..cout {
                            let mut s = conv.bias[co];
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h_in as isize || ix >= w_in as isize {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        s += map[iy as usize][ix as usize][ci] * conv.weight[[(ky * k + kx) * cin + ci, co]];
                                    }
                                }
                            }
                            next[oy][ox][co] = s.max(0.0);
                        }
                    }
                }
                map = next;
            }
            let flat: Vec<f64> = map.into_iter().flatten().flatten().collect();
            normalize(linear(&relu(linear(&flat, &enc.fc)), &enc.project))
        }
        ModalityKind::Clinical => {
            let enc = &params.clinical;
            normalize(linear(&relu(linear(&record.clinical.to_vec(), &enc.fc)), &enc.project))
        }
    }
}

// ---------- models and cohorts ----------

/// Reduced architecture used by the gradient checks: d = 8, z = 10, embedding 8.
pub fn reduced_dims() -> CohortDims {
    CohortDims {
        d: 8,
        z: 10,
        n_slices: 2,
        h: 8,
        w: 8,
        c_dim: 5,
    }
}

pub fn reduced_model() -> ModelConfig {
    ModelConfig {
        embedding_dim: 8,
        reduce_width: 4,
        mlp_hidden: vec![12, 8],
        feature_width: 8,
        volume_channels: vec![3, 3],
        ..ModelConfig::default()
    }
}

pub fn reduced_cohort(n: usize, seed: u64) -> Cohort {
    generate_synthetic_cohort(&CohortConfig {
        n_subjects: n,
        seed,
        ..CohortConfig::default().with_dims(reduced_dims())
    })
    .expect("valid cohort")
}

// ---------- evaluation ----------

pub fn auc_pairs(labels: &[u8], scores: &[f64]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
    }
    credit / pairs
}

/// Two-sided signed-rank p-value by enumerating all 2ⁿ sign patterns of the
/// average ranks of the non-zero differences.
pub fn wilcoxon_enumerated(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * le.min(ge) as f64 / total).min(1.0)
}

/// Ridge-regularized logistic regression fitted by gradient descent on
/// standardized features; returns held-out AUC.
pub fn logistic_probe_auc(train_x: &[Vec<f64>], train_y: &[u8], test_x: &[Vec<f64>], test_y: &[u8]) -> f64 {
    let p = train_x[0].len();
    let n = train_x.len() as f64;
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for x in train_x {
        for j in 0..p {
            mean[j] += x[j] / n;
        }
    }
    for x in train_x {
        for j in 0..p {
            sd[j] += (x[j] - mean[j]).powi(2) / n;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| v.sqrt().max(1e-9)).collect();
    let z = |x: &[f64]| -> Vec<f64> { (0..p).map(|j| (x[j] - mean[j]) / sd[j]).collect() };
    let tx: Vec<Vec<f64>> = train_x.iter().map(|x| z(x)).collect();
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let (lr, ridge) = (0.1, 1.0 / p as f64);
    for _ in 0..300 {
        let mut gw = vec![0.0; p];
        let mut gb = 0.0;
        for (x, &y) in tx.iter().zip(train_y) {
            let prob = 1.0 / (1.0 + (-(dot(&w, x) + b)).exp());
            let r = prob - y as f64;
            for j in 0..p {
                gw[j] += r * x[j] / n;
            }
            gb += r / n;
        }
        for j in 0..p {
            w[j] -= lr * (gw[j] + ridge * w[j]);
        }
        b -= lr * gb;
    }
    let scores: Vec<f64> = test_x.iter().map(|x| dot(&w, &z(x)) + b).collect();
    auc_pairs(test_y, &scores)
}

/// Every payload value of a record, concatenated.
pub fn raw_features(record: &SubjectRecord) -> Vec<f64> {
    ModalityKind::ALL
        .iter()
        .flat_map(|&k| record.payload(k).to_vec())
        .collect()
}

// ---------- gradients ----------

/// Largest `|a − n| / max(|a|, |n|, 1e-5)` over every parameter. The floor
/// keeps central-difference round-off (about ε·|L|/h ≈ 1e-10 here) from
/// dominating entries whose gradient is itself near zero.
pub fn max_relative_error(params: &EncoderParams, records: &[&SubjectRecord], objective: Objective) -> (f64, String) {
    let analytic = compute_gradients(params, records, ModalitySet::all(), objective)
        .unwrap()
        .grads
        .flatten();
    let paths = params.paths();
    let mut sizes = Vec::new();
    params.visit(&mut |_, _, v| sizes.push(v.len()));
    let base = params.flatten();
    let loss_at = |flat: &[f64]| {
        let mut p = params.clone();
        p.assign_flat(flat);
        compute_gradients(&p, records, ModalitySet::all(), objective).unwrap().loss
    };
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    let mut flat = base.clone();
    let mut tensor = 0;
    let mut offset = 0;
    for idx in 0..base.len() {
        while idx >= offset + sizes[tensor] {
            offset += sizes[tensor];
            tensor += 1;
        }
        flat[idx] = base[idx] + h;
        let up = loss_at(&flat);
        flat[idx] = base[idx] - h;
        let down = loss_at(&flat);
        flat[idx] = base[idx];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
        if rel > worst.0 {
            worst = (rel, format!("{}[{}]", paths[tensor], idx - offset));
        }
    }
    worst
}
