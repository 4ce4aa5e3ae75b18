//! Epoch batching with proportional class mixing.

use rand::seq::SliceRandom;

use crate::rng::Rng;

/// Shuffles each class, interleaves the classes proportionally and cuts the
/// result into batches of `batch_size`, so every batch holds both classes when
/// the class sizes allow it. A trailing batch of one subject is merged into
/// the previous batch.
pub fn stratified_batches(labels: &[u8], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut keyed: Vec<(f64, u8, usize)> = Vec::with_capacity(labels.len());
    for class in 0..2u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(rng);
        let n = members.len() as f64;
        for (rank, i) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / n, class, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();

    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}
