//! Balanced, seed-reproducible sampling of fault / non-fault issues.

use std::collections::HashSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, CorpusError, GoldSet, IssueKey};

/// ChaCha8 stream with a bounded draw that only depends on raw `u64` output,
/// so selections are identical on every platform and toolchain.
pub struct PortableRng(ChaCha8Rng);

impl PortableRng {
    pub fn seed(seed: u64) -> Self {
        PortableRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `0..bound` (Lemire's multiply-and-reject).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let mut m = u128::from(self.next_u64()) * u128::from(bound);
        let mut low = m as u64;
        if low < bound {
            let threshold = bound.wrapping_neg() % bound;
            while low < threshold {
                m = u128::from(self.next_u64()) * u128::from(bound);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// First `k` positions of a partial Fisher-Yates shuffle over `items`.
    pub fn choose<T: Clone>(&mut self, items: &[T], k: usize) -> Vec<T> {
        let mut pool = items.to_vec();
        let n = pool.len();
        for i in 0..k.min(n) {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k.min(n));
        pool
    }
}

/// Draws exactly `n_pos` fault-related and `n_neg` non-fault records.
///
/// Strata are ordered by key before drawing, so the selection depends only on
/// the set of records, the gold labels and the seed. The result keeps corpus order.
pub fn sample_balanced(
    corpus: &Corpus,
    gold: &GoldSet,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    let mut positives: Vec<IssueKey> = Vec::new();
    let mut negatives: Vec<IssueKey> = Vec::new();
    for record in corpus.records() {
        let key = record.key();
        match gold.get(&key).and_then(|g| g.fault_related) {
            Some(true) => positives.push(key),
            Some(false) => negatives.push(key),
            None => {}
        }
    }
    for (stratum, requested, available) in [
        ("fault-related", n_pos, positives.len()),
        ("non-fault", n_neg, negatives.len()),
    ] {
        if requested > available {
            return Err(CorpusError::InsufficientStratum {
                stratum,
                requested,
                available,
            });
        }
    }
    positives.sort();
    negatives.sort();

    let mut rng = PortableRng::seed(seed);
    let mut chosen: HashSet<IssueKey> = rng.choose(&positives, n_pos).into_iter().collect();
    chosen.extend(rng.choose(&negatives, n_neg));

    Ok(corpus.filtered(|r| chosen.contains(&r.key())))
}
