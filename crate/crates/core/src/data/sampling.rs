//! Negative sampling for training and candidate lists for evaluation.

use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::seed::{self, streams};

/// Number of sampled items mixed with each held-out item.
pub const EVAL_NEGATIVES: usize = 99;

/// Draws `count` distinct items, uniformly among those for which `excluded`
/// is false.
fn sample_distinct<R: Rng>(
    num_items: usize,
    eligible: usize,
    count: usize,
    excluded: impl Fn(u32) -> bool,
    rng: &mut R,
) -> Vec<u32> {
    let mut out = Vec::with_capacity(count);
    if eligible >= 4 * count && eligible * 4 >= num_items {
        // Rejection sampling: cheap when eligible items are common.
        while out.len() < count {
            let item = rng.gen_range(0..num_items) as u32;
            if !excluded(item) && !out.contains(&item) {
                out.push(item);
            }
        }
    } else {
        let mut pool: Vec<u32> = (0..num_items as u32).filter(|&i| !excluded(i)).collect();
        let (picked, _) = pool.partial_shuffle(rng, count);
        out.extend_from_slice(picked);
    }
    out
}

/// `count` distinct items the user has no training interaction with.
pub fn sample_cf_negatives<R: Rng>(
    dataset: &InteractionDataset,
    user: u32,
    count: usize,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let n = dataset.num_items();
    let eligible = n - dataset.train_positive_count(user);
    if count > eligible {
        return Err(Error::Sampling(format!(
            "user {user} has only {eligible} non-positive items, cannot draw {count} negatives"
        )));
    }
    Ok(sample_distinct(
        n,
        eligible,
        count,
        |i| dataset.is_train_positive(user, i),
        rng,
    ))
}

/// The held-out item plus `count` distinct items the user never interacted
/// with (in any split), in random order. The result depends only on
/// `(seed, user, item)`.
pub fn build_eval_candidates(
    dataset: &InteractionDataset,
    pair: (u32, u32),
    count: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    let (user, item) = pair;
    let n = dataset.num_items();
    let eligible = n - dataset.positive_count(user);
    if count > eligible {
        return Err(Error::Sampling(format!(
            "user {user} has only {eligible} unobserved items, {count} needed for evaluation"
        )));
    }
    let mut rng = seed::stream(seed, &[streams::EVAL_CANDIDATES, user as u64, item as u64]);
    let mut candidates = sample_distinct(n, eligible, count, |i| dataset.is_positive(user, i), &mut rng);
    candidates.push(item);
    candidates.shuffle(&mut rng);
    Ok(candidates)
}
