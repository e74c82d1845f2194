//! Raw records → implicit positives → core-filtered, densely indexed pairs →
//! train/valid/test split.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Interaction, InteractionDataset, Split};
use super::load::{RawFormat, RawRecord};
use crate::error::{Error, Result};
use crate::seed::{self, streams};

/// Explicit ratings strictly above this value become positives.
pub const POSITIVE_RATING_THRESHOLD: f64 = 3.0;

/// Deduplicated positive `(user, item)` pairs with raw ids.
pub type PositivePairs = BTreeSet<(String, String)>;

pub fn to_implicit(records: &[RawRecord], format: RawFormat) -> PositivePairs {
    records
        .iter()
        .filter(|r| match format {
            RawFormat::Gowalla => true,
            RawFormat::Movielens | RawFormat::Amazon => {
                r.rating.is_some_and(|x| x > POSITIVE_RATING_THRESHOLD)
            }
        })
        .map(|r| (r.user.clone(), r.item.clone()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_user_positives: usize,
    pub min_item_users: usize,
    /// Repeat both passes until nothing changes.
    pub fixpoint: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_user_positives: 5,
            min_item_users: 2,
            fixpoint: false,
        }
    }
}

/// Pairs after filtering, re-indexed densely. Raw ids are sorted
/// lexicographically, so index `i` is the `i`-th smallest raw id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilteredPairs {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Sorted by `(user, item)`.
    pub pairs: Vec<(u32, u32)>,
}

/// Drops items with fewer than `min_item_users` users, then users with fewer
/// than `min_user_positives` remaining positives.
pub fn core_filter(pairs: &PositivePairs, cfg: &FilterConfig) -> Result<FilteredPairs> {
    let mut kept: Vec<(&str, &str)> = pairs.iter().map(|(u, i)| (u.as_str(), i.as_str())).collect();
    loop {
        let before = kept.len();
        let mut item_deg: BTreeMap<&str, usize> = BTreeMap::new();
        for &(_, i) in &kept {
            *item_deg.entry(i).or_default() += 1;
        }
        kept.retain(|(_, i)| item_deg[i] >= cfg.min_item_users);

        let mut user_deg: BTreeMap<&str, usize> = BTreeMap::new();
        for &(u, _) in &kept {
            *user_deg.entry(u).or_default() += 1;
        }
        kept.retain(|(u, _)| user_deg[u] >= cfg.min_user_positives);

        if !cfg.fixpoint || kept.len() == before {
            break;
        }
    }
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "no interactions survive filtering (min {} positives per user, min {} users per item); \
             lower the thresholds",
            cfg.min_user_positives, cfg.min_item_users
        )));
    }

    let users: BTreeSet<&str> = kept.iter().map(|&(u, _)| u).collect();
    let items: BTreeSet<&str> = kept.iter().map(|&(_, i)| i).collect();
    let user_ids: Vec<String> = users.into_iter().map(str::to_string).collect();
    let item_ids: Vec<String> = items.into_iter().map(str::to_string).collect();
    let index = |ids: &[String], key: &str| ids.binary_search_by(|x| x.as_str().cmp(key)).expect("present") as u32;
    let mut dense: Vec<(u32, u32)> = kept
        .iter()
        .map(|&(u, i)| (index(&user_ids, u), index(&item_ids, i)))
        .collect();
    dense.sort_unstable();
    Ok(FilteredPairs {
        user_ids,
        item_ids,
        pairs: dense,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let total = self.train + self.valid + self.test;
        if (total - 1.0).abs() > 1e-9 || [self.train, self.valid, self.test].iter().any(|&r| r < 0.0) {
            return Err(Error::Config(format!(
                "split ratios must be nonnegative and sum to 1, got {} + {} + {} = {total}",
                self.train, self.valid, self.test
            )));
        }
        Ok(())
    }
}

/// Split sizes drawn before the repair pass.
pub fn split_counts(total: usize, ratios: &SplitRatios) -> (usize, usize, usize) {
    let train = ((total as f64) * ratios.train).round() as usize;
    let valid = (((total as f64) * ratios.valid).round() as usize).min(total - train);
    (train, valid, total - train - valid)
}

/// Uniformly random per-interaction split with exact target counts, then a
/// repair pass moving one valid/test interaction into train for every user
/// or item that has none.
pub fn split(filtered: FilteredPairs, ratios: &SplitRatios, seed: u64) -> Result<InteractionDataset> {
    ratios.validate()?;
    let labels = assign_splits(filtered.pairs.len(), ratios, seed);
    let mut interactions: Vec<Interaction> = filtered
        .pairs
        .iter()
        .zip(labels)
        .map(|(&(user, item), split)| Interaction { user, item, split })
        .collect();
    repair(&mut interactions, filtered.user_ids.len(), filtered.item_ids.len());
    InteractionDataset::new(filtered.user_ids, filtered.item_ids, interactions)
}

pub(crate) fn assign_splits(total: usize, ratios: &SplitRatios, seed: u64) -> Vec<Split> {
    let (n_train, n_valid, _) = split_counts(total, ratios);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut seed::stream(seed, &[streams::SPLIT]));
    let mut labels = vec![Split::Test; total];
    for (rank, &idx) in order.iter().enumerate() {
        labels[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    labels
}

fn repair(interactions: &mut [Interaction], num_users: usize, num_items: usize) {
    let mut user_train = vec![0usize; num_users];
    let mut item_train = vec![0usize; num_items];
    for it in interactions.iter().filter(|it| it.split == Split::Train) {
        user_train[it.user as usize] += 1;
        item_train[it.item as usize] += 1;
    }
    // Interactions are sorted by (user, item); the first held-out pair of an
    // entity is the one moved.
    for k in 0..interactions.len() {
        let it = interactions[k];
        if it.split != Split::Train && user_train[it.user as usize] == 0 {
            interactions[k].split = Split::Train;
            user_train[it.user as usize] += 1;
            item_train[it.item as usize] += 1;
        }
    }
    for k in 0..interactions.len() {
        let it = interactions[k];
        if it.split != Split::Train && item_train[it.item as usize] == 0 {
            interactions[k].split = Split::Train;
            user_train[it.user as usize] += 1;
            item_train[it.item as usize] += 1;
        }
    }
}
