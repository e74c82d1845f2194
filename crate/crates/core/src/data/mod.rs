//! Dataset ingestion, preparation and sampling.

mod dataset;
mod load;
mod prepare;
mod sampling;
pub mod synthetic;

use std::path::Path;

pub use dataset::{Interaction, InteractionDataset, Split};
pub use load::{load_raw, parse_raw, raw_stats, RawFormat, RawRecord, RawStats};
pub use prepare::{
    core_filter, split, split_counts, to_implicit, FilterConfig, FilteredPairs, PositivePairs, SplitRatios,
    POSITIVE_RATING_THRESHOLD,
};
pub use sampling::{build_eval_candidates, sample_cf_negatives, EVAL_NEGATIVES};

use crate::error::Result;

/// Positive pairs for a training step, with their sampled negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub positives: Vec<(u32, u32)>,
    /// `cf_negatives[k]` are the negative items for `positives[k]`.
    pub cf_negatives: Vec<Vec<u32>>,
    pub group_negative_users: Vec<u32>,
    pub group_negative_items: Vec<u32>,
}

impl TrainBatch {
    /// Every scored `(user, item, label)` triple: each positive followed by
    /// its negatives.
    pub fn labeled_pairs(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::with_capacity(self.positives.len() * (1 + self.cf_negatives.first().map_or(0, Vec::len)));
        for (&(u, v), negs) in self.positives.iter().zip(&self.cf_negatives) {
            out.push((u, v, 1.0));
            out.extend(negs.iter().map(|&n| (u, n, 0.0)));
        }
        out
    }

    /// Distinct users of the batch (positives and negatives share users), in
    /// first-appearance order.
    pub fn distinct_users(&self) -> Vec<u32> {
        distinct(self.positives.iter().map(|&(u, _)| u))
    }

    /// Distinct items among positives and CF negatives, in first-appearance
    /// order.
    pub fn distinct_items(&self) -> Vec<u32> {
        distinct(
            self.positives
                .iter()
                .zip(&self.cf_negatives)
                .flat_map(|(&(_, v), negs)| std::iter::once(v).chain(negs.iter().copied())),
        )
    }
}

fn distinct(iter: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut seen = std::collections::HashSet::new();
    iter.filter(|x| seen.insert(*x)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareConfig {
    pub filter: FilterConfig,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            ratios: SplitRatios::default(),
            seed: 0,
        }
    }
}

/// Filter → split for positives that are already implicit.
pub fn prepare_pairs(positives: &PositivePairs, cfg: &PrepareConfig) -> Result<InteractionDataset> {
    let filtered = core_filter(positives, &cfg.filter)?;
    split(filtered, &cfg.ratios, cfg.seed)
}

/// Load → implicit → filter → split.
pub fn prepare(path: &Path, format: RawFormat, cfg: &PrepareConfig) -> Result<InteractionDataset> {
    let records = load_raw(path, format)?;
    let stats = raw_stats(&records);
    log::info!(
        "loaded {}: {} users, {} items, {} records",
        path.display(),
        stats.users,
        stats.items,
        stats.records
    );
    let positives = to_implicit(&records, format);
    let filtered = core_filter(&positives, &cfg.filter)?;
    let ds = split(filtered, &cfg.ratios, cfg.seed)?;
    log::info!(
        "prepared: {} users, {} items, train/valid/test = {}/{}/{}",
        ds.num_users(),
        ds.num_items(),
        ds.count(Split::Train),
        ds.count(Split::Valid),
        ds.count(Split::Test)
    );
    Ok(ds)
}
