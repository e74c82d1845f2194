//! Synthetic implicit-feedback data with planted block structure.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::prepare::PositivePairs;

#[derive(Clone, Debug)]
pub struct PlantedBlocks {
    pub users: usize,
    pub items: usize,
    /// Number of user blocks; item blocks use the same count and block `s`
    /// of users prefers block `s` of items.
    pub blocks: usize,
    pub p_within: f64,
    pub p_across: f64,
    pub seed: u64,
}

impl Default for PlantedBlocks {
    fn default() -> Self {
        Self {
            users: 200,
            items: 300,
            blocks: 2,
            p_within: 0.3,
            p_across: 0.02,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub positives: PositivePairs,
    pub user_block: BTreeMap<String, usize>,
    pub item_block: BTreeMap<String, usize>,
}

pub fn user_id(u: usize) -> String {
    format!("u{u:06}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i:06}")
}

impl PlantedBlocks {
    /// Users and items are assigned to blocks round-robin-free: the first
    /// `users / blocks` users form block 0, and so on.
    pub fn generate(&self) -> SyntheticData {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let ublock = |u: usize| (u * self.blocks) / self.users;
        let iblock = |i: usize| (i * self.blocks) / self.items;
        let mut positives = PositivePairs::new();
        for u in 0..self.users {
            for i in 0..self.items {
                let p = if ublock(u) == iblock(i) { self.p_within } else { self.p_across };
                if rng.gen::<f64>() < p {
                    positives.insert((user_id(u), item_id(i)));
                }
            }
        }
        SyntheticData {
            positives,
            user_block: (0..self.users).map(|u| (user_id(u), ublock(u))).collect(),
            item_block: (0..self.items).map(|i| (item_id(i), iblock(i))).collect(),
        }
    }
}

/// Every user interacts with `per_user` items drawn uniformly at random.
pub fn uniform_random(users: usize, items: usize, per_user: usize, seed: u64) -> PositivePairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives = PositivePairs::new();
    for u in 0..users {
        let picked = rand::seq::index::sample(&mut rng, items, per_user.min(items));
        for i in picked.iter() {
            positives.insert((user_id(u), item_id(i)));
        }
    }
    positives
}

/// Renders positives as a MovieLens-style ratings file (every rating 5).
pub fn to_movielens_text(positives: &PositivePairs) -> String {
    let mut out = String::new();
    for (k, (u, i)) in positives.iter().enumerate() {
        writeln!(out, "{u}::{i}::5::{}", 978_300_000 + k).expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_density_is_block_structured() {
        let data = PlantedBlocks::default().generate();
        let mut within = 0usize;
        let mut across = 0usize;
        for (u, i) in &data.positives {
            if data.user_block[u] == data.item_block[i] {
                within += 1;
            } else {
                across += 1;
            }
        }
        // 2 · 100 · 150 cells per side, expected 9000 within and 600 across
        assert!((8500..9500).contains(&within), "{within}");
        assert!((450..750).contains(&across), "{across}");
    }
}
