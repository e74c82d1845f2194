use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DBRECDS\0";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    interactions: Vec<Interaction>,
}

/// Implicit-feedback interactions with split labels.
///
/// Users and items are indexed densely in `[0, m)` and `[0, n)`, in
/// lexicographic order of their raw ids. Immutable once built.
#[derive(Clone, Debug)]
pub struct InteractionDataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    interactions: Vec<Interaction>,
    train_positives: Vec<HashSet<u32>>,
    all_positives: Vec<HashSet<u32>>,
    train_pairs: Vec<(u32, u32)>,
}

impl PartialEq for InteractionDataset {
    fn eq(&self, other: &Self) -> bool {
        self.user_ids == other.user_ids
            && self.item_ids == other.item_ids
            && self.interactions == other.interactions
    }
}

impl InteractionDataset {
    /// Validates the dataset invariants and builds lookup tables.
    pub fn new(user_ids: Vec<String>, item_ids: Vec<String>, interactions: Vec<Interaction>) -> Result<Self> {
        let (m, n) = (user_ids.len(), item_ids.len());
        if m == 0 || n == 0 {
            return Err(Error::Empty("dataset has no users or no items".into()));
        }
        for ids in [&user_ids, &item_ids] {
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Integrity("raw ids must be strictly sorted".into()));
            }
        }
        let mut train_positives = vec![HashSet::new(); m];
        let mut all_positives = vec![HashSet::new(); m];
        let mut item_in_train = vec![false; n];
        let mut train_pairs = Vec::new();
        for it in &interactions {
            let (u, i) = (it.user as usize, it.item as usize);
            if u >= m || i >= n {
                return Err(Error::Integrity(format!("interaction ({u}, {i}) out of range")));
            }
            if !all_positives[u].insert(it.item) {
                return Err(Error::Integrity(format!("duplicate interaction ({u}, {i})")));
            }
            if it.split == Split::Train {
                train_positives[u].insert(it.item);
                item_in_train[i] = true;
                train_pairs.push((it.user, it.item));
            }
        }
        if let Some(u) = train_positives.iter().position(HashSet::is_empty) {
            return Err(Error::Integrity(format!("user {} has no training interaction", user_ids[u])));
        }
        if let Some(i) = item_in_train.iter().position(|&x| !x) {
            return Err(Error::Integrity(format!("item {} has no training interaction", item_ids[i])));
        }
        Ok(Self {
            user_ids,
            item_ids,
            interactions,
            train_positives,
            all_positives,
            train_pairs,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, raw: &str) -> Option<u32> {
        self.user_ids.binary_search_by(|x| x.as_str().cmp(raw)).ok().map(|i| i as u32)
    }

    pub fn item_index(&self, raw: &str) -> Option<u32> {
        self.item_ids.binary_search_by(|x| x.as_str().cmp(raw)).ok().map(|i| i as u32)
    }

    /// Training pairs in `(user, item)` order.
    pub fn train_pairs(&self) -> &[(u32, u32)] {
        &self.train_pairs
    }

    pub fn pairs(&self, split: Split) -> Vec<(u32, u32)> {
        self.interactions
            .iter()
            .filter(|it| it.split == split)
            .map(|it| (it.user, it.item))
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.interactions.iter().filter(|it| it.split == split).count()
    }

    pub fn is_train_positive(&self, user: u32, item: u32) -> bool {
        self.train_positives[user as usize].contains(&item)
    }

    pub fn is_positive(&self, user: u32, item: u32) -> bool {
        self.all_positives[user as usize].contains(&item)
    }

    pub fn train_positive_count(&self, user: u32) -> usize {
        self.train_positives[user as usize].len()
    }

    pub fn positive_count(&self, user: u32) -> usize {
        self.all_positives[user as usize].len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(MAGIC, VERSION, &self.stored())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let s: Stored = container::decode(MAGIC, VERSION, bytes)?;
        Self::new(s.user_ids, s.item_ids, s.interactions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write(path, MAGIC, VERSION, &self.stored())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Stored = container::read(path, MAGIC, VERSION)?;
        Self::new(s.user_ids, s.item_ids, s.interactions)
    }

    fn stored(&self) -> Stored {
        Stored {
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
            interactions: self.interactions.clone(),
        }
    }
}
