//! The dual-bridging recommender: parameters, scoring paths and the joint
//! objective.

pub mod forward;
mod params;

use serde::{Deserialize, Serialize};

use crate::data::TrainBatch;
use crate::engine::{Graph, Matrix, ParamStore, Var};
use crate::error::{Error, Result};

pub use forward::hard_assignment;
pub use params::{init_params, GroupSide, HyperParams, Layer, Mask, Mlp, ModelParams, Side, Variant};

/// Rows per graph when scoring or labelling many entities at once.
const CHUNK: usize = 4096;

/// Which network scores a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// The user-item network alone, trained with BCE only.
    Basic,
    /// Dual-bridging scoring plus the auxiliary terms enabled by the mask.
    Dual(Mask),
}

impl Objective {
    pub fn for_variant(variant: Variant) -> Self {
        Objective::Dual(variant.mask())
    }

    fn mask(&self) -> Mask {
        match self {
            Objective::Basic => Variant::InteractionOnly.mask(),
            Objective::Dual(m) => *m,
        }
    }
}

/// Hard group label of every user and item.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabels {
    pub user: Vec<usize>,
    pub item: Vec<usize>,
}

/// Graph handles of the loss terms of one batch. Disabled terms are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub cf: Var,
    pub user_hierarchy: Option<Var>,
    pub item_hierarchy: Option<Var>,
    pub user_recon: Option<Var>,
    pub item_recon: Option<Var>,
}

/// Evaluated loss values; disabled terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub cf: f64,
    pub user_hierarchy: f64,
    pub item_hierarchy: f64,
    pub user_recon: f64,
    pub item_recon: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> Result<LossValues> {
        let opt = |v: Option<Var>| v.map_or(Ok(0.0), |v| g.scalar(v));
        Ok(LossValues {
            total: g.scalar(self.total)?,
            cf: g.scalar(self.cf)?,
            user_hierarchy: opt(self.user_hierarchy)?,
            item_hierarchy: opt(self.item_hierarchy)?,
            user_recon: opt(self.user_recon)?,
            item_recon: opt(self.item_recon)?,
        })
    }
}

/// Parameters with their shapes and handles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub hp: HyperParams,
    pub num_users: usize,
    pub num_items: usize,
    pub store: ParamStore,
    pub params: ModelParams,
}

impl Model {
    /// Seeded initialization, see [`init_params`].
    pub fn new(hp: HyperParams, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        let (store, params) = init_params(&hp, num_users, num_items, seed)?;
        Ok(Self {
            hp,
            num_users,
            num_items,
            store,
            params,
        })
    }

    pub fn count(&self, side: Side) -> usize {
        match side {
            Side::User => self.num_users,
            Side::Item => self.num_items,
        }
    }

    /// Copies the user-item network (or only the embeddings) from a model
    /// of identical shape.
    pub fn adopt_interaction(&mut self, other: &Model, embeddings_only: bool) -> Result<()> {
        let ids = if embeddings_only {
            vec![self.params.user_emb, self.params.item_emb]
        } else {
            self.params.interaction_ids()
        };
        for id in ids {
            let name = self.store.get(id).name.clone();
            let src = other
                .store
                .find(&name)
                .ok_or_else(|| Error::Config(format!("source model has no tensor {name}")))?;
            let values = other.store.values(src).clone();
            self.store.get_mut(id).reset_values(values)?;
        }
        Ok(())
    }

    fn check_indices(&self, side: Side, idx: &[u32]) -> Result<()> {
        let n = self.count(side);
        match idx.iter().find(|&&i| i as usize >= n) {
            Some(bad) => Err(Error::Usage(format!("{side:?} index {bad} out of range (< {n})"))),
            None => Ok(()),
        }
    }

    /// Group activations `β` for the given entities.
    pub fn activations(&self, side: Side, idx: &[u32]) -> Result<Matrix> {
        self.activations_in(&self.store, side, idx)
    }

    fn activations_in(&self, store: &ParamStore, side: Side, idx: &[u32]) -> Result<Matrix> {
        self.check_indices(side, idx)?;
        let mut g = Graph::new();
        let x = forward::embeddings(&mut g, &self.params, side, idx);
        let beta = forward::group_activation(&mut g, &self.params, side, x);
        g.forward(store)?;
        Ok(g.value(beta)?.clone())
    }

    /// Hard labels of the given entities under the current parameters.
    pub fn hard_labels(&self, side: Side, idx: &[u32]) -> Result<Vec<usize>> {
        Ok(hard_assignment(&self.activations(side, idx)?))
    }

    /// Hard labels of every user and item.
    pub fn group_labels(&self) -> Result<GroupLabels> {
        let all = |side: Side| -> Result<Vec<usize>> {
            let idx: Vec<u32> = (0..self.count(side) as u32).collect();
            let mut out = Vec::with_capacity(idx.len());
            for chunk in idx.chunks(CHUNK) {
                out.extend(self.hard_labels(side, chunk)?);
            }
            Ok(out)
        };
        Ok(GroupLabels {
            user: all(Side::User)?,
            item: all(Side::Item)?,
        })
    }

    /// Hierarchy posteriors for the given entities.
    pub fn hierarchy_posterior(&self, side: Side, idx: &[u32]) -> Result<Matrix> {
        self.check_indices(side, idx)?;
        let mut g = Graph::new();
        let post = forward::hierarchy_posterior(&mut g, &self.params, side, idx);
        g.forward(&self.store)?;
        Ok(g.value(post)?.clone())
    }

    /// Probabilities for `(user, item)` pairs. `labels` must be given for
    /// dual scoring with a group bridge enabled.
    pub fn score_pairs(
        &self,
        pairs: &[(u32, u32)],
        objective: Objective,
        labels: Option<&GroupLabels>,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(CHUNK) {
            let users: Vec<u32> = chunk.iter().map(|p| p.0).collect();
            let items: Vec<u32> = chunk.iter().map(|p| p.1).collect();
            self.check_indices(Side::User, &users)?;
            self.check_indices(Side::Item, &items)?;
            let mut g = Graph::new();
            let logit = self.logits(&mut g, objective, &users, &items, labels)?;
            let prob = g.sigmoid(logit);
            g.forward(&self.store)?;
            out.extend_from_slice(g.value(prob)?.as_slice());
        }
        Ok(out)
    }

    fn logits(
        &self,
        g: &mut Graph,
        objective: Objective,
        users: &[u32],
        items: &[u32],
        labels: Option<&GroupLabels>,
    ) -> Result<Var> {
        match objective {
            Objective::Basic => Ok(forward::basic_logit(g, &self.params, users, items)),
            Objective::Dual(mask) => {
                let pick = |wanted: bool, table: Option<&Vec<usize>>, idx: &[u32]| -> Result<Vec<usize>> {
                    if !wanted {
                        return Ok(Vec::new());
                    }
                    let table = table.ok_or_else(|| Error::Usage("group labels required for dual scoring".into()))?;
                    Ok(idx.iter().map(|&i| table[i as usize]).collect())
                };
                let ug = pick(mask.user_group_bridge, labels.map(|l| &l.user), users)?;
                let ig = pick(mask.item_group_bridge, labels.map(|l| &l.item), items)?;
                Ok(forward::dual_bridge_logit(g, &self.params, &mask, users, items, &ug, &ig))
            }
        }
    }

    /// Builds the loss graph of one batch. Hard labels are computed from the
    /// current parameters in a separate pass and enter the graph as
    /// constants.
    pub fn batch_loss(&self, g: &mut Graph, batch: &TrainBatch, objective: Objective, alpha: f64) -> Result<LossTerms> {
        self.batch_loss_in(&self.store, g, batch, objective, alpha)
    }

    /// [`Model::batch_loss`] with parameter values taken from `store`, which
    /// must have this model's layout.
    pub fn batch_loss_in(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        batch: &TrainBatch,
        objective: Objective,
        alpha: f64,
    ) -> Result<LossTerms> {
        if batch.positives.is_empty() {
            return Err(Error::Usage("empty training batch".into()));
        }
        if !(alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
        }
        let mask = objective.mask();
        let triples = batch.labeled_pairs();
        let users: Vec<u32> = triples.iter().map(|t| t.0).collect();
        let items: Vec<u32> = triples.iter().map(|t| t.1).collect();
        let targets: Vec<f64> = triples.iter().map(|t| t.2).collect();
        self.check_indices(Side::User, &users)?;
        self.check_indices(Side::Item, &items)?;

        let distinct_users = batch.distinct_users();
        let distinct_items = batch.distinct_items();
        let objective_dual = matches!(objective, Objective::Dual(_));
        let user_table = if objective_dual && mask.needs_user_labels() {
            Some(hard_assignment(&self.activations_in(store, Side::User, &distinct_users)?))
        } else {
            None
        };
        let item_table = if objective_dual && mask.needs_item_labels() {
            Some(hard_assignment(&self.activations_in(store, Side::Item, &distinct_items)?))
        } else {
            None
        };
        let lookup = |distinct: &[u32], table: &Option<Vec<usize>>, idx: &[u32]| -> Vec<usize> {
            match table {
                None => Vec::new(),
                Some(t) => {
                    let pos: std::collections::HashMap<u32, usize> =
                        distinct.iter().enumerate().map(|(k, &e)| (e, t[k])).collect();
                    idx.iter().map(|e| pos[e]).collect()
                }
            }
        };

        let logit = match objective {
            Objective::Basic => forward::basic_logit(g, &self.params, &users, &items),
            Objective::Dual(mask) => {
                let ug = if mask.user_group_bridge {
                    lookup(&distinct_users, &user_table, &users)
                } else {
                    Vec::new()
                };
                let ig = if mask.item_group_bridge {
                    lookup(&distinct_items, &item_table, &items)
                } else {
                    Vec::new()
                };
                forward::dual_bridge_logit(g, &self.params, &mask, &users, &items, &ug, &ig)
            }
        };
        let cf = forward::cf_loss(g, logit, targets);

        let mut terms = LossTerms {
            total: cf,
            cf,
            user_hierarchy: None,
            item_hierarchy: None,
            user_recon: None,
            item_recon: None,
        };
        if !objective_dual || !mask.any_auxiliary() {
            return Ok(terms);
        }
        let p = &self.params;
        if mask.user_hierarchy {
            let labels = user_table.clone().expect("user labels computed");
            terms.user_hierarchy = Some(forward::hierarchy_loss(g, p, Side::User, &distinct_users, labels));
        }
        if mask.item_hierarchy {
            let labels = item_table.clone().expect("item labels computed");
            terms.item_hierarchy = Some(forward::hierarchy_loss(g, p, Side::Item, &distinct_items, labels));
        }
        for (on, side, idx, negs, slot) in [
            (
                mask.user_recon,
                Side::User,
                &distinct_users,
                &batch.group_negative_users,
                &mut terms.user_recon,
            ),
            (
                mask.item_recon,
                Side::Item,
                &distinct_items,
                &batch.group_negative_items,
                &mut terms.item_recon,
            ),
        ] {
            if !on {
                continue;
            }
            if negs.is_empty() {
                return Err(Error::Usage(format!("{side:?} group negatives missing from batch")));
            }
            self.check_indices(side, negs)?;
            let x = forward::embeddings(g, p, side, idx);
            let beta = forward::group_activation(g, p, side, x);
            let mu = forward::soft_group_repr(g, p, side, beta);
            let recon = forward::reconstruct(g, p, side, mu);
            let neg = forward::embeddings(g, p, side, negs);
            *slot = Some(forward::group_margin_loss(g, recon, x, neg, negs.len()));
        }
        // L_uu + L_vv + L_u + L_v in that order, then scaled.
        let aux: Vec<Var> = [
            terms.user_hierarchy,
            terms.item_hierarchy,
            terms.user_recon,
            terms.item_recon,
        ]
        .into_iter()
        .flatten()
        .collect();
        let mut acc = aux[0];
        for &t in &aux[1..] {
            acc = g.add(acc, t);
        }
        let scaled = g.scale(acc, alpha);
        terms.total = g.add(cf, scaled);
        Ok(terms)
    }
}
