//! Pretraining, group initialization, the epoch loop and checkpoints.

mod kmeans;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::data::{sample_cf_negatives, InteractionDataset, Split, TrainBatch};
use crate::engine::{Adam, Graph, Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{HyperParams, LossValues, Model, Objective, Side, Variant};
use crate::seed::{self, streams};

pub use kmeans::{kmeans, project_centroids, KMeans};

const MAGIC: &[u8; 8] = b"DBRECCK\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hp: HyperParams,
    pub variant: Variant,
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    /// Validate every this many epochs (and after the last one); 0 never
    /// validates.
    pub eval_every: usize,
    /// Stop after this many validations without a new best HR@10.
    pub patience: usize,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
    /// Carry over only the embeddings from pretraining, not the user-item
    /// network.
    pub embeddings_only_transfer: bool,
    /// Tensors excluded from updates, by name.
    pub frozen: Vec<String>,
    /// Fill the `wall_seconds` log column. Off by default so logs are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            variant: Variant::Full,
            seed: 0,
            pretrain_epochs: 10,
            epochs: 100,
            eval_every: 1,
            patience: 10,
            kmeans_iters: 100,
            kmeans_tol: 1e-4,
            embeddings_only_transfer: false,
            frozen: Vec::new(),
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.kmeans_iters == 0 || !(self.kmeans_tol >= 0.0) {
            return Err(Error::Config("kmeans_iters must be >= 1 and kmeans_tol >= 0".into()));
        }
        Ok(())
    }
}

/// One row of the training log. Losses are epoch sums divided by the number
/// of training positives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub cf: f64,
    pub user_hierarchy: f64,
    pub item_hierarchy: f64,
    pub user_recon: f64,
    pub item_recon: f64,
    pub val_hr10: Option<f64>,
    pub val_ndcg10: Option<f64>,
    pub wall_seconds: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,L_uv,L_uu,L_vv,L_u,L_v,val_HR@10,val_NDCG@10,wall_seconds";

pub fn format_log(rows: &[EpochLog]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.cf,
            r.user_hierarchy,
            r.item_hierarchy,
            r.user_recon,
            r.item_recon,
            opt(r.val_hr10),
            opt(r.val_ndcg10),
            opt(r.wall_seconds)
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestState {
    pub epoch: usize,
    pub val_hr10: f64,
    pub store: ParamStore,
}

/// Everything needed to continue training exactly where it stopped.
///
/// Random streams are derived from `(seed, epoch)`, so the seed and the
/// epoch counter are the whole generator state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Model,
    pub objective: Objective,
    pub seed: u64,
    pub frozen: Vec<String>,
    pub epochs_done: usize,
    pub best: Option<BestState>,
    pub evals_since_best: usize,
    pub stopped_early: bool,
    pub log: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn new(model: Model, objective: Objective, seed: u64, frozen: Vec<String>) -> Result<Self> {
        for name in &frozen {
            if model.store.find(name).is_none() {
                return Err(Error::Config(format!("cannot freeze unknown tensor {name:?}")));
            }
        }
        Ok(Self {
            model,
            objective,
            seed,
            frozen,
            epochs_done: 0,
            best: None,
            evals_since_best: 0,
            stopped_early: false,
            log: Vec::new(),
        })
    }

    /// The best-validation model, or the current one if nothing was
    /// validated.
    pub fn best_model(&self) -> Model {
        let mut m = self.model.clone();
        if let Some(b) = &self.best {
            m.store = b.store.clone();
        }
        m
    }

    pub fn trainable(&self) -> Vec<ParamId> {
        let p = &self.model.params;
        let ids = match self.objective {
            Objective::Basic => {
                let mut ids = p.interaction_ids();
                ids.sort_unstable();
                ids
            }
            Objective::Dual(mask) => p.trainable_ids(&mask),
        };
        ids.into_iter()
            .filter(|&id| !self.frozen.contains(&self.model.store.get(id).name))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(MAGIC, VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        container::decode(MAGIC, VERSION, bytes)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    container::write(path, MAGIC, VERSION, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    container::read(path, MAGIC, VERSION)
}

/// Shuffled training positives of one epoch, cut into batches, with CF
/// negatives and per-batch group negatives. CF sampling and group sampling
/// use separate streams, so switching the group terms on or off leaves the
/// CF batches unchanged.
pub fn epoch_batches(dataset: &InteractionDataset, hp: &HyperParams, seed: u64, epoch: usize) -> Result<Vec<TrainBatch>> {
    let mut cf_rng = seed::stream(seed, &[streams::SHUFFLE_AND_CF_NEGATIVES, epoch as u64]);
    let mut group_rng = seed::stream(seed, &[streams::GROUP_NEGATIVES, epoch as u64]);
    let mut pairs = dataset.train_pairs().to_vec();
    pairs.shuffle(&mut cf_rng);
    let (m, n) = (dataset.num_users() as u32, dataset.num_items() as u32);
    pairs
        .chunks(hp.batch_size)
        .map(|chunk| {
            let cf_negatives = chunk
                .iter()
                .map(|&(u, _)| sample_cf_negatives(dataset, u, hp.neg_cf, &mut cf_rng))
                .collect::<Result<Vec<_>>>()?;
            let group_negative_users = (0..hp.p_group).map(|_| group_rng.gen_range(0..m)).collect();
            let group_negative_items = (0..hp.p_group).map(|_| group_rng.gen_range(0..n)).collect();
            Ok(TrainBatch {
                positives: chunk.to_vec(),
                cf_negatives,
                group_negative_users,
                group_negative_items,
            })
        })
        .collect()
}

/// Options of a run of epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Total epochs the checkpoint should reach.
    pub epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub record_wall_time: bool,
}

impl RunOptions {
    pub fn from_config(cfg: &TrainConfig, epochs: usize) -> Self {
        Self {
            epochs,
            eval_every: cfg.eval_every,
            patience: cfg.patience,
            record_wall_time: cfg.record_wall_time,
        }
    }
}

fn with_diagnostics(e: Error, store: &ParamStore, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!(
            "{what} at epoch {epoch}, batch {batch}; first non-finite tensor: {}",
            store.first_non_finite().unwrap_or("none (values finite, loss diverged)")
        )),
        other => other,
    }
}

/// Trains one epoch in place and returns the summed loss terms.
fn run_epoch(ckpt: &mut Checkpoint, dataset: &InteractionDataset, trainable: &[ParamId]) -> Result<LossValues> {
    let epoch = ckpt.epochs_done;
    let hp = ckpt.model.hp.clone();
    let adam = Adam::new(hp.lr);
    let batches = epoch_batches(dataset, &hp, ckpt.seed, epoch)?;
    let mut sums = LossValues::default();
    for (b, batch) in batches.iter().enumerate() {
        let model = &mut ckpt.model;
        let mut g = Graph::new();
        let terms = model.batch_loss(&mut g, batch, ckpt.objective, hp.alpha)?;
        g.forward(&model.store)
            .map_err(|e| with_diagnostics(e, &model.store, epoch + 1, b))?;
        let v = terms.values(&g)?;
        g.backward(terms.total, &mut model.store)?;
        adam.step(&mut model.store, trainable)
            .map_err(|e| with_diagnostics(e, &model.store, epoch + 1, b))?;
        sums.total += v.total;
        sums.cf += v.cf;
        sums.user_hierarchy += v.user_hierarchy;
        sums.item_hierarchy += v.item_hierarchy;
        sums.user_recon += v.user_recon;
        sums.item_recon += v.item_recon;
    }
    ckpt.epochs_done += 1;
    Ok(sums)
}

/// Trains until `opts.epochs` epochs are done or validation stops
/// improving. `on_epoch` sees the checkpoint after every epoch.
pub fn run(
    ckpt: &mut Checkpoint,
    dataset: &InteractionDataset,
    opts: &RunOptions,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<()> {
    if ckpt.model.num_users != dataset.num_users() || ckpt.model.num_items != dataset.num_items() {
        return Err(Error::Config(format!(
            "checkpoint is for {} users and {} items, dataset has {} and {}",
            ckpt.model.num_users,
            ckpt.model.num_items,
            dataset.num_users(),
            dataset.num_items()
        )));
    }
    let trainable = ckpt.trainable();
    let positives = dataset.train_pairs().len() as f64;
    while ckpt.epochs_done < opts.epochs && !ckpt.stopped_early {
        let start = Instant::now();
        let sums = run_epoch(ckpt, dataset, &trainable)?;
        let epoch = ckpt.epochs_done;
        let validate = opts.eval_every > 0 && (epoch % opts.eval_every == 0 || epoch == opts.epochs);
        let (mut hr, mut ndcg) = (None, None);
        if validate {
            let report = eval::evaluate(&ckpt.model, ckpt.objective, dataset, Split::Valid, ckpt.seed, "valid")?;
            hr = Some(report.hr_at(10));
            ndcg = Some(report.ndcg_at(10));
            let h = report.hr_at(10);
            if ckpt.best.as_ref().map_or(true, |b| h > b.val_hr10) {
                ckpt.best = Some(BestState {
                    epoch,
                    val_hr10: h,
                    store: ckpt.model.store.clone(),
                });
                ckpt.evals_since_best = 0;
            } else {
                ckpt.evals_since_best += 1;
                if ckpt.evals_since_best >= opts.patience {
                    ckpt.stopped_early = true;
                }
            }
        }
        let row = EpochLog {
            epoch,
            cf: sums.cf / positives,
            user_hierarchy: sums.user_hierarchy / positives,
            item_hierarchy: sums.item_hierarchy / positives,
            user_recon: sums.user_recon / positives,
            item_recon: sums.item_recon / positives,
            val_hr10: hr,
            val_ndcg10: ndcg,
            wall_seconds: opts.record_wall_time.then(|| start.elapsed().as_secs_f64()),
        };
        log::info!(
            "epoch {epoch}: L_uv {:.5} L_uu {:.5} L_vv {:.5} L_u {:.5} L_v {:.5}{}",
            row.cf,
            row.user_hierarchy,
            row.item_hierarchy,
            row.user_recon,
            row.item_recon,
            hr.map(|h| format!(" val HR@10 {h:.4}")).unwrap_or_default()
        );
        ckpt.log.push(row);
        on_epoch(ckpt)?;
    }
    Ok(())
}

/// Trains the user-item network alone with BCE for `cfg.pretrain_epochs`
/// epochs, without validation.
pub fn pretrain(dataset: &InteractionDataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let model = Model::new(cfg.hp.clone(), dataset.num_users(), dataset.num_items(), cfg.seed)?;
    let mut ckpt = Checkpoint::new(model, Objective::Basic, cfg.seed, Vec::new())?;
    let opts = RunOptions {
        epochs: cfg.pretrain_epochs,
        eval_every: 0,
        patience: cfg.patience,
        record_wall_time: cfg.record_wall_time,
    };
    run(&mut ckpt, dataset, &opts, &mut |_| Ok(()))?;
    Ok(ckpt)
}

/// Sets the group embeddings of `side` to the projected k-means centroids
/// of the current embeddings.
pub fn init_groups(model: &mut Model, side: Side, cfg: &TrainConfig) -> Result<KMeans> {
    let hp = &model.hp;
    let emb = model.store.values(model.params.embedding(side)).clone();
    let tag = match side {
        Side::User => 0,
        Side::Item => 1,
    };
    let km = kmeans(&emb, hp.k, cfg.kmeans_iters, cfg.kmeans_tol, seed::derive_seed(cfg.seed, &[tag]))?;
    let groups: Matrix = project_centroids(&km.centroids, hp.d_g, seed::derive_seed(cfg.seed, &[tag]), false)?;
    let id = model.params.side(side).group_emb;
    model.store.get_mut(id).reset_values(groups)?;
    Ok(km)
}

/// Fresh model for `cfg.variant`: seeded init, pretrained user-item network
/// (or embeddings) copied in, group embeddings from k-means.
pub fn initial_model(dataset: &InteractionDataset, cfg: &TrainConfig, pretrained: &Model) -> Result<Model> {
    cfg.validate()?;
    let mut model = Model::new(cfg.hp.clone(), dataset.num_users(), dataset.num_items(), cfg.seed)?;
    model.adopt_interaction(pretrained, cfg.embeddings_only_transfer)?;
    let mask = cfg.variant.mask();
    if mask.user_group_bridge || mask.user_recon || mask.user_hierarchy {
        init_groups(&mut model, Side::User, cfg)?;
    }
    if mask.item_group_bridge || mask.item_recon || mask.item_hierarchy {
        init_groups(&mut model, Side::Item, cfg)?;
    }
    Ok(model)
}

/// Trains `cfg.variant` from `model` for `cfg.epochs` epochs.
pub fn train(
    dataset: &InteractionDataset,
    cfg: &TrainConfig,
    model: Model,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut ckpt = Checkpoint::new(model, Objective::for_variant(cfg.variant), cfg.seed, cfg.frozen.clone())?;
    run(&mut ckpt, dataset, &RunOptions::from_config(cfg, cfg.epochs), on_epoch)?;
    Ok(ckpt)
}

/// Continues a checkpoint up to `cfg.epochs` total epochs.
pub fn resume(
    dataset: &InteractionDataset,
    cfg: &TrainConfig,
    mut ckpt: Checkpoint,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    run(&mut ckpt, dataset, &RunOptions::from_config(cfg, cfg.epochs), on_epoch)?;
    Ok(ckpt)
}
