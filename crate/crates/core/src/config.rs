//! Flat TOML run configuration.
//!
//! Resolution order: defaults, then the config file, then
//! `DBREC_OUTPUT_DIR`, then command-line overrides. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{FilterConfig, PrepareConfig, RawFormat, SplitRatios};
use crate::error::{Error, Result};
use crate::model::{HyperParams, Variant};
use crate::training::TrainConfig;

pub const OUTPUT_DIR_ENV: &str = "DBREC_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Raw ratings / check-in file read by `prepare`.
    pub dataset: PathBuf,
    pub format: RawFormat,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub variant: Variant,

    pub min_user_positives: usize,
    pub min_item_users: usize,
    pub filter_fixpoint: bool,
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,

    pub d: usize,
    pub d_g: usize,
    pub k: usize,
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub neg_cf: usize,
    pub p_group: usize,
    pub hidden_uv: Vec<usize>,
    pub hidden_ug: Vec<usize>,
    pub hidden_vg: Vec<usize>,
    pub hidden_hier: Vec<usize>,
    pub init_scale: f64,

    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
    pub embeddings_only_transfer: bool,
    pub frozen: Vec<String>,
    pub record_wall_time: bool,
    /// Continue `train` from the variant's last checkpoint if one exists.
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        let tc = TrainConfig::default();
        let filter = FilterConfig::default();
        let ratios = SplitRatios::default();
        Self {
            dataset: PathBuf::from("data/ml-100k/ratings.dat"),
            format: RawFormat::Movielens,
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            variant: Variant::Full,
            min_user_positives: filter.min_user_positives,
            min_item_users: filter.min_item_users,
            filter_fixpoint: filter.fixpoint,
            train_ratio: ratios.train,
            valid_ratio: ratios.valid,
            test_ratio: ratios.test,
            d: hp.d,
            d_g: hp.d_g,
            k: hp.k,
            alpha: hp.alpha,
            lr: hp.lr,
            batch_size: hp.batch_size,
            neg_cf: hp.neg_cf,
            p_group: hp.p_group,
            hidden_uv: hp.hidden_uv,
            hidden_ug: hp.hidden_ug,
            hidden_vg: hp.hidden_vg,
            hidden_hier: hp.hidden_hier,
            init_scale: hp.init_scale,
            pretrain_epochs: tc.pretrain_epochs,
            epochs: tc.epochs,
            eval_every: tc.eval_every,
            patience: tc.patience,
            kmeans_iters: tc.kmeans_iters,
            kmeans_tol: tc.kmeans_tol,
            embeddings_only_transfer: tc.embeddings_only_transfer,
            frozen: tc.frozen,
            record_wall_time: tc.record_wall_time,
            resume: false,
        }
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Resolves a configuration. `overrides` are `key=value` pairs with TOML
    /// values (`lr=0.001`, `hidden_uv=[32,8]`, `variant=dbrec-o`).
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| Error::io(path, e))?
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => toml::Table::new(),
        };
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            table.insert("output_dir".into(), toml::Value::String(dir));
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            table.insert(key.trim().to_string(), parse_value(value.trim()));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.train_config().validate()?;
        cfg.prepare_config().ratios.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            d: self.d,
            d_g: self.d_g,
            k: self.k,
            alpha: self.alpha,
            lr: self.lr,
            batch_size: self.batch_size,
            neg_cf: self.neg_cf,
            p_group: self.p_group,
            hidden_uv: self.hidden_uv.clone(),
            hidden_ug: self.hidden_ug.clone(),
            hidden_vg: self.hidden_vg.clone(),
            hidden_hier: self.hidden_hier.clone(),
            init_scale: self.init_scale,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hp: self.hyper_params(),
            variant: self.variant,
            seed: self.seed,
            pretrain_epochs: self.pretrain_epochs,
            epochs: self.epochs,
            eval_every: self.eval_every,
            patience: self.patience,
            kmeans_iters: self.kmeans_iters,
            kmeans_tol: self.kmeans_tol,
            embeddings_only_transfer: self.embeddings_only_transfer,
            frozen: self.frozen.clone(),
            record_wall_time: self.record_wall_time,
        }
    }

    pub fn prepare_config(&self) -> PrepareConfig {
        PrepareConfig {
            filter: FilterConfig {
                min_user_positives: self.min_user_positives,
                min_item_users: self.min_item_users,
                fixpoint: self.filter_fixpoint,
            },
            ratios: SplitRatios {
                train: self.train_ratio,
                valid: self.valid_ratio,
                test: self.test_ratio,
            },
            seed: self.seed,
        }
    }
}
