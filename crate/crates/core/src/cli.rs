//! Pipeline commands over an output directory.
//!
//! ```text
//! <output_dir>/
//!   resolved_config.toml
//!   dataset.bin                 prepare
//!   pretrain.ckpt               pretrain
//!   pretrain_log.csv
//!   <variant>/last.ckpt         train
//!   <variant>/best.ckpt
//!   <variant>/train_log.csv
//!   <variant>/metrics.csv       eval
//!   <variant>/embeddings.csv    export
//!   ablation.csv, ablation.txt  ablate
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::RunConfig;
use crate::data::{prepare, InteractionDataset, Split};
use crate::error::{Error, Result};
use crate::eval::{self, export_embeddings, format_table, write_export, MetricReport};
use crate::model::{Objective, Variant};
use crate::training::{
    format_log, initial_model, load_checkpoint, pretrain, resume, save_checkpoint, train, Checkpoint,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Prepare,
    Pretrain,
    Train,
    Eval,
    Export,
    Ablate,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Prepare,
        Command::Pretrain,
        Command::Train,
        Command::Eval,
        Command::Export,
        Command::Ablate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Pretrain => "pretrain",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Export => "export",
            Command::Ablate => "ablate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown command {s:?}")))
    }
}

/// Artifact paths under an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("resolved_config.toml")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.bin")
    }

    pub fn pretrain(&self) -> PathBuf {
        self.root.join("pretrain.ckpt")
    }

    pub fn pretrain_log(&self) -> PathBuf {
        self.root.join("pretrain_log.csv")
    }

    pub fn variant_dir(&self, v: Variant) -> PathBuf {
        self.root.join(v.name())
    }

    pub fn last(&self, v: Variant) -> PathBuf {
        self.variant_dir(v).join("last.ckpt")
    }

    pub fn best(&self, v: Variant) -> PathBuf {
        self.variant_dir(v).join("best.ckpt")
    }

    pub fn train_log(&self, v: Variant) -> PathBuf {
        self.variant_dir(v).join("train_log.csv")
    }

    pub fn metrics(&self, v: Variant) -> PathBuf {
        self.variant_dir(v).join("metrics.csv")
    }

    pub fn embeddings(&self, v: Variant) -> PathBuf {
        self.variant_dir(v).join("embeddings.csv")
    }

    pub fn ablation_csv(&self) -> PathBuf {
        self.root.join("ablation.csv")
    }

    pub fn ablation_table(&self) -> PathBuf {
        self.root.join("ablation.txt")
    }
}

fn require(path: PathBuf, what: &'static str, command: &'static str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { what, path, command })
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_dataset(layout: &Layout) -> Result<InteractionDataset> {
    InteractionDataset::load(&require(layout.dataset(), "prepared dataset", "prepare")?)
}

fn load_pretrained(layout: &Layout) -> Result<Checkpoint> {
    load_checkpoint(&require(layout.pretrain(), "pretrained checkpoint", "pretrain")?)
}

fn load_best(layout: &Layout, v: Variant) -> Result<Checkpoint> {
    let path = require(layout.best(v), "trained checkpoint", "train")?;
    let ckpt = load_checkpoint(&path)?;
    if ckpt.objective != Objective::for_variant(v) {
        return Err(Error::Integrity(format!("{} was not trained as {v}", path.display())));
    }
    Ok(ckpt)
}

/// Trains one variant from the pretrained network, writing checkpoints and
/// the log as it goes.
fn train_variant(cfg: &RunConfig, layout: &Layout, ds: &InteractionDataset, pre: &Checkpoint, v: Variant) -> Result<Checkpoint> {
    let tc = crate::training::TrainConfig {
        variant: v,
        ..cfg.train_config()
    };
    create_dir(&layout.variant_dir(v))?;
    let (last, best, log) = (layout.last(v), layout.best(v), layout.train_log(v));
    let mut save = |ck: &Checkpoint| -> Result<()> {
        save_checkpoint(ck, &last)?;
        write_text(&log, &format_log(&ck.log))
    };
    let mut ckpt = if cfg.resume && last.is_file() {
        log::info!("resuming {v} from {}", last.display());
        resume(ds, &tc, load_checkpoint(&last)?, &mut save)?
    } else {
        let model = initial_model(ds, &tc, &pre.model)?;
        train(ds, &tc, model, &mut save)?
    };
    save(&ckpt)?;
    // The best checkpoint holds the selected parameters as its current state.
    let selected = ckpt.best_model();
    ckpt.model = selected;
    save_checkpoint(&ckpt, &best)?;
    Ok(ckpt)
}

fn evaluate_variant(ckpt: &Checkpoint, ds: &InteractionDataset, cfg: &RunConfig, v: Variant) -> Result<MetricReport> {
    eval::evaluate(&ckpt.model, ckpt.objective, ds, Split::Test, cfg.seed, v.name())
}

/// Runs one pipeline command. Every command writes the resolved config
/// beside its outputs.
pub fn run(command: Command, cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.output_dir);
    create_dir(&layout.root)?;
    let echo = cfg.to_toml();
    log::info!("resolved configuration:\n{echo}");
    write_text(&layout.config(), &echo)?;
    let v = cfg.variant;
    match command {
        Command::Prepare => {
            let ds = prepare(&cfg.dataset, cfg.format, &cfg.prepare_config())?;
            ds.save(&layout.dataset())?;
            println!(
                "prepared {} users, {} items, train/valid/test = {}/{}/{} -> {}",
                ds.num_users(),
                ds.num_items(),
                ds.count(Split::Train),
                ds.count(Split::Valid),
                ds.count(Split::Test),
                layout.dataset().display()
            );
        }
        Command::Pretrain => {
            let ds = load_dataset(&layout)?;
            let ckpt = pretrain(&ds, &cfg.train_config())?;
            save_checkpoint(&ckpt, &layout.pretrain())?;
            write_text(&layout.pretrain_log(), &format_log(&ckpt.log))?;
            println!("pretrained {} epochs -> {}", ckpt.epochs_done, layout.pretrain().display());
        }
        Command::Train => {
            let ds = load_dataset(&layout)?;
            let pre = load_pretrained(&layout)?;
            let ckpt = train_variant(cfg, &layout, &ds, &pre, v)?;
            println!(
                "trained {v} for {} epochs (best validation epoch {:?}) -> {}",
                ckpt.epochs_done,
                ckpt.best.as_ref().map(|b| b.epoch),
                layout.best(v).display()
            );
        }
        Command::Eval => {
            let ckpt = load_best(&layout, v)?;
            let ds = load_dataset(&layout)?;
            let report = evaluate_variant(&ckpt, &ds, cfg, v)?;
            eval::write_csv(&layout.metrics(v), std::slice::from_ref(&report))?;
            print!("{}", format_table(std::slice::from_ref(&report)));
        }
        Command::Export => {
            let ckpt = load_best(&layout, v)?;
            let rows = export_embeddings(&ckpt.model)?;
            write_export(&layout.embeddings(v), &rows)?;
            println!("exported {} rows -> {}", rows.len(), layout.embeddings(v).display());
        }
        Command::Ablate => {
            let ds = load_dataset(&layout)?;
            let pre = load_pretrained(&layout)?;
            let mut reports = Vec::new();
            for variant in Variant::ALL {
                let ckpt = train_variant(cfg, &layout, &ds, &pre, variant)?;
                let report = evaluate_variant(&ckpt, &ds, cfg, variant)?;
                eval::write_csv(&layout.metrics(variant), std::slice::from_ref(&report))?;
                reports.push(report);
            }
            let table = format_table(&reports);
            eval::write_csv(&layout.ablation_csv(), &reports)?;
            write_text(&layout.ablation_table(), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}
