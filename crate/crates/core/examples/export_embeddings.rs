//! Writes user, item and group embeddings with hard group labels to CSV
//! and prints group sizes.
//!
//! cargo run --release --example export_embeddings -- [out.csv]

use std::collections::BTreeMap;

use dbrec::data::synthetic::PlantedBlocks;
use dbrec::data::{prepare_pairs, FilterConfig, PrepareConfig};
use dbrec::eval::{export_embeddings, write_export};
use dbrec::model::HyperParams;
use dbrec::training::{initial_model, pretrain, train, TrainConfig};

fn main() -> dbrec::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "embeddings.csv".into());
    let planted = PlantedBlocks {
        blocks: 3,
        ..PlantedBlocks::default()
    }
    .generate();
    let prep = PrepareConfig {
        filter: FilterConfig {
            min_user_positives: 1,
            min_item_users: 1,
            fixpoint: false,
        },
        ..PrepareConfig::default()
    };
    let ds = prepare_pairs(&planted.positives, &prep)?;
    let cfg = TrainConfig {
        hp: HyperParams {
            d: 16,
            d_g: 8,
            k: 3,
            lr: 1e-3,
            alpha: 0.1,
            hidden_hier: vec![16, 16],
            ..HyperParams::default()
        },
        pretrain_epochs: 10,
        epochs: 10,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let pre = pretrain(&ds, &cfg)?;
    let ckpt = train(&ds, &cfg, initial_model(&ds, &cfg, &pre.model)?, &mut |_| Ok(()))?;
    let rows = export_embeddings(&ckpt.model)?;
    write_export(std::path::Path::new(&out), &rows)?;

    let mut sizes: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.entity == "user" || r.entity == "item") {
        *sizes.entry((r.entity.as_str(), r.group)).or_default() += 1;
    }
    for ((entity, group), n) in sizes {
        println!("{entity:<5} group {group}: {n}");
    }
    println!("{} rows -> {out}", rows.len());
    Ok(())
}
