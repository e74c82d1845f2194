//! Recovers planted user and item blocks as latent groups.
//!
//! cargo run --release --example planted_groups [epochs]

use std::time::Instant;

use dbrec::data::synthetic::PlantedBlocks;
use dbrec::data::{prepare_pairs, FilterConfig, PrepareConfig};
use dbrec::eval::purity;
use dbrec::model::{HyperParams, Model, Side, Variant};
use dbrec::training::{initial_model, pretrain, train, TrainConfig};

fn block_labels(ids: &[String], blocks: &std::collections::BTreeMap<String, usize>) -> Vec<usize> {
    ids.iter().map(|id| blocks[id]).collect()
}

fn report(stage: &str, model: &Model, users: &[usize], items: &[usize]) -> dbrec::Result<()> {
    let labels = model.group_labels()?;
    println!(
        "{stage:<12} user purity {:.3}  item purity {:.3}",
        purity(&labels.user, users),
        purity(&labels.item, items)
    );
    Ok(())
}

fn main() -> dbrec::Result<()> {
    env_logger::init();
    let epochs = std::env::args().nth(1).map_or(30, |s| s.parse().expect("epochs"));
    let start = Instant::now();
    let planted = PlantedBlocks::default().generate();
    let prep = PrepareConfig {
        filter: FilterConfig {
            min_user_positives: 1,
            min_item_users: 1,
            fixpoint: false,
        },
        ..PrepareConfig::default()
    };
    let ds = prepare_pairs(&planted.positives, &prep)?;
    let users = block_labels(ds.user_ids(), &planted.user_block);
    let items = block_labels(ds.item_ids(), &planted.item_block);

    let cfg = TrainConfig {
        hp: HyperParams {
            d: 16,
            d_g: 8,
            k: 2,
            lr: 1e-3,
            alpha: 0.1,
            hidden_hier: vec![16, 16],
            ..HyperParams::default()
        },
        variant: Variant::Full,
        pretrain_epochs: 20,
        epochs,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let pre = pretrain(&ds, &cfg)?;
    let model = initial_model(&ds, &cfg, &pre.model)?;
    let km = dbrec::training::kmeans(model.store.values(model.params.embedding(Side::User)), 2, 100, 1e-4, 0)?;
    println!("k-means on pretrained user embeddings: purity {:.3}", purity(&km.labels, &users));
    report("initial", &model, &users, &items)?;
    let ckpt = train(&ds, &cfg, model, &mut |_| Ok(()))?;
    report("trained", &ckpt.model, &users, &items)?;
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
