//! Four-variant comparison on a MovieLens ratings file.
//!
//! cargo run --release --example ablation -- data/ml-100k/ratings.dat [epochs] [variants] [seed]
//!
//! `variants` is a comma-separated subset of dbrec-o,dbrec-i,dbrec-u,dbrec.
//! All variants share one pretrained user-item network.

use std::path::PathBuf;
use std::time::Instant;

use dbrec::data::{prepare, PrepareConfig, RawFormat, Split};
use dbrec::eval::{evaluate, format_table};
use dbrec::model::{HyperParams, Objective, Variant};
use dbrec::training::{initial_model, pretrain, train, TrainConfig};

fn main() -> dbrec::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "data/ml-100k/ratings.dat".into()));
    let epochs: usize = args.next().map_or(20, |s| s.parse().expect("epochs"));
    let variants: Vec<Variant> = args
        .next()
        .unwrap_or_else(|| "dbrec-o,dbrec-i,dbrec-u,dbrec".into())
        .split(',')
        .map(|s| s.parse())
        .collect::<dbrec::Result<_>>()?;
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let start = Instant::now();
    let ds = prepare(
        &path,
        RawFormat::Movielens,
        &PrepareConfig {
            seed,
            ..PrepareConfig::default()
        },
    )?;
    let base = TrainConfig {
        hp: HyperParams {
            d: 64,
            d_g: 32,
            lr: 1e-3,
            ..HyperParams::default()
        },
        seed,
        pretrain_epochs: 5,
        epochs,
        eval_every: 2,
        ..TrainConfig::default()
    };
    let pre = pretrain(&ds, &base)?;
    println!("pretrained in {:.0}s", start.elapsed().as_secs_f64());

    let mut reports = Vec::new();
    for variant in variants {
        let t = Instant::now();
        let cfg = TrainConfig { variant, ..base.clone() };
        let model = initial_model(&ds, &cfg, &pre.model)?;
        let ckpt = train(&ds, &cfg, model, &mut |_| Ok(()))?;
        let best = ckpt.best_model();
        reports.push(evaluate(&best, Objective::for_variant(variant), &ds, Split::Test, cfg.seed, variant.name())?);
        println!(
            "{variant}: {} epochs, best at {:?}, {:.0}s",
            ckpt.epochs_done,
            ckpt.best.as_ref().map(|b| b.epoch),
            t.elapsed().as_secs_f64()
        );
    }
    print!("{}", format_table(&reports));
    println!("total {:.0}s", start.elapsed().as_secs_f64());
    Ok(())
}
