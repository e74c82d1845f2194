//! The command pipeline driven from code: prepare, pretrain, train, eval and
//! export one variant into an output directory.
//!
//! cargo run --release --example movielens_pipeline -- [ratings.dat] [output_dir] [variant]

use dbrec::cli::{run, Command};
use dbrec::config::RunConfig;

fn main() -> dbrec::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let dataset = args.next().unwrap_or_else(|| "data/ml-100k/ratings.dat".into());
    let output = args.next().unwrap_or_else(|| "runs/ml100k".into());
    let variant = args.next().unwrap_or_else(|| "dbrec".into());
    let cfg = RunConfig::resolve(
        None,
        &[
            format!("dataset={dataset:?}"),
            format!("output_dir={output:?}"),
            format!("variant={variant:?}"),
            "d=64".into(),
            "d_g=32".into(),
            "lr=0.001".into(),
            "pretrain_epochs=5".into(),
            "epochs=6".into(),
            "eval_every=2".into(),
        ],
    )?;
    for c in [Command::Prepare, Command::Pretrain, Command::Train, Command::Eval, Command::Export] {
        run(c, &cfg)?;
    }
    Ok(())
}
