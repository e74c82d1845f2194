//! An untrained model under the 99-negative protocol scores HR@10 near
//! 10 / 100.
//!
//! cargo run --release --example random_baseline

use dbrec::data::synthetic::uniform_random;
use dbrec::data::{prepare_pairs, PrepareConfig, Split};
use dbrec::eval::{evaluate, format_table};
use dbrec::model::{HyperParams, Model, Objective};

fn main() -> dbrec::Result<()> {
    let ds = prepare_pairs(&uniform_random(600, 800, 25, 5), &PrepareConfig::default())?;
    let hp = HyperParams {
        d: 16,
        d_g: 8,
        ..HyperParams::default()
    };
    let mut reports = Vec::new();
    for seed in 0..3 {
        let model = Model::new(hp.clone(), ds.num_users(), ds.num_items(), seed)?;
        reports.push(evaluate(&model, Objective::Basic, &ds, Split::Test, seed, &format!("seed {seed}"))?);
    }
    print!("{}", format_table(&reports));
    Ok(())
}
