//! Finite-difference check of the full objective on a toy model.
//!
//! cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dbrec::data::TrainBatch;
use dbrec::engine::{finite_diff_check, GradCheckOptions};
use dbrec::model::{HyperParams, Model, Objective, Variant};

fn main() -> dbrec::Result<()> {
    let hp = HyperParams {
        d: 8,
        d_g: 4,
        k: 3,
        hidden_uv: vec![6, 4],
        hidden_ug: vec![6, 4],
        hidden_vg: vec![6, 4],
        hidden_hier: vec![5, 6],
        ..HyperParams::default()
    };
    let mut model = Model::new(hp, 7, 11, 0)?;
    // Seeded values well away from zero so every ReLU and softmax is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in model.store.iter_mut() {
        for x in t.values.as_mut_slice() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
    let batch = TrainBatch {
        positives: vec![(0, 3), (4, 10), (6, 0), (2, 7)],
        cf_negatives: vec![vec![1, 5], vec![2, 9], vec![4, 8], vec![6, 3]],
        group_negative_users: vec![1, 3, 5],
        group_negative_items: vec![0, 6, 2],
    };
    let objective = Objective::for_variant(Variant::Full);
    let mut store = model.store.clone();
    let report = finite_diff_check(
        &mut store,
        |g, s| Ok(model.batch_loss_in(s, g, &batch, objective, 1.0)?.total),
        &GradCheckOptions::default(),
    )?;
    for t in &report.tensors {
        println!(
            "{:<20} {:>3} coords  max rel err {:.2e}  {}",
            t.name,
            t.checked,
            t.max_rel_error,
            if t.passed { "ok" } else { "FAIL" }
        );
    }
    println!("max {:.2e}, passed: {}", report.max_rel_error(), report.passed());
    Ok(())
}
