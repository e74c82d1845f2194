use dbrec::data::synthetic::PlantedBlocks;
use dbrec::data::{prepare_pairs, FilterConfig, InteractionDataset, PrepareConfig, Split};
use dbrec::eval::{evaluate, export_embeddings, read_export, write_export};
use dbrec::model::{HyperParams, Model, Variant};
use dbrec::training::{initial_model, pretrain, train, Checkpoint, TrainConfig};
use dbrec::Error;

fn dataset() -> InteractionDataset {
    let planted = PlantedBlocks {
        users: 60,
        items: 240,
        seed: 9,
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
    prepare_pairs(&planted.positives, &prep).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        hp: HyperParams {
            d: 8,
            d_g: 4,
            k: 2,
            batch_size: 64,
            lr: 1e-2,
            alpha: 0.1,
            hidden_uv: vec![8, 4],
            hidden_ug: vec![8, 4],
            hidden_vg: vec![8, 4],
            hidden_hier: vec![8],
            ..HyperParams::default()
        },
        pretrain_epochs: 3,
        epochs,
        eval_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_pretrain_epochs_leave_the_initialization() {
    let ds = dataset();
    let cfg = TrainConfig {
        pretrain_epochs: 0,
        ..config(1)
    };
    let ckpt = pretrain(&ds, &cfg).unwrap();
    let fresh = Model::new(cfg.hp.clone(), ds.num_users(), ds.num_items(), cfg.seed).unwrap();
    assert_eq!(ckpt.epochs_done, 0);
    assert!(ckpt.log.is_empty());
    assert_eq!(ckpt.model.store, fresh.store);
}

#[test]
fn pretraining_lowers_the_interaction_loss() {
    let ds = dataset();
    let cfg = TrainConfig {
        pretrain_epochs: 50,
        ..config(1)
    };
    let log = pretrain(&ds, &cfg).unwrap().log;
    assert_eq!(log.len(), 50);
    assert!(log[49].cf < log[0].cf, "{} -> {}", log[0].cf, log[49].cf);
    assert!(log.iter().all(|r| r.user_hierarchy == 0.0 && r.item_recon == 0.0));
}

#[test]
fn full_objective_halves_on_planted_blocks() {
    let ds = dataset();
    let cfg = config(200);
    let pre = pretrain(&ds, &cfg).unwrap();
    let ckpt = train(&ds, &cfg, initial_model(&ds, &cfg, &pre.model).unwrap(), &mut |_| Ok(())).unwrap();
    let total = |r: &dbrec::training::EpochLog| {
        r.cf + cfg.hp.alpha * (r.user_hierarchy + r.item_hierarchy + r.user_recon + r.item_recon)
    };
    let (first, last) = (total(&ckpt.log[0]), total(ckpt.log.last().unwrap()));
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn validation_selects_and_stops() {
    let ds = dataset();
    let cfg = TrainConfig {
        eval_every: 1,
        patience: 2,
        ..config(30)
    };
    let pre = pretrain(&ds, &cfg).unwrap();
    let ckpt = train(&ds, &cfg, initial_model(&ds, &cfg, &pre.model).unwrap(), &mut |_| Ok(())).unwrap();
    let best = ckpt.best.as_ref().unwrap();
    let hrs: Vec<f64> = ckpt.log.iter().map(|r| r.val_hr10.unwrap()).collect();
    let top = hrs.iter().cloned().fold(f64::MIN, f64::max);
    // Ties keep the earliest epoch.
    assert_eq!(best.epoch, 1 + hrs.iter().position(|&h| h == top).unwrap());
    assert_eq!(best.val_hr10, top);
    if ckpt.stopped_early {
        assert_eq!(ckpt.epochs_done, best.epoch + 2);
    }
    assert_eq!(ckpt.best_model().store, best.store);
}

#[test]
fn callback_sees_every_epoch_and_errors_propagate() {
    let ds = dataset();
    let cfg = config(3);
    let model = initial_model(&ds, &cfg, &pretrain(&ds, &cfg).unwrap().model).unwrap();
    let mut seen = Vec::new();
    train(&ds, &cfg, model.clone(), &mut |c| {
        seen.push(c.epochs_done);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
    let err = train(&ds, &cfg, model, &mut |_| Err(Error::Usage("stop".into()))).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn unknown_frozen_tensor_is_rejected() {
    let ds = dataset();
    let cfg = config(1);
    let model = Model::new(cfg.hp.clone(), ds.num_users(), ds.num_items(), 0).unwrap();
    let objective = dbrec::model::Objective::for_variant(Variant::Full);
    assert!(Checkpoint::new(model, objective, 0, vec!["no_such_tensor".into()]).is_err());
}

#[test]
fn frozen_tensors_keep_their_values() {
    let ds = dataset();
    let cfg = TrainConfig {
        frozen: vec!["item_emb".into()],
        ..config(2)
    };
    let model = initial_model(&ds, &cfg, &pretrain(&ds, &cfg).unwrap().model).unwrap();
    let id = model.params.item_emb;
    let before = model.store.values(id).clone();
    let user_before = model.store.values(model.params.user_emb).clone();
    let ckpt = train(&ds, &cfg, model, &mut |_| Ok(())).unwrap();
    assert_eq!(ckpt.model.store.values(id), &before);
    assert_ne!(ckpt.model.store.values(ckpt.model.params.user_emb), &user_before);
}

#[test]
fn evaluation_is_deterministic_and_read_only() {
    let ds = dataset();
    let cfg = config(2);
    let model = initial_model(&ds, &cfg, &pretrain(&ds, &cfg).unwrap().model).unwrap();
    let objective = dbrec::model::Objective::for_variant(Variant::Full);
    let copy = model.clone();
    let a = evaluate(&model, objective, &ds, Split::Test, 3, "a").unwrap();
    let b = evaluate(&model, objective, &ds, Split::Test, 3, "a").unwrap();
    assert_eq!(a, b);
    assert_eq!(model, copy);
    assert_eq!(a.num_test, ds.count(Split::Test));
    assert!(evaluate(&model, objective, &ds, Split::Train, 3, "a").is_err());
}

#[test]
fn export_covers_every_entity_and_group() {
    let ds = dataset();
    let cfg = config(1);
    let model = initial_model(&ds, &cfg, &pretrain(&ds, &cfg).unwrap().model).unwrap();
    let rows = export_embeddings(&model).unwrap();
    let k = cfg.hp.k;
    assert_eq!(rows.len(), ds.num_users() + ds.num_items() + 2 * k);
    assert!(rows.iter().all(|r| r.group < k));
    let labels = model.group_labels().unwrap();
    let users: Vec<usize> = rows.iter().filter(|r| r.entity == "user").map(|r| r.group).collect();
    assert_eq!(users, labels.user);
    for r in rows.iter().filter(|r| r.entity.ends_with("group")) {
        assert_eq!(r.values.len(), cfg.hp.d_g);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    write_export(&path, &rows).unwrap();
    let back = read_export(&path).unwrap();
    assert_eq!(back.len(), rows.len());
    let items: Vec<usize> = back.iter().filter(|r| r.entity == "item").map(|r| r.group).collect();
    assert_eq!(items, labels.item);
}
