//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! cargo test --release --test acceptance
//!
//! The MovieLens comparison reads `data/ml-100k/ratings.dat` (see
//! `scripts/fetch_ml100k.py`) or the file named by `DBREC_ML100K`. The full
//! ML-1M reproduction report runs only when `DBREC_ML1M` names a ratings
//! file.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dbrec::cli::{self, Command, Layout};
use dbrec::config::RunConfig;
use dbrec::data::synthetic::{to_movielens_text, uniform_random, PlantedBlocks};
use dbrec::data::{prepare, prepare_pairs, FilterConfig, InteractionDataset, PrepareConfig, RawFormat, Split, TrainBatch};
use dbrec::engine::{finite_diff_check, GradCheckOptions, Matrix};
use dbrec::eval::{compute_metrics, evaluate, purity, MetricReport, RankResult};
use dbrec::model::{HyperParams, Model, Objective, Variant};
use dbrec::training::{
    initial_model, load_checkpoint, pretrain, resume, run, save_checkpoint, train, Checkpoint, EpochLog, RunOptions,
    TrainConfig,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> dbrec::Result<Outcome>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn no_filter() -> PrepareConfig {
    PrepareConfig {
        filter: FilterConfig {
            min_user_positives: 1,
            min_item_users: 1,
            fixpoint: false,
        },
        ..PrepareConfig::default()
    }
}

fn tiny_hp() -> HyperParams {
    HyperParams {
        d: 8,
        d_g: 4,
        k: 2,
        batch_size: 64,
        lr: 1e-3,
        alpha: 0.1,
        hidden_uv: vec![8, 4],
        hidden_ug: vec![8, 4],
        hidden_vg: vec![8, 4],
        hidden_hier: vec![8],
        ..HyperParams::default()
    }
}

fn small_planted() -> dbrec::Result<InteractionDataset> {
    let planted = PlantedBlocks {
        users: 60,
        items: 240,
        seed: 3,
        ..PlantedBlocks::default()
    }
    .generate();
    prepare_pairs(&planted.positives, &no_filter())
}

// ----- gradients -----------------------------------------------------------

fn gradient_check() -> dbrec::Result<Outcome> {
    let start = Instant::now();
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
    let mut model = Model::new(hp, 7, 11, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in model.store.iter_mut() {
        for x in t.values.as_mut_slice() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
    let batch = TrainBatch {
        positives: vec![(0, 3), (4, 10), (6, 0), (2, 7), (5, 5)],
        cf_negatives: vec![vec![1, 5], vec![2, 9], vec![4, 8], vec![6, 3], vec![0, 1]],
        group_negative_users: vec![1, 3, 5, 0, 2],
        group_negative_items: vec![0, 6, 2, 9, 4],
    };
    let objective = Objective::for_variant(Variant::Full);

    let mut g = dbrec::engine::Graph::new();
    let terms = model.batch_loss(&mut g, &batch, objective, 1.0)?;
    g.forward(&model.store)?;
    let v = terms.values(&g)?;
    let active = [v.cf, v.user_hierarchy, v.item_hierarchy, v.user_recon, v.item_recon]
        .iter()
        .all(|x| *x > 0.0);

    let mut store = model.store.clone();
    let report = finite_diff_check(
        &mut store,
        |g, s| Ok(model.batch_loss_in(s, g, &batch, objective, 1.0)?.total),
        &GradCheckOptions::default(),
    )?;
    let elapsed = start.elapsed();
    let failed: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
    Ok(verdict(
        report.passed() && active && report.tensors.len() == model.store.len() && elapsed < Duration::from_secs(60),
        format!(
            "{} tensors, max relative error {:.2e} (tol 1e-4), all five terms active: {active}, failures {failed:?}, {:.1}s",
            report.tensors.len(),
            report.max_rel_error(),
            secs(elapsed)
        ),
    ))
}

// ----- metrics -------------------------------------------------------------

fn brute_force(results: &[RankResult], k: usize) -> (f64, f64) {
    let n = results.len() as f64;
    let mut hits = 0usize;
    let mut gain = 0.0;
    for r in results {
        for pos in 1..=k {
            if r.rank == pos {
                hits += 1;
                gain += 1.0 / ((pos + 1) as f64).log2();
            }
        }
    }
    (hits as f64 / n, gain / n)
}

fn metric_oracle() -> dbrec::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let results: Vec<RankResult> = (0..10_000)
        .map(|u| RankResult {
            user: u,
            test_item: 0,
            rank: rng.gen_range(1..=100),
        })
        .collect();
    let report = compute_metrics("oracle", &results)?;
    let mut mismatches = 0;
    for k in 1..=10 {
        let (hr, ndcg) = brute_force(&results, k);
        mismatches += usize::from(hr.to_bits() != report.hr_at(k).to_bits());
        mismatches += usize::from(ndcg.to_bits() != report.ndcg_at(k).to_bits());
    }
    let one = |rank| RankResult { user: 0, test_item: 0, rank };
    let spot = one(1).ndcg(10) == 1.0 && one(3).ndcg(10) == 0.5 && one(11).ndcg(10) == 0.0 && !one(11).hit(10);
    Ok(verdict(
        mismatches == 0 && spot,
        format!("10000 ranks, k=1..10: {mismatches} mismatches; rank 1 -> 1, rank 3 -> 0.5: {spot}"),
    ))
}

fn random_baseline() -> dbrec::Result<Outcome> {
    let positives = uniform_random(600, 800, 25, 5);
    let ds = prepare_pairs(&positives, &PrepareConfig::default())?;
    let model = Model::new(
        HyperParams {
            d: 16,
            d_g: 8,
            ..HyperParams::default()
        },
        ds.num_users(),
        ds.num_items(),
        5,
    )?;
    let r = evaluate(&model, Objective::Basic, &ds, Split::Test, 5, "random")?;
    Ok(verdict(
        r.num_test >= 2000 && (r.hr_at(10) - 0.10).abs() <= 0.02,
        format!("untrained HR@10 {:.4} on {} test pairs (expected 0.10 +- 0.02)", r.hr_at(10), r.num_test),
    ))
}

// ----- planted groups -------------------------------------------------------

fn planted_recovery() -> dbrec::Result<Outcome> {
    let start = Instant::now();
    let planted = PlantedBlocks::default().generate();
    let ds = prepare_pairs(&planted.positives, &no_filter())?;
    let users: Vec<usize> = ds.user_ids().iter().map(|id| planted.user_block[id]).collect();
    let items: Vec<usize> = ds.item_ids().iter().map(|id| planted.item_block[id]).collect();
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
        epochs: 30,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let pre = pretrain(&ds, &cfg)?;
    let model = initial_model(&ds, &cfg, &pre.model)?;
    let ckpt = train(&ds, &cfg, model, &mut |_| Ok(()))?;
    let labels = ckpt.model.group_labels()?;
    let (pu, pi) = (purity(&labels.user, &users), purity(&labels.item, &items));
    let elapsed = start.elapsed();
    Ok(verdict(
        pu >= 0.8 && pi >= 0.8 && elapsed < Duration::from_secs(600),
        format!("user purity {pu:.3}, item purity {pi:.3} (>= 0.8), {:.0}s", secs(elapsed)),
    ))
}

// ----- MovieLens comparison --------------------------------------------------

const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

/// Desk-scale settings for the interaction-only vs full comparison.
fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        hp: HyperParams {
            d: 64,
            d_g: 32,
            lr: 1e-3,
            ..HyperParams::default()
        },
        seed,
        pretrain_epochs: 5,
        epochs: 6,
        eval_every: 2,
        ..TrainConfig::default()
    }
}

fn compare(path: &Path, cfg: &TrainConfig) -> dbrec::Result<(MetricReport, MetricReport)> {
    let ds = prepare(
        path,
        RawFormat::Movielens,
        &PrepareConfig {
            seed: cfg.seed,
            ..PrepareConfig::default()
        },
    )?;
    let pre = pretrain(&ds, cfg)?;
    let mut reports = Vec::new();
    for variant in [Variant::InteractionOnly, Variant::Full] {
        let vc = TrainConfig { variant, ..cfg.clone() };
        let ckpt = train(&ds, &vc, initial_model(&ds, &vc, &pre.model)?, &mut |_| Ok(()))?;
        reports.push(evaluate(&ckpt.best_model(), ckpt.objective, &ds, Split::Test, cfg.seed, variant.name())?);
    }
    let full = reports.pop().expect("two reports");
    Ok((reports.pop().expect("two reports"), full))
}

fn ablation_direction() -> dbrec::Result<Outcome> {
    let path = std::env::var_os("DBREC_ML100K")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/ml-100k/ratings.dat"));
    if !path.is_file() {
        return Ok(Outcome::Skip(format!(
            "{} not found; run scripts/fetch_ml100k.py",
            path.display()
        )));
    }
    let start = Instant::now();
    // Single-seed differences at this scale are about the size of the
    // seed-to-seed spread, so metrics are averaged over seeds (each with its
    // own split, pretraining and sampling).
    let mut o = [0.0; 4];
    let mut full = [0.0; 4];
    let mut per_seed = Vec::new();
    for seed in ABLATION_SEEDS {
        let (a, b) = compare(&path, &desk_config(seed))?;
        let ma = [a.hr_at(5), a.hr_at(10), a.ndcg_at(5), a.ndcg_at(10)];
        let mb = [b.hr_at(5), b.hr_at(10), b.ndcg_at(5), b.ndcg_at(10)];
        for j in 0..4 {
            o[j] += ma[j] / ABLATION_SEEDS.len() as f64;
            full[j] += mb[j] / ABLATION_SEEDS.len() as f64;
        }
        per_seed.push(format!("seed {seed}: {}/4", (0..4).filter(|&j| mb[j] > ma[j]).count()));
    }
    let elapsed = start.elapsed();
    let names = ["HR@5", "HR@10", "NDCG@5", "NDCG@10"];
    let wins = (0..4).filter(|&j| full[j] > o[j]).count();
    let worst = (0..4).map(|j| o[j] - full[j]).fold(f64::MIN, f64::max);
    let detail: Vec<String> = (0..4).map(|j| format!("{} {:.4}/{:.4}", names[j], o[j], full[j])).collect();
    Ok(verdict(
        wins >= 3 && worst <= 0.005 && elapsed < Duration::from_secs(1800),
        format!(
            "ML-100k dbrec-o/dbrec mean over seeds {ABLATION_SEEDS:?}: {}; dbrec wins {wins}/4, largest deficit {:.4} ({}), {:.0}s",
            detail.join(", "),
            worst.max(0.0),
            per_seed.join(", "),
            secs(elapsed)
        ),
    ))
}

fn ml1m_report() -> dbrec::Result<Outcome> {
    let Some(path) = std::env::var_os("DBREC_ML1M").map(PathBuf::from) else {
        return Ok(Outcome::Skip("report only; set DBREC_ML1M to a ratings.dat to run".into()));
    };
    let cfg = TrainConfig {
        pretrain_epochs: 10,
        epochs: 100,
        eval_every: 1,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let (_, full) = compare(&path, &cfg)?;
    // Reported, never gating.
    Ok(Outcome::Skip(format!(
        "ML-1M dbrec HR@10 {:.5} (target 0.52311 +- 0.05), NDCG@10 {:.5} (target 0.31865 +- 0.05), {:.0}s",
        full.hr_at(10),
        full.ndcg_at(10),
        secs(start.elapsed())
    )))
}

// ----- determinism ------------------------------------------------------------

fn pipeline(dir: &Path, ratings: &Path) -> dbrec::Result<()> {
    let hp = tiny_hp();
    let cfg = RunConfig {
        dataset: ratings.to_path_buf(),
        output_dir: dir.to_path_buf(),
        seed: 4,
        min_user_positives: 1,
        min_item_users: 1,
        d: hp.d,
        d_g: hp.d_g,
        k: hp.k,
        batch_size: hp.batch_size,
        lr: hp.lr,
        alpha: hp.alpha,
        hidden_uv: hp.hidden_uv,
        hidden_ug: hp.hidden_ug,
        hidden_vg: hp.hidden_vg,
        hidden_hier: hp.hidden_hier,
        pretrain_epochs: 2,
        epochs: 3,
        ..RunConfig::default()
    };
    for c in [Command::Prepare, Command::Pretrain, Command::Train, Command::Eval, Command::Export] {
        cli::run(c, &cfg)?;
    }
    Ok(())
}

fn artifacts(layout: &Layout) -> Vec<PathBuf> {
    let v = Variant::Full;
    vec![
        layout.dataset(),
        layout.pretrain(),
        layout.pretrain_log(),
        layout.last(v),
        layout.best(v),
        layout.train_log(v),
        layout.metrics(v),
        layout.embeddings(v),
    ]
}

fn determinism() -> dbrec::Result<Outcome> {
    let tmp = tempfile::tempdir().map_err(|e| dbrec::Error::io("tempdir", e))?;
    let planted = PlantedBlocks {
        users: 60,
        items: 240,
        seed: 3,
        ..PlantedBlocks::default()
    }
    .generate();
    let ratings = tmp.path().join("ratings.dat");
    std::fs::write(&ratings, to_movielens_text(&planted.positives)).map_err(|e| dbrec::Error::io(&ratings, e))?;
    let (a, b) = (Layout::new(tmp.path().join("a")), Layout::new(tmp.path().join("b")));
    pipeline(&a.root, &ratings)?;
    pipeline(&b.root, &ratings)?;
    let mut differing = Vec::new();
    let files = artifacts(&a);
    for (fa, fb) in files.iter().zip(artifacts(&b)) {
        let read = |p: &Path| std::fs::read(p).map_err(|e| dbrec::Error::io(p, e));
        if read(fa)? != read(&fb)? {
            differing.push(fa.file_name().unwrap_or_default().to_string_lossy().into_owned());
        }
    }
    Ok(verdict(
        differing.is_empty(),
        format!("two prepare/pretrain/train/eval/export runs, {} artifacts compared, differing: {differing:?}", files.len()),
    ))
}

// ----- reductions ---------------------------------------------------------------

fn max_log_gap(a: &[EpochLog], b: &[EpochLog]) -> f64 {
    let gap = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) => (x - y).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            (x.cf - y.cf)
                .abs()
                .max(gap(x.val_hr10, y.val_hr10))
                .max(gap(x.val_ndcg10, y.val_ndcg10))
        })
        .fold(0.0, f64::max)
}

fn reductions() -> dbrec::Result<Outcome> {
    let ds = small_planted()?;
    let hp = HyperParams { alpha: 0.0, ..tiny_hp() };
    let cfg = TrainConfig {
        hp: hp.clone(),
        pretrain_epochs: 2,
        epochs: 3,
        ..TrainConfig::default()
    };
    let pre = pretrain(&ds, &cfg)?;
    let opts = RunOptions::from_config(&cfg, 3);

    let base_model = initial_model(&ds, &cfg, &pre.model)?;
    let mut basic = Checkpoint::new(base_model.clone(), Objective::Basic, cfg.seed, Vec::new())?;
    run(&mut basic, &ds, &opts, &mut |_| Ok(()))?;

    let mut bridged = base_model;
    let zeroed = ["w_ug", "w_vg"];
    for name in zeroed {
        let id = bridged.store.find(name).expect("bridge weight");
        let (r, c) = bridged.store.values(id).shape();
        bridged.store.get_mut(id).reset_values(Matrix::zeros(r, c))?;
    }
    let frozen = zeroed.iter().map(|s| s.to_string()).collect();
    let mut dual = Checkpoint::new(bridged, Objective::for_variant(Variant::Full), cfg.seed, frozen)?;
    run(&mut dual, &ds, &opts, &mut |_| Ok(()))?;
    let gap = max_log_gap(&basic.log, &dual.log);

    // Which auxiliary terms each variant trains.
    let expected = [
        (Variant::InteractionOnly, [false, false, false, false]),
        (Variant::UserGroups, [true, false, true, false]),
        (Variant::ItemGroups, [false, true, false, true]),
        (Variant::Full, [true, true, true, true]),
    ];
    let mut wrong = Vec::new();
    for (variant, want) in expected {
        let vc = TrainConfig {
            variant,
            hp: tiny_hp(),
            epochs: 1,
            ..cfg.clone()
        };
        let ckpt = train(&ds, &vc, initial_model(&ds, &vc, &pre.model)?, &mut |_| Ok(()))?;
        let row = &ckpt.log[0];
        let got = [row.user_hierarchy, row.item_hierarchy, row.user_recon, row.item_recon].map(|x| x > 0.0);
        let names: Vec<String> = ckpt.trainable().iter().map(|&id| ckpt.model.store.get(id).name.clone()).collect();
        let has = |n: &str| names.iter().any(|x| x == n);
        let bridges = [has("w_vg"), has("w_ug")];
        let want_bridges = [want[0], want[1]];
        if got != want || bridges != want_bridges || !has("w_uv") {
            wrong.push(variant.name());
        }
    }
    Ok(verdict(
        gap <= 1e-12 && wrong.is_empty(),
        format!("alpha=0 with bridges zeroed vs basic: max per-epoch gap {gap:.1e} (<= 1e-12); variants with wrong terms: {wrong:?}"),
    ))
}

// ----- checkpoints ----------------------------------------------------------------

fn checkpoint_roundtrip() -> dbrec::Result<Outcome> {
    let tmp = tempfile::tempdir().map_err(|e| dbrec::Error::io("tempdir", e))?;
    let ds = small_planted()?;
    let cfg = TrainConfig {
        hp: tiny_hp(),
        pretrain_epochs: 2,
        epochs: 4,
        eval_every: 2,
        ..TrainConfig::default()
    };
    let pre = pretrain(&ds, &cfg)?;
    let start = initial_model(&ds, &cfg, &pre.model)?;
    let whole = train(&ds, &cfg, start.clone(), &mut |_| Ok(()))?;

    let half_cfg = TrainConfig { epochs: 2, ..cfg.clone() };
    let half = train(&ds, &half_cfg, start, &mut |_| Ok(()))?;
    let p1 = tmp.path().join("half.ckpt");
    let p2 = tmp.path().join("again.ckpt");
    save_checkpoint(&half, &p1)?;
    let loaded = load_checkpoint(&p1)?;
    save_checkpoint(&loaded, &p2)?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| dbrec::Error::io(p, e));
    let identical = read(&p1)? == read(&p2)?;

    let resumed = resume(&ds, &cfg, loaded, &mut |_| Ok(()))?;
    let same_log = resumed.log == whole.log;
    let same_state = resumed.to_bytes()? == whole.to_bytes()?;
    Ok(verdict(
        identical && same_log && same_state,
        format!("save/load/save identical: {identical}; resumed 2+2 epochs equals 4: log {same_log}, checkpoint {same_state}"),
    ))
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("gradient check", gradient_check),
        ("metric oracle", metric_oracle),
        ("random baseline", random_baseline),
        ("planted groups", planted_recovery),
        ("ablation direction", ablation_direction),
        ("ML-1M reproduction", ml1m_report),
        ("determinism", determinism),
        ("reductions", reductions),
        ("checkpoint round-trip", checkpoint_roundtrip),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let (tag, detail) = match check() {
            Ok(Outcome::Pass(d)) => ("PASS", d),
            Ok(Outcome::Skip(d)) => ("SKIP", d),
            Ok(Outcome::Fail(d)) => {
                failed += 1;
                ("FAIL", d)
            }
            Err(e) => {
                failed += 1;
                ("FAIL", format!("error: {e}"))
            }
        };
        println!("{tag} {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
