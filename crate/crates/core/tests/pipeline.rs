use std::path::Path;
use std::process::Command as Process;

use dbrec::cli::{self, Command, Layout};
use dbrec::config::{RunConfig, OUTPUT_DIR_ENV};
use dbrec::data::synthetic::{to_movielens_text, PlantedBlocks};
use dbrec::model::Variant;
use dbrec::Error;

fn write_ratings(dir: &Path) -> std::path::PathBuf {
    let planted = PlantedBlocks {
        users: 40,
        items: 240,
        seed: 2,
        ..PlantedBlocks::default()
    }
    .generate();
    let path = dir.join("ratings.dat");
    std::fs::write(&path, to_movielens_text(&planted.positives)).unwrap();
    path
}

fn small_overrides(ratings: &Path, out: &Path) -> Vec<String> {
    vec![
        format!("dataset={:?}", ratings.display().to_string()),
        format!("output_dir={:?}", out.display().to_string()),
        "min_user_positives=1".into(),
        "min_item_users=1".into(),
        "d=8".into(),
        "d_g=4".into(),
        "k=2".into(),
        "batch_size=64".into(),
        "hidden_uv=[8,4]".into(),
        "hidden_ug=[8,4]".into(),
        "hidden_vg=[8,4]".into(),
        "hidden_hier=[8]".into(),
        "pretrain_epochs=1".into(),
        "epochs=2".into(),
    ]
}

fn config(ratings: &Path, out: &Path) -> RunConfig {
    RunConfig::resolve(None, &small_overrides(ratings, out)).unwrap()
}

#[test]
fn commands_report_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = write_ratings(dir.path());
    let cfg = config(&ratings, &dir.path().join("run"));
    for c in [Command::Pretrain, Command::Train, Command::Eval, Command::Export, Command::Ablate] {
        let err = cli::run(c, &cfg).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }), "{c}: {err}");
    }
    cli::run(Command::Prepare, &cfg).unwrap();
    assert!(matches!(cli::run(Command::Train, &cfg), Err(Error::MissingArtifact { command: "pretrain", .. })));
    assert!(matches!(cli::run(Command::Eval, &cfg), Err(Error::MissingArtifact { command: "train", .. })));
}

#[test]
fn ablate_writes_four_variants() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = write_ratings(dir.path());
    let out = dir.path().join("run");
    let cfg = config(&ratings, &out);
    cli::run(Command::Prepare, &cfg).unwrap();
    cli::run(Command::Pretrain, &cfg).unwrap();
    cli::run(Command::Ablate, &cfg).unwrap();
    let layout = Layout::new(&out);
    let csv = std::fs::read_to_string(layout.ablation_csv()).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["dbrec-o", "dbrec-i", "dbrec-u", "dbrec"]);
    for v in Variant::ALL {
        assert!(layout.best(v).is_file());
        assert!(layout.metrics(v).is_file());
    }
    let echoed: RunConfig = toml::from_str(&std::fs::read_to_string(layout.config()).unwrap()).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn eval_refuses_a_checkpoint_of_another_variant() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = write_ratings(dir.path());
    let out = dir.path().join("run");
    let cfg = config(&ratings, &out);
    for c in [Command::Prepare, Command::Pretrain, Command::Train] {
        cli::run(c, &cfg).unwrap();
    }
    let layout = Layout::new(&out);
    std::fs::create_dir_all(layout.variant_dir(Variant::InteractionOnly)).unwrap();
    std::fs::copy(layout.best(Variant::Full), layout.best(Variant::InteractionOnly)).unwrap();
    let other = RunConfig {
        variant: Variant::InteractionOnly,
        ..cfg
    };
    assert!(matches!(cli::run(Command::Eval, &other), Err(Error::Integrity(_))));
}

#[test]
fn binary_honours_output_dir_env_and_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = write_ratings(dir.path());
    let from_env = dir.path().join("from_env");
    let mut args = vec!["prepare".to_string()];
    for o in small_overrides(&ratings, &dir.path().join("ignored")) {
        if !o.starts_with("output_dir") {
            args.push("--set".into());
            args.push(o);
        }
    }
    let status = Process::new(env!("CARGO_BIN_EXE_dbrec"))
        .args(&args)
        .env(OUTPUT_DIR_ENV, &from_env)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(Layout::new(&from_env).dataset().is_file());

    let eval = Process::new(env!("CARGO_BIN_EXE_dbrec"))
        .arg("eval")
        .env(OUTPUT_DIR_ENV, &from_env)
        .output()
        .unwrap();
    assert!(!eval.status.success());
    assert!(String::from_utf8_lossy(&eval.stderr).contains("dbrec train"));

    let bad = Process::new(env!("CARGO_BIN_EXE_dbrec")).arg("fly").output().unwrap();
    assert!(!bad.status.success());
}
