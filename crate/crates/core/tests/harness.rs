mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use star_swarm::harness::{cmd_eval, cmd_robustness, cmd_scalability, cmd_timing, cmd_train, load_bundle, CheckpointError, HarnessError, RunConfig};

fn tiny(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::parse(common::TINY_CONFIG).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_train(&cfg, None).unwrap();
    let first = common::snapshot(dir.path());
    cmd_train(&cfg, None).unwrap();
    assert_eq!(first, common::snapshot(dir.path()));
    let names: Vec<String> = first.iter().map(|(n, _)| n.clone()).collect();
    for want in ["checkpoint.bin", "checkpoint_stage1.bin", "checkpoint_stage3.bin", "metrics.csv", "stages.txt"] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }
}

#[test]
fn metrics_and_stage_markers_follow_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&tiny(dir.path()), None).unwrap();
    let markers = fs::read_to_string(dir.path().join("stages.txt")).unwrap();
    assert_eq!(markers, "stage 1 start_epoch 0 epochs 2\nstage 2 start_epoch 2 epochs 2\nstage 3 start_epoch 4 epochs 2\n");
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,stage,J,mean_accuracy,max_degree_observed,seed"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), ["1", "1", "2", "2", "3", "3"]);
    assert!(rows[..4].iter().all(|r| r[4] == "0"), "no links before the communication stage");
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() <= 0.0));
    assert_eq!(out.report.metrics.len(), 6);
}

#[test]
fn resume_runs_only_the_remaining_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_train(&cfg, None).unwrap();
    let resumed_dir = tempfile::tempdir().unwrap();
    let resumed = tiny(resumed_dir.path());
    let out = cmd_train(&resumed, Some(&dir.path().join("checkpoint_stage2.bin"))).unwrap();
    assert_eq!(out.report.stages.len(), 1);
    assert_eq!(out.report.stages[0].start_epoch, 4);
    assert!(!resumed_dir.path().join("checkpoint_stage1.bin").exists());
}

#[test]
fn experiment_reports_carry_scale_hash_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let ck = cmd_train(&cfg, None).unwrap().checkpoint;
    let eval = cmd_eval(&ck, &cfg).unwrap();
    assert_eq!(eval.scale, "desk-scale");
    assert_eq!(eval.config_hash, cfg.hash());
    assert_eq!(eval.per_seed.len(), 2);
    let json = fs::read_to_string(dir.path().join("eval.json")).unwrap();
    assert!(json.contains("\"per_seed\"") && json.contains(&cfg.hash()));
    assert!(fs::read_to_string(dir.path().join("edges.txt")).unwrap().starts_with("# map t i j"));

    let scal = cmd_scalability(&ck, &cfg).unwrap();
    assert_eq!(scal.rows.iter().map(|r| r.robots).collect::<Vec<_>>(), [2, 3]);
    let rob = cmd_robustness(&ck, &cfg).unwrap();
    assert_eq!(rob.rows.len(), 4);
    assert_eq!(rob.robots, 4);
    // Removing nobody is plain evaluation at the removal team size.
    let mut plain = cfg.clone();
    plain.world.robots = 4;
    assert_eq!(rob.rows[0].report.per_seed, cmd_eval(&ck, &plain).unwrap().per_seed);
    let timing = cmd_timing(&ck, &cfg).unwrap();
    assert_eq!(timing.rows.len(), 2);
    for row in &timing.rows {
        if let Some(t) = row.min_horizon {
            assert!(t <= 4);
            assert_eq!(row.robot_steps, Some(t * row.robots));
        }
    }
}

#[test]
fn checkpoint_from_another_model_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let ck = cmd_train(&cfg, None).unwrap().checkpoint;
    let mut other = cfg.clone();
    other.feature = 7;
    match load_bundle(&ck, &other) {
        Err(HarnessError::Checkpoint(CheckpointError::Shape { name, .. })) => assert!(name.contains("extractor.head")),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("mismatched model loaded"),
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_star-swarm"))
}

#[test]
fn cli_lists_every_subcommand() {
    let out = cli().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["dataset", "train", "eval", "scalability", "robustness", "timing"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn cli_reports_bad_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "[world]\nrobots = 5\nspeed = 3\n").unwrap();
    let out = cli().args(["dataset", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));
}

#[test]
fn cli_rejects_unknown_comm_mode() {
    let out = cli().args(["eval", "--checkpoint", "x.bin", "--comm", "broadcast"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("broadcast"));
}

#[test]
fn cli_missing_checkpoint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.cfg");
    fs::write(&path, common::TINY_CONFIG).unwrap();
    let out = cli()
        .args(["eval", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .arg("--checkpoint")
        .arg(dir.path().join("none.bin"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn cli_dataset_and_train_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.cfg");
    fs::write(&path, common::TINY_CONFIG).unwrap();
    let out_dir = dir.path().join("run");
    for sub in ["dataset", "train"] {
        let out = cli().arg(sub).arg("--config").arg(&path).arg("--out").arg(&out_dir).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(out_dir.join("dataset/manifest.txt").exists());
    assert!(out_dir.join("checkpoint.bin").exists());
}
