use std::path::Path;
use std::process::{Command, Output};

use sdil::harness::Checkpoint;

fn sdil(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdil"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path) {
    let o = sdil(
        &["gen-demos", "--env", "fourroom", "--clean", "12", "--noisy", "12", "--seed", "3", "--out", "c.tsv"],
        dir,
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
}

const SMALL: &str = "epochs = 2\npu_every = 1\nreuse_epochs = 2\nrollouts = 10\nn_skills = 3\nskill_dim = 4\n";

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d);
    std::fs::write(d.join("cfg.txt"), SMALL).unwrap();

    let o = sdil(&["train-discover", "--corpus", "c.tsv", "--config", "cfg.txt", "--out", "d.ckpt"], d);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch=")).count(), 2);

    let o = sdil(&["train-reuse", "--corpus", "c.tsv", "--ckpt", "d.ckpt", "--out", "r.ckpt"], d);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("phase=reuse1") && stdout(&o).contains("phase=reuse2"));

    let o = sdil(&["eval", "--ckpt", "r.ckpt", "--corpus", "c.tsv", "--rollouts", "5"], d);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let text = stdout(&o);
    for key in ["accuracy = ", "macro_f1 = ", "reward_mean = ", "clean_distribution = "] {
        assert!(text.contains(key), "{text}");
    }
    assert!(text.contains("episodes = 5"));

    let o = sdil(
        &["analyze-skills", "--ckpt", "r.ckpt", "--out", "an", "--corpus", "c.tsv", "--rollouts", "3"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    for f in ["skill_map_0.tsv", "skill_map_2.tsv", "skill_ranking.tsv", "selection.tsv", "embeddings.tsv"] {
        assert!(d.join("an").join(f).exists(), "{f}");
    }

    let o = sdil(&["baseline-bc", "--corpus", "c.tsv", "--setting", "clean", "--config", "cfg.txt"], d);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("phase=bc setting=clean"));
}

#[test]
fn training_is_reproducible_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d);
    std::fs::write(d.join("cfg.txt"), SMALL).unwrap();
    for out in ["a.ckpt", "b.ckpt"] {
        let o = sdil(&["train-discover", "--corpus", "c.tsv", "--config", "cfg.txt", "--out", out], d);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(d.join("a.ckpt")).unwrap(), std::fs::read(d.join("b.ckpt")).unwrap());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(sdil(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(sdil(&["gen-demos", "--clean", "3"], d).status.code(), Some(1));
    gen(d);
    assert_eq!(sdil(&["baseline-bc", "--corpus", "c.tsv", "--setting", "noisy"], d).status.code(), Some(1));
    assert_eq!(sdil(&["eval", "--ckpt", "missing.ckpt", "--corpus", "c.tsv"], d).status.code(), Some(1));
    std::fs::write(d.join("bad.txt"), "lamda = 1\n").unwrap();
    let o = sdil(&["train-discover", "--corpus", "c.tsv", "--config", "bad.txt", "--out", "x.ckpt"], d);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(sdil(&["--help"], d).status.code(), Some(0));
}

#[test]
fn numeric_failure_exits_with_two_and_keeps_last_good() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d);
    std::fs::write(d.join("cfg.txt"), "epochs = 3\npu_every = 1\nlr = 1e30\n").unwrap();
    let o = sdil(&["train-discover", "--corpus", "c.tsv", "--config", "cfg.txt", "--out", "d.ckpt"], d);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    let ck = Checkpoint::load(d.join("d.ckpt")).unwrap();
    let model = ck.model().unwrap();
    assert!(model.store.entries().iter().all(|e| e.value.is_finite()));
}
