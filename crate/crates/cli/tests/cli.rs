use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
train_size = 120
test_size = 60
labeled = 10
hidden = 8
steps = 30
batch_size = 8
checkpoint_every = 80
report_window = 3
rampup_steps = 10
seeds = 1, 2
";

fn mixmatch(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixmatch"))
        .args(args)
        .env("MIXMATCH_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn single_run_dir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

#[test]
fn run_writes_one_directory_per_seed_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.cfg", TINY);
    let root = tmp.path().join("out");
    let out = mixmatch(&root, &["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = single_run_dir(&root);
    for seed in [1, 2] {
        let run = dir.join(format!("seed-{seed}"));
        for f in ["metrics.csv", "checkpoints.csv", "manifest.txt", "ema.ckpt"] {
            assert!(run.join(f).is_file(), "missing {f}");
        }
    }
    let summary = fs::read_to_string(dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"method\": \"mixmatch\""));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("seed 1:") && stdout.contains("seed 2:"), "{stdout}");
}

#[test]
fn rerun_reproduces_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.cfg", TINY);
    let root = tmp.path().join("out");
    let snapshot = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files = vec![("summary.json".to_string(), fs::read(dir.join("summary.json")).unwrap())];
        for seed in [1, 2] {
            for f in ["metrics.csv", "checkpoints.csv", "manifest.txt", "ema.ckpt"] {
                let rel = format!("seed-{seed}/{f}");
                files.push((rel.clone(), fs::read(dir.join(rel)).unwrap()));
            }
        }
        files
    };
    assert!(mixmatch(&root, &["run", cfg.to_str().unwrap()]).status.success());
    let dir = single_run_dir(&root);
    let first = snapshot(&dir);
    assert!(mixmatch(&root, &["run", cfg.to_str().unwrap()]).status.success());
    assert_eq!(single_run_dir(&root), dir);
    assert_eq!(snapshot(&dir), first);
}

#[test]
fn ablation_lands_in_its_own_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.cfg", &TINY.replace("seeds = 1, 2", "seeds = 1"));
    let root = tmp.path().join("out");
    let out = mixmatch(&root, &["ablate", "t1", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(single_run_dir(&root).join("seed-1/manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "T = 1"), "{manifest}");
}

#[test]
fn unknown_ablation_lists_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.cfg", TINY);
    let out = mixmatch(tmp.path(), &["ablate", "k9", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("k9") && err.contains("mixup_separate") && err.contains("ict"),
        "{err}"
    );
}

#[test]
fn config_errors_carry_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "K = 2\nT = -1\n");
    let out = mixmatch(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("T"), "{err}");
    let cfg = write_config(tmp.path(), "typo.cfg", "steps = 10\nlamda_u = 3\n");
    let err = String::from_utf8_lossy(&mixmatch(tmp.path(), &["run", cfg.to_str().unwrap()]).stderr).to_string();
    assert!(err.contains("line 2") && err.contains("lamda_u"), "{err}");
}

#[test]
fn failed_seed_is_recorded_and_exit_status_reflects_it() {
    let tmp = tempfile::tempdir().unwrap();
    // An odd labeled count cannot be balanced over two classes, so every split fails.
    let text = TINY.replace("labeled = 10", "labeled = 11\nbalanced = true");
    let cfg = write_config(tmp.path(), "fail.cfg", &text);
    let root = tmp.path().join("out");
    let out = mixmatch(&root, &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(single_run_dir(&root).join("summary.json")).unwrap();
    assert!(summary.contains("\"failures\": ["), "{summary}");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed 1 failed") && err.contains("seed 2 failed"), "{err}");
}

#[test]
fn eval_scores_a_saved_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.cfg", TINY);
    let root = tmp.path().join("out");
    assert!(mixmatch(&root, &["run", cfg.to_str().unwrap()]).status.success());
    let dir = single_run_dir(&root);
    let ckpt = dir.join("seed-1/ema.ckpt");
    let out = mixmatch(&root, &["eval", ckpt.to_str().unwrap(), cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let logged = fs::read_to_string(dir.join("seed-1/checkpoints.csv")).unwrap();
    let last = logged
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse::<f64>()
        .unwrap();
    assert!(
        stdout.contains(&format!("test error {last:.4} on 60 examples")),
        "{stdout} vs {last}"
    );

    let wider = write_config(tmp.path(), "wider.cfg", &TINY.replace("hidden = 8", "hidden = 9"));
    let out = mixmatch(&root, &["eval", ckpt.to_str().unwrap(), wider.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
