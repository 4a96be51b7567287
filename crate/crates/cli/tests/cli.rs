use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn graphda(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphda"))
        .current_dir(dir)
        .arg("-q")
        .args(args)
        .output()
        .expect("spawn graphda")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = graphda(dir, args);
    assert!(
        out.status.success(),
        "graphda {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const MODEL: &[&str] = &[
    "--k-core", "3", "--dim", "8", "--epochs", "15", "--patience", "5", "--variant", "graphda", "--uk", "4",
    "--ik", "2", "--uuk", "2", "--iik", "1",
];

fn with_model<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(MODEL);
    v
}

#[test]
fn staged_commands_reproduce_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "-o", "log.tsv", "--interactions-per-user", "5", "--seed", "3"]);

    let prepared = ok(d, &["prepare", "--input", "log.tsv", "-o", "staged", "--k-core", "3"]);
    assert!(prepared.contains("200 users"), "{prepared}");
    ok(d, &with_model(&["pretrain", "-o", "staged"]));
    assert!(d.join("staged/pretrain.ckpt").exists());
    ok(d, &with_model(&["enhance", "-o", "staged"]));
    assert!(d.join("staged/enhanced_graphda_uk4_ik2_uuk2_iik1.coo").exists());
    let retrained = ok(d, &with_model(&["retrain", "-o", "staged"]));
    assert!(retrained.contains("retrain_graphda_uk4_ik2_uuk2_iik1.ckpt"), "{retrained}");
    let printed = ok(d, &with_model(&["evaluate", "-o", "staged"]));

    ok(d, &with_model(&["run", "--input", "log.tsv", "-o", "direct"]));
    let staged = fs::read_to_string(d.join("staged/report_graphda.csv")).unwrap();
    assert_eq!(staged, fs::read_to_string(d.join("direct/report_graphda.csv")).unwrap());
    assert_eq!(printed, staged);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "-o", "log.tsv", "--interactions-per-user", "5"]);
    fs::write(d.join("exp.cfg"), "# small model\ninput = log.tsv\nk_core = 3\ndim = 8\nepochs = 3\n").unwrap();
    ok(d, &["pretrain", "-c", "exp.cfg", "-o", "a"]);
    ok(d, &["pretrain", "-c", "exp.cfg", "-o", "b", "--dim", "4"]);
    let header = |p: &str| fs::read_to_string(d.join(p)).unwrap().lines().next().unwrap().to_string();
    assert!(header("a/pretrain.ckpt").contains("dim=8"), "{}", header("a/pretrain.ckpt"));
    assert!(header("b/pretrain.ckpt").contains("dim=4"), "{}", header("b/pretrain.ckpt"));
}

#[test]
fn evaluates_a_given_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "-o", "log.tsv", "--interactions-per-user", "5"]);
    ok(d, &["run", "--input", "log.tsv", "-o", "out", "--k-core", "3", "--dim", "8", "--epochs", "5"]);
    ok(d, &["evaluate", "-o", "out", "--checkpoint", "out/pretrain.ckpt", "--report", "again.csv"]);
    assert_eq!(
        fs::read_to_string(d.join("again.csv")).unwrap(),
        fs::read_to_string(d.join("out/report_baseline.csv")).unwrap()
    );
}

#[test]
fn failures_exit_nonzero_with_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "-o", "log.tsv", "--interactions-per-user", "5"]);
    ok(d, &["prepare", "--input", "log.tsv", "-o", "out", "--k-core", "3"]);
    fs::write(d.join("out/pretrain.ckpt"), "garbage\n").unwrap();
    let out = graphda(d, &["run", "-o", "out"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: stage `pretrain` failed"), "{stderr}");
    assert_eq!(stderr.matches("garbage").count(), 1, "{stderr}");

    let out = graphda(d, &["run", "-o", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = ok(d, &["synth", "-o", "-", "--seed", "11"]);
    let b = ok(d, &["synth", "-o", "-", "--seed", "11"]);
    let c = ok(d, &["synth", "-o", "-", "--seed", "12"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.lines().all(|l| l.split('\t').count() == 3));
}
