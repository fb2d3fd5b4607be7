use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "[world]
n_firms = 60
n_industries = 4
mean_out_degree = 2.5

[lm]
d_model = 32
n_heads = 2
d_ff = 64
epochs = 1

[encoder]
epochs = 5

[train]
stage1_epochs = 1
stage2_epochs = 1
srp_per_epoch = 16

[eval]
baseline_epochs = 5
competitor_per_class = 10
";

fn corprel(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corprel"))
        .args(args)
        .arg("--work")
        .arg(work)
        .env_remove("CORPREL_CONFIG")
        .output()
        .expect("binary runs")
}

fn with_config(work: &Path, cmd: &str) -> Output {
    let cfg = work.join("small.toml");
    if !cfg.exists() {
        fs::create_dir_all(work).unwrap();
        fs::write(&cfg, SMALL).unwrap();
    }
    corprel(work, &[cmd, "--config", cfg.to_str().unwrap()])
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_succeeds_and_unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_corprel")).arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).contains("stage1"));
    assert_eq!(corprel(dir.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[world]\nn_firms = 1\n").unwrap();
    let out = corprel(dir.path(), &["gen", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(&cfg, "[world]\nunknown_key = 3\n").unwrap();
    assert_eq!(corprel(dir.path(), &["gen", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn steps_out_of_order_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), "eval");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corprel gen"));
    assert!(with_config(dir.path(), "gen").status.success());
    let out = with_config(dir.path(), "stage1");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pretrain-gnn"));
    assert_eq!(with_config(dir.path(), "report").status.code(), Some(2));
}

#[test]
fn full_small_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    for step in ["gen", "pretrain-gnn", "pretrain-lm", "stage1", "stage2", "eval"] {
        let out = with_config(work, step);
        assert!(out.status.success(), "{step}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["world.txt", "split.txt", "config.toml", "gnn.ckpt", "lm.ckpt", "stage1.bundle", "stage2.bundle", "report.txt", "report.tsv"] {
        assert!(work.join(f).exists(), "{f} missing");
    }
    let report = with_config(work, "report");
    assert!(report.status.success());
    assert_eq!(stdout(&report), fs::read_to_string(work.join("report.txt")).unwrap());

    let cfg = work.join("small.toml");
    let out = corprel(work, &["predict", "--config", cfg.to_str().unwrap(), "--a", "0", "--b", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let first = text.lines().next().unwrap();
    assert!(first == "yes" || first == "no");
    assert!(text.contains("nll(yes)") && text.contains("nll(no)"));

    // Unknown firm and unknown task.
    let out = corprel(work, &["predict", "--config", cfg.to_str().unwrap(), "--a", "0", "--b", "9999"]);
    assert_ne!(out.status.code(), Some(0));
    let out = corprel(work, &["predict", "--config", cfg.to_str().unwrap(), "--a", "0", "--b", "1", "--task", "ic"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn selftest_passes_on_a_small_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = with_config(dir.path(), "selftest");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("selftest ok"));
}
