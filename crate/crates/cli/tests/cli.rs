use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopsubnet"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("COOPSUBNET_DATA")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const GRID: &str = "task = synth-regression
variant = baseline
variant = coopsubnet L=4
fraction = 1.0
seed = 0
seed = 1
epochs = 1
batch_size = 8
train_pool = 16
test_size = 8
conv1 = 2
conv2 = 2
feature = 8
timing = off
";

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "task = synth-regression\nvariant = resnet\nfraction = 2\nepochs = many\n").unwrap();
    let o = cli(&["run", "bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for needle in ["resnet", "fraction 2", "epochs", "seed"] {
        assert!(err.contains(needle), "missing `{needle}` in:\n{err}");
    }
}

#[test]
fn missing_config_and_bad_arguments_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["run", "nope.cfg"], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["gradcheck", "--points", "x"], dir.path()).status.code(), Some(1));
}

#[test]
fn unreadable_report_is_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("results.csv"), "not,a,report\n1,2\n").unwrap();
    assert_eq!(cli(&["table", "results.csv"], dir.path()).status.code(), Some(2));
    assert_eq!(cli(&["table", "absent.csv"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_mnist_data_is_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.cfg"), "task = mnist-reduced\nvariant = baseline\nfraction = 0.01\nseed = 0\n").unwrap();
    let o = cli(&["run", "m.cfg", "--data-root", "nowhere"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_then_table() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("grid.cfg"), GRID).unwrap();
    let o = cli(&["run", "grid.cfg", "--output", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.csv", "results-aggregate.csv", "results.json", "config.txt"] {
        assert!(dir.path().join("out").join(f).exists(), "{f} missing");
    }
    let csv = cli(&["table", "out/results.csv"], dir.path());
    let json = cli(&["table", "out/results.json"], dir.path());
    assert_eq!(csv.status.code(), Some(0));
    assert_eq!(stdout(&csv), stdout(&json));
    assert!(stdout(&csv).contains("coopsubnet"));
}

#[test]
fn checks_pass_with_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    let g = cli(&["gradcheck", "--points", "2"], dir.path());
    assert_eq!(g.status.code(), Some(0), "{}", stdout(&g));
    assert!(stdout(&g).contains("0 failed"));
    let s = cli(&["selftest", "--maps", "5"], dir.path());
    assert_eq!(s.status.code(), Some(0), "{}", stdout(&s));
}
