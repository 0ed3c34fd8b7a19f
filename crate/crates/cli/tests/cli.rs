use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lrnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrnn")).args(args).output().expect("spawn lrnn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn gen_data_is_reproducible_and_ingestable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.cfg", "n_train = 6\nn_test = 2\nsteps = 5\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (dir, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        let o = lrnn(&["gen-data", "--config", &cfg, "--seed", seed, "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path| fs::read_to_string(d.join("data/target_0000.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert!(read(&a).contains("seed=3 config_hash="));
    assert!(a.join("teacher.txt").exists());

    let o =
        lrnn(&["ingest", "--data", a.join("data").to_str().unwrap(), "--out", tmp.path().join("i").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("8 sequences (T=5, n_x=1, n_y=1): 6 train, 2 test"));
}

#[test]
fn train_compare_on_ingested_data_writes_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let data_cfg = write_config(tmp.path(), "d.cfg", "n_train = 5\nn_test = 5\nsteps = 6\n");
    let data = tmp.path().join("gen");
    assert_eq!(code(&lrnn(&["gen-data", "--config", &data_cfg, "--out", data.to_str().unwrap()])), 0);
    let cfg = write_config(
        tmp.path(),
        "t.cfg",
        &format!("student_n = 20\nepochs = 4\nlr = 1e-3\ntolerance = 10\ndata_dir = {}\n", data.join("data").display()),
    );
    let out = tmp.path().join("run");
    let o = lrnn(&["train-compare", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    for f in [
        "loss_rnn.csv",
        "loss_conv_scaled.csv",
        "loss_conv_unscaled.csv",
        "gap_report.csv",
        "metrics.csv",
        "config_used.txt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(out.join("loss_rnn.csv")).unwrap();
    assert!(log.starts_with("# "));
    assert!(log.lines().any(|l| l.starts_with("step,train_loss")));
    assert!(stdout(&o).contains("train-compare: PASS"));
}

#[test]
fn failing_check_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "n.cfg", "widths = 20, 40\nseeds = 2\ntolerance = 0\n");
    let o = lrnn(&["ntk-check", "--config", &cfg, "--out", tmp.path().join("n").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stdout(&o));
    assert!(stdout(&o).contains("ntk-check: FAIL"));
}

#[test]
fn errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_key = write_config(tmp.path(), "b.cfg", "learning_rate = 1\n");
    let o = lrnn(&["gen-data", "--config", &bad_key, "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `learning_rate`"));

    let bad_delay = write_config(tmp.path(), "d.cfg", "steps = 4\ndelays = 4\nstudent_n = 10\n");
    let o = lrnn(&["delay-sweep", "--config", &bad_delay, "--out", tmp.path().join("y").to_str().unwrap()]);
    assert_eq!(code(&o), 1);

    let o = lrnn(&[
        "ingest",
        "--data",
        tmp.path().join("missing").to_str().unwrap(),
        "--out",
        tmp.path().join("z").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn small_diagnostics_run() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = [
        ("impulse-stats", "n = 50\nseeds = 4\nradius_seeds = 1\ntolerance = 100\n", "impulse_stats.csv"),
        ("se-report", "widths = 50, 100\ntrials = 3\nsteps = 3\n", "se_report.csv"),
        (
            "delay-sweep",
            "student_n = 20\nn_x = 3\nsteps = 6\ndelays = 0,1,2\nepochs = 3\nn_train = 2\nn_test = 2\n",
            "delay_sweep.csv",
        ),
    ];
    for (cmd, body, file) in runs {
        let cfg = write_config(tmp.path(), &format!("{cmd}.cfg"), body);
        let out = tmp.path().join(cmd);
        let o = lrnn(&[cmd, "--config", &cfg, "--seed", "2", "--out", out.to_str().unwrap()]);
        assert!(matches!(code(&o), 0 | 2), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let csv = fs::read_to_string(out.join(file)).unwrap();
        assert!(csv.contains("seed=2"), "{cmd}");
    }
}
