use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn red(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_red")).args(args).output().unwrap()
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_train_detect_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let data = dir.path().join("d.reds");
    let ckpt = dir.path().join("m.ckpt");

    let o = red(&["gen-data", s(&cfg), "-o", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote 100 records of length 256"));
    assert!(dir.path().join("d.reds.meta.toml").exists());

    let o = red(&["train", s(&cfg), "--data", s(&data), "-o", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("m.log.toml").exists());

    let verdicts = dir.path().join("v.csv");
    let o = red(&["detect", "--ckpt", s(&ckpt), "--data", s(&data), "--lambda", "0.3", "-o", s(&verdicts)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("lambda 0.3: tp "));
    let csv = fs::read_to_string(&verdicts).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16 + 20);
    assert!(csv.starts_with("index,label,known,nearest_class,distance,decision\n"));

    let report = dir.path().join("eval.toml");
    let o = red(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--snr-list", "0,20", "-o", s(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.matches("[[snr]]").count(), 2);

    let again = dir.path().join("eval2.toml");
    red(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--snr-list", "0,20", "-o", s(&again)]);
    assert_eq!(fs::read(&report).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn run_and_suite_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let o = red(&["run", s(&smoke_config()), "-o", s(&run_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run_dir.join("manifest.toml").exists());
    assert_eq!(stdout(&o).lines().count(), 3);

    let suite_dir = dir.path().join("suite");
    let o = red(&["suite", "snr", s(&smoke_config()), "-o", s(&suite_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(suite_dir.join("suite_snr.toml").exists());
}

#[test]
fn gradcheck_passes() {
    let o = red(&["gradcheck", "--instances", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));
    assert!(stdout(&o).contains("conv1d"));
}

#[test]
fn failures_exit_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = red(&["gen-data", s(&missing), "-o", s(&dir.path().join("x.reds"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error: loading config"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\nseed = 1\n[train]\nlamda_ml = 0.1\n").unwrap();
    let o = red(&["run", s(&bad), "-o", s(&dir.path().join("r"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("lamda_ml"));
    assert!(!dir.path().join("r").exists());

    let rogue_free = dir.path().join("rf.toml");
    fs::write(&rogue_free, "schema_version = 1\nseed = 1\n[dataset]\nn_rogue = 0\n").unwrap();
    let o = red(&["suite", "ablation", s(&rogue_free), "-o", s(&dir.path().join("a"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("rogue"));

    let garbage = dir.path().join("g.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let o = red(&["detect", "--ckpt", s(&garbage), "--data", s(&garbage), "--lambda", "0.3"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: reading"));

    assert!(!red(&["frobnicate"]).status.success());
}
