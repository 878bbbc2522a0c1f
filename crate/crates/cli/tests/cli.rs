use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
# tiny synthetic run
source = synthetic
synth_days = 100
model_preset = tiny
stage1_epochs = 3
stage1_milestones = 2
stage2_epochs = 2
stage2_milestones =
ablation_seeds = 3
output_dir = out
";

fn loadcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadcast"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn loadcast")
}

fn setup() -> TempDir {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("tiny.conf"), TINY).unwrap();
    t
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}\n{}", o.status.code(), stdout(o), stderr(o));
}

/// Hourly CSV for `days` consecutive days starting 2010-03-01.
fn fixture(days: usize, spike: Option<(usize, usize, f64)>) -> String {
    let mut s = String::from("date,hour,load,temp\n");
    let start = chrono::NaiveDate::from_ymd_opt(2010, 3, 1).unwrap();
    for d in 0..days {
        let date = start + chrono::Duration::days(d as i64);
        for h in 1..=24 {
            let load = match spike {
                Some((sd, sh, v)) if sd == d && sh == h => v,
                _ => 500.0,
            };
            s.push_str(&format!("{date},{h},{load},15\n"));
        }
    }
    s
}

#[test]
fn version_prints_build_metadata() {
    let t = setup();
    let o = loadcast(t.path(), &["--version"]);
    ok(&o);
    assert!(stdout(&o).starts_with("loadcast 0.1.0 (core 0.1.0"));
}

#[test]
fn synth_is_deterministic() {
    let t = setup();
    for d in ["a", "b"] {
        ok(&loadcast(t.path(), &["synth", "--config", "tiny.conf", "--run-dir", d, "--seed=7"]));
    }
    let a = fs::read(t.path().join("a/synthetic.csv")).unwrap();
    assert_eq!(a, fs::read(t.path().join("b/synthetic.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 100 * 24);
    assert!(fs::read_to_string(t.path().join("a/config.txt")).unwrap().contains("seed = 7"));
}

#[test]
fn preprocess_reports_the_injected_spike() {
    let t = setup();
    fs::write(t.path().join("spike.csv"), fixture(10, Some((2, 5, 1500.0)))).unwrap();
    fs::write(t.path().join("clean.csv"), fixture(10, None)).unwrap();
    let o = loadcast(t.path(), &["preprocess", "--data_path=spike.csv", "--run-dir", "s"]);
    ok(&o);
    let rep = fs::read_to_string(t.path().join("s/preprocess_report.txt")).unwrap();
    assert!(rep.contains("replacements: 1"), "{rep}");
    assert!(rep.contains("2010-03-03 hour 5: 1500 -> 500"), "{rep}");
    assert!(fs::read_to_string(t.path().join("s/cleaned.csv")).unwrap().lines().count() == 1 + 240);

    let o = loadcast(t.path(), &["preprocess", "--data_path=clean.csv", "--run-dir", "c"]);
    ok(&o);
    assert!(stdout(&o).contains("replacements: 0"));
}

#[test]
fn malformed_csv_is_a_data_error_with_line_number() {
    let t = setup();
    let mut text = fixture(3, None);
    text = text.replacen("2010-03-02,7,500,15", "2010-03-02,7,abc,15", 1);
    fs::write(t.path().join("bad.csv"), text).unwrap();
    let o = loadcast(t.path(), &["preprocess", "--data_path=bad.csv", "--run-dir", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 32"), "{}", stderr(&o));
    assert!(!t.path().join("x").exists());
}

#[test]
fn invalid_config_fails_before_writing_anything() {
    let t = setup();
    let o = loadcast(t.path(), &["train", "--config", "tiny.conf", "--stage1_milestones=5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("milestones"));
    let o = loadcast(t.path(), &["train", "--config", "missing.conf"]);
    assert_eq!(o.status.code(), Some(1));
    let o = loadcast(t.path(), &["train", "--config", "tiny.conf", "--no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = loadcast(t.path(), &["train", "--data_path=nowhere.csv", "--source=csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!t.path().join("out").exists());
}

#[test]
fn diverging_training_is_a_numeric_failure() {
    let t = setup();
    let o = loadcast(t.path(), &["train", "--config", "tiny.conf", "--stage1_lr=1e300", "--run-dir", "r"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn train(t: &TempDir, dir: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--config", "tiny.conf", "--run-dir", dir];
    args.extend_from_slice(extra);
    ok(&loadcast(t.path(), &args));
    t.path().join(dir)
}

#[test]
fn train_predict_evaluate_round() {
    let t = setup();
    let run = train(&t, "t", &[]);
    assert!(run.join("checkpoints/stage1.ckpt").is_file());
    assert!(run.join("checkpoints/stage2.ckpt").is_file());
    let again = train(&t, "t2", &[]);
    assert_eq!(
        fs::read_to_string(run.join("loss.csv")).unwrap(),
        fs::read_to_string(again.join("loss.csv")).unwrap()
    );

    let only1 = train(&t, "one", &["--stage", "1"]);
    assert!(only1.join("checkpoints/stage1.ckpt").is_file());
    assert!(!only1.join("checkpoints/stage2.ckpt").exists());
    let two = train(&t, "two", &["--stage", "2", "--checkpoint", "one/checkpoints/stage1.ckpt"]);
    assert_eq!(
        fs::read(two.join("checkpoints/stage2.ckpt")).unwrap(),
        fs::read(run.join("checkpoints/stage2.ckpt")).unwrap()
    );

    ok(&loadcast(
        t.path(),
        &["predict", "--config", "tiny.conf", "--checkpoint", "t/checkpoints/stage2.ckpt", "--run-dir", "p"],
    ));
    let text = fs::read_to_string(t.path().join("p/predictions.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("date,hour,y_init,e_star,y_refine,actual,y_init_raw,e_star_raw,y_refine_raw,actual_raw,day_type")
    );
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 168);
    for r in &rows {
        let v = |i: usize| r[i].parse::<f64>().unwrap();
        assert_eq!(v(4) - v(2) - v(3), 0.0, "{r:?}");
    }

    ok(&loadcast(
        t.path(),
        &["evaluate", "--config", "tiny.conf", "--predictions", "p/predictions.csv", "--run-dir", "e"],
    ));
    for f in ["report.csv", "report.txt", "residuals_initial.csv", "residuals_refined.csv", "summary.json"] {
        assert!(t.path().join("e").join(f).is_file(), "{f}");
    }
    ok(&loadcast(
        t.path(),
        &[
            "evaluate",
            "--config",
            "tiny.conf",
            "--checkpoint",
            "t/checkpoints/stage2.ckpt",
            "--timing-runs",
            "5",
            "--run-dir",
            "e2",
        ],
    ));
    // both routes score the same forecasts
    let a = fs::read_to_string(t.path().join("e/report.csv")).unwrap();
    let b = fs::read_to_string(t.path().join("e2/report.csv")).unwrap();
    assert_eq!(a, b);
    assert!(fs::read_to_string(t.path().join("e2/report.txt")).unwrap().contains("ms"));
}

#[test]
fn resume_matches_uninterrupted_training() {
    let t = setup();
    let full = train(&t, "full", &[]);
    train(&t, "half", &["--stop-after", "2"]);
    let rest = train(&t, "rest", &["--resume", "half/checkpoints/stage1_epoch0002.ckpt"]);
    assert_eq!(
        fs::read(full.join("checkpoints/stage2.ckpt")).unwrap(),
        fs::read(rest.join("checkpoints/stage2.ckpt")).unwrap()
    );
}

#[test]
fn evaluate_perfect_predictions() {
    let t = setup();
    let mut s = String::from("date,hour,y_init,e_star,y_refine,actual,y_init_raw,e_star_raw,y_refine_raw,actual_raw,day_type\n");
    for d in 1..=7 {
        for h in 1..=24 {
            let v = 400.0 + (d * h) as f64 + if (d + h) % 3 == 0 { 0.5 } else { 0.0 };
            let kind = if d >= 6 { "restday" } else { "workday" };
            s.push_str(&format!("2024-06-0{d},{h},0,0,0,0,{v},0,{v},{v},{kind}\n"));
        }
    }
    fs::write(t.path().join("perfect.csv"), s).unwrap();
    ok(&loadcast(t.path(), &["evaluate", "--predictions", "perfect.csv", "--run-dir", "e"]));
    let rep = fs::read_to_string(t.path().join("e/report.csv")).unwrap();
    for line in rep.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[4], "100", "{line}");
        assert_eq!(f[5], "0", "{line}");
    }
}

#[test]
fn predict_with_missing_checkpoint_names_the_path() {
    let t = setup();
    let o = loadcast(t.path(), &["predict", "--config", "tiny.conf", "--checkpoint", "gone.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gone.ckpt"));
    assert!(!t.path().join("out").exists());
}

#[test]
fn ablate_emits_three_rows() {
    let t = setup();
    let o = loadcast(t.path(), &["ablate", "--config", "tiny.conf", "--jobs", "2", "--run-dir", "a"]);
    ok(&o);
    let table = fs::read_to_string(t.path().join("a/ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), 4);
    for arm in ["CNN ", "CNN-SAEDN ", "CNN-SAEDN-Res"] {
        assert!(table.contains(arm));
    }
    assert_eq!(fs::read_to_string(t.path().join("a/ablation.csv")).unwrap().lines().count(), 4);
}

#[test]
fn timestamped_run_directory_under_output_dir() {
    let t = setup();
    ok(&loadcast(t.path(), &["synth", "--config", "tiny.conf"]));
    let entries: Vec<_> = fs::read_dir(t.path().join("out")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1);
    let name = entries[0].file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("synth-") && name.len() == "synth-20240101-000000".len(), "{name}");
    assert!(entries[0].join("config.txt").is_file());
}
