use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use legan::metrics::{read_metrics, HEADER};
use legan_cli::svg::{read_bars, read_polylines};

fn legan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_legan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, objective: &str, extra: &str) -> PathBuf {
    let p = dir.join(format!("{objective}.cfg"));
    std::fs::write(
        &p,
        format!(
            "# small synthetic run\nobjective = {objective}\narchitecture = tiny:4\nbatch_size = 16\n\
             dataset = synthetic\nsynthetic_count = 64\nseed = 3\n{extra}"
        ),
    )
    .unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_names_the_path() {
    let o = legan(&["train", "/no/such/run.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("/no/such/run.cfg"), "{}", stderr(&o));
}

#[test]
fn bad_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "vanilla", "epochs = 1\nlearning_rat = 0.1\n");
    let o = legan(&["train", s(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&legan(&["frobnicate"])), 1);
    assert_eq!(code(&legan(&["plot", "x.csv"])), 1);
}

#[test]
fn one_epoch_run_writes_metrics_and_progress() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "vanilla", "epochs = 1\n");
    let out = dir.path().join("run");
    let o = legan(&["train", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("epoch")).count(), 1);
    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(HEADER));
    // 4 batches, 5 critic steps per generator step → one generator step
    assert_eq!(read_metrics(&out.join("metrics.csv")).unwrap().len(), 1);
}

#[test]
fn seed_flag_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "vanilla", "epochs = 1\n");
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    assert_eq!(code(&legan(&["train", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(
        code(&legan(&["train", s(&cfg), "--out", s(&b), "--seed", "3"])),
        0
    );
    assert_eq!(
        code(&legan(&["train", s(&cfg), "--out", s(&c), "--seed", "4"])),
        0
    );
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn train_then_plot_for_every_objective() {
    let dir = tempfile::tempdir().unwrap();
    for obj in ["vanilla", "least-squares", "wasserstein"] {
        let cfg = write_config(dir.path(), obj, "epochs = 2\n");
        let out = dir.path().join(obj);
        let o = legan(&["train", s(&cfg), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{obj}: {}", stderr(&o));
        let svg = dir.path().join(format!("{obj}.svg"));
        let csv = out.join("metrics.csv");
        let o = legan(&["plot", s(&csv), "--out", s(&svg)]);
        assert_eq!(code(&o), 0, "{obj}: {}", stderr(&o));
        let lines = read_polylines(&std::fs::read_to_string(&svg).unwrap());
        let names: Vec<&str> = lines.iter().map(|l| l.0.as_str()).collect();
        assert_eq!(names, ["l_diff", "l_ratio"]);
        assert!(lines.iter().all(|l| l.1.len() == 2));
        if obj == "wasserstein" {
            let o = legan(&[
                "plot",
                s(&csv),
                "--out",
                s(&svg),
                "--columns",
                "critic_distance,l_diff",
            ]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
    }
}

fn csv_fixture(dir: &Path, rows: &[String]) -> PathBuf {
    let p = dir.join("fixture.csv");
    let mut text = format!("{HEADER}\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn monotone_ratio_gives_monotone_polyline() {
    let dir = tempfile::tempdir().unwrap();
    let e = 8;
    let rows: Vec<String> = (0..e)
        .map(|i| {
            let ratio = i as f64 / e as f64 + 0.01;
            format!("{i},{},vanilla,1,1,0.4,0.3,0.1,{ratio},,0.1,0.5", i + 1)
        })
        .collect();
    let csv = csv_fixture(dir.path(), &rows);
    let svg = dir.path().join("m.svg");
    assert_eq!(
        code(&legan(&[
            "plot",
            s(&csv),
            "--out",
            s(&svg),
            "--columns",
            "l_ratio"
        ])),
        0
    );
    let lines = read_polylines(&std::fs::read_to_string(&svg).unwrap());
    assert_eq!(lines.len(), 1);
    let ys: Vec<f64> = lines[0].1.iter().map(|p| p.1).collect();
    assert_eq!(ys.len(), e);
    // larger values sit higher, i.e. at smaller SVG y
    assert!(ys.windows(2).all(|w| w[1] < w[0]), "{ys:?}");
}

#[test]
fn plot_rejects_unknown_columns_and_empty_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let csv = csv_fixture(
        dir.path(),
        &["0,1,vanilla,1,1,0.4,0.3,0.1,0.75,,0.1,0.5".into()],
    );
    let svg = dir.path().join("x.svg");
    let o = legan(&[
        "plot",
        s(&csv),
        "--out",
        s(&svg),
        "--columns",
        "l_diff,bogus",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bogus"));
    let empty = csv_fixture(dir.path(), &[]);
    assert_eq!(code(&legan(&["plot", s(&empty), "--out", s(&svg)])), 1);
    let o = legan(&[
        "plot",
        s(&csv),
        "--out",
        s(&svg),
        "--columns",
        "critic_distance",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn hist_renders_bars_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("h.txt");
    std::fs::write(&dump, "epoch 4 edges 0 0.5 1\nreal 1 1\nfake 0 1\n").unwrap();
    let svg = dir.path().join("h.svg");
    assert_eq!(code(&legan(&["hist", s(&dump), "--out", s(&svg)])), 0);
    let bars = read_bars(&std::fs::read_to_string(&svg).unwrap());
    assert_eq!(bars.len(), 4);
    for b in &bars {
        let expected = if b.source == "real" {
            [1, 1][b.bin]
        } else {
            [0, 1][b.bin]
        };
        assert_eq!(b.count, expected);
        assert_eq!(b.height == 0.0, expected == 0);
    }
    std::fs::write(&dump, "epoch 4 edges 0 0.5 1\nreal 1 x\nfake 0 1\n").unwrap();
    let o = legan(&["hist", s(&dump), "--out", s(&svg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn gradcheck_default_passes_and_tight_tolerance_fails() {
    let o = legan(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    let names: Vec<String> = legan_cli::checks::suite()
        .unwrap()
        .iter()
        .map(|op| legan::autodiff::Differentiable::<f64>::name(op).to_string())
        .collect();
    for n in &names {
        let hits = table
            .lines()
            .filter(|l| l.starts_with(&format!("{n} ")))
            .count();
        assert_eq!(hits, 1, "{n}");
    }
    assert_eq!(code(&legan(&["gradcheck", "--tolerance", "1e-12"])), 3);
}
