//! Command implementations for the `legan` binary.
//!
//! Each command writes to caller-supplied streams and returns its exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | bad arguments, configuration, input file or I/O failure |
//! | 2 | training aborted on a non-finite loss or metric |
//! | 3 | at least one gradient check failed |

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod svg;

use std::io::Write;
use std::path::{Path, PathBuf};

use legan::autodiff::GradCheckConfig;
use legan::measures::HistogramDump;
use legan::metrics::{self, NUMERIC_COLUMNS};
use legan::trainer::{self, EpochLog, TrainObserver};
use legan::LeganError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

struct Progress<'a>(&'a mut dyn Write);

impl TrainObserver<f64> for Progress<'_> {
    fn on_epoch(&mut self, log: &EpochLog) {
        let _ = writeln!(
            self.0,
            "epoch {:>4}  d_loss {:>11.4e}  g_loss {:>11.4e}  l_diff {:>11.4e}  l_ratio {:.4}  ({:.1}s)",
            log.epoch, log.d_loss, log.g_loss, log.l_diff, log.l_ratio, log.seconds
        );
    }
}

/// `legan train CONFIG [--out DIR] [--seed N]`.
pub fn cmd_train(
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let mut cfg = match config::load_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", config_path.display());
            return EXIT_INPUT;
        }
    };
    if let Some(dir) = out {
        cfg.out_dir = dir;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match trainer::train::<f64>(&cfg, &mut Progress(stdout)) {
        Ok(summary) => {
            let _ = writeln!(stdout, "wrote {}", summary.metrics.display());
            EXIT_OK
        }
        Err(e @ LeganError::NonFinite { .. }) => {
            let _ = writeln!(stderr, "error: training aborted: {e}");
            EXIT_NUMERIC
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_INPUT
        }
    }
}

/// `legan plot METRICS_CSV --out FILE.svg [--columns a,b]`.
pub fn cmd_plot(csv: &Path, out: &Path, columns: &[String], stderr: &mut dyn Write) -> i32 {
    if let Some(bad) = columns
        .iter()
        .find(|c| !NUMERIC_COLUMNS.contains(&c.as_str()))
    {
        let _ = writeln!(
            stderr,
            "error: unknown column {bad:?} (available: {})",
            NUMERIC_COLUMNS.join(", ")
        );
        return EXIT_INPUT;
    }
    if columns.is_empty() {
        let _ = writeln!(stderr, "error: no columns requested");
        return EXIT_INPUT;
    }
    let rows = match metrics::read_metrics(csv) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_INPUT;
        }
    };
    if rows.is_empty() {
        let _ = writeln!(stderr, "error: {}: no data rows", csv.display());
        return EXIT_INPUT;
    }
    let mut series = Vec::new();
    for c in columns {
        let points = metrics::epoch_means(&rows, c).expect("column validated above");
        if points.is_empty() {
            let _ = writeln!(
                stderr,
                "error: column {c:?} has no values in {}",
                csv.display()
            );
            return EXIT_INPUT;
        }
        series.push(svg::Series {
            name: c.clone(),
            points,
        });
    }
    let title = format!("{} ({})", columns.join(", "), rows[0].objective);
    write_file(out, &svg::line_chart(&title, &series), stderr)
}

/// `legan hist DUMP --out FILE.svg`.
pub fn cmd_hist(dump_path: &Path, out: &Path, stderr: &mut dyn Write) -> i32 {
    let text = match std::fs::read_to_string(dump_path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", dump_path.display());
            return EXIT_INPUT;
        }
    };
    let dump = match HistogramDump::<f64>::parse(&text) {
        Ok(d) => d,
        Err((line, msg)) => {
            let _ = writeln!(stderr, "error: {}: line {line}: {msg}", dump_path.display());
            return EXIT_INPUT;
        }
    };
    write_file(out, &svg::histogram_chart(&dump), stderr)
}

/// `legan gradcheck [--tolerance R]`.
pub fn cmd_gradcheck(tolerance: f64, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    if !(tolerance > 0.0) {
        let _ = writeln!(stderr, "error: tolerance must be positive, got {tolerance}");
        return EXIT_INPUT;
    }
    let cfg = GradCheckConfig {
        tolerance,
        ..GradCheckConfig::default()
    };
    let reports = match checks::run_suite(&cfg) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_GRADCHECK;
        }
    };
    let _ = write!(stdout, "{}", checks::format_table(&reports));
    let failed = reports.iter().filter(|r| !r.passed()).count();
    let _ = writeln!(
        stdout,
        "{} checks, {failed} failed, tolerance {tolerance:e}",
        reports.len()
    );
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_GRADCHECK
    }
}

fn write_file(path: &Path, contents: &str, stderr: &mut dyn Write) -> i32 {
    match std::fs::write(path, contents) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", path.display());
            EXIT_INPUT
        }
    }
}
