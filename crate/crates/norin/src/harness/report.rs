//! Artifact serialization and deterministic report rendering.
//!
//! Every command writes its result as JSON (or JSON-lines for trial
//! histories); `render_reports` reads whatever artifacts a directory holds
//! and emits CSV plus aligned-text tables. All writes go through a
//! temp-file-then-rename so partially written artifacts never appear, and
//! all float formatting is fixed-precision so re-rendering is
//! byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{ComparisonTable, DegenerationSummary, GridResult, SweepResult};
use crate::backbone::RunResult;
use crate::search::TrialRecord;
use crate::{Error, Result};

/// Artifact file names `render_reports` looks for.
pub const KNOWN_ARTIFACTS: &[&str] = &[
    "table.json",
    "grid.json",
    "sweep.json",
    "trials.jsonl",
    "run.json",
    "traj.json",
];

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_else(|| "failed".to_string())
}

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|source| Error::Io {
        path: tmp.clone(),
        source,
    })?;
    std::fs::rename(&tmp, path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialize {path:?}: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptArtifact {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// One record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Data(format!("serialize {path:?}: {e}")))?,
        );
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::CorruptArtifact {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Renders rows into an aligned text table.
fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:>width$}", width = widths[i]);
        }
        out.push('\n');
    };
    line(header, &mut out);
    let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        line(row, &mut out);
    }
    out
}

fn csv_line(cells: &[String]) -> String {
    let mut line = cells.join(",");
    line.push('\n');
    line
}

/// Comparison table -> (csv, text).
pub fn render_comparison(table: &ComparisonTable) -> (String, String) {
    let mut header = vec!["dataset".to_string(), "H".to_string()];
    for kind in &table.normalizers {
        header.push(format!("{}_mean", kind.name()));
        header.push(format!("{}_std", kind.name()));
    }
    header.push("winner".to_string());

    let mut rows = Vec::new();
    for row in &table.rows {
        let mut cells = vec![row.dataset.clone(), row.horizon.to_string()];
        for stat in &row.cells {
            cells.push(fmt_opt(stat.mean_test_mse));
            cells.push(stat.std_test_mse.map(fmt_f).unwrap_or_else(|| "-".to_string()));
        }
        cells.push(
            row.winner
                .map(|w| table.normalizers[w].name().to_string())
                .unwrap_or_else(|| "-".to_string()),
        );
        rows.push(cells);
    }

    let mut csv = csv_line(&header);
    for row in &rows {
        csv.push_str(&csv_line(row));
    }

    let mut text = text_table(&header, &rows);
    if let Some(wx) = &table.wilcoxon {
        text.push('\n');
        let header = vec![
            "baseline".to_string(),
            "wins".to_string(),
            "mean_delta".to_string(),
            "W".to_string(),
            "p".to_string(),
            "method".to_string(),
        ];
        let rows: Vec<Vec<String>> = wx
            .entries
            .iter()
            .map(|e| {
                vec![
                    e.baseline.name().to_string(),
                    format!("{}/{}", e.test.wins, e.test.n_pairs),
                    fmt_f(e.test.mean_delta),
                    fmt_f(e.test.w_statistic),
                    format!("{:.3e}", e.test.p_value),
                    match e.test.method {
                        super::WilcoxonMethod::Exact => "exact".to_string(),
                        super::WilcoxonMethod::NormalApproximation => "normal-approx".to_string(),
                    },
                ]
            })
            .collect();
        text.push_str(&text_table(&header, &rows));
    }
    (csv, text)
}

/// Significance section alone -> csv.
pub fn render_significance(table: &ComparisonTable) -> Option<String> {
    let wx = table.wilcoxon.as_ref()?;
    let header = vec![
        "baseline".to_string(),
        "wins".to_string(),
        "n_pairs".to_string(),
        "mean_delta".to_string(),
        "w_statistic".to_string(),
        "p_value".to_string(),
        "method".to_string(),
    ];
    let mut csv = csv_line(&header);
    for e in &wx.entries {
        csv.push_str(&csv_line(&[
            e.baseline.name().to_string(),
            e.test.wins.to_string(),
            e.test.n_pairs.to_string(),
            fmt_f(e.test.mean_delta),
            fmt_f(e.test.w_statistic),
            format!("{:.6e}", e.test.p_value),
            match e.test.method {
                super::WilcoxonMethod::Exact => "exact".to_string(),
                super::WilcoxonMethod::NormalApproximation => "normal-approximation".to_string(),
            },
        ]));
    }
    Some(csv)
}

/// Grid -> (csv, text). Rows are delta values, columns epsilon values; the
/// argmin cell is starred in the text rendering and noted in a csv footer
/// comment.
pub fn render_grid(grid: &GridResult) -> (String, String) {
    let mut header = vec!["delta/epsilon".to_string()];
    for e in &grid.epsilons {
        header.push(fmt_f(*e));
    }
    let mut csv_rows = Vec::new();
    let mut text_rows = Vec::new();
    for (i, d) in grid.deltas.iter().enumerate() {
        let mut csv_cells = vec![fmt_f(*d)];
        let mut text_cells = vec![fmt_f(*d)];
        for (j, v) in grid.mse[i].iter().enumerate() {
            csv_cells.push(fmt_opt(*v));
            let starred = grid.argmin == Some((i, j));
            text_cells.push(if starred {
                format!("*{}", fmt_opt(*v))
            } else {
                fmt_opt(*v)
            });
        }
        csv_rows.push(csv_cells);
        text_rows.push(text_cells);
    }
    let mut csv = csv_line(&header);
    for row in &csv_rows {
        csv.push_str(&csv_line(row));
    }
    if let Some((i, j)) = grid.argmin {
        let _ = writeln!(
            csv,
            "# argmin delta={} epsilon={} mse={}",
            fmt_f(grid.deltas[i]),
            fmt_f(grid.epsilons[j]),
            fmt_opt(grid.mse[i][j])
        );
    }
    let text = text_table(&header, &text_rows);
    (csv, text)
}

/// Sweep -> (csv, text).
pub fn render_sweep(sweep: &SweepResult) -> (String, String) {
    let header = vec![sweep.axis.name().to_string(), "test_mse".to_string()];
    let rows: Vec<Vec<String>> = sweep
        .rows
        .iter()
        .map(|r| vec![format!("{}", r.value), fmt_opt(r.test_mse)])
        .collect();
    let mut csv = csv_line(&header);
    for row in &rows {
        csv.push_str(&csv_line(row));
    }
    let mut text = text_table(&header, &rows);
    if let (Some(mean), Some(std), Some(cv)) = (sweep.mean, sweep.std, sweep.cv) {
        let summary = format!(
            "mean={} std={} cv={}%\n",
            fmt_f(mean),
            fmt_f(std),
            fmt_f(cv * 100.0)
        );
        csv.push_str(&format!("# {summary}"));
        text.push_str(&summary);
    }
    (csv, text)
}

/// Trial history -> (csv, text) with the running incumbent.
pub fn render_trials(trials: &[TrialRecord]) -> (String, String) {
    let header = vec![
        "index".to_string(),
        "delta".to_string(),
        "epsilon".to_string(),
        "objective".to_string(),
        "status".to_string(),
        "best_so_far".to_string(),
    ];
    let mut rows = Vec::new();
    let mut incumbent = f64::INFINITY;
    for t in trials {
        if t.is_complete() {
            incumbent = incumbent.min(t.objective);
        }
        let delta = t.candidate.delta();
        let eps = t.candidate.epsilon();
        rows.push(vec![
            t.index.to_string(),
            if t.candidate.is_shared() {
                fmt_f(delta[0])
            } else {
                delta.iter().map(|d| fmt_f(*d)).collect::<Vec<_>>().join("|")
            },
            if t.candidate.is_shared() {
                fmt_f(eps[0])
            } else {
                eps.iter().map(|e| fmt_f(*e)).collect::<Vec<_>>().join("|")
            },
            if t.is_complete() {
                fmt_f(t.objective)
            } else {
                "failed".to_string()
            },
            match t.status {
                crate::search::TrialStatus::Complete => "complete".to_string(),
                crate::search::TrialStatus::Failed => "failed".to_string(),
            },
            if incumbent.is_finite() {
                fmt_f(incumbent)
            } else {
                "-".to_string()
            },
        ]);
    }
    let mut csv = csv_line(&header);
    for row in &rows {
        csv.push_str(&csv_line(row));
    }
    (csv, text_table(&header, &rows))
}

/// Single run -> (csv, text) of its metrics and validation trace.
pub fn render_run(run: &RunResult) -> (String, String) {
    let header = vec!["metric".to_string(), "value".to_string()];
    let mut rows = vec![
        vec!["config_fingerprint".to_string(), run.config_fingerprint.clone()],
        vec!["seed".to_string(), run.seed.to_string()],
        vec!["epochs_run".to_string(), run.epochs_run.to_string()],
        vec!["train_mse".to_string(), fmt_f(run.train_mse)],
        vec!["train_mae".to_string(), fmt_f(run.train_mae)],
        vec!["val_mse".to_string(), fmt_f(run.val_mse)],
        vec!["val_mae".to_string(), fmt_f(run.val_mae)],
        vec!["test_mse".to_string(), fmt_f(run.test_mse)],
        vec!["test_mae".to_string(), fmt_f(run.test_mae)],
        vec!["best_val_mse".to_string(), fmt_f(run.best_val_mse)],
    ];
    for (i, v) in run.val_trace.iter().enumerate() {
        rows.push(vec![format!("val_epoch_{}", i + 1), fmt_f(*v)]);
    }
    let mut csv = csv_line(&header);
    for row in &rows {
        csv.push_str(&csv_line(row));
    }
    (csv, text_table(&header, &rows))
}

/// Degeneration summary -> (csv, text).
pub fn render_degeneration(summary: &DegenerationSummary) -> (String, String) {
    let header = vec![
        "seed".to_string(),
        "initial_delta".to_string(),
        "final_delta".to_string(),
        "drift_up".to_string(),
        "epochs_to_first_increase".to_string(),
    ];
    let rows: Vec<Vec<String>> = summary
        .runs
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                fmt_f(r.initial_delta),
                fmt_f(r.final_delta),
                r.drift_up.to_string(),
                r.epochs_to_first_increase
                    .map(|e| e.to_string())
                    .unwrap_or_else(|| "-".to_string()),
            ]
        })
        .collect();
    let mut csv = csv_line(&header);
    for row in &rows {
        csv.push_str(&csv_line(row));
    }
    let footer = format!(
        "# upward_drift {}/{}\n",
        summary.upward_drift_count,
        summary.runs.len()
    );
    csv.push_str(&footer);
    let mut text = text_table(&header, &rows);
    text.push_str(&footer);
    (csv, text)
}

/// Reads known artifacts from `dir` and writes rendered CSV/text tables into
/// `out_dir`. Errors when none of the expected artifacts are present,
/// naming them.
pub fn render_reports(dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut found_any = false;

    fn emit(
        out_dir: &Path,
        written: &mut Vec<PathBuf>,
        stem: &str,
        csv: &str,
        text: &str,
    ) -> Result<()> {
        let csv_path = out_dir.join(format!("{stem}.csv"));
        write_atomic(&csv_path, csv.as_bytes())?;
        written.push(csv_path);
        let txt_path = out_dir.join(format!("{stem}.txt"));
        write_atomic(&txt_path, text.as_bytes())?;
        written.push(txt_path);
        Ok(())
    }

    let table_path = dir.join("table.json");
    if table_path.exists() {
        found_any = true;
        let table: ComparisonTable = read_json(&table_path)?;
        let (csv, text) = render_comparison(&table);
        emit(out_dir, &mut written, "table", &csv, &text)?;
        if let Some(sig) = render_significance(&table) {
            let path = out_dir.join("significance.csv");
            write_atomic(&path, sig.as_bytes())?;
            written.push(path);
        }
    }
    let grid_path = dir.join("grid.json");
    if grid_path.exists() {
        found_any = true;
        let grid: GridResult = read_json(&grid_path)?;
        let (csv, text) = render_grid(&grid);
        emit(out_dir, &mut written, "grid", &csv, &text)?;
    }
    let sweep_path = dir.join("sweep.json");
    if sweep_path.exists() {
        found_any = true;
        let sweep: SweepResult = read_json(&sweep_path)?;
        let (csv, text) = render_sweep(&sweep);
        emit(out_dir, &mut written, "sweep", &csv, &text)?;
    }
    let trials_path = dir.join("trials.jsonl");
    if trials_path.exists() {
        found_any = true;
        let trials: Vec<TrialRecord> = read_jsonl(&trials_path)?;
        let (csv, text) = render_trials(&trials);
        emit(out_dir, &mut written, "trials", &csv, &text)?;
    }
    let run_path = dir.join("run.json");
    if run_path.exists() {
        found_any = true;
        let run: RunResult = read_json(&run_path)?;
        let (csv, text) = render_run(&run);
        emit(out_dir, &mut written, "run", &csv, &text)?;
    }
    let traj_path = dir.join("traj.json");
    if traj_path.exists() {
        found_any = true;
        let summary: DegenerationSummary = read_json(&traj_path)?;
        let (csv, text) = render_degeneration(&summary);
        emit(out_dir, &mut written, "traj", &csv, &text)?;
    }

    if !found_any {
        return Err(Error::MissingArtifacts {
            dir: dir.to_path_buf(),
            expected: KNOWN_ARTIFACTS.join(", "),
        });
    }
    Ok(written)
}
