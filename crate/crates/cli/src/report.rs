//! Report files written after a run.
//!
//! | file | contents |
//! |------|----------|
//! | `config.txt` | canonical config echo |
//! | `summary.txt` | `key = value` metrics; wall-clock on the last line |
//! | `metrics_long.csv` | `method,seed,task,metric,value` |
//! | `accuracy_seed<S>.csv` | accuracy matrix |
//! | `diagnostics_seed<S>.csv` | one row per mini-batch |
//! | `lambda_seed<S>.csv` | `step,task,<group>...` |
//! | `gates_seed<S>.csv` | `step,task,group,mean,min,max` |
//! | `checkpoint_seed<S>.txt` | final parameters |
//! | `buffer_seed<S>.txt` | final replay buffer |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mango_core::session::StepRecord;

use crate::error::{Error, Result};
use crate::formats::{buffer_dump_text, checkpoint_text, matrix_csv, write};
use crate::runner::{RunReport, SeedReport};

pub const WALL_CLOCK_KEY: &str = "wall_clock_seconds";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn diagnostics_csv(report: &SeedReport) -> String {
    let mut s = String::from("step,task,train_loss,meta_loss");
    for g in &report.group_names {
        let _ = write!(s, ",lambda_{g}");
    }
    for g in &report.group_names {
        let _ = write!(s, ",gate_mean_{g},gate_min_{g},gate_max_{g}");
    }
    s.push_str(",harmful_raw,harmful_gated,harmful_mass_raw,harmful_mass_gated\n");
    for StepRecord { step, task, diag } in &report.run.steps {
        let _ = write!(s, "{step},{task},{},{}", diag.train_loss, opt(diag.meta_loss));
        for l in &diag.lambda_values {
            let _ = write!(s, ",{l}");
        }
        match &diag.gate_stats {
            Some(stats) => {
                for g in stats {
                    let _ = write!(s, ",{},{},{}", g.mean, g.min, g.max);
                }
            }
            None => s.push_str(&",,,".repeat(report.group_names.len())),
        }
        let _ = writeln!(
            s,
            ",{},{},{},{}",
            opt(diag.harmful_fraction_raw),
            opt(diag.harmful_fraction_gated),
            opt(diag.harmful_mass_raw),
            opt(diag.harmful_mass_gated)
        );
    }
    s
}

pub fn lambda_csv(report: &SeedReport) -> String {
    let mut s = String::from("step,task");
    for g in &report.group_names {
        let _ = write!(s, ",{g}");
    }
    s.push('\n');
    for r in &report.run.steps {
        let _ = write!(s, "{},{}", r.step, r.task);
        for l in &r.diag.lambda_values {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
    }
    s
}

pub fn gates_csv(report: &SeedReport) -> String {
    let mut s = String::from("step,task,group,mean,min,max\n");
    for r in &report.run.steps {
        if let Some(stats) = &r.diag.gate_stats {
            for (g, st) in report.group_names.iter().zip(stats) {
                let _ = writeln!(s, "{},{},{g},{},{},{}", r.step, r.task, st.mean, st.min, st.max);
            }
        }
    }
    s
}

/// Per evaluation point `t`: `avg_acc` and `acc_task<j>` for every seen task;
/// at the last point also `acc`, `aaa`, `wc_acc` and `bwt`.
pub fn long_csv(report: &RunReport) -> String {
    let method = report.config.method.name();
    let mut s = String::from("method,seed,task,metric,value\n");
    for (seed, r) in report.completed() {
        let rows = r.run.matrix.rows();
        for (t, row) in rows.iter().enumerate() {
            let mean = row.iter().map(|a| a.to_f64()).sum::<f64>() / row.len() as f64;
            let _ = writeln!(s, "{method},{seed},{t},avg_acc,{mean}");
            for (j, a) in row.iter().enumerate() {
                let _ = writeln!(s, "{method},{seed},{t},acc_task{j},{}", a.to_f64());
            }
        }
        let last = rows.len().saturating_sub(1);
        let m = r.metrics;
        for (name, v) in [("acc", m.acc), ("aaa", m.aaa), ("wc_acc", m.wc_acc), ("bwt", m.bwt)] {
            let _ = writeln!(s, "{method},{seed},{last},{name},{v}");
        }
    }
    s
}

pub fn summary_text(report: &RunReport) -> String {
    let mut s = String::new();
    let list = |xs: Vec<u64>| xs.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let _ = writeln!(s, "method = {}", report.config.method);
    let _ = writeln!(s, "seeds = {}", list(report.config.seeds.clone()));
    let _ = writeln!(s, "completed_seeds = {}", list(report.completed().map(|(k, _)| k).collect()));
    let _ = writeln!(s, "failed_seeds = {}", list(report.failed().map(|(k, _)| k).collect()));
    if let Some(a) = &report.aggregate {
        for (name, (mean, std)) in [("acc", a.acc), ("aaa", a.aaa), ("wc_acc", a.wc_acc), ("bwt", a.bwt)] {
            let _ = writeln!(s, "{name}_mean = {mean}");
            let _ = writeln!(s, "{name}_std = {std}");
        }
    }
    for (seed, r) in report.completed() {
        let m = r.metrics;
        for (name, v) in [("acc", m.acc), ("aaa", m.aaa), ("wc_acc", m.wc_acc), ("bwt", m.bwt)] {
            let _ = writeln!(s, "seed_{seed}_{name} = {v}");
        }
    }
    for (seed, e) in report.failed() {
        let _ = writeln!(s, "seed_{seed}_error = {}", e.replace('\n', " "));
    }
    let _ = writeln!(s, "{WALL_CLOCK_KEY} = {:.3}", report.wall_clock_secs);
    s
}

/// Writes every report file and returns their paths.
///
/// An existing non-empty `dir` is refused unless `overwrite` is set; files
/// are then written over in place.
pub fn emit_reports(report: &RunReport, dir: &Path, overwrite: bool) -> Result<Vec<PathBuf>> {
    if !overwrite && dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut files: Vec<(PathBuf, String)> = vec![
        (dir.join("config.txt"), report.config.to_text()),
        (dir.join("metrics_long.csv"), long_csv(report)),
    ];
    for (seed, r) in report.completed() {
        files.push((dir.join(format!("accuracy_seed{seed}.csv")), matrix_csv(&r.run.matrix)));
        files.push((dir.join(format!("diagnostics_seed{seed}.csv")), diagnostics_csv(r)));
        files.push((dir.join(format!("lambda_seed{seed}.csv")), lambda_csv(r)));
        files.push((dir.join(format!("gates_seed{seed}.csv")), gates_csv(r)));
        files.push((dir.join(format!("checkpoint_seed{seed}.txt")), checkpoint_text(&r.run.learner.store)));
        files.push((dir.join(format!("buffer_seed{seed}.txt")), buffer_dump_text(&r.run.buffer)));
    }
    // Summary last, once everything else is on disk.
    files.push((dir.join("summary.txt"), summary_text(report)));

    let mut written = Vec::with_capacity(files.len());
    for (path, text) in files {
        write(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}
