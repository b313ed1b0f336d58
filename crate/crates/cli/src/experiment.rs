//! Single runs, sweeps and re-aggregation of finished sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cell::{failed_record, run_cell, CellKey, CellRecord};
use crate::config::{ExperimentConfig, SweepAxis, TaskSection, TraceFormat};
use crate::error::{CliError, Result};
use crate::output::{to_json, trace_csv, trace_json, write_file, write_meta};
use crate::summary::{aggregate_csv, markdown, phase_csv, summarize, SweepSummary};

pub const CELLS_DIR: &str = "cells";
pub const CELL_FILE: &str = "cell.json";

fn rho_of(cfg: &ExperimentConfig) -> Option<f64> {
    match &cfg.task {
        TaskSection::Spurious(c) => Some(c.rho),
        _ => None,
    }
}

/// The cells of a single run: one per seed at the configured λ (and ρ).
pub fn single_keys(cfg: &ExperimentConfig) -> Vec<CellKey> {
    cfg.run
        .seeds
        .iter()
        .map(|&seed| CellKey {
            lambda: cfg.optim.lambda,
            rho: rho_of(cfg),
            seed,
        })
        .collect()
}

/// Sweep cells in canonical order: λ, then ρ, then seed.
pub fn sweep_keys(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<CellKey>> {
    let base_rho = rho_of(cfg);
    if axis != SweepAxis::Lambda && base_rho.is_none() {
        return Err(CliError::config(format!(
            "sweep axis {axis:?} needs the spurious task, got {}",
            cfg.task.name()
        )));
    }
    let lambdas = match axis {
        SweepAxis::Rho => vec![cfg.optim.lambda],
        _ => cfg.sweep.lambdas.clone(),
    };
    let rhos: Vec<Option<f64>> = match axis {
        SweepAxis::Lambda => vec![base_rho],
        _ => cfg.sweep.rhos.iter().map(|&r| Some(r)).collect(),
    };
    let mut keys = Vec::new();
    for &lambda in &lambdas {
        for &rho in &rhos {
            keys.extend(
                cfg.run
                    .seeds
                    .iter()
                    .map(|&seed| CellKey { lambda, rho, seed }),
            );
        }
    }
    Ok(keys)
}

fn trace_name(format: TraceFormat) -> &'static str {
    match format {
        TraceFormat::Csv => "trace.csv",
        TraceFormat::Json => "trace.json",
    }
}

/// Train one cell and write its trace and record into `dir`. Training failures are
/// recorded in the cell file instead of being returned; write failures are returned.
pub fn execute_cell(cfg: &ExperimentConfig, key: &CellKey, dir: &Path) -> Result<CellRecord> {
    let record = match run_cell(cfg, key) {
        Ok(run) => {
            let body = match cfg.output.format {
                TraceFormat::Csv => trace_csv(&run.trace),
                TraceFormat::Json => trace_json(&run.trace),
            };
            write_file(&dir.join(trace_name(cfg.output.format)), &body)?;
            run.record
        }
        Err(e) => failed_record(cfg, key, &e),
    };
    write_file(&dir.join(CELL_FILE), &to_json(&record))?;
    Ok(record)
}

/// Train every seed of the configured cell into `<out>/<cell id>/`. Any training
/// failure aborts with its error.
pub fn run_single(cfg: &ExperimentConfig) -> Result<Vec<CellRecord>> {
    let out = &cfg.output.dir;
    let mut records = Vec::new();
    for key in single_keys(cfg) {
        let run = run_cell(cfg, &key)?;
        let dir = out.join(key.id());
        let body = match cfg.output.format {
            TraceFormat::Csv => trace_csv(&run.trace),
            TraceFormat::Json => trace_json(&run.trace),
        };
        write_file(&dir.join(trace_name(cfg.output.format)), &body)?;
        write_file(&dir.join("report.json"), &to_json(&run.record))?;
        records.push(run.record);
    }
    write_meta(out, "run")?;
    Ok(records)
}

pub struct SweepOutcome {
    pub records: Vec<CellRecord>,
    pub summary: SweepSummary,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.summary.failed_cells.len()
    }
}

/// Default worker budget: all available cores but one.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get().saturating_sub(1).max(1))
}

/// Run all cells of a sweep on `workers` threads and write per-cell artifacts under
/// `<out>/cells/` plus the aggregate files in `<out>/`.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, workers: usize) -> Result<SweepOutcome> {
    let keys = sweep_keys(cfg, axis)?;
    let out = cfg.output.dir.clone();
    let cells = out.join(CELLS_DIR);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::config(format!("cannot start {workers} workers: {e}")))?;
    let records = pool.install(|| {
        keys.par_iter()
            .map(|k| execute_cell(cfg, k, &cells.join(k.id())))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = write_summary(&out, &records)?;
    write_meta(
        &out,
        if axis == SweepAxis::Grid {
            "phase"
        } else {
            "sweep"
        },
    )?;
    Ok(SweepOutcome { records, summary })
}

/// Write `aggregate.csv`, `summary.json`, `summary.md` and, for two-axis sweeps,
/// `phase.csv`.
pub fn write_summary(out: &Path, records: &[CellRecord]) -> Result<SweepSummary> {
    let summary = summarize(records);
    write_file(&out.join("aggregate.csv"), &aggregate_csv(&summary))?;
    write_file(&out.join("summary.json"), &to_json(&summary))?;
    write_file(&out.join("summary.md"), &markdown(&summary))?;
    if let Some(p) = &summary.phase {
        write_file(&out.join("phase.csv"), &phase_csv(p))?;
    }
    Ok(summary)
}

/// Read every `cells/*/cell.json` under `out`.
pub fn read_cells(out: &Path) -> Result<Vec<CellRecord>> {
    let cells = out.join(CELLS_DIR);
    let entries = fs::read_dir(&cells).map_err(|e| CliError::io(&cells, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join(CELL_FILE))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Artifact {
                path: p.clone(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Recompute the aggregate files of a finished sweep from its cell files alone.
pub fn resummarize(out: &Path) -> Result<SweepSummary> {
    let records = read_cells(out)?;
    if records.is_empty() {
        return Err(CliError::Artifact {
            path: out.join(CELLS_DIR),
            reason: "no cell records found".into(),
        });
    }
    write_summary(out, &records)
}
