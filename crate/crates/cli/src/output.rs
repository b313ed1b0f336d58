//! Artifact writers. Every emitted byte is a function of the config and seeds, except
//! the `meta.json` sidecar, which holds the wall-clock timestamp.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nht_core::trainer::{Checkpoint, RunTrace};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cell::SCHEMA_VERSION;
use crate::error::{CliError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Column names of the trace table for a network with `layers` layers.
pub fn trace_header(layers: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["step", "epoch", "lr", "train_loss", "total_norm2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=layers).map(|l| format!("layer_norm2_{l}")));
    cols.extend(
        ["acc_colored", "acc_clean", "acc_shortcut"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

/// Shortest round-trip decimal, switching to exponent form for very small or very
/// large magnitudes.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn trace_csv(trace: &RunTrace) -> String {
    let mut out = trace_header(trace.num_layers()).join(",");
    out.push('\n');
    for c in &trace.checkpoints {
        let _ = write!(out, "{},{}", c.step, c.epoch);
        let values = [c.lr, c.train_loss, c.total_norm2]
            .into_iter()
            .chain(c.layer_norm2.iter().copied())
            .chain([c.acc_colored, c.acc_clean, c.acc_shortcut]);
        for v in values {
            let _ = write!(out, ",{}", fmt_num(v));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct TraceJson<'a> {
    schema_version: u32,
    columns: Vec<String>,
    checkpoints: &'a [Checkpoint],
}

/// The trace as JSON; undefined accuracies become `null`.
pub fn trace_json(trace: &RunTrace) -> String {
    to_json(&TraceJson {
        schema_version: SCHEMA_VERSION,
        columns: trace_header(trace.num_layers()),
        checkpoints: &trace.checkpoints,
    })
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types always serialise");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct Meta<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    verb: &'a str,
    created_unix_secs: u64,
}

/// Write the timestamped sidecar `meta.json` into `dir`.
pub fn write_meta(dir: &Path, verb: &str) -> Result<()> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        verb,
        created_unix_secs: secs,
    };
    write_file(&dir.join("meta.json"), &to_json(&meta))
}
