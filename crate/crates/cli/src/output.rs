//! Output files. Every file starts with (CSV) or contains (JSON) the config
//! hash; wall-clock data lives only in the `.meta.json` sidecar so that
//! reruns reproduce the data files byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rampedgate::experiments::SweepRow;
use serde::Serialize;

use crate::config::RunConfig;

pub const HASH_PREFIX: &str = "# config_sha256: ";

pub fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Writes `body` behind the hash comment line.
pub fn write_csv(path: &Path, hash: &str, body: &[u8]) -> io::Result<()> {
    let mut out = format!("{HASH_PREFIX}{hash}\n").into_bytes();
    out.extend_from_slice(body);
    fs::write(path, out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

#[derive(Debug, Serialize)]
pub struct Sidecar<'a> {
    pub command: &'a str,
    pub config_sha256: &'a str,
    pub config: &'a RunConfig,
    pub seed: u64,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<&'static str, usize>,
    /// Per-row compute time of sweeps, keyed by row index.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub row_wall_time_s: BTreeMap<usize, f64>,
}

pub const SWEEP_HEADER: [&str; 13] = [
    "index",
    "config",
    "tau_m_us",
    "alpha",
    "nbar",
    "epsilon_units",
    "epsilon_rad_per_us",
    "flat_top_us",
    "gate_time_us",
    "infidelity",
    "fidelity_overlap",
    "theta_total_rad",
    "xi_residual_abs",
];

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn sweep_csv(rows: &[SweepRow]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = SWEEP_HEADER.to_vec();
    header.extend(["status", "error"]);
    w.write_record(&header)?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.config.clone(),
            fmt(r.tau_m_us),
            fmt(r.alpha),
            fmt(r.nbar),
            fmt(r.epsilon_units),
            fmt(r.epsilon),
            fmt(r.flat_top_us),
            fmt(r.gate_time_us),
            fmt(r.infidelity),
            fmt(r.fidelity_overlap),
            fmt(r.theta_total_rad),
            fmt(r.xi_residual_abs),
            if r.failed() { "failed" } else { "ok" }.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// Previously written rows of a sweep file, as raw CSV records keyed by row
/// index. Only rows from a file with the same config hash and status `ok`
/// are kept; anything else is recomputed.
pub fn existing_rows(path: &Path, hash: &str) -> io::Result<BTreeMap<usize, csv::StringRecord>> {
    let mut out = BTreeMap::new();
    let Ok(file) = fs::File::open(path) else {
        return Ok(out);
    };
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != format!("{HASH_PREFIX}{hash}") {
        log::warn!(
            "{} was written with a different config; recomputing all rows",
            path.display()
        );
        return Ok(out);
    }
    let mut csv = csv::Reader::from_reader(reader);
    let status_col = csv.headers()?.iter().position(|h| h == "status");
    for rec in csv.records() {
        let rec = rec?;
        let ok = status_col.and_then(|c| rec.get(c)) == Some("ok");
        if let (true, Some(Ok(index))) = (ok, rec.get(0).map(str::parse::<usize>)) {
            out.insert(index, rec);
        }
    }
    Ok(out)
}

/// Merges kept records and freshly computed rows in index order.
pub fn merge_sweep(
    kept: &BTreeMap<usize, csv::StringRecord>,
    fresh: &[SweepRow],
) -> io::Result<Vec<u8>> {
    let fresh_body = sweep_csv(fresh)?;
    let mut reader = csv::Reader::from_reader(fresh_body.as_slice());
    let header = reader.headers()?.clone();
    let mut all: BTreeMap<usize, csv::StringRecord> = kept.clone();
    for rec in reader.records() {
        let rec = rec?;
        let index = rec[0].parse::<usize>().map_err(io::Error::other)?;
        all.insert(index, rec);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for rec in all.values() {
        w.write_record(rec)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}
