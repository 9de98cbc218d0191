//! Output files of a simulation run.
//!
//! Every file is staged in a temporary file inside the output directory and
//! only renamed into place once all of them have been written, so a failed
//! run never leaves a half-written report behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use evtrade::coordinator::{correlation, SimConfig, SimulationReport};
use evtrade::scenario::Scenario;
use serde_json::json;
use tempfile::NamedTempFile;

struct Staged {
    file: NamedTempFile,
    target: PathBuf,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn stage(dir: &Path, name: &str, bytes: &[u8]) -> Result<Staged> {
    let target = dir.join(name);
    let mut file = NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a file in {}", dir.display()))?;
    file.write_all(bytes)
        .and_then(|_| file.flush())
        .with_context(|| format!("cannot write {}", target.display()))?;
    Ok(Staged { file, target })
}

fn commit(staged: Vec<Staged>) -> Result<Vec<PathBuf>> {
    let mut out = Vec::with_capacity(staged.len());
    for s in staged {
        s.file
            .persist(&s.target)
            .with_context(|| format!("cannot write {}", s.target.display()))?;
        out.push(s.target);
    }
    Ok(out)
}

pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let mut paths = commit(vec![stage(dir, name, bytes)?])?;
    Ok(paths.remove(0))
}

/// Shortest round-trip text, with negative zero printed as `0`.
fn num(x: f64) -> String {
    (x + 0.0).to_string()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}

/// Writes `profits.csv`, `loads.csv`, `lmp.csv`, `trades.csv` and
/// `summary.json` into `dir`.
///
/// Floats are written with Rust's shortest round-trip formatting, so summing
/// the parsed `net` column in slot order reproduces `total_profit` exactly.
pub fn write_run(
    dir: &Path,
    scenario: &Scenario,
    config: &SimConfig,
    report: &SimulationReport,
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let net = &scenario.network;

    let profits = csv_bytes(
        &[
            "slot",
            "charging_income",
            "penalty_income",
            "energy_cost",
            "trading_cost",
            "net",
        ],
        report.slots.iter().map(|s| {
            let t = &s.total;
            vec![
                s.slot.to_string(),
                num(t.charging_income),
                num(t.penalty_income),
                num(t.energy_cost),
                num(t.trading_cost),
                num(t.net),
            ]
        }),
    )?;

    let loads = csv_bytes(
        &["slot", "aggregator", "net_kw", "buy_price"],
        report.slots.iter().flat_map(|s| {
            s.net_kw
                .iter()
                .zip(&s.buy_price)
                .enumerate()
                .map(move |(a, (p, c))| vec![s.slot.to_string(), a.to_string(), num(*p), num(*c)])
        }),
    )?;

    let lmp = csv_bytes(
        &["slot", "bus", "lmp"],
        report.slots.iter().flat_map(|s| {
            let prices = s.lmp_mwh.as_deref().unwrap_or(&[]);
            prices
                .iter()
                .enumerate()
                .map(move |(b, v)| vec![s.slot.to_string(), net.buses()[b].id.to_string(), num(*v)])
        }),
    )?;

    let trades = csv_bytes(
        &["slot", "aggregator", "p_trade_kw", "c_trade"],
        report.slots.iter().flat_map(|s| {
            s.trades.allocations.iter().map(move |(a, p)| {
                vec![
                    s.slot.to_string(),
                    a.to_string(),
                    num(*p),
                    num(s.trades.price),
                ]
            })
        }),
    )?;

    let totals = report.totals();
    let load = report.charging_load_kw();
    let price = report.average_buy_price();
    let corr = correlation(&load, &price);
    let traded_kwh: f64 = report
        .slots
        .iter()
        .map(|s| {
            s.trades
                .allocations
                .iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(_, p)| p)
                .sum::<f64>()
        })
        .sum::<f64>()
        * config.slot_hours;
    let summary = json!({
        "mode": config.mode.name(),
        "seed": config.seed,
        "slots": report.slots.len(),
        "horizon": config.horizon,
        "evs": scenario.fleet.len(),
        "aggregators": net.num_aggregators(),
        "total_profit": report.total_profit(),
        "totals": totals,
        "load_price_correlation": if corr.is_finite() { json!(corr) } else { json!(null) },
        "traded_kwh": traded_kwh,
        "trade_slots": report.slots.iter().filter(|s| !s.trades.is_empty()).count(),
        "voided_bids": report.slots.iter().map(|s| s.voided.len()).sum::<usize>(),
        "max_iterations": report.max_iterations(),
        "unconverged_slots": report.unconverged_slots(),
        "opf_fallback_slots": report.slots.iter().filter(|s| s.opf_fallback).count(),
        "lp_fallbacks": report.slots.iter().map(|s| s.lp_fallbacks).sum::<usize>(),
        "soc_clamps": report.slots.iter().map(|s| s.soc_clamps).sum::<usize>(),
        "departures": report.slots.iter().map(|s| s.departures).sum::<usize>(),
        "shortfalls": report.shortfalls(),
    });
    let mut summary_text = serde_json::to_string_pretty(&summary)?;
    summary_text.push('\n');

    let staged = vec![
        stage(dir, "profits.csv", &profits)?,
        stage(dir, "loads.csv", &loads)?,
        stage(dir, "lmp.csv", &lmp)?,
        stage(dir, "trades.csv", &trades)?,
        stage(dir, "summary.json", summary_text.as_bytes())?,
    ];
    commit(staged)
}
