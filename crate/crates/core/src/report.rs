//! CSV and JSON outputs. Rows are written in key order so files are
//! byte-identical for identical runs.

use std::path::Path;

use serde::Serialize;

use crate::calibration::{CalibrationResult, SpeedFit};
use crate::engine::{AggregateMetrics, DeltaReport, MetricsLog, Summary};
use crate::types::STEP_SECONDS;
use crate::Error;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_file(path, &bytes)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[derive(Serialize)]
struct SwipeRow<'a> {
    lift_id: &'a str,
    step: u32,
    count: f64,
}

#[derive(Serialize)]
struct WaitRow<'a> {
    lift_id: &'a str,
    step: u32,
    mean_wait_s: f64,
    n: f64,
}

#[derive(Serialize)]
struct BudgetRow {
    replication: u32,
    group_id: u32,
    size: u32,
    ski_s: f64,
    wait_s: f64,
    ride_s: f64,
    lunch_s: f64,
    lifts: u32,
}

#[derive(Serialize)]
struct ProfileRow {
    step: u32,
    time_s: f64,
    swipes: f64,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    replications: u32,
    seed: u64,
    budget_shares: Shares,
    #[serde(flatten)]
    summary: &'a Summary,
}

#[derive(Serialize)]
struct Shares {
    ski: f64,
    wait: f64,
    ride: f64,
    lunch: f64,
}

/// `swipes.csv` and `waits.csv` hold means over replications,
/// `budgets.csv` one row per group and replication.
pub fn write_run(dir: &Path, seed: u64, logs: &[MetricsLog], agg: &AggregateMetrics) -> Result<(), Error> {
    ensure_dir(dir)?;
    write_csv(
        &dir.join("swipes.csv"),
        agg.swipes.iter().map(|((lift_id, step), count)| SwipeRow { lift_id, step: *step, count: *count }),
    )?;
    write_csv(
        &dir.join("waits.csv"),
        agg.waits.iter().map(|((lift_id, step), (mean, n))| WaitRow { lift_id, step: *step, mean_wait_s: *mean, n: *n }),
    )?;
    write_csv(
        &dir.join("budgets.csv"),
        logs.iter().enumerate().flat_map(|(rep, log)| {
            log.groups.iter().map(move |g| BudgetRow {
                replication: rep as u32,
                group_id: g.group_id,
                size: g.size,
                ski_s: g.budget.ski,
                wait_s: g.budget.wait,
                ride_s: g.budget.ride,
                lunch_s: g.budget.lunch,
                lifts: g.lifts_entered,
            })
        }),
    )?;
    write_csv(&dir.join("swipe_profile.csv"), profile(agg).into_iter().map(|(step, swipes)| ProfileRow {
        step,
        time_s: step as f64 * STEP_SECONDS,
        swipes,
    }))?;
    let s = &agg.summary;
    write_json(
        &dir.join("summary.json"),
        &RunSummary {
            replications: agg.replications,
            seed,
            budget_shares: Shares { ski: s.ski_share, wait: s.wait_share, ride: s.ride_share, lunch: s.lunch_share },
            summary: s,
        },
    )
}

/// Total mean swipes per step over all lifts.
pub fn profile(agg: &AggregateMetrics) -> Vec<(u32, f64)> {
    let mut out = std::collections::BTreeMap::new();
    for ((_, step), n) in &agg.swipes {
        *out.entry(*step).or_insert(0.0) += n;
    }
    out.into_iter().collect()
}

#[derive(Serialize)]
struct LiftDeltaRow<'a> {
    lift_id: &'a str,
    base_mean_wait_s: Option<f64>,
    variant_mean_wait_s: Option<f64>,
    delta_s: Option<f64>,
}

#[derive(Serialize)]
struct OverlayRow {
    step: u32,
    time_s: f64,
    base: f64,
    variant: f64,
}

pub fn write_compare(dir: &Path, report: &DeltaReport) -> Result<(), Error> {
    ensure_dir(dir)?;
    write_json(&dir.join("compare.json"), report)?;
    write_csv(
        &dir.join("lift_wait_delta.csv"),
        report.per_lift.iter().map(|d| LiftDeltaRow {
            lift_id: &d.lift_id,
            base_mean_wait_s: d.base,
            variant_mean_wait_s: d.variant,
            delta_s: d.delta,
        }),
    )?;
    write_csv(
        &dir.join("swipe_overlay.csv"),
        report.swipe_profile.iter().map(|p| OverlayRow {
            step: p.step,
            time_s: p.step as f64 * STEP_SECONDS,
            base: p.base,
            variant: p.variant,
        }),
    )
}

pub fn write_calibration(dir: &Path, result: &CalibrationResult) -> Result<(), Error> {
    ensure_dir(dir)?;
    write_json(&dir.join("calibration.json"), result)?;
    write_json(&dir.join("params.json"), &result.params)?;
    write_csv(&dir.join("trace.csv"), result.trace.iter())
}

pub fn write_speed_fit(dir: &Path, fit: &SpeedFit) -> Result<(), Error> {
    ensure_dir(dir)?;
    write_json(&dir.join("speed_model.json"), &fit.model)?;
    write_json(&dir.join("speed_fit.json"), fit)
}
