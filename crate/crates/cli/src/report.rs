//! Versioned JSON artifacts written by the CLI. The `timestamp` field is
//! the only part of a report that varies between identical runs.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thresholds_core::estimate::{FitResult, LrTestResult};
use thresholds_core::simulate::RecoveryReport;

pub const SCHEMA_VERSION: u32 = 1;

fn now_epoch_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport<C> {
    pub schema_version: u32,
    pub timestamp: u64,
    pub seed: u64,
    pub config: C,
    pub fit: FitResult,
}

impl<C: Serialize> FitReport<C> {
    pub fn new(seed: u64, config: C, fit: FitResult) -> Self {
        FitReport {
            schema_version: SCHEMA_VERSION,
            timestamp: now_epoch_seconds(),
            seed,
            config,
            fit,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport<C> {
    pub schema_version: u32,
    pub timestamp: u64,
    pub config: C,
    pub full_loglik: f64,
    pub reduced_loglik: f64,
    pub lr: LrTestResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryArtifact<C> {
    pub schema_version: u32,
    pub timestamp: u64,
    pub config: C,
    pub report: RecoveryReport,
}

impl<C: Serialize> CompareReport<C> {
    pub fn new(config: C, full_loglik: f64, reduced_loglik: f64, lr: LrTestResult) -> Self {
        CompareReport {
            schema_version: SCHEMA_VERSION,
            timestamp: now_epoch_seconds(),
            config,
            full_loglik,
            reduced_loglik,
            lr,
        }
    }
}

impl<C: Serialize> RecoveryArtifact<C> {
    pub fn new(config: C, report: RecoveryReport) -> Self {
        RecoveryArtifact {
            schema_version: SCHEMA_VERSION,
            timestamp: now_epoch_seconds(),
            config,
            report,
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    use anyhow::Context;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Reads a fit report, ignoring whatever config shape it was written with.
pub fn read_fit_report(path: &Path) -> anyhow::Result<FitReport<serde_json::Value>> {
    use anyhow::Context;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("cannot parse fit report {}: {e}", path.display()))
}
