use serde::{Deserialize, Serialize};

use super::report::RoundReport;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ROUNDS: usize = 10_000;
pub const BYTES_PER_MB: f64 = 1024.0 * 1024.0;

/// Anything that advances a federated run one synchronous round at a time.
pub trait RoundDriver {
    fn clients_total(&self) -> usize;
    fn run_round(&mut self) -> Result<RoundReport>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRun {
    pub reports: Vec<RoundReport>,
    /// Rounds executed.
    pub comm_rounds: usize,
    pub budget_reached: bool,
}

/// Runs rounds until the average uploaded bytes per client reach
/// `budget_bytes`, checked at each round boundary, or `max_rounds` pass.
pub fn run_until_budget(
    driver: &mut dyn RoundDriver,
    budget_bytes: f64,
    max_rounds: usize,
) -> Result<BudgetRun> {
    if !(budget_bytes > 0.0) {
        return Err(Error::invalid_config("budget_mb", "budget must be positive"));
    }
    let k = driver.clients_total().max(1) as f64;
    let mut reports = Vec::new();
    let mut reached = false;
    while reports.len() < max_rounds {
        let report = driver.run_round()?;
        let stalled = report.bytes_this_round == 0;
        let round = report.round;
        reached = report.cumulative_bytes as f64 / k >= budget_bytes;
        reports.push(report);
        if reached {
            break;
        }
        if stalled {
            return Err(Error::Stall { round });
        }
    }
    Ok(BudgetRun {
        comm_rounds: reports.len(),
        reports,
        budget_reached: reached,
    })
}
