//! Hinge activation statistics from a run recorded with `hinge_stats`.

use lql_core::agents::{TrainConfig, TrainReport};
use lql_core::hinge::{HingeStatRow, Side};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HingeStats {
    pub rows: Vec<HingeStatRow>,
}

impl HingeStats {
    /// Rows at the last recorded eval step.
    pub fn final_rows(&self) -> Vec<HingeStatRow> {
        let last = self.rows.iter().map(|r| r.step).max();
        self.rows.iter().filter(|r| Some(r.step) == last).copied().collect()
    }
}

/// Fails with an invalid-config error when the run did not record
/// statistics, and with a plain failure if a row breaks the range
/// invariants (frequency in [0, 1], magnitude ≥ 0, LB distance in
/// `2..=L`, UB distance in `0..L`).
pub fn collect_hinge_stats(cfg: &TrainConfig, report: &TrainReport) -> Result<HingeStats> {
    if !cfg.hinge_stats {
        return Err(lql_core::Error::InvalidConfig("hinge statistics were not enabled for this run".into()).into());
    }
    let l = cfg.traj_len;
    for r in &report.hinge {
        let distance_ok = match r.side {
            Side::Lb => (2..=l).contains(&r.distance),
            Side::Ub => r.distance < l,
        };
        if !(0.0..=1.0).contains(&r.frequency) || !(r.magnitude >= 0.0) || !distance_ok {
            return Err(Error::Failed(format!("hinge row out of range: {r:?}")));
        }
    }
    Ok(HingeStats { rows: report.hinge.clone() })
}
