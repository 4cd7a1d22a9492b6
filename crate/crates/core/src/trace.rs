//! Per-iteration solver bookkeeping shared by both solvers.

use std::borrow::Cow;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimates::SourceEstimates;
use crate::nmf::NmfFactors;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub seconds: f64,
    pub objective: f64,
    pub best_objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    /// Index into `records` of the iterate that was returned.
    pub best_record: usize,
}

impl SolveTrace {
    pub(crate) fn push(&mut self, iter: usize, seconds: f64, objective: f64) -> TraceRecord {
        let best_objective = match self.records.last() {
            Some(last) if last.best_objective <= objective => last.best_objective,
            _ => {
                self.best_record = self.records.len();
                objective
            }
        };
        let seconds = match self.records.last() {
            Some(last) => seconds.max(last.seconds),
            None => seconds,
        };
        let record = TraceRecord {
            iter,
            seconds,
            objective,
            best_objective,
        };
        self.records.push(record);
        record
    }

    pub fn best_objective(&self) -> f64 {
        self.records
            .last()
            .map_or(f64::INFINITY, |r| r.best_objective)
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iter", "seconds", "objective", "best_objective"])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                format!("{:.6}", r.seconds),
                format!("{:.12e}", r.objective),
                format!("{:.12e}", r.best_objective),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Best-so-far iterate captured during a solve.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub iter: usize,
    pub seconds: f64,
    pub state: SnapshotState,
}

#[derive(Debug, Clone)]
pub enum SnapshotState {
    Estimates(SourceEstimates),
    /// NMF factors in the solver's rescaled units; the models are multiplied
    /// by `scale` to get estimates.
    Factors { factors: NmfFactors, scale: f64 },
}

impl Snapshot {
    pub fn estimates(&self) -> Cow<'_, SourceEstimates> {
        match &self.state {
            SnapshotState::Estimates(e) => Cow::Borrowed(e),
            SnapshotState::Factors { factors, scale } => Cow::Owned(factors.to_estimates(*scale)),
        }
    }
}

/// Result of a solver run.
#[derive(Debug, Clone)]
pub struct Solution {
    /// Best iterate found.
    pub estimates: SourceEstimates,
    pub trace: SolveTrace,
    /// Empty unless snapshots were requested.
    pub snapshots: Vec<Snapshot>,
}
