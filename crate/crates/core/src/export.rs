//! Artifact writers. Agents and rounds are numbered as users see them:
//! agents from 1, rounds from 0.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::adversary::SweepCell;
use crate::mechanism::{MechanismOutcome, Verdict};
use crate::transport::Transcript;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub round: usize,
    pub agent: usize,
    pub state: f64,
}

pub fn trajectory_rows(trajectories: &[Vec<f64>]) -> Vec<TrajectoryRow> {
    let rounds = trajectories.iter().map(Vec::len).max().unwrap_or(0);
    (0..rounds)
        .flat_map(|k| {
            trajectories.iter().enumerate().filter_map(move |(i, t)| {
                t.get(k).map(|&state| TrajectoryRow {
                    round: k,
                    agent: i + 1,
                    state,
                })
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeRecord {
    pub decision: Vec<f64>,
    pub transfers: Vec<f64>,
    pub local_costs: Vec<f64>,
    pub total_costs: Vec<f64>,
    pub verification_verdict: Verdict,
}

impl OutcomeRecord {
    pub fn new(outcome: &MechanismOutcome, verdict: Verdict) -> Self {
        Self {
            decision: outcome.decision.clone(),
            transfers: outcome.transfer.clone(),
            local_costs: outcome.local_cost.clone(),
            total_costs: outcome.total_cost.clone(),
            verification_verdict: verdict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeRow {
    pub agent: usize,
    pub d: f64,
    pub v: f64,
    pub t: f64,
    pub u: f64,
}

pub fn outcome_rows(outcome: &MechanismOutcome) -> Vec<OutcomeRow> {
    (0..outcome.n_agents())
        .map(|i| OutcomeRow {
            agent: i + 1,
            d: outcome.decision[i],
            v: outcome.local_cost[i],
            t: outcome.transfer[i],
            u: outcome.total_cost[i],
        })
        .collect()
}

/// Costs of the deviator under the deviation. Failed cells keep their
/// strategy, parameter and horizon and leave the numbers empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub strategy: String,
    pub param: String,
    pub n: u32,
    pub v: Option<f64>,
    pub t: Option<f64>,
    pub u: Option<f64>,
    pub gap: Option<f64>,
}

pub fn sweep_rows(cells: &[SweepCell]) -> Vec<SweepRow> {
    cells
        .iter()
        .map(|cell| match cell {
            Ok(r) => {
                let c = &r.deviate[r.deviator];
                SweepRow {
                    strategy: r.strategy.clone(),
                    param: r.param.clone(),
                    n: r.n,
                    v: Some(c.v),
                    t: Some(c.t),
                    u: Some(c.u),
                    gap: Some(r.gap),
                }
            }
            Err(f) => SweepRow {
                strategy: f.strategy.clone(),
                param: f.param.clone(),
                n: f.n,
                v: None,
                t: None,
                u: None,
                gap: None,
            },
        })
        .collect()
}

/// Writes rows with a header line. The header is written even when `rows`
/// is empty.
pub fn write_csv<W: Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> Result<(), ExportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub const TRAJECTORY_HEADER: [&str; 3] = ["round", "agent", "state"];
pub const OUTCOME_HEADER: [&str; 5] = ["agent", "d", "v", "t", "u"];
pub const SWEEP_HEADER: [&str; 7] = ["strategy", "param", "n", "v", "t", "u", "gap"];

pub fn write_trajectory_csv<W: Write>(out: W, trajectories: &[Vec<f64>]) -> Result<(), ExportError> {
    write_csv(out, &TRAJECTORY_HEADER, &trajectory_rows(trajectories))
}

pub fn write_outcome_csv<W: Write>(out: W, outcome: &MechanismOutcome) -> Result<(), ExportError> {
    write_csv(out, &OUTCOME_HEADER, &outcome_rows(outcome))
}

pub fn write_sweep_csv<W: Write>(out: W, cells: &[SweepCell]) -> Result<(), ExportError> {
    write_csv(out, &SWEEP_HEADER, &sweep_rows(cells))
}

/// Pretty JSON followed by a newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<(), ExportError> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_transcript_jsonl<W: Write>(out: W, transcript: &Transcript) -> Result<(), ExportError> {
    transcript.write_jsonl(out)?;
    Ok(())
}
