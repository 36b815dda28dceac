//! Rational deviations as transforms of an agent's outgoing messages.

use std::fmt;
use std::sync::Arc;

use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::ahe::AheScheme;
use crate::consensus::Deployment;
use crate::mechanism::{run_mechanism, MechanismOutcome};
use crate::ring::{round_rational, Rational};

/// Deviation gains below this are treated as quantization noise.
pub const GAP_TOLERANCE: f64 = 0.05;

/// Hook for user-defined deviations: maps `(round, honest scalar)` to the
/// scalar actually multiplied into the outgoing ciphertexts.
pub type ScalarHook = dyn Fn(u32, i64) -> i64 + Send + Sync;

#[derive(Clone)]
pub struct CustomStrategy {
    pub label: String,
    pub hook: Arc<ScalarHook>,
}

impl CustomStrategy {
    pub fn new(label: impl Into<String>, hook: impl Fn(u32, i64) -> i64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            hook: Arc::new(hook),
        }
    }
}

impl fmt::Debug for CustomStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomStrategy").field("label", &self.label).finish_non_exhaustive()
    }
}

impl PartialEq for CustomStrategy {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label && Arc::ptr_eq(&self.hook, &other.hook)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Strategy {
    #[default]
    Honest,
    /// Keep sending the initial state and never update it.
    HoldState,
    /// Start the consensus from `theta + offset`, then follow the protocol.
    MisreportType(f64),
    /// Multiply the encoded state by a factor before it enters `⊙`.
    ScaleOutgoing(Rational),
    Custom(CustomStrategy),
}

impl Strategy {
    pub fn label(&self) -> &str {
        match self {
            Strategy::Honest => "honest",
            Strategy::HoldState => "hold-state",
            Strategy::MisreportType(_) => "misreport-type",
            Strategy::ScaleOutgoing(_) => "scale-outgoing",
            Strategy::Custom(c) => &c.label,
        }
    }

    pub fn param(&self) -> String {
        match self {
            Strategy::MisreportType(offset) => offset.to_string(),
            Strategy::ScaleOutgoing(f) => f.to_string(),
            _ => String::new(),
        }
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, Strategy::Honest)
    }

    /// True when the agent skips its own state update.
    pub fn freezes_state(&self) -> bool {
        matches!(self, Strategy::HoldState)
    }

    /// Amount added to the type before it becomes the consensus input.
    pub fn initial_offset(&self) -> f64 {
        match self {
            Strategy::MisreportType(offset) => *offset,
            _ => 0.0,
        }
    }
}

/// The scalar an agent multiplies into its round-`k` value ciphertexts,
/// given the honest encoding of its current state and of its initial state.
pub fn apply_strategy(strategy: &Strategy, k: u32, honest: i64, initial: i64) -> i64 {
    match strategy {
        Strategy::Honest | Strategy::MisreportType(_) => honest,
        Strategy::HoldState => initial,
        Strategy::ScaleOutgoing(f) if f.is_zero() => 0,
        Strategy::ScaleOutgoing(f) => round_rational(*f * Rational::from_integer(honest)),
        Strategy::Custom(c) => (c.hook)(k, honest),
    }
}

pub fn honest_profile(n_agents: usize) -> Vec<Strategy> {
    vec![Strategy::Honest; n_agents]
}

/// The built-in deviation set of the sweep experiments.
pub fn builtin_deviations() -> Vec<Strategy> {
    vec![
        Strategy::HoldState,
        Strategy::MisreportType(-1.0),
        Strategy::MisreportType(-0.5),
        Strategy::MisreportType(0.5),
        Strategy::MisreportType(1.0),
        Strategy::ScaleOutgoing(Rational::new(9, 10)),
        Strategy::ScaleOutgoing(Rational::new(11, 10)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Costs {
    pub v: f64,
    pub t: f64,
    pub u: f64,
}

impl Costs {
    pub fn of(outcome: &MechanismOutcome, i: usize) -> Self {
        Self {
            v: outcome.local_cost[i],
            t: outcome.transfer[i],
            u: outcome.total_cost[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub strategy: String,
    pub param: String,
    pub n: u32,
    /// 0-based index of the deviating agent.
    pub deviator: usize,
    pub deviate: Vec<Costs>,
    pub honest: Vec<Costs>,
    /// `u_deviator(deviate) − u_deviator(honest)`; negative means the
    /// deviation paid off.
    pub gap: f64,
}

impl DeviationReport {
    pub fn profitable_gain(&self) -> f64 {
        (-self.gap).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFailure {
    pub strategy: String,
    pub param: String,
    pub n: u32,
    pub message: String,
}

pub type SweepCell = Result<DeviationReport, SweepFailure>;

/// Runs the mechanism once honestly and once per strategy for every horizon,
/// with everyone but `deviator` honest. Cells are independent and may run in
/// parallel; the result is ordered by strategy, then horizon, as given.
/// A failing cell is reported and does not stop the sweep.
pub fn nash_gap_sweep<S: AheScheme>(
    dep: &Deployment<S>,
    theta: &[f64],
    deviator: usize,
    strategies: &[Strategy],
    horizons: &[u32],
    broadcaster: usize,
) -> Vec<SweepCell> {
    let n_agents = dep.n_agents();
    let baselines: Vec<Result<MechanismOutcome, String>> = horizons
        .par_iter()
        .map(|&n| {
            run_mechanism(dep, theta, n, &honest_profile(n_agents), broadcaster)
                .map(|r| r.outcome)
                .map_err(|e| e.to_string())
        })
        .collect();
    let cells: Vec<(usize, usize)> = (0..strategies.len())
        .flat_map(|s| (0..horizons.len()).map(move |h| (s, h)))
        .collect();
    cells
        .par_iter()
        .map(|&(si, hi)| {
            let strategy = &strategies[si];
            let n = horizons[hi];
            let fail = |message: String| SweepFailure {
                strategy: strategy.label().to_string(),
                param: strategy.param(),
                n,
                message,
            };
            if deviator >= n_agents {
                return Err(fail(format!("unknown agent {}", deviator + 1)));
            }
            let honest = baselines[hi].as_ref().map_err(|e| fail(format!("honest baseline: {e}")))?;
            let mut profile = honest_profile(n_agents);
            profile[deviator] = strategy.clone();
            let outcome = run_mechanism(dep, theta, n, &profile, broadcaster)
                .map_err(|e| fail(e.to_string()))?
                .outcome;
            let deviate: Vec<Costs> = (0..n_agents).map(|i| Costs::of(&outcome, i)).collect();
            let honest: Vec<Costs> = (0..n_agents).map(|i| Costs::of(honest, i)).collect();
            Ok(DeviationReport {
                strategy: strategy.label().to_string(),
                param: strategy.param(),
                n,
                deviator,
                gap: deviate[deviator].u - honest[deviator].u,
                deviate,
                honest,
            })
        })
        .collect()
}

/// Largest `max(0, −gap)` among the successful cells at horizon `n`.
pub fn max_profitable_gain(cells: &[SweepCell], n: u32) -> f64 {
    cells
        .iter()
        .filter_map(|c| c.as_ref().ok())
        .filter(|r| r.n == n)
        .map(DeviationReport::profitable_gain)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahe::ExactMask;
    use crate::consensus::{run_consensus, ConsensusSetup};
    use crate::ring::{FixedPointCodec, Modulus};
    use crate::rng::RngFactory;
    use crate::topology::Digraph;

    #[test]
    fn honest_is_identity() {
        for x in [-300, 0, 1, 299] {
            assert_eq!(apply_strategy(&Strategy::Honest, 3, x, 7), x);
        }
    }

    #[test]
    fn built_in_transforms() {
        assert_eq!(apply_strategy(&Strategy::HoldState, 5, 120, 200), 200);
        assert_eq!(apply_strategy(&Strategy::MisreportType(1.0), 0, 120, 200), 120);
        assert_eq!(apply_strategy(&Strategy::ScaleOutgoing(Rational::new(9, 10)), 0, 125, 0), 113);
        assert_eq!(apply_strategy(&Strategy::ScaleOutgoing(Rational::new(11, 10)), 0, -15, 0), -17);
        let c = Strategy::Custom(CustomStrategy::new("zero-after-3", |k, x| if k >= 3 { 0 } else { x }));
        assert_eq!(apply_strategy(&c, 2, 9, 0), 9);
        assert_eq!(apply_strategy(&c, 3, 9, 0), 0);
        assert_eq!(c.label(), "zero-after-3");
    }

    fn five_agent() -> Deployment<ExactMask> {
        let g = Digraph::from_integers(&[
            vec![0, 0, 0, 1, 1],
            vec![1, 0, 0, 1, 1],
            vec![0, 1, 0, 1, 0],
            vec![0, 1, 0, 0, 1],
            vec![0, 1, 1, 0, 0],
        ])
        .unwrap();
        let r = Rational::new;
        let setup = ConsensusSetup::new(g, r(1, 10), FixedPointCodec::new(r(1, 10), r(1, 100)).unwrap()).unwrap();
        Deployment::new(ExactMask::new(Modulus::desk_default()), setup, RngFactory::from_seed(3))
    }

    const THETA: [f64; 5] = [3.0, 2.0, 1.0, 0.0, -1.0];

    #[test]
    fn honest_cells_have_zero_gap() {
        let cells = nash_gap_sweep(&five_agent(), &THETA, 1, &[Strategy::Honest], &[1, 5], 0);
        assert_eq!(cells.len(), 2);
        for c in &cells {
            assert_eq!(c.as_ref().unwrap().gap, 0.0);
        }
    }

    #[test]
    fn honest_strategy_reproduces_baseline_transcript() {
        let dep = five_agent();
        let a = run_mechanism(&dep, &THETA, 4, &honest_profile(5), 0).unwrap();
        let b = run_mechanism(&dep, &THETA, 4, &honest_profile(5), 0).unwrap();
        assert_eq!(a.transcript().to_jsonl(), b.transcript().to_jsonl());
    }

    #[test]
    fn deviations_keep_the_transcript_shape() {
        let dep = five_agent();
        let shape = |t: &crate::transport::Transcript| {
            t.envelopes.iter().map(|e| (e.sender, e.receiver, e.round, e.kind, e.label)).collect::<Vec<_>>()
        };
        let honest = run_mechanism(&dep, &THETA, 3, &honest_profile(5), 0).unwrap();
        for s in builtin_deviations() {
            let mut profile = honest_profile(5);
            profile[1] = s;
            let dev = run_mechanism(&dep, &THETA, 3, &profile, 0).unwrap();
            assert_eq!(shape(dev.transcript()), shape(honest.transcript()));
        }
    }

    #[test]
    fn cells_are_ordered_and_failures_are_kept() {
        let strategies = [Strategy::HoldState, Strategy::ScaleOutgoing(Rational::from_integer(1 << 40))];
        let cells = nash_gap_sweep(&five_agent(), &THETA, 1, &strategies, &[2, 1], 0);
        let order: Vec<(String, u32)> = cells
            .iter()
            .map(|c| match c {
                Ok(r) => (r.strategy.clone(), r.n),
                Err(f) => (f.strategy.clone(), f.n),
            })
            .collect();
        assert_eq!(
            order,
            vec![
                ("hold-state".into(), 2),
                ("hold-state".into(), 1),
                ("scale-outgoing".into(), 2),
                ("scale-outgoing".into(), 1)
            ]
        );
        assert!(cells[0].is_ok());
        assert!(cells[2].is_err());
    }

    #[test]
    fn misreport_shifts_complete_graph_limit() {
        let n = 5;
        let rows: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| i64::from(i != j)).collect()).collect();
        let r = Rational::new;
        let setup = ConsensusSetup::new(
            Digraph::from_integers(&rows).unwrap(),
            r(1, 10),
            FixedPointCodec::new(r(1, 10), r(1, 1000)).unwrap(),
        )
        .unwrap();
        let dep = Deployment::new(ExactMask::new(Modulus::desk_default()), setup, RngFactory::from_seed(1));
        let honest = run_consensus(&dep, &THETA, 200, &honest_profile(5)).unwrap();
        let mut profile = honest_profile(5);
        profile[2] = Strategy::MisreportType(1.0);
        let dev = run_consensus(&dep, &THETA, 200, &profile).unwrap();
        for (a, b) in dev.final_states().iter().zip(honest.final_states()) {
            assert!((a - b - 0.2).abs() < 0.01, "{a} vs {b}");
        }
    }

    #[test]
    fn no_builtin_deviation_pays_on_a_balanced_graph() {
        let n = 5;
        let rows: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| i64::from(i != j)).collect()).collect();
        let r = Rational::new;
        let setup = ConsensusSetup::new(
            Digraph::from_integers(&rows).unwrap(),
            r(1, 10),
            FixedPointCodec::new(r(1, 10), r(1, 100)).unwrap(),
        )
        .unwrap();
        let dep = Deployment::new(ExactMask::new(Modulus::desk_default()), setup, RngFactory::from_seed(1));
        for deviator in 0..n {
            let cells = nash_gap_sweep(&dep, &THETA, deviator, &builtin_deviations(), &[100], 0);
            assert!(cells.iter().all(Result::is_ok));
            let gain = max_profitable_gain(&cells, 100);
            assert!(gain <= GAP_TOLERANCE, "agent {} gains {gain}", deviator + 1);
        }
    }
}
