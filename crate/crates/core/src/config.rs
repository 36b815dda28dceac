//! JSON experiment configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::adversary::{Strategy, GAP_TOLERANCE};
use crate::ahe::AhParams;
use crate::consensus::ConsensusSetup;
use crate::error::ProtocolError;
use crate::mechanism::DEFAULT_TAU;
use crate::ring::{parse_rational, rational_to_f64, FixedPointCodec, Modulus, Rational};
use crate::topology::{build_weights, Digraph};

/// Headroom between the worst-case magnitude estimate and the chosen modulus.
pub const AUTO_Q_SAFETY: u64 = 1 << 8;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl ToString) -> Self {
        Self::Validation {
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    ExactMask,
    Lattice,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ExactMask => "exact-mask",
            Self::Lattice => "lattice",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticePreset {
    Test,
    #[default]
    Standard,
}

impl LatticePreset {
    pub fn params(self) -> AhParams {
        match self {
            Self::Test => AhParams::test(),
            Self::Standard => AhParams::standard(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Online rounds.
    pub n: u32,
    pub graph: Digraph,
    pub epsilon: Rational,
    pub delta_w: Rational,
    pub delta_x: Rational,
    pub theta: Vec<f64>,
    pub q: Modulus,
    pub backend: BackendKind,
    pub lattice_preset: LatticePreset,
    pub seed: u64,
    /// One entry per agent, honest unless configured.
    pub strategies: Vec<Strategy>,
    /// 0-based.
    pub broadcaster: usize,
    pub min_in_neighbors: usize,
    pub gap_tolerance: f64,
    pub tau: f64,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn n_agents(&self) -> usize {
        self.graph.n_agents()
    }

    pub fn codec(&self) -> FixedPointCodec {
        FixedPointCodec::new(self.delta_w, self.delta_x).expect("validated at load")
    }

    pub fn setup(&self) -> Result<ConsensusSetup, ProtocolError> {
        ConsensusSetup::new(self.graph.clone(), self.epsilon, self.codec())
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Number {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Number {
    fn rational(&self, field: &str) -> Result<Rational, ConfigError> {
        let text = match self {
            Number::Int(v) => return Ok(Rational::from_integer(*v)),
            // the shortest round-trip form of 0.1 is "0.1", which parses exactly
            Number::Float(v) => v.to_string(),
            Number::Text(s) => s.clone(),
        };
        parse_rational(&text).map_err(|e| ConfigError::invalid(field, e))
    }

    fn real(&self, field: &str) -> Result<f64, ConfigError> {
        match self {
            Number::Int(v) => Ok(*v as f64),
            Number::Float(v) => Ok(*v),
            Number::Text(_) => self.rational(field).map(rational_to_f64),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum QField {
    Value(u64),
    Word(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StrategyField {
    Name(String),
    Detailed {
        kind: String,
        offset: Option<Number>,
        factor: Option<Number>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n: Option<u32>,
    graph: Option<Vec<Vec<Number>>>,
    epsilon: Option<Number>,
    delta_w: Option<Number>,
    delta_x: Option<Number>,
    theta: Option<Vec<Number>>,
    q: Option<QField>,
    ahe_backend: Option<BackendKind>,
    lattice_preset: Option<LatticePreset>,
    seed: Option<u64>,
    #[serde(default)]
    strategies: BTreeMap<String, StrategyField>,
    broadcaster: Option<usize>,
    min_in_neighbors: Option<usize>,
    tolerance: Option<f64>,
    tau: Option<f64>,
    output_dir: Option<PathBuf>,
}

fn required<T>(value: Option<T>, field: &str) -> Result<T, ConfigError> {
    value.ok_or_else(|| ConfigError::invalid(field, "missing"))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text)?;
    let n = required(raw.n, "n")?;
    let rows = required(raw.graph, "graph")?;
    let adjacency = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| v.rational(&format!("graph[{i}][{j}]")))
                .collect()
        })
        .collect::<Result<Vec<Vec<Rational>>, _>>()?;
    let graph = Digraph::new(adjacency).map_err(|e| ConfigError::invalid("graph", e))?;
    let n_agents = graph.n_agents();

    let epsilon = required(raw.epsilon, "epsilon")?.rational("epsilon")?;
    let delta_w = required(raw.delta_w, "delta_w")?.rational("delta_w")?;
    let delta_x = required(raw.delta_x, "delta_x")?.rational("delta_x")?;
    let codec = FixedPointCodec::new(delta_w, delta_x).map_err(|e| ConfigError::invalid("delta_w", e))?;
    let weights = build_weights(&graph, epsilon).map_err(|e| ConfigError::invalid("epsilon", e))?;
    for (i, j, w) in (0..n_agents).flat_map(|i| weights.row(i).map(move |(j, w)| (i, j, w))) {
        codec
            .weight_integer(w)
            .map_err(|e| ConfigError::invalid("delta_w", format!("weight w[{}][{}]: {e}", i + 1, j + 1)))?;
    }

    let theta = required(raw.theta, "theta")?
        .iter()
        .enumerate()
        .map(|(i, v)| v.real(&format!("theta[{i}]")))
        .collect::<Result<Vec<f64>, _>>()?;
    if theta.len() != n_agents {
        return Err(ConfigError::invalid(
            "theta",
            format!("expected {n_agents} entries, found {}", theta.len()),
        ));
    }
    if let Some(i) = theta.iter().position(|t| !t.is_finite()) {
        return Err(ConfigError::invalid(format!("theta[{i}]"), "not finite"));
    }

    let mut strategies = vec![Strategy::Honest; n_agents];
    for (key, spec) in &raw.strategies {
        let field = format!("strategies.{key}");
        let agent: usize = key
            .parse()
            .ok()
            .filter(|a| (1..=n_agents).contains(a))
            .ok_or_else(|| ConfigError::invalid(&field, format!("agent must be in 1..={n_agents}")))?;
        strategies[agent - 1] = parse_strategy(spec, &field)?;
    }

    let broadcaster = raw.broadcaster.unwrap_or(1);
    if !(1..=n_agents).contains(&broadcaster) {
        return Err(ConfigError::invalid("broadcaster", format!("must be in 1..={n_agents}")));
    }

    let bound = magnitude_bound(&weights_bound(&graph, epsilon, &codec), &theta, &strategies, &codec);
    let q = match raw.q {
        None => Modulus::desk_default(),
        Some(QField::Word(w)) if w == "auto" => {
            let target = bound
                .saturating_mul(2)
                .saturating_mul(AUTO_Q_SAFETY as u128)
                .max(Modulus::FLOOR as u128);
            let target = u64::try_from(target).map_err(|_| ConfigError::invalid("q", "bound too large"))?;
            Modulus::smallest_prime_above(target).map_err(|e| ConfigError::invalid("q", e))?
        }
        Some(QField::Word(w)) => return Err(ConfigError::invalid("q", format!("expected a number or \"auto\", got {w:?}"))),
        Some(QField::Value(v)) => {
            if 2 * bound >= v as u128 {
                return Err(ConfigError::invalid(
                    "q",
                    format!("{v} does not cover estimated magnitude {bound}"),
                ));
            }
            Modulus::new(v).map_err(|e| ConfigError::invalid("q", e))?
        }
    };
    let gap_tolerance = raw.tolerance.unwrap_or(GAP_TOLERANCE);
    let tau = raw.tau.unwrap_or(DEFAULT_TAU);
    if !(gap_tolerance >= 0.0 && tau >= 0.0) {
        return Err(ConfigError::invalid("tolerance", "must be non-negative"));
    }

    Ok(ExperimentConfig {
        n,
        graph,
        epsilon,
        delta_w,
        delta_x,
        theta,
        q,
        backend: raw.ahe_backend.unwrap_or(BackendKind::ExactMask),
        lattice_preset: raw.lattice_preset.unwrap_or_default(),
        seed: raw.seed.unwrap_or(0),
        strategies,
        broadcaster: broadcaster - 1,
        min_in_neighbors: raw.min_in_neighbors.unwrap_or(2),
        gap_tolerance,
        tau,
        output_dir: raw.output_dir,
    })
}

fn parse_strategy(spec: &StrategyField, field: &str) -> Result<Strategy, ConfigError> {
    let (kind, offset, factor) = match spec {
        StrategyField::Name(name) => (name.as_str(), None, None),
        StrategyField::Detailed { kind, offset, factor } => (kind.as_str(), offset.as_ref(), factor.as_ref()),
    };
    match kind {
        "honest" => Ok(Strategy::Honest),
        "hold-state" => Ok(Strategy::HoldState),
        "misreport" => {
            let offset = offset.ok_or_else(|| ConfigError::invalid(format!("{field}.offset"), "missing"))?;
            Ok(Strategy::MisreportType(offset.real(&format!("{field}.offset"))?))
        }
        "scale" => {
            let factor = factor.ok_or_else(|| ConfigError::invalid(format!("{field}.factor"), "missing"))?;
            Ok(Strategy::ScaleOutgoing(factor.rational(&format!("{field}.factor"))?))
        }
        other => Err(ConfigError::invalid(
            field,
            format!("unknown strategy {other:?}; expected honest, hold-state, misreport or scale"),
        )),
    }
}

/// `max_i Σ_j |w̄_ij|`, the largest row sum of scaled off-diagonal weights.
fn weights_bound(graph: &Digraph, epsilon: Rational, codec: &FixedPointCodec) -> u128 {
    let weights = build_weights(graph, epsilon).expect("validated");
    (0..graph.n_agents())
        .map(|i| {
            weights
                .row(i)
                .map(|(_, w)| codec.weight_integer(w).expect("validated").unsigned_abs() as u128)
                .sum::<u128>()
        })
        .max()
        .unwrap_or(0)
}

/// Worst-case magnitude of any plaintext the protocols produce: the
/// consensus terms `Σ_j |w̄_ij|·x̄_max`, the broadcast state `x̄_max` and the
/// summed scaled costs `(N−1)·((2·x_max)²/Δ_x + 1)`.
fn magnitude_bound(row_bound: &u128, theta: &[f64], strategies: &[Strategy], codec: &FixedPointCodec) -> u128 {
    let scale = strategies
        .iter()
        .map(|s| match s {
            Strategy::ScaleOutgoing(f) => rational_to_f64(*f).abs(),
            _ => 1.0,
        })
        .fold(1.0, f64::max);
    let x_max = theta
        .iter()
        .zip(strategies)
        .map(|(t, s)| (t + s.initial_offset()).abs())
        .fold(0.0, f64::max)
        * scale;
    let dx = rational_to_f64(codec.delta_x());
    let x_bar = (x_max / dx).ceil() as u128;
    let consensus = row_bound.saturating_mul(x_bar);
    let costs = ((2.0 * x_max).powi(2) / dx).ceil() as u128 + 1;
    let mechanism = costs.saturating_mul(theta.len().saturating_sub(1) as u128);
    consensus.max(x_bar).max(mechanism)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE_AGENT: &str = r#"{
        "n": 30,
        "graph": [[0,0,0,1,1],[1,0,0,1,1],[0,1,0,1,0],[0,1,0,0,1],[0,1,1,0,0]],
        "epsilon": "1/10",
        "delta_w": "1/10",
        "delta_x": "1/100",
        "theta": [3, 2, 1, 0, -1],
        "seed": 7
    }"#;

    fn with(extra: &str) -> String {
        format!("{}, {extra}}}", FIVE_AGENT.trim_end().trim_end_matches('}'))
    }

    fn field_of(text: &str) -> String {
        parse_config(text).unwrap_err().field().unwrap_or("<none>").to_string()
    }

    #[test]
    fn five_agent_defaults() {
        let c = parse_config(FIVE_AGENT).unwrap();
        assert_eq!(c.n, 30);
        assert_eq!(c.n_agents(), 5);
        assert_eq!(c.epsilon, Rational::new(1, 10));
        assert_eq!(c.delta_x, Rational::new(1, 100));
        assert_eq!(c.theta, vec![3.0, 2.0, 1.0, 0.0, -1.0]);
        assert_eq!(c.q, Modulus::desk_default());
        assert_eq!(c.backend, BackendKind::ExactMask);
        assert_eq!(c.broadcaster, 0);
        assert_eq!(c.min_in_neighbors, 2);
        assert!(c.strategies.iter().all(Strategy::is_honest));
        assert!(c.setup().is_ok());
    }

    #[test]
    fn decimal_floats_are_read_exactly() {
        let text = FIVE_AGENT.replace("\"1/10\",\n        \"delta_w\"", "0.1,\n        \"delta_w\"");
        assert_eq!(parse_config(&text).unwrap().epsilon, Rational::new(1, 10));
    }

    #[test]
    fn missing_theta_names_the_field() {
        let text = FIVE_AGENT.replace("\"theta\": [3, 2, 1, 0, -1],", "");
        assert_eq!(field_of(&text), "theta");
        let text = FIVE_AGENT.replace("[3, 2, 1, 0, -1]", "[3, 2]");
        assert_eq!(field_of(&text), "theta");
    }

    #[test]
    fn tiny_modulus_fails_the_bound_precheck() {
        assert_eq!(field_of(&with(r#""q": 101"#)), "q");
        // 2^16 + 1 is prime but 300·3·10 does not fit
        assert!(parse_config(&with(r#""q": 65537"#)).is_ok());
        assert_eq!(field_of(&with(r#""q": 1000003, "strategies": {"1": {"kind": "scale", "factor": 100}}"#)), "q");
    }

    #[test]
    fn auto_modulus_is_a_covering_prime() {
        let c = parse_config(&with(r#""q": "auto""#)).unwrap();
        let q = c.q.value();
        assert!(crate::ring::is_prime(q));
        // x_max = 3 gives (N-1)·(36/0.01 + 1) = 14404 as the largest term
        assert!(q > 2 * 14404 * AUTO_Q_SAFETY);
        assert!(q < 2 * 14404 * AUTO_Q_SAFETY + 1000);
    }

    #[test]
    fn strategies_and_backend() {
        let c = parse_config(&with(
            r#""ahe_backend": "lattice", "lattice_preset": "test", "broadcaster": 3,
               "strategies": {"2": "hold-state", "4": {"kind": "misreport", "offset": -0.5},
                              "5": {"kind": "scale", "factor": "11/10"}}"#,
        ))
        .unwrap();
        assert_eq!(c.backend, BackendKind::Lattice);
        assert_eq!(c.lattice_preset, LatticePreset::Test);
        assert_eq!(c.broadcaster, 2);
        assert_eq!(c.strategies[1], Strategy::HoldState);
        assert_eq!(c.strategies[3], Strategy::MisreportType(-0.5));
        assert_eq!(c.strategies[4], Strategy::ScaleOutgoing(Rational::new(11, 10)));
        assert_eq!(field_of(&with(r#""strategies": {"6": "hold-state"}"#)), "strategies.6");
        assert_eq!(field_of(&with(r#""strategies": {"1": "bribe"}"#)), "strategies.1");
        assert_eq!(field_of(&with(r#""broadcaster": 0"#)), "broadcaster");
    }

    #[test]
    fn weights_must_be_on_the_grid() {
        assert_eq!(field_of(&FIVE_AGENT.replace("\"delta_w\": \"1/10\"", "\"delta_w\": \"1/3\"")), "delta_w");
        assert_eq!(field_of(&FIVE_AGENT.replace("\"epsilon\": \"1/10\"", "\"epsilon\": \"1/2\"")), "epsilon");
    }

    #[test]
    fn parse_and_io_errors() {
        assert!(matches!(parse_config("{"), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_config(&with(r#""colour": 1"#)), Err(ConfigError::Parse(_))));
        assert!(matches!(load_config("/nonexistent/encon.json"), Err(ConfigError::Io { .. })));
    }
}
