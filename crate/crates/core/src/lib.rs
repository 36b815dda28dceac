//! Average consensus over encrypted messages, and a tax mechanism built on it.
//!
//! A supervisor hands out zero-sum mask shares once; afterwards agents
//! exchange homomorphically masked, weighted states and each receiver can
//! only decrypt the weighted sum of its in-neighbors. The mechanism runs the
//! consensus, broadcasts a terminal decision and computes per-agent taxes
//! from masked cost reports.
//!
//! Agents are numbered from 0 in the API. [`transport::PartyId`] numbers
//! the supervisor 0 and agent `i` as `i + 1`; configs and exported artifacts
//! use the 1-based numbering.

pub mod adversary;
pub mod ahe;
pub mod config;
pub mod consensus;
pub mod error;
pub mod experiment;
pub mod export;
pub mod mechanism;
pub mod ring;
pub mod rng;
pub mod sharing;
pub mod stats;
pub mod topology;
pub mod transport;
pub mod views;

pub use adversary::{
    apply_strategy, builtin_deviations, honest_profile, max_profitable_gain, nash_gap_sweep, Costs, CustomStrategy,
    DeviationReport, Strategy, SweepCell, SweepFailure, GAP_TOLERANCE,
};
pub use ahe::{AhParams, AheError, AheScheme, Ciphertext, ExactMask, KeyPair, Lattice, PublicKey, SecretKey};
pub use config::{load_config, parse_config, BackendKind, ConfigError, ExperimentConfig, LatticePreset};
pub use consensus::{consensus_bounds, run_consensus, BoundReport, ConsensusRun, ConsensusSetup, Deployment};
pub use error::ProtocolError;
pub use experiment::{
    consensus_experiment, mechanism_experiment, privacy_experiment, sweep_experiment, with_deployment,
    DeploymentVisitor,
};
pub use export::{ExportError, OutcomeRecord};
pub use mechanism::{
    outcome_oracle, run_mechanism, verify_taxes, MechanismOutcome, MechanismRun, Verdict, Verification, DEFAULT_TAU,
};
pub use ring::{FixedPointCodec, Modulus, Rational, RingElement, RingError};
pub use rng::RngFactory;
pub use sharing::{reconst, share, ShareVector, SharingError};
pub use topology::{build_weights, validate, Digraph, TopologyError, ValidationReport, WeightSet};
pub use transport::{Envelope, Label, MessageKind, PartyId, Round, Transcript};
pub use views::{capture_views, coalition_uniformity_test, UniformityReport, ViewError, ViewRecord};
