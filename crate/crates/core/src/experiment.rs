//! Runs configured experiments on whichever backend the config selects.

use crate::adversary::{builtin_deviations, nash_gap_sweep, SweepCell};
use crate::ahe::{AheScheme, ExactMask, Lattice};
use crate::config::{BackendKind, ExperimentConfig};
use crate::consensus::{run_consensus, ConsensusRun, Deployment};
use crate::error::ProtocolError;
use crate::mechanism::{run_mechanism, MechanismRun};
use crate::rng::RngFactory;
use crate::views::{coalition_uniformity_test, UniformityReport, ViewError};

/// Work that needs a concrete deployment but does not care about the backend.
pub trait DeploymentVisitor {
    type Output;
    fn visit<S: AheScheme>(self, config: &ExperimentConfig, dep: &Deployment<S>) -> Self::Output;
}

/// Generates keys for every agent and hands the deployment to `visitor`.
pub fn with_deployment<V: DeploymentVisitor>(
    config: &ExperimentConfig,
    visitor: V,
) -> Result<V::Output, ProtocolError> {
    let setup = config.setup()?;
    let rngs = RngFactory::from_seed(config.seed);
    log::debug!(
        "deploying {} agents on {} with q = {}",
        config.n_agents(),
        config.backend.as_str(),
        config.q.value()
    );
    Ok(match config.backend {
        BackendKind::ExactMask => visitor.visit(config, &Deployment::new(ExactMask::new(config.q), setup, rngs)),
        BackendKind::Lattice => {
            let scheme = Lattice::new(config.lattice_preset.params(), config.q).map_err(ProtocolError::Backend)?;
            visitor.visit(config, &Deployment::new(scheme, setup, rngs))
        }
    })
}

struct Consensus;

impl DeploymentVisitor for Consensus {
    type Output = Result<ConsensusRun, ProtocolError>;
    fn visit<S: AheScheme>(self, c: &ExperimentConfig, dep: &Deployment<S>) -> Self::Output {
        run_consensus(dep, &c.theta, c.n, &c.strategies)
    }
}

struct Mechanism;

impl DeploymentVisitor for Mechanism {
    type Output = Result<MechanismRun, ProtocolError>;
    fn visit<S: AheScheme>(self, c: &ExperimentConfig, dep: &Deployment<S>) -> Self::Output {
        run_mechanism(dep, &c.theta, c.n, &c.strategies, c.broadcaster)
    }
}

struct Sweep<'a> {
    deviator: usize,
    horizons: &'a [u32],
}

impl DeploymentVisitor for Sweep<'_> {
    type Output = Vec<SweepCell>;
    fn visit<S: AheScheme>(self, c: &ExperimentConfig, dep: &Deployment<S>) -> Self::Output {
        nash_gap_sweep(dep, &c.theta, self.deviator, &builtin_deviations(), self.horizons, c.broadcaster)
    }
}

struct Privacy<'a> {
    coalition: &'a [usize],
    runs: usize,
}

impl DeploymentVisitor for Privacy<'_> {
    type Output = Result<UniformityReport, ViewError>;
    fn visit<S: AheScheme>(self, c: &ExperimentConfig, dep: &Deployment<S>) -> Self::Output {
        coalition_uniformity_test(dep, &c.theta, self.coalition, self.runs)
    }
}

pub fn consensus_experiment(config: &ExperimentConfig) -> Result<ConsensusRun, ProtocolError> {
    with_deployment(config, Consensus)?
}

pub fn mechanism_experiment(config: &ExperimentConfig) -> Result<MechanismRun, ProtocolError> {
    with_deployment(config, Mechanism)?
}

/// Built-in deviations of `deviator` (0-based) against honest play.
pub fn sweep_experiment(
    config: &ExperimentConfig,
    deviator: usize,
    horizons: &[u32],
) -> Result<Vec<SweepCell>, ProtocolError> {
    if deviator >= config.n_agents() {
        return Err(ProtocolError::UnknownAgent(deviator));
    }
    with_deployment(config, Sweep { deviator, horizons })
}

/// `coalition` holds 0-based agent indices.
pub fn privacy_experiment(
    config: &ExperimentConfig,
    coalition: &[usize],
    runs: usize,
) -> Result<UniformityReport, ViewError> {
    with_deployment(config, Privacy { coalition, runs })?
}
