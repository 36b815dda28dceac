//! Fixtures shared by the benchmarks.

use encon_core::{
    AhParams, ConsensusSetup, Deployment, Digraph, ExactMask, FixedPointCodec, Lattice, Modulus, Rational,
    RngFactory,
};

pub const THETA: [f64; 5] = [3.0, 2.0, 1.0, 0.0, -1.0];
pub const ROUNDS: u32 = 30;

/// Five agents, ε = Δ_w = 1/10, Δ_x = 1/100.
pub fn five_agent_setup() -> ConsensusSetup {
    let g = Digraph::from_integers(&[
        vec![0, 0, 0, 1, 1],
        vec![1, 0, 0, 1, 1],
        vec![0, 1, 0, 1, 0],
        vec![0, 1, 0, 0, 1],
        vec![0, 1, 1, 0, 0],
    ])
    .expect("square non-negative matrix");
    let tenth = Rational::new(1, 10);
    let codec = FixedPointCodec::new(tenth, Rational::new(1, 100)).expect("positive resolutions");
    ConsensusSetup::new(g, tenth, codec).expect("weights on the grid")
}

pub fn exact_mask_deployment(seed: u64) -> Deployment<ExactMask> {
    Deployment::new(ExactMask::new(Modulus::desk_default()), five_agent_setup(), RngFactory::from_seed(seed))
}

pub fn lattice_deployment(params: AhParams, seed: u64) -> Deployment<Lattice> {
    let scheme = Lattice::new(params, Modulus::desk_default()).expect("preset fits the modulus");
    Deployment::new(scheme, five_agent_setup(), RngFactory::from_seed(seed))
}
