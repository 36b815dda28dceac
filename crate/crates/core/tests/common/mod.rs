#![allow(dead_code)]

use encon_core::{
    AhParams, ConsensusSetup, Deployment, Digraph, ExactMask, FixedPointCodec, Lattice, Modulus, Rational,
    RngFactory,
};
use rand::Rng;

pub const THETA: [f64; 5] = [3.0, 2.0, 1.0, 0.0, -1.0];
pub const FIVE_AGENT_ROUNDS: u32 = 30;

pub fn r(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

pub fn five_agent_adjacency() -> Vec<Vec<i64>> {
    vec![
        vec![0, 0, 0, 1, 1],
        vec![1, 0, 0, 1, 1],
        vec![0, 1, 0, 1, 0],
        vec![0, 1, 0, 0, 1],
        vec![0, 1, 1, 0, 0],
    ]
}

pub fn five_agent_setup() -> ConsensusSetup {
    let g = Digraph::from_integers(&five_agent_adjacency()).unwrap();
    ConsensusSetup::new(g, r(1, 10), FixedPointCodec::new(r(1, 10), r(1, 100)).unwrap()).unwrap()
}

pub fn five_agent_exact(seed: u64) -> Deployment<ExactMask> {
    Deployment::new(ExactMask::new(Modulus::desk_default()), five_agent_setup(), RngFactory::from_seed(seed))
}

pub fn five_agent_lattice(params: AhParams, seed: u64) -> Deployment<Lattice> {
    let scheme = Lattice::new(params, Modulus::desk_default()).unwrap();
    Deployment::new(scheme, five_agent_setup(), RngFactory::from_seed(seed))
}

/// A random consensus instance: strongly connected, every in-degree at
/// least 2, integer edge weights in 1..=2.
pub struct RandomInstance {
    pub adjacency: Vec<Vec<i64>>,
    pub epsilon: Rational,
    pub delta_x: Rational,
    pub theta: Vec<f64>,
    pub rounds: u32,
}

impl RandomInstance {
    pub fn draw<R: Rng>(rng: &mut R) -> Self {
        loop {
            let n = rng.random_range(3..=6usize);
            let mut a = vec![vec![0i64; n]; n];
            for (i, row) in a.iter_mut().enumerate() {
                for (j, w) in row.iter_mut().enumerate() {
                    if i != j && rng.random_bool(0.6) {
                        *w = rng.random_range(1..=2);
                    }
                }
            }
            let ok_degree = a.iter().all(|row| row.iter().filter(|&&w| w > 0).count() >= 2);
            if !ok_degree || !strongly_connected(&a) {
                continue;
            }
            let max_in: i64 = a.iter().map(|row| row.iter().sum::<i64>()).max().unwrap();
            let delta_x = if rng.random_bool(0.5) { r(1, 100) } else { r(1, 1000) };
            return Self {
                epsilon: r(1, 2 * max_in),
                delta_x,
                theta: (0..n).map(|_| rng.random_range(-5.0..5.0)).collect(),
                rounds: rng.random_range(1..=20),
                adjacency: a,
            };
        }
    }

    pub fn setup(&self) -> ConsensusSetup {
        let g = Digraph::from_integers(&self.adjacency).unwrap();
        ConsensusSetup::new(g, self.epsilon, FixedPointCodec::new(self.epsilon, self.delta_x).unwrap()).unwrap()
    }

    pub fn max_in_degree(&self) -> usize {
        self.adjacency
            .iter()
            .map(|row| row.iter().filter(|&&w| w > 0).count())
            .max()
            .unwrap()
    }

    /// `n · Δ_x · max_i |N_i^in|`.
    pub fn envelope(&self) -> f64 {
        self.rounds as f64 * (*self.delta_x.numer() as f64 / *self.delta_x.denom() as f64) * self.max_in_degree() as f64
    }
}

/// Forward reachability from every node by depth-first search.
pub fn strongly_connected(a: &[Vec<i64>]) -> bool {
    let n = a.len();
    (0..n).all(|start| {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            // a_vu > 0 is an edge u -> v
            for v in 0..n {
                if a[v][u] > 0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    })
}

/// Unquantized iteration `x_i ← x_i + ε Σ_j a_ij (x_j − x_i)`, returning
/// `traj[i][k]` for `k = 0..=n`.
pub fn plaintext_iteration(a: &[Vec<i64>], epsilon: f64, theta: &[f64], n: u32) -> Vec<Vec<f64>> {
    let mut x = theta.to_vec();
    let mut traj: Vec<Vec<f64>> = theta.iter().map(|&t| vec![t]).collect();
    for _ in 0..n {
        let next: Vec<f64> = (0..x.len())
            .map(|i| x[i] + epsilon * (0..x.len()).map(|j| a[i][j] as f64 * (x[j] - x[i])).sum::<f64>())
            .collect();
        x = next;
        for (t, &v) in traj.iter_mut().zip(&x) {
            t.push(v);
        }
    }
    traj
}
