//! Weighted digraphs, neighbor sets, structural checks and consensus weights.
//!
//! Entry `a_ij > 0` means agent `i` listens to agent `j`: `j` is an
//! in-neighbor of `i`, and `i` is an out-neighbor of `j`. Agents are indexed
//! from 0 internally.

use std::collections::BTreeMap;

use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;
use thiserror::Error;

use crate::ring::Rational;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("adjacency matrix is empty")]
    Empty,
    #[error("adjacency row {row} has {len} entries, expected {n}")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("epsilon {epsilon} outside the open interval (0, {upper})")]
    EpsilonOutOfRange { epsilon: Rational, upper: String },
    #[error("negative weight a[{i}][{j}] = {value}")]
    NegativeWeight { i: usize, j: usize, value: Rational },
    #[error("self-loop a[{i}][{i}] = {value}")]
    SelfLoop { i: usize, value: Rational },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    adjacency: Vec<Vec<Rational>>,
}

impl Digraph {
    pub fn new(adjacency: Vec<Vec<Rational>>) -> Result<Self, TopologyError> {
        let n = adjacency.len();
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        for (row, r) in adjacency.iter().enumerate() {
            if r.len() != n {
                return Err(TopologyError::NotSquare { row, len: r.len(), n });
            }
        }
        Ok(Self { adjacency })
    }

    /// Builds a graph from an integer matrix.
    pub fn from_integers(rows: &[Vec<i64>]) -> Result<Self, TopologyError> {
        Self::new(
            rows.iter()
                .map(|r| r.iter().map(|&a| Rational::from_integer(a)).collect())
                .collect(),
        )
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> Rational {
        self.adjacency[i][j]
    }

    pub fn adjacency(&self) -> &[Vec<Rational>] {
        &self.adjacency
    }

    /// `N_i^in`, ascending.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n_agents())
            .filter(|&j| j != i && self.adjacency[i][j].is_positive())
            .collect()
    }

    /// `N_i^out`, ascending.
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n_agents())
            .filter(|&j| j != i && self.adjacency[j][i].is_positive())
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.n_agents()).map(|i| self.in_neighbors(i).len()).sum()
    }

    /// Security threshold `h = min_i |N_i^in|`.
    pub fn min_in_degree(&self) -> usize {
        (0..self.n_agents())
            .map(|i| self.in_neighbors(i).len())
            .min()
            .unwrap_or(0)
    }

    pub fn in_weight(&self, i: usize) -> Rational {
        (0..self.n_agents())
            .filter(|&j| j != i)
            .map(|j| self.adjacency[i][j])
            .sum()
    }

    pub fn out_weight(&self, i: usize) -> Rational {
        (0..self.n_agents())
            .filter(|&j| j != i)
            .map(|j| self.adjacency[j][i])
            .sum()
    }

    pub fn is_strongly_connected(&self) -> bool {
        let n = self.n_agents();
        let mut g = DiGraph::<(), ()>::with_capacity(n, n * n);
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for i in 0..n {
            for j in self.in_neighbors(i) {
                g.add_edge(nodes[j], nodes[i], ());
            }
        }
        kosaraju_scc(&g).len() == 1
    }

    /// Upper end of the admissible step-size interval, `1 / max_i Σ_{j≠i} a_ij`.
    /// `None` when the graph has no edges.
    pub fn epsilon_upper_bound(&self) -> Option<Rational> {
        let max = (0..self.n_agents())
            .map(|i| self.in_weight(i))
            .max()
            .unwrap_or_else(Rational::zero);
        max.is_positive().then(|| max.recip())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NotStronglyConnected { components: usize },
    NotBalanced { agent: usize, in_weight: String, out_weight: String },
    TooFewInNeighbors { agent: usize, count: usize, floor: usize },
    NegativeWeight { i: usize, j: usize, value: String },
    SelfLoop { agent: usize, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_agents: usize,
    pub edges: usize,
    pub min_in_degree: usize,
    pub floor: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every structural problem of `g`; never fails.
pub fn validate(g: &Digraph, min_in_neighbors: usize) -> ValidationReport {
    let n = g.n_agents();
    let mut violations = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let a = g.weight(i, j);
            if a.is_negative() {
                violations.push(Violation::NegativeWeight { i, j, value: a.to_string() });
            }
        }
        if !g.weight(i, i).is_zero() {
            violations.push(Violation::SelfLoop { agent: i, value: g.weight(i, i).to_string() });
        }
    }
    if !g.is_strongly_connected() {
        let mut pg = DiGraph::<(), ()>::new();
        let nodes: Vec<_> = (0..n).map(|_| pg.add_node(())).collect();
        for i in 0..n {
            for j in g.in_neighbors(i) {
                pg.add_edge(nodes[j], nodes[i], ());
            }
        }
        violations.push(Violation::NotStronglyConnected {
            components: kosaraju_scc(&pg).len(),
        });
    }
    for i in 0..n {
        let (win, wout) = (g.in_weight(i), g.out_weight(i));
        if win != wout {
            violations.push(Violation::NotBalanced {
                agent: i,
                in_weight: win.to_string(),
                out_weight: wout.to_string(),
            });
        }
    }
    for i in 0..n {
        let count = g.in_neighbors(i).len();
        if count < min_in_neighbors {
            violations.push(Violation::TooFewInNeighbors { agent: i, count, floor: min_in_neighbors });
        }
    }
    ValidationReport {
        n_agents: n,
        edges: g.edge_count(),
        min_in_degree: g.min_in_degree(),
        floor: min_in_neighbors,
        violations,
    }
}

/// Consensus weights `w_ij = ε·a_ij` and `w_ii = −Σ_j w_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub epsilon: Rational,
    pub w_offdiag: BTreeMap<(usize, usize), Rational>,
    pub w_diag: Vec<Rational>,
}

impl WeightSet {
    pub fn n_agents(&self) -> usize {
        self.w_diag.len()
    }

    pub fn offdiag(&self, i: usize, j: usize) -> Option<Rational> {
        self.w_offdiag.get(&(i, j)).copied()
    }

    /// `(j, w_ij)` for every in-neighbor `j` of `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Rational)> + '_ {
        self.w_offdiag
            .range((i, 0)..(i + 1, 0))
            .map(|(&(_, j), &w)| (j, w))
    }

    /// Largest `Δ_w` making every off-diagonal weight an integer multiple of it:
    /// gcd of numerators over lcm of denominators.
    pub fn finest_common_resolution(&self) -> Option<Rational> {
        let mut it = self.w_offdiag.values().filter(|w| !w.is_zero());
        let first = it.next()?.abs();
        let (num, den) = it.fold((*first.numer(), *first.denom()), |(n, d), w| {
            let w = w.abs();
            (n.gcd(w.numer()), d.lcm(w.denom()))
        });
        Some(Rational::new(num, den))
    }

    /// One plaintext step `x ← (I + W) x` in floating point.
    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_agents())
            .map(|i| {
                let wii = crate::ring::rational_to_f64(self.w_diag[i]);
                let v: f64 = self
                    .row(i)
                    .map(|(j, w)| crate::ring::rational_to_f64(w) * x[j])
                    .sum();
                x[i] + wii * x[i] + v
            })
            .collect()
    }
}

pub fn build_weights(g: &Digraph, epsilon: Rational) -> Result<WeightSet, TopologyError> {
    let n = g.n_agents();
    for i in 0..n {
        if !g.weight(i, i).is_zero() {
            return Err(TopologyError::SelfLoop { i, value: g.weight(i, i) });
        }
        for j in 0..n {
            if g.weight(i, j).is_negative() {
                return Err(TopologyError::NegativeWeight { i, j, value: g.weight(i, j) });
            }
        }
    }
    let upper = g.epsilon_upper_bound();
    let in_range = epsilon.is_positive() && upper.is_none_or(|u| epsilon < u);
    if !in_range {
        return Err(TopologyError::EpsilonOutOfRange {
            epsilon,
            upper: upper.map_or_else(|| "inf".to_string(), |u| u.to_string()),
        });
    }
    let mut w_offdiag = BTreeMap::new();
    let mut w_diag = vec![Rational::zero(); n];
    for (i, diag) in w_diag.iter_mut().enumerate() {
        for j in g.in_neighbors(i) {
            let w = epsilon * g.weight(i, j);
            w_offdiag.insert((i, j), w);
            *diag -= w;
        }
    }
    Ok(WeightSet { epsilon, w_offdiag, w_diag })
}

/// True iff every row of `I + W` sums to exactly one.
pub fn row_stochastic_check(ws: &WeightSet) -> bool {
    (0..ws.n_agents()).all(|i| {
        let total = Rational::one() + ws.w_diag[i] + ws.row(i).map(|(_, w)| w).sum::<Rational>();
        total == Rational::one()
    })
}
