//! Views of coalitions and the uniformity diagnostic for masked values.
//!
//! The diagnostic covers the secret-sharing layer only: it checks that the
//! decrypted values a coalition sees stay uniform after it strips out
//! everything it can compute itself. Semantic security of the encryption is
//! the backend's business and is not tested here.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::adversary::honest_profile;
use crate::ahe::AheScheme;
use crate::consensus::{run_consensus, Deployment};
use crate::error::ProtocolError;
use crate::ring::RingElement;
use crate::stats::{chi_square_uniform, UNIFORMITY_BINS, UNIFORMITY_P_THRESHOLD};
use crate::transport::{Envelope, MessageKind, PartyId, Round, Transcript};

/// Fewest runs accepted by the uniformity test.
pub const MIN_UNIFORMITY_RUNS: usize = 5000;

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("unknown party {0}")]
    UnknownParty(PartyId),
    #[error("need at least {required} runs, got {runs}")]
    InsufficientSamples { runs: usize, required: usize },
    #[error("coalition leaves no masked value to test")]
    NothingToTest,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Inputs, random seeds and received messages of one party, in transcript order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewRecord {
    pub party: PartyId,
    pub input: Option<f64>,
    pub seeds: BTreeMap<String, String>,
    pub messages: Vec<Envelope>,
}

impl ViewRecord {
    pub fn count(&self, kind: MessageKind) -> usize {
        self.messages.iter().filter(|e| e.kind == kind).count()
    }
}

pub fn capture_views(transcript: &Transcript, parties: &[PartyId]) -> Result<Vec<ViewRecord>, ViewError> {
    parties
        .iter()
        .map(|&p| {
            let info = transcript.party(p).ok_or(ViewError::UnknownParty(p))?;
            Ok(ViewRecord {
                party: p,
                input: info.input,
                seeds: info.seeds.clone(),
                messages: transcript.received_by(p).cloned().collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStatistic {
    /// Coalition member that decrypts (party id).
    pub receiver: PartyId,
    /// Honest in-neighbor whose masked value is tested (party id).
    pub sender: PartyId,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityReport {
    pub coalition: Vec<PartyId>,
    /// `h = min_i |N_i^in|`.
    pub threshold: usize,
    /// Set when `|C| ≥ h`; such coalitions are expected to fail.
    pub control: bool,
    pub runs: usize,
    pub attempts: usize,
    pub pairs: Vec<PairStatistic>,
    pub min_p_value: f64,
    pub passed: bool,
}

/// For every coalition member `i` and honest in-neighbor `j`, collects
/// `z_ij = m_ij + Σ_{l ∈ N_i^in ∩ C} (m_il − w̄_il x̄_l) mod q` from round 0 of
/// fresh runs and tests each pair's samples for uniformity. `coalition`
/// holds 0-based agent indices. One retry with new runs is allowed.
pub fn coalition_uniformity_test<S: AheScheme>(
    dep: &Deployment<S>,
    x0: &[f64],
    coalition: &[usize],
    runs: usize,
) -> Result<UniformityReport, ViewError> {
    let n_agents = dep.n_agents();
    if let Some(&bad) = coalition.iter().find(|&&c| c >= n_agents) {
        return Err(ViewError::UnknownParty(PartyId::agent(bad)));
    }
    if runs < MIN_UNIFORMITY_RUNS {
        return Err(ViewError::InsufficientSamples {
            runs,
            required: MIN_UNIFORMITY_RUNS,
        });
    }
    let g = &dep.setup.graph;
    let pairs: Vec<(usize, usize)> = coalition
        .iter()
        .flat_map(|&i| {
            g.in_neighbors(i)
                .into_iter()
                .filter(|j| !coalition.contains(j))
                .map(move |j| (i, j))
        })
        .collect();
    if pairs.is_empty() {
        return Err(ViewError::NothingToTest);
    }
    let threshold = g.min_in_degree();
    let mut attempts = 0;
    let mut report;
    loop {
        let offset = (attempts * runs) as u64;
        attempts += 1;
        let samples = collect_samples(dep, x0, coalition, &pairs, offset, runs)?;
        let q = dep.modulus().value();
        let stats: Vec<PairStatistic> = pairs
            .iter()
            .zip(&samples)
            .map(|(&(i, j), values)| {
                let c = chi_square_uniform(values, q, UNIFORMITY_BINS);
                PairStatistic {
                    receiver: PartyId::agent(i),
                    sender: PartyId::agent(j),
                    statistic: c.statistic,
                    p_value: c.p_value,
                }
            })
            .collect();
        let min_p = stats.iter().map(|s| s.p_value).fold(1.0, f64::min);
        report = UniformityReport {
            coalition: coalition.iter().map(|&c| PartyId::agent(c)).collect(),
            threshold,
            control: coalition.len() >= threshold,
            runs,
            attempts,
            pairs: stats,
            min_p_value: min_p,
            passed: min_p > UNIFORMITY_P_THRESHOLD,
        };
        if report.passed || attempts == 2 {
            break;
        }
    }
    Ok(report)
}

fn collect_samples<S: AheScheme>(
    dep: &Deployment<S>,
    x0: &[f64],
    coalition: &[usize],
    pairs: &[(usize, usize)],
    offset: u64,
    runs: usize,
) -> Result<Vec<Vec<u64>>, ViewError> {
    let q = dep.modulus();
    let codec = &dep.setup.codec;
    let weights = &dep.setup.weights;
    let per_run: Vec<Vec<u64>> = (0..runs as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<u64>, ViewError> {
            let d = dep.rerun(offset + r);
            let run = run_consensus(&d, x0, 1, &honest_profile(d.n_agents()))?;
            let mut m: BTreeMap<(usize, usize), RingElement> = BTreeMap::new();
            for env in run.transcript.envelopes.iter().filter(|e| {
                e.kind == MessageKind::ValueCt && e.round == Round::Online(0)
            }) {
                let i = env.receiver.agent_index().expect("value ciphertexts go to agents");
                if !coalition.contains(&i) {
                    continue;
                }
                let j = env.sender.agent_index().expect("value ciphertexts come from agents");
                let ct = d.scheme.decode_ciphertext(&env.payload).map_err(|source| ProtocolError::Crypto {
                    party: env.receiver,
                    round: env.round,
                    source,
                })?;
                let plain = d.scheme.dec(&d.keys[i].sk, &ct).map_err(|source| ProtocolError::Crypto {
                    party: env.receiver,
                    round: env.round,
                    source,
                })?;
                m.insert((i, j), plain);
            }
            pairs
                .iter()
                .map(|&(i, j)| {
                    let mut z = m[&(i, j)];
                    for (l, w) in weights.row(i).filter(|(l, _)| coalition.contains(l)) {
                        let own = codec.weight_integer(w).map_err(ProtocolError::from)? as i128
                            * run.sent_scalars[0][l] as i128;
                        z = q.add(z, q.sub(m[&(i, l)], q.reduce(own)));
                    }
                    Ok(z.value())
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok((0..pairs.len())
        .map(|p| per_run.iter().map(|row| row[p]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahe::ExactMask;
    use crate::consensus::ConsensusSetup;
    use crate::mechanism::run_mechanism;
    use crate::ring::{FixedPointCodec, Modulus, Rational};
    use crate::rng::RngFactory;
    use crate::topology::Digraph;

    const THETA: [f64; 5] = [3.0, 2.0, 1.0, 0.0, -1.0];

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
        Deployment::new(ExactMask::new(Modulus::desk_default()), setup, RngFactory::from_seed(21))
    }

    #[test]
    fn supervisor_receives_nothing() {
        let run = run_mechanism(&five_agent(), &THETA, 3, &honest_profile(5), 0).unwrap();
        let views = capture_views(run.transcript(), &[PartyId::SUPERVISOR]).unwrap();
        assert!(views[0].messages.is_empty());
        assert_eq!(views[0].seeds.len(), 3);
    }

    #[test]
    fn agent_two_view_at_one_round() {
        let run = run_mechanism(&five_agent(), &THETA, 1, &honest_profile(5), 0).unwrap();
        let v = &capture_views(run.transcript(), &[PartyId(2)]).unwrap()[0];
        assert_eq!(v.input, Some(2.0));
        // |N_2^out| = 3 mask shares, the 8 weights of the other agents,
        // |N_2^in| = 3 values, then the mechanism's messages
        assert_eq!(v.count(MessageKind::ShareCt), 3);
        assert_eq!(v.count(MessageKind::WeightCt), 8);
        assert_eq!(v.count(MessageKind::ValueCt), 3);
        assert_eq!(v.count(MessageKind::TaxShareCt), 4);
        assert_eq!(v.count(MessageKind::StateCt), 1);
        assert_eq!(v.count(MessageKind::MaskedCostCt), 16);
        assert_eq!(v.messages.len(), 35);
    }

    #[test]
    fn all_views_cover_the_transcript() {
        let run = run_mechanism(&five_agent(), &THETA, 2, &honest_profile(5), 0).unwrap();
        let everyone: Vec<PartyId> = (0..=5).map(PartyId).collect();
        let views = capture_views(run.transcript(), &everyone).unwrap();
        let total: usize = views.iter().map(|v| v.messages.len()).sum();
        assert_eq!(total, run.transcript().envelopes.len());
        assert!(matches!(
            capture_views(run.transcript(), &[PartyId(6)]),
            Err(ViewError::UnknownParty(PartyId(6)))
        ));
    }

    #[test]
    fn too_few_runs() {
        assert!(matches!(
            coalition_uniformity_test(&five_agent(), &THETA, &[1], 10),
            Err(ViewError::InsufficientSamples { runs: 10, .. })
        ));
        assert!(matches!(
            coalition_uniformity_test(&five_agent(), &THETA, &[7], 5000),
            Err(ViewError::UnknownParty(PartyId(8)))
        ));
    }

    #[test]
    fn singleton_looks_uniform_and_full_neighborhood_does_not() {
        let dep = five_agent();
        let single = coalition_uniformity_test(&dep, &THETA, &[1], MIN_UNIFORMITY_RUNS).unwrap();
        assert!(single.passed, "{single:?}");
        assert!(!single.control);
        assert_eq!(single.pairs.len(), 3);
        let control = coalition_uniformity_test(&dep, &THETA, &[0, 3], MIN_UNIFORMITY_RUNS).unwrap();
        assert!(control.control);
        assert!(!control.passed);
    }
}
