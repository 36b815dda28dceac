//! Average consensus over encrypted data.
//!
//! Offline, the supervisor zero-shares a mask for every agent and round and
//! encrypts each share under the public key of the agent that will
//! reconstruct it, while every agent encrypts its own weights under its own
//! key and broadcasts them through the supervisor. Online, each agent folds
//! its encoded state into the weight ciphertexts of its out-neighbors, adds
//! the mask share and sends the result. The receiver decrypts and sums; the
//! masks cancel and leave `Σ_j w̄_ij x̄_j(k)`.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::adversary::{apply_strategy, Strategy};
use crate::ahe::{AheScheme, Ciphertext, KeyPair, PublicKey};
use crate::error::ProtocolError;
use crate::ring::{
    decode_scaled, encode_weight, rational_to_f64, FixedPointCodec, Modulus, Rational, RingElement,
    RingError,
};
use crate::rng::{RngFactory, ENCRYPT, KEYGEN, TAX_SHARES, ZERO_SHARES};
use crate::sharing::{share, ShareVector};
use crate::topology::{build_weights, Digraph, WeightSet};
use crate::transport::{Envelope, Label, MessageKind, PartyId, PartyInfo, Round, Transcript};

/// Graph, weights and encodings shared by every run of a deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusSetup {
    pub graph: Digraph,
    pub weights: WeightSet,
    pub codec: FixedPointCodec,
}

impl ConsensusSetup {
    pub fn new(graph: Digraph, epsilon: Rational, codec: FixedPointCodec) -> Result<Self, ProtocolError> {
        let weights = build_weights(&graph, epsilon)?;
        for w in weights.w_offdiag.values() {
            codec.weight_integer(*w)?;
        }
        Ok(Self { graph, weights, codec })
    }

    pub fn n_agents(&self) -> usize {
        self.graph.n_agents()
    }
}

/// A scheme instance, the setup and one key pair per agent.
#[derive(Debug, Clone)]
pub struct Deployment<S: AheScheme> {
    pub scheme: S,
    pub setup: ConsensusSetup,
    pub keys: Vec<KeyPair<S>>,
    pub rngs: RngFactory,
}

impl<S: AheScheme> Deployment<S> {
    pub fn new(scheme: S, setup: ConsensusSetup, rngs: RngFactory) -> Self {
        let keys = (0..setup.n_agents())
            .map(|i| scheme.keygen(&mut rngs.stream(KEYGEN, PartyId::agent(i).0)))
            .collect();
        Self {
            scheme,
            setup,
            keys,
            rngs,
        }
    }

    /// Same keys with fresh share and encryption randomness.
    pub fn rerun(&self, run: u64) -> Self {
        Self {
            rngs: self.rngs.with_run(run),
            ..self.clone()
        }
    }

    pub fn n_agents(&self) -> usize {
        self.setup.n_agents()
    }

    pub fn modulus(&self) -> Modulus {
        self.scheme.modulus()
    }
}

#[derive(Debug, Clone)]
pub struct AgentRuntime<S: AheScheme> {
    pub id: usize,
    pub state: f64,
    /// The value the agent entered the consensus with.
    pub initial_state: f64,
    pub w_diag: Rational,
    /// `(j, w_ij)` over the in-neighbors.
    pub weights: Vec<(usize, Rational)>,
    pub out_neighbors: Vec<usize>,
    pub keys: KeyPair<S>,
    /// `(j, i) → ct_{w,ji}` for every broadcast weight received.
    pub weight_cts_received: BTreeMap<(usize, usize), Ciphertext<S>>,
    /// `(j, k) → ct_{s,ji}(k)`.
    pub share_cts: BTreeMap<(usize, u32), Ciphertext<S>>,
    /// `j → ct_{t,ji}`.
    pub tax_share_cts: BTreeMap<usize, Ciphertext<S>>,
    pub trajectory: Vec<f64>,
    pub strategy: Strategy,
    /// Scalar multiplied into the value ciphertexts, per round.
    pub sent_scalars: Vec<i64>,
    initial_scalar: Option<i64>,
    rng: ChaCha20Rng,
}

impl<S: AheScheme> AgentRuntime<S> {
    pub fn new(
        id: usize,
        setup: &ConsensusSetup,
        keys: KeyPair<S>,
        input: f64,
        strategy: Strategy,
        rng: ChaCha20Rng,
    ) -> Self {
        let x0 = input + strategy.initial_offset();
        Self {
            id,
            state: x0,
            initial_state: x0,
            w_diag: setup.weights.w_diag[id],
            weights: setup.weights.row(id).collect(),
            out_neighbors: setup.graph.out_neighbors(id),
            keys,
            weight_cts_received: BTreeMap::new(),
            share_cts: BTreeMap::new(),
            tax_share_cts: BTreeMap::new(),
            trajectory: vec![x0],
            strategy,
            sent_scalars: Vec::new(),
            initial_scalar: None,
            rng,
        }
    }

    pub fn party(&self) -> PartyId {
        PartyId::agent(self.id)
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    /// Stores an offline ciphertext addressed to this agent.
    pub fn accept_offline(&mut self, scheme: &S, env: &Envelope) -> Result<(), ProtocolError> {
        let me = self.party();
        let ct = decode_payload(scheme, env, me)?;
        let from = |p: u32| PartyId(p).agent_index().unwrap_or(usize::MAX);
        let duplicate = match env.kind {
            MessageKind::ShareCt => {
                let k = env.label.k.unwrap_or(0);
                self.share_cts.insert((from(env.label.i), k), ct).is_some()
            }
            MessageKind::WeightCt => self
                .weight_cts_received
                .insert((from(env.label.i), from(env.label.j)), ct)
                .is_some(),
            MessageKind::TaxShareCt => self.tax_share_cts.insert(from(env.label.i), ct).is_some(),
            kind => {
                return Err(ProtocolError::UnexpectedMessage {
                    receiver: me,
                    sender: env.sender,
                    round: env.round,
                    kind,
                })
            }
        };
        if duplicate {
            return Err(ProtocolError::DuplicateMessage {
                receiver: me,
                sender: env.sender,
                round: env.round,
                kind: env.kind,
            });
        }
        Ok(())
    }
}

pub(crate) fn decode_payload<S: AheScheme>(
    scheme: &S,
    env: &Envelope,
    receiver: PartyId,
) -> Result<Ciphertext<S>, ProtocolError> {
    scheme
        .decode_ciphertext(&env.payload)
        .map_err(|source| ProtocolError::Crypto {
            party: receiver,
            round: env.round,
            source,
        })
}

/// Holds the public keys and the correlated randomness the supervisor hands out.
#[derive(Debug, Clone)]
pub struct SupervisorRuntime<S: AheScheme> {
    pub public_keys: BTreeMap<usize, PublicKey<S>>,
    /// `(i, k) →` the zero-sharing over `N_i^in` for round `k`.
    pub zero_share_plan: BTreeMap<(usize, u32), ShareVector>,
    /// `i →` the zero-sharing over `V \ {i}` used to mask agent `i`'s transfer.
    pub tax_share_plan: BTreeMap<usize, ShareVector>,
    pub(crate) share_rng: ChaCha20Rng,
    pub(crate) tax_rng: ChaCha20Rng,
    pub(crate) enc_rng: ChaCha20Rng,
}

impl<S: AheScheme> SupervisorRuntime<S> {
    pub fn new(rngs: &RngFactory) -> Self {
        let me = PartyId::SUPERVISOR.0;
        Self {
            public_keys: BTreeMap::new(),
            zero_share_plan: BTreeMap::new(),
            tax_share_plan: BTreeMap::new(),
            share_rng: rngs.stream(ZERO_SHARES, me),
            tax_rng: rngs.stream(TAX_SHARES, me),
            enc_rng: rngs.stream(ENCRYPT, me),
        }
    }

    pub fn register(&mut self, agent: usize, pk: PublicKey<S>) {
        self.public_keys.insert(agent, pk);
    }

    pub(crate) fn key(&self, agent: usize) -> Result<&PublicKey<S>, ProtocolError> {
        self.public_keys
            .get(&agent)
            .ok_or(ProtocolError::MissingKey(PartyId::agent(agent)))
    }
}

/// For every round `k < n` and agent `i`, zero-shares over `N_i^in`, encrypts
/// share `s_ij(k)` under `pk_i` and addresses it to in-neighbor `j`.
pub fn offline_supervisor<S: AheScheme>(
    sup: &mut SupervisorRuntime<S>,
    scheme: &S,
    g: &Digraph,
    n: u32,
) -> Result<Vec<Envelope>, ProtocolError> {
    let q = scheme.modulus();
    for i in 0..g.n_agents() {
        sup.key(i)?;
    }
    let mut out = Vec::new();
    for k in 0..n {
        for i in 0..g.n_agents() {
            let in_nb = g.in_neighbors(i);
            if in_nb.is_empty() {
                continue;
            }
            let sv = share(RingElement::ZERO, in_nb.len(), q, &mut sup.share_rng).map_err(|source| {
                ProtocolError::Sharing {
                    context: "mask sharing",
                    source,
                }
            })?;
            let pk = sup.key(i)?.clone();
            for (&j, &s) in in_nb.iter().zip(sv.shares()) {
                let ct = scheme.enc(&pk, s, &mut sup.enc_rng);
                out.push(Envelope {
                    sender: PartyId::SUPERVISOR,
                    receiver: PartyId::agent(j),
                    relay: None,
                    round: Round::Offline,
                    kind: MessageKind::ShareCt,
                    label: Label::for_round(PartyId::agent(i), PartyId::agent(j), k),
                    payload: scheme.encode_ciphertext(&ct),
                });
            }
            sup.zero_share_plan.insert((i, k), sv);
        }
    }
    Ok(out)
}

/// Encrypts `w̃_ij` under the agent's own key for every in-neighbor `j` and
/// fans each ciphertext out to every other agent through the supervisor.
pub fn offline_broadcast_weights<S: AheScheme>(
    agent: &mut AgentRuntime<S>,
    scheme: &S,
    codec: &FixedPointCodec,
    n_agents: usize,
) -> Result<Vec<Envelope>, ProtocolError> {
    let q = scheme.modulus();
    let me = agent.party();
    let mut out = Vec::new();
    for (j, w) in agent.weights.clone() {
        let wt = encode_weight(w, codec, q).map_err(|source| ProtocolError::Encoding {
            party: me,
            round: Round::Offline,
            source,
        })?;
        let ct = scheme.enc(&agent.keys.pk, wt, &mut agent.rng);
        let payload = scheme.encode_ciphertext(&ct);
        for m in (0..n_agents).filter(|&m| m != agent.id) {
            out.push(Envelope {
                sender: me,
                receiver: PartyId::agent(m),
                relay: Some(PartyId::SUPERVISOR),
                round: Round::Offline,
                kind: MessageKind::WeightCt,
                label: Label::pair(me, PartyId::agent(j)),
                payload: payload.clone(),
            });
        }
    }
    Ok(out)
}

/// Sends `ct_{w,ji} ⊙ x̄_i(k) ⊕ ct_{s,ji}(k)` to every out-neighbor `j`.
pub fn online_send<S: AheScheme>(
    agent: &mut AgentRuntime<S>,
    scheme: &S,
    codec: &FixedPointCodec,
    k: u32,
) -> Result<Vec<Envelope>, ProtocolError> {
    let q = scheme.modulus();
    let me = agent.party();
    let round = Round::Online(k);
    let encoding = |source| ProtocolError::Encoding {
        party: me,
        round,
        source,
    };
    let crypto = |source| ProtocolError::Crypto {
        party: me,
        round,
        source,
    };
    let honest = codec.quantize_state(agent.state, q).map_err(encoding)?;
    let initial = match agent.initial_scalar {
        Some(s) => s,
        None => {
            let s = codec.quantize_state(agent.initial_state, q).map_err(encoding)?;
            agent.initial_scalar = Some(s);
            s
        }
    };
    let scalar = apply_strategy(&agent.strategy, k, honest, initial);
    agent.sent_scalars.push(scalar);
    let mut out = Vec::with_capacity(agent.out_neighbors.len());
    for &j in &agent.out_neighbors {
        let missing = |kind| ProtocolError::MissingMessage {
            receiver: me,
            sender: if kind == MessageKind::WeightCt {
                PartyId::agent(j)
            } else {
                PartyId::SUPERVISOR
            },
            round: Round::Offline,
            kind,
        };
        let ct_w = agent
            .weight_cts_received
            .get(&(j, agent.id))
            .ok_or_else(|| missing(MessageKind::WeightCt))?;
        let ct_s = agent
            .share_cts
            .get(&(j, k))
            .ok_or_else(|| missing(MessageKind::ShareCt))?;
        let ct = scheme
            .scalar_mul(ct_w, scalar)
            .and_then(|c| scheme.add(&c, ct_s))
            .map_err(crypto)?;
        out.push(Envelope {
            sender: me,
            receiver: PartyId::agent(j),
            relay: None,
            round,
            kind: MessageKind::ValueCt,
            label: Label::pair(PartyId::agent(j), me),
            payload: scheme.encode_ciphertext(&ct),
        });
    }
    Ok(out)
}

/// Decrypts exactly one value ciphertext per in-neighbor, reconstructs
/// `v_i(k) = Δ·[Σ_j m_ij]_q` and applies `x_i ← x_i + w_ii x_i + v_i`.
pub fn online_receive_update<'e, S: AheScheme>(
    agent: &mut AgentRuntime<S>,
    scheme: &S,
    codec: &FixedPointCodec,
    k: u32,
    inbox: impl IntoIterator<Item = &'e Envelope>,
) -> Result<f64, ProtocolError> {
    let q = scheme.modulus();
    let me = agent.party();
    let round = Round::Online(k);
    let mut by_sender: BTreeMap<usize, &Envelope> = BTreeMap::new();
    for env in inbox {
        if env.receiver != me || env.round != round || env.kind != MessageKind::ValueCt {
            continue;
        }
        let sender = env.sender.agent_index();
        let expected = sender.is_some_and(|s| agent.weights.iter().any(|&(j, _)| j == s));
        if !expected {
            return Err(ProtocolError::UnexpectedMessage {
                receiver: me,
                sender: env.sender,
                round,
                kind: env.kind,
            });
        }
        if by_sender.insert(sender.unwrap(), env).is_some() {
            return Err(ProtocolError::DuplicateMessage {
                receiver: me,
                sender: env.sender,
                round,
                kind: env.kind,
            });
        }
    }
    let mut sum = RingElement::ZERO;
    for &(j, _) in &agent.weights {
        let env = by_sender.get(&j).ok_or(ProtocolError::MissingMessage {
            receiver: me,
            sender: PartyId::agent(j),
            round,
            kind: MessageKind::ValueCt,
        })?;
        let ct = decode_payload(scheme, env, me)?;
        let m = scheme
            .dec(&agent.keys.sk, &ct)
            .map_err(|source| ProtocolError::Crypto {
                party: me,
                round,
                source,
            })?;
        sum = q.add(sum, m);
    }
    let v = decode_scaled(sum, codec.delta(), q);
    if !agent.strategy.freezes_state() {
        let x = agent.state;
        agent.state = x + rational_to_f64(agent.w_diag) * x + v;
    }
    agent.trajectory.push(agent.state);
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRecord {
    pub round: u32,
    pub agent: usize,
    /// `None` for the aggregate `v̄_i`, `Some(j)` for the term `v̄_ij`.
    pub neighbor: Option<usize>,
    pub value: i128,
}

/// Magnitudes of the integers that must decode unambiguously.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub q: u64,
    pub max_abs_term: u128,
    pub max_abs_sum: u128,
    pub rounds_checked: usize,
    pub violations: Vec<BoundRecord>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// `q/2 − max(|v̄_ij|, |v̄_i|)`.
    pub fn margin(&self) -> f64 {
        self.q as f64 / 2.0 - self.max_abs_term.max(self.max_abs_sum) as f64
    }
}

/// Checks `|w̄_ij x̄_j(k)| < q/2` and `|Σ_j w̄_ij x̄_j(k)| < q/2` for every
/// round, using the scalars the agents actually sent. `q` need not be a
/// valid modulus here.
pub fn consensus_bounds(
    weights: &WeightSet,
    codec: &FixedPointCodec,
    sent_scalars: &[Vec<i64>],
    q: u64,
) -> Result<BoundReport, RingError> {
    let fits = |z: i128| 2 * z.unsigned_abs() < q as u128;
    let mut report = BoundReport {
        q,
        max_abs_term: 0,
        max_abs_sum: 0,
        rounds_checked: sent_scalars.len(),
        violations: Vec::new(),
    };
    for (k, scalars) in sent_scalars.iter().enumerate() {
        for i in 0..weights.n_agents() {
            let mut total = 0i128;
            for (j, w) in weights.row(i) {
                let term = codec.weight_integer(w)? as i128 * scalars[j] as i128;
                report.max_abs_term = report.max_abs_term.max(term.unsigned_abs());
                if !fits(term) {
                    report.violations.push(BoundRecord {
                        round: k as u32,
                        agent: i,
                        neighbor: Some(j),
                        value: term,
                    });
                }
                total += term;
            }
            report.max_abs_sum = report.max_abs_sum.max(total.unsigned_abs());
            if !fits(total) {
                report.violations.push(BoundRecord {
                    round: k as u32,
                    agent: i,
                    neighbor: None,
                    value: total,
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ConsensusRun {
    /// `trajectories[i][k] = x_i(k)`.
    pub trajectories: Vec<Vec<f64>>,
    pub transcript: Transcript,
    pub bounds: BoundReport,
    /// `sent_scalars[k][i]`.
    pub sent_scalars: Vec<Vec<i64>>,
}

impl ConsensusRun {
    pub fn final_states(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| *t.last().expect("non-empty")).collect()
    }
}

/// One execution: the parties, their inboxes and the growing transcript.
pub(crate) struct Session<'d, S: AheScheme> {
    pub dep: &'d Deployment<S>,
    pub agents: Vec<AgentRuntime<S>>,
    pub supervisor: SupervisorRuntime<S>,
    pub transcript: Transcript,
}

fn seed_hex(rngs: &RngFactory, purpose: &str, party: PartyId) -> (String, String) {
    (purpose.to_string(), hex::encode(rngs.seed_for(purpose, party.0)))
}

impl<'d, S: AheScheme> Session<'d, S> {
    pub fn new(dep: &'d Deployment<S>, inputs: &[f64], strategies: &[Strategy]) -> Result<Self, ProtocolError> {
        let n_agents = dep.n_agents();
        for (what, found) in [("inputs", inputs.len()), ("strategies", strategies.len())] {
            if found != n_agents {
                return Err(ProtocolError::LengthMismatch {
                    what,
                    expected: n_agents,
                    found,
                });
            }
        }
        let rngs = &dep.rngs;
        let mut supervisor = SupervisorRuntime::new(rngs);
        let mut parties = vec![PartyInfo {
            party: PartyId::SUPERVISOR,
            input: None,
            seeds: [ZERO_SHARES, TAX_SHARES, ENCRYPT]
                .into_iter()
                .map(|p| seed_hex(rngs, p, PartyId::SUPERVISOR))
                .collect(),
        }];
        let mut agents = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let party = PartyId::agent(i);
            supervisor.register(i, dep.keys[i].pk.clone());
            parties.push(PartyInfo {
                party,
                input: Some(inputs[i]),
                seeds: [KEYGEN, ENCRYPT]
                    .into_iter()
                    .map(|p| seed_hex(rngs, p, party))
                    .collect(),
            });
            agents.push(AgentRuntime::new(
                i,
                &dep.setup,
                dep.keys[i].clone(),
                inputs[i],
                strategies[i].clone(),
                rngs.stream(ENCRYPT, party.0),
            ));
        }
        Ok(Self {
            dep,
            agents,
            supervisor,
            transcript: Transcript {
                parties,
                envelopes: Vec::new(),
            },
        })
    }

    /// Records offline envelopes and hands each to its receiver.
    pub fn deliver_offline(&mut self, envelopes: Vec<Envelope>) -> Result<(), ProtocolError> {
        for env in &envelopes {
            let idx = env.receiver.agent_index().expect("offline messages go to agents");
            self.agents[idx].accept_offline(&self.dep.scheme, env)?;
        }
        self.transcript.envelopes.extend(envelopes);
        Ok(())
    }

    pub fn offline_consensus(&mut self, n: u32) -> Result<(), ProtocolError> {
        let shares = offline_supervisor(&mut self.supervisor, &self.dep.scheme, &self.dep.setup.graph, n)?;
        self.deliver_offline(shares)?;
        let n_agents = self.agents.len();
        let mut weights = Vec::new();
        for agent in &mut self.agents {
            weights.extend(offline_broadcast_weights(
                agent,
                &self.dep.scheme,
                &self.dep.setup.codec,
                n_agents,
            )?);
        }
        self.deliver_offline(weights)
    }

    pub fn online(&mut self, n: u32) -> Result<(), ProtocolError> {
        let scheme = &self.dep.scheme;
        let codec = &self.dep.setup.codec;
        for k in 0..n {
            let mut outgoing = Vec::new();
            for agent in &mut self.agents {
                outgoing.extend(online_send(agent, scheme, codec, k)?);
            }
            for agent in &mut self.agents {
                let me = agent.party();
                online_receive_update(agent, scheme, codec, k, outgoing.iter().filter(|e| e.receiver == me))?;
            }
            self.transcript.envelopes.extend(outgoing);
        }
        Ok(())
    }

    /// `sent_scalars[k][i]` over the rounds run so far.
    pub fn sent_scalars(&self) -> Vec<Vec<i64>> {
        let rounds = self.agents.first().map_or(0, |a| a.sent_scalars.len());
        (0..rounds)
            .map(|k| self.agents.iter().map(|a| a.sent_scalars[k]).collect())
            .collect()
    }

    pub fn bounds(&self) -> Result<BoundReport, ProtocolError> {
        Ok(consensus_bounds(
            &self.dep.setup.weights,
            &self.dep.setup.codec,
            &self.sent_scalars(),
            self.dep.modulus().value(),
        )?)
    }

    pub fn into_consensus_run(self) -> Result<ConsensusRun, ProtocolError> {
        let sent_scalars = self.sent_scalars();
        let bounds = self.bounds()?;
        Ok(ConsensusRun {
            trajectories: self.agents.iter().map(|a| a.trajectory.clone()).collect(),
            transcript: self.transcript,
            bounds,
            sent_scalars,
        })
    }
}

/// Runs the offline phase and `n` synchronous online rounds.
pub fn run_consensus<S: AheScheme>(
    dep: &Deployment<S>,
    x0: &[f64],
    n: u32,
    strategies: &[Strategy],
) -> Result<ConsensusRun, ProtocolError> {
    let mut session = Session::new(dep, x0, strategies)?;
    session.offline_consensus(n)?;
    session.online(n)?;
    session.into_consensus_run()
}
