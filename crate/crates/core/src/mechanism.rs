//! The distributed mechanism: consensus on the reported types followed by an
//! encrypted exchange that gives every agent the common decision and its
//! transfer `t_i = Σ_{j≠i} (x_j(n) − θ_j)²`, plus the supervisor's check that
//! the payments add up.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::adversary::Strategy;
use crate::ahe::AheScheme;
use crate::consensus::{decode_payload, ConsensusRun, Deployment, Session, SupervisorRuntime};
use crate::error::ProtocolError;
use crate::ring::{decode_scaled, quantize, RingElement};
use crate::sharing::share;
use crate::transport::{Envelope, Label, MessageKind, PartyId, Round, Transcript};

/// Default tolerance of the payment check.
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismOutcome {
    /// `d_i`, decoded from the broadcaster's terminal state.
    pub decision: Vec<f64>,
    /// `t_i`.
    pub transfer: Vec<f64>,
    /// `v_i = (x_i(n) − θ_i)²` with the true type.
    pub local_cost: Vec<f64>,
    /// `u_i = v_i + t_i`.
    pub total_cost: Vec<f64>,
}

impl MechanismOutcome {
    pub fn n_agents(&self) -> usize {
        self.decision.len()
    }
}

#[derive(Debug, Clone)]
pub struct MechanismRun {
    pub outcome: MechanismOutcome,
    /// Trajectories and bounds of the consensus phase; the transcript covers
    /// the whole mechanism.
    pub consensus: ConsensusRun,
    /// `ṽ_i` as sent, before reduction mod q.
    pub scaled_costs: Vec<i64>,
}

impl MechanismRun {
    pub fn transcript(&self) -> &Transcript {
        &self.consensus.transcript
    }
}

/// Zero-shares over `V \ {i}` for every agent `i`; share `t_ij` is encrypted
/// under `pk_i` and handed to agent `j`.
pub fn offline_tax_shares<S: AheScheme>(
    sup: &mut SupervisorRuntime<S>,
    scheme: &S,
    n_agents: usize,
) -> Result<Vec<Envelope>, ProtocolError> {
    let q = scheme.modulus();
    let mut out = Vec::with_capacity(n_agents * n_agents.saturating_sub(1));
    for i in 0..n_agents {
        let others: Vec<usize> = (0..n_agents).filter(|&j| j != i).collect();
        let sv = share(RingElement::ZERO, others.len(), q, &mut sup.tax_rng).map_err(|source| {
            ProtocolError::Sharing {
                context: "tax sharing",
                source,
            }
        })?;
        let pk = sup.key(i)?.clone();
        for (&j, &t) in others.iter().zip(sv.shares()) {
            let ct = scheme.enc(&pk, t, &mut sup.enc_rng);
            out.push(Envelope {
                sender: PartyId::SUPERVISOR,
                receiver: PartyId::agent(j),
                relay: None,
                round: Round::Offline,
                kind: MessageKind::TaxShareCt,
                label: Label::pair(PartyId::agent(i), PartyId::agent(j)),
                payload: scheme.encode_ciphertext(&ct),
            });
        }
        sup.tax_share_plan.insert(i, sv);
    }
    Ok(out)
}

/// Runs the whole mechanism with `x_{i,0} = θ_i`; `broadcaster` is the
/// 0-based index of the agent whose terminal state becomes the decision.
pub fn run_mechanism<S: AheScheme>(
    dep: &Deployment<S>,
    theta: &[f64],
    n: u32,
    strategies: &[Strategy],
    broadcaster: usize,
) -> Result<MechanismRun, ProtocolError> {
    let n_agents = dep.n_agents();
    if broadcaster >= n_agents {
        return Err(ProtocolError::UnknownAgent(broadcaster));
    }
    let scheme = &dep.scheme;
    let q = dep.modulus();
    let dx = dep.setup.codec.delta_x();
    let mut session = Session::new(dep, theta, strategies)?;

    let taxes = offline_tax_shares(&mut session.supervisor, scheme, n_agents)?;
    session.deliver_offline(taxes)?;
    session.offline_consensus(n)?;
    session.online(n)?;

    let bounds = session.bounds()?;
    if let Some(v) = bounds.violations.first() {
        return Err(ProtocolError::BoundViolation(match v.neighbor {
            Some(j) => format!(
                "|w_bar[{}][{}] * x_bar[{}]({})| = {} is not below q/2",
                v.agent + 1,
                j + 1,
                j + 1,
                v.round,
                v.value.unsigned_abs()
            ),
            None => format!("|v_bar[{}]({})| = {} is not below q/2", v.agent + 1, v.round, v.value.unsigned_abs()),
        }));
    }

    // terminal broadcast of the decision
    let b_party = PartyId::agent(broadcaster);
    let x_b = session.agents[broadcaster].state;
    let x_bar = quantize(x_b, dx, q)
        .map_err(|_| ProtocolError::BoundViolation(format!("|x_bar[{}](n)| is not below q/2", broadcaster + 1)))?;
    let x_tilde = q.reduce(x_bar as i128);
    let mut terminal = Vec::new();
    let mut own_state_ct = None;
    {
        let b = &mut session.agents[broadcaster];
        for i in 0..n_agents {
            let ct = scheme.enc(&dep.keys[i].pk, x_tilde, b.rng());
            if i == broadcaster {
                own_state_ct = Some(ct);
                continue;
            }
            terminal.push(Envelope {
                sender: b_party,
                receiver: PartyId::agent(i),
                relay: Some(PartyId::SUPERVISOR),
                round: Round::Terminal,
                kind: MessageKind::StateCt,
                label: Label::pair(PartyId::agent(i), b_party),
                payload: scheme.encode_ciphertext(&ct),
            });
        }
    }

    // masked scaled costs
    let mut scaled_costs = Vec::with_capacity(n_agents);
    for a in &session.agents {
        let dev = a.state - a.initial_state;
        let v = quantize(dev * dev, dx, q).map_err(|_| {
            ProtocolError::BoundViolation(format!("scaled cost of agent {} is not below q/2", a.id + 1))
        })?;
        scaled_costs.push(v);
    }
    for i in 0..n_agents {
        let others: i128 = (0..n_agents).filter(|&j| j != i).map(|j| scaled_costs[j] as i128).sum();
        if !q.fits_centered(others) {
            return Err(ProtocolError::BoundViolation(format!(
                "sum over j != {} of scaled costs = {others} is not below q/2",
                i + 1
            )));
        }
    }
    for (i, &cost) in scaled_costs.iter().enumerate() {
        let a = &mut session.agents[i];
        let me = a.party();
        let v_tilde = q.reduce(cost as i128);
        for j in (0..n_agents).filter(|&j| j != i) {
            let t_ct = a.tax_share_cts.get(&j).cloned().ok_or(ProtocolError::MissingMessage {
                receiver: me,
                sender: PartyId::SUPERVISOR,
                round: Round::Offline,
                kind: MessageKind::TaxShareCt,
            })?;
            let fresh = scheme.enc(&dep.keys[j].pk, v_tilde, a.rng());
            let ct = scheme.add(&fresh, &t_ct).map_err(|source| ProtocolError::Crypto {
                party: me,
                round: Round::Terminal,
                source,
            })?;
            let payload = scheme.encode_ciphertext(&ct);
            for m in (0..n_agents).filter(|&m| m != i) {
                terminal.push(Envelope {
                    sender: me,
                    receiver: PartyId::agent(m),
                    relay: Some(PartyId::SUPERVISOR),
                    round: Round::Terminal,
                    kind: MessageKind::MaskedCostCt,
                    label: Label::pair(PartyId::agent(j), me),
                    payload: payload.clone(),
                });
            }
        }
    }

    // outputs
    let mut outcome = MechanismOutcome {
        decision: Vec::with_capacity(n_agents),
        transfer: Vec::with_capacity(n_agents),
        local_cost: Vec::with_capacity(n_agents),
        total_cost: Vec::with_capacity(n_agents),
    };
    #[allow(clippy::needless_range_loop)]
    for i in 0..n_agents {
        let me = PartyId::agent(i);
        let crypto = |source| ProtocolError::Crypto {
            party: me,
            round: Round::Terminal,
            source,
        };
        let inbox: Vec<&Envelope> = terminal.iter().filter(|e| e.receiver == me).collect();

        let state_ct = if i == broadcaster {
            own_state_ct.clone().expect("broadcaster keeps its own ciphertext")
        } else {
            let envs: Vec<&&Envelope> = inbox.iter().filter(|e| e.kind == MessageKind::StateCt).collect();
            match envs.as_slice() {
                [env] => decode_payload(scheme, env, me)?,
                [] => {
                    return Err(ProtocolError::MissingMessage {
                        receiver: me,
                        sender: b_party,
                        round: Round::Terminal,
                        kind: MessageKind::StateCt,
                    })
                }
                [_, dup, ..] => {
                    return Err(ProtocolError::DuplicateMessage {
                        receiver: me,
                        sender: dup.sender,
                        round: Round::Terminal,
                        kind: MessageKind::StateCt,
                    })
                }
            }
        };
        let d = decode_scaled(scheme.dec(&dep.keys[i].sk, &state_ct).map_err(crypto)?, dx, q);

        let mut masked: BTreeMap<usize, &Envelope> = BTreeMap::new();
        for env in inbox
            .iter()
            .filter(|e| e.kind == MessageKind::MaskedCostCt && e.label.i == me.0)
        {
            let j = env.sender.agent_index().unwrap_or(usize::MAX);
            if masked.insert(j, env).is_some() {
                return Err(ProtocolError::DuplicateMessage {
                    receiver: me,
                    sender: env.sender,
                    round: Round::Terminal,
                    kind: MessageKind::MaskedCostCt,
                });
            }
        }
        let mut sum = RingElement::ZERO;
        for j in (0..n_agents).filter(|&j| j != i) {
            let env = masked.get(&j).ok_or(ProtocolError::MissingMessage {
                receiver: me,
                sender: PartyId::agent(j),
                round: Round::Terminal,
                kind: MessageKind::MaskedCostCt,
            })?;
            let ct = decode_payload(scheme, env, me)?;
            sum = q.add(sum, scheme.dec(&dep.keys[i].sk, &ct).map_err(crypto)?);
        }
        let t = decode_scaled(sum, dx, q);
        let dev = session.agents[i].state - theta[i];
        let v = dev * dev;
        outcome.decision.push(d);
        outcome.transfer.push(t);
        outcome.local_cost.push(v);
        outcome.total_cost.push(v + t);
    }

    session.transcript.envelopes.extend(terminal);
    Ok(MechanismRun {
        outcome,
        consensus: session.into_consensus_run()?,
        scaled_costs,
    })
}

/// `u_i = v_i + t_i` for the 0-based agent `i`.
pub fn cost_of(outcome: &MechanismOutcome, i: usize) -> Result<f64, ProtocolError> {
    match (outcome.local_cost.get(i), outcome.transfer.get(i)) {
        (Some(v), Some(t)) => Ok(v + t),
        _ => Err(ProtocolError::UnknownAgent(i)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub verdict: Verdict,
    /// `(N − 1)⁻¹ Σ_i t'_i`, the value every agent is asked about.
    pub query: f64,
    pub answers: Vec<bool>,
    #[serde(skip)]
    pub transcript: Transcript,
}

/// Answers "is `query` my total cost?" for each agent, within `tau`.
pub fn outcome_oracle(outcome: &MechanismOutcome, tau: f64) -> impl Fn(usize, f64) -> bool + '_ {
    move |i, query| (query - outcome.total_cost[i]).abs() <= tau
}

/// The supervisor sums the reported payments, asks every agent whether the
/// sum over `N − 1` equals its own total cost, and accepts iff all agree.
/// It only ever sees the sum and the yes/no answers.
pub fn verify_taxes(payments: &[f64], oracle: impl Fn(usize, f64) -> bool) -> Verification {
    let n = payments.len();
    let total: f64 = payments.iter().sum();
    let query = if n > 1 { total / (n - 1) as f64 } else { total };
    let mut transcript = Transcript::default();
    let mut answers = Vec::with_capacity(n);
    for i in 0..n {
        let agent = PartyId::agent(i);
        transcript.push(Envelope {
            sender: PartyId::SUPERVISOR,
            receiver: agent,
            relay: None,
            round: Round::Terminal,
            kind: MessageKind::VerifyQuery,
            label: Label::pair(agent, PartyId::SUPERVISOR),
            payload: query.to_le_bytes().to_vec(),
        });
        let yes = oracle(i, query);
        transcript.push(Envelope {
            sender: agent,
            receiver: PartyId::SUPERVISOR,
            relay: None,
            round: Round::Terminal,
            kind: MessageKind::VerifyAnswer,
            label: Label::pair(PartyId::SUPERVISOR, agent),
            payload: vec![yes as u8],
        });
        answers.push(yes);
    }
    Verification {
        verdict: if answers.iter().all(|&a| a) {
            Verdict::Accept
        } else {
            Verdict::Reject
        },
        query,
        answers,
        transcript,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::honest_profile;
    use crate::ahe::ExactMask;
    use crate::consensus::ConsensusSetup;
    use crate::ring::{FixedPointCodec, Modulus, Rational};
    use crate::rng::RngFactory;
    use crate::topology::Digraph;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    const THETA: [f64; 5] = [3.0, 2.0, 1.0, 0.0, -1.0];

    fn deployment(g: Digraph, seed: u64) -> Deployment<ExactMask> {
        let setup = ConsensusSetup::new(g, r(1, 10), FixedPointCodec::new(r(1, 10), r(1, 100)).unwrap()).unwrap();
        Deployment::new(ExactMask::new(Modulus::desk_default()), setup, RngFactory::from_seed(seed))
    }

    fn five_agent(seed: u64) -> Deployment<ExactMask> {
        deployment(
            Digraph::from_integers(&[
                vec![0, 0, 0, 1, 1],
                vec![1, 0, 0, 1, 1],
                vec![0, 1, 0, 1, 0],
                vec![0, 1, 0, 0, 1],
                vec![0, 1, 1, 0, 0],
            ])
            .unwrap(),
            seed,
        )
    }

    fn complete(n: usize, seed: u64) -> Deployment<ExactMask> {
        let rows: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| i64::from(i != j)).collect()).collect();
        deployment(Digraph::from_integers(&rows).unwrap(), seed)
    }

    #[test]
    fn tax_share_plan() {
        let dep = five_agent(1);
        let mut sup = SupervisorRuntime::new(&dep.rngs);
        for i in 0..5 {
            sup.register(i, dep.keys[i].pk.clone());
        }
        let envs = offline_tax_shares(&mut sup, &dep.scheme, 5).unwrap();
        assert_eq!(envs.len(), 20);
        for sv in sup.tax_share_plan.values() {
            assert_eq!(sv.len(), 4);
            assert_eq!(crate::sharing::reconst(sv).unwrap(), RingElement::ZERO);
        }
        assert!(matches!(
            offline_tax_shares(&mut sup, &dep.scheme, 2),
            Err(ProtocolError::Sharing { source: crate::sharing::SharingError::BadCount(1), .. })
        ));
    }

    #[test]
    fn equal_types_cost_nothing() {
        let dep = complete(3, 2);
        let run = run_mechanism(&dep, &[1.5; 3], 10, &honest_profile(3), 0).unwrap();
        for i in 0..3 {
            assert!((run.outcome.decision[i] - 1.5).abs() < 1e-12);
            assert_eq!(run.outcome.local_cost[i], 0.0);
            assert_eq!(run.outcome.transfer[i], 0.0);
            assert_eq!(cost_of(&run.outcome, i).unwrap(), 0.0);
        }
        assert!(matches!(cost_of(&run.outcome, 3), Err(ProtocolError::UnknownAgent(3))));
    }

    #[test]
    fn transfers_match_clear_computation() {
        let dep = five_agent(3);
        let run = run_mechanism(&dep, &THETA, 30, &honest_profile(5), 0).unwrap();
        let x = run.consensus.final_states();
        let o = &run.outcome;
        for i in 0..5 {
            let clear: f64 = (0..5).filter(|&j| j != i).map(|j| (x[j] - THETA[j]).powi(2)).sum();
            assert!((o.transfer[i] - clear).abs() <= 4.0 * 0.01, "{} vs {clear}", o.transfer[i]);
            assert_eq!(o.total_cost[i], o.local_cost[i] + o.transfer[i]);
        }
        let dmax = o.decision.iter().cloned().fold(f64::MIN, f64::max);
        let dmin = o.decision.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(dmax - dmin, 0.0);
        assert!((o.decision[0] - x[0]).abs() <= 0.005);
    }

    #[test]
    fn message_counts_of_the_exchange() {
        let dep = five_agent(4);
        let run = run_mechanism(&dep, &THETA, 1, &honest_profile(5), 0).unwrap();
        let t = run.transcript();
        assert_eq!(t.count(MessageKind::TaxShareCt), 20);
        assert_eq!(t.count(MessageKind::StateCt), 4);
        assert_eq!(t.count(MessageKind::MaskedCostCt), 80);
        assert_eq!(t.received_by(PartyId::SUPERVISOR).count(), 0);
    }

    #[test]
    fn budget_identity_and_verification() {
        let dep = five_agent(5);
        let run = run_mechanism(&dep, &THETA, 30, &honest_profile(5), 0).unwrap();
        let o = &run.outcome;
        let total: f64 = o.transfer.iter().sum();
        for u in &o.total_cost {
            assert!((total - 4.0 * u).abs() <= 5.0 * 0.01);
        }
        let honest = verify_taxes(&o.transfer, outcome_oracle(o, DEFAULT_TAU));
        assert_eq!(honest.verdict, Verdict::Accept);
        assert_eq!(honest.transcript.count(MessageKind::VerifyQuery), 5);
        for i in 0..5 {
            let mut paid = o.transfer.clone();
            paid[i] -= 1.0;
            assert_eq!(verify_taxes(&paid, outcome_oracle(o, DEFAULT_TAU)).verdict, Verdict::Reject);
        }
    }

    #[test]
    fn equal_types_verify() {
        let dep = complete(4, 6);
        let run = run_mechanism(&dep, &[0.0; 4], 5, &honest_profile(4), 0).unwrap();
        let v = verify_taxes(&run.outcome.transfer, outcome_oracle(&run.outcome, DEFAULT_TAU));
        assert_eq!(v.query, 0.0);
        assert_eq!(v.verdict, Verdict::Accept);
    }

    #[test]
    fn two_agents_cannot_share_taxes() {
        let dep = complete(2, 7);
        assert!(matches!(
            run_mechanism(&dep, &[1.0, 2.0], 3, &honest_profile(2), 0),
            Err(ProtocolError::Sharing { context: "tax sharing", .. })
        ));
    }

    #[test]
    fn unknown_broadcaster() {
        let dep = five_agent(8);
        assert!(matches!(
            run_mechanism(&dep, &THETA, 1, &honest_profile(5), 5),
            Err(ProtocolError::UnknownAgent(5))
        ));
    }

    #[test]
    fn hold_state_has_zero_local_cost_and_pays_more() {
        let dep = five_agent(9);
        let honest = run_mechanism(&dep, &THETA, 30, &honest_profile(5), 0).unwrap();
        let mut strategies = honest_profile(5);
        strategies[1] = Strategy::HoldState;
        let dev = run_mechanism(&dep, &THETA, 30, &strategies, 0).unwrap();
        assert_eq!(dev.outcome.local_cost[1], 0.0);
        assert!(dev.outcome.total_cost[1] > honest.outcome.total_cost[1]);
        assert_eq!(dev.transcript().envelopes.len(), honest.transcript().envelopes.len());
    }

    #[test]
    fn large_states_hit_the_cost_bound() {
        let g = Digraph::from_integers(&[vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]).unwrap();
        let setup = ConsensusSetup::new(g, r(1, 10), FixedPointCodec::new(r(1, 10), r(1, 100)).unwrap()).unwrap();
        // x_bar stays below q/2 = 32768 but the scaled costs reach 8.1e5
        let q = Modulus::smallest_prime_above(1 << 16).unwrap();
        let dep = Deployment::new(ExactMask::new(q), setup, RngFactory::from_seed(1));
        match run_mechanism(&dep, &[300.0, -300.0, 0.0], 1, &honest_profile(3), 0) {
            Err(err) => assert!(err.is_bound_violation(), "{err}"),
            Ok(_) => panic!("expected a bound violation"),
        }
    }
}
