//! Envelopes, rounds and transcripts.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::ser::Serializer;
use serde::Serialize;

/// Party 0 is the supervisor; agent `i` (0-based) is party `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct PartyId(pub u32);

impl PartyId {
    pub const SUPERVISOR: PartyId = PartyId(0);

    pub fn agent(index: usize) -> Self {
        PartyId(index as u32 + 1)
    }

    pub fn agent_index(self) -> Option<usize> {
        (self.0 > 0).then(|| self.0 as usize - 1)
    }

    pub fn is_supervisor(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_supervisor() {
            write!(f, "supervisor")
        } else {
            write!(f, "agent {}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Round {
    Offline,
    Online(u32),
    /// The exchange after the last consensus round.
    Terminal,
}

impl Serialize for Round {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Round::Offline => s.serialize_str("offline"),
            Round::Online(k) => s.serialize_u32(*k),
            Round::Terminal => s.serialize_str("terminal"),
        }
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Round::Offline => write!(f, "offline"),
            Round::Online(k) => write!(f, "round {k}"),
            Round::Terminal => write!(f, "terminal"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MessageKind {
    ShareCt,
    WeightCt,
    ValueCt,
    StateCt,
    TaxShareCt,
    MaskedCostCt,
    VerifyQuery,
    VerifyAnswer,
}

/// Which ciphertext an envelope carries, named by the two indices of its
/// symbol (`ct_{w,ij}` has `i`, `j`) and, for offline mask shares, the round
/// it is meant for. Indices are party ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Label {
    pub i: u32,
    pub j: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
}

impl Label {
    pub fn pair(i: PartyId, j: PartyId) -> Self {
        Self { i: i.0, j: j.0, k: None }
    }

    pub fn for_round(i: PartyId, j: PartyId, k: u32) -> Self {
        Self { i: i.0, j: j.0, k: Some(k) }
    }
}

fn hex_payload<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Envelope {
    pub sender: PartyId,
    pub receiver: PartyId,
    /// Set when the message travels through another party that only forwards it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relay: Option<PartyId>,
    pub round: Round,
    pub kind: MessageKind,
    pub label: Label,
    #[serde(serialize_with = "hex_payload")]
    pub payload: Vec<u8>,
}

/// What a party brought into the run: its private input and the seeds of
/// its randomness streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartyInfo {
    pub party: PartyId,
    pub input: Option<f64>,
    pub seeds: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Transcript {
    pub parties: Vec<PartyInfo>,
    pub envelopes: Vec<Envelope>,
}

impl Transcript {
    pub fn push(&mut self, env: Envelope) {
        self.envelopes.push(env);
    }

    pub fn received_by(&self, party: PartyId) -> impl Iterator<Item = &Envelope> + '_ {
        self.envelopes.iter().filter(move |e| e.receiver == party)
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.envelopes.iter().filter(|e| e.kind == kind).count()
    }

    pub fn party(&self, party: PartyId) -> Option<&PartyInfo> {
        self.parties.iter().find(|p| p.party == party)
    }

    /// One JSON object per envelope, newline-terminated.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for env in &self.envelopes {
            serde_json::to_writer(&mut out, env)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn party_ids() {
        assert!(PartyId::SUPERVISOR.is_supervisor());
        assert_eq!(PartyId::agent(0), PartyId(1));
        assert_eq!(PartyId(3).agent_index(), Some(2));
        assert_eq!(PartyId::SUPERVISOR.agent_index(), None);
    }

    #[test]
    fn envelope_json_line() {
        let mut t = Transcript::default();
        t.push(Envelope {
            sender: PartyId(2),
            receiver: PartyId(1),
            relay: None,
            round: Round::Online(4),
            kind: MessageKind::ValueCt,
            label: Label::pair(PartyId(1), PartyId(2)),
            payload: vec![0xde, 0xad],
        });
        t.push(Envelope {
            sender: PartyId(0),
            receiver: PartyId(3),
            relay: None,
            round: Round::Offline,
            kind: MessageKind::ShareCt,
            label: Label::for_round(PartyId(1), PartyId(3), 0),
            payload: vec![],
        });
        let text = t.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"sender":2,"receiver":1,"round":4,"kind":"ValueCt","label":{"i":1,"j":2},"payload":"dead"}"#
        );
        assert!(lines[1].contains(r#""round":"offline""#));
        assert!(lines[1].contains(r#""k":0"#));
        assert_eq!(t.received_by(PartyId(1)).count(), 1);
        assert_eq!(t.count(MessageKind::ShareCt), 1);
    }
}
