use thiserror::Error;

use crate::ahe::AheError;
use crate::ring::RingError;
use crate::sharing::SharingError;
use crate::topology::TopologyError;
use crate::transport::{MessageKind, PartyId, Round};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("{party} at {round}: {source}")]
    Crypto {
        party: PartyId,
        round: Round,
        #[source]
        source: AheError,
    },
    #[error("{party} at {round}: {source}")]
    Encoding {
        party: PartyId,
        round: Round,
        #[source]
        source: RingError,
    },
    #[error("{context}: {source}")]
    Sharing {
        context: &'static str,
        #[source]
        source: SharingError,
    },
    #[error("{receiver} at {round}: missing {kind:?} from {sender}")]
    MissingMessage {
        receiver: PartyId,
        sender: PartyId,
        round: Round,
        kind: MessageKind,
    },
    #[error("{receiver} at {round}: duplicate {kind:?} from {sender}")]
    DuplicateMessage {
        receiver: PartyId,
        sender: PartyId,
        round: Round,
        kind: MessageKind,
    },
    #[error("{receiver} at {round}: unexpected {kind:?} from {sender}")]
    UnexpectedMessage {
        receiver: PartyId,
        sender: PartyId,
        round: Round,
        kind: MessageKind,
    },
    #[error("backend setup: {0}")]
    Backend(#[source] AheError),
    #[error("no public key registered for {0}")]
    MissingKey(PartyId),
    #[error("bound violated: {0}")]
    BoundViolation(String),
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("expected {expected} {what}, got {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

impl ProtocolError {
    /// Magnitude problems: a value did not fit the centered range of `Z_q`.
    pub fn is_bound_violation(&self) -> bool {
        match self {
            ProtocolError::BoundViolation(_) => true,
            ProtocolError::Encoding { source, .. } => matches!(source, RingError::Overflow { .. }),
            ProtocolError::Crypto { source, .. } => matches!(source, AheError::ScalarOutOfRange { .. }),
            _ => false,
        }
    }
}
