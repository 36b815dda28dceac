//! Deterministic randomness streams.
//!
//! Every consumer of randomness draws from its own ChaCha20 stream keyed by a
//! purpose label and a party id. Key generation streams ignore the run index,
//! so repeated runs of the same seed share keys while drawing fresh shares and
//! encryption coins. Share streams are separate from encryption streams, which
//! makes the shared values independent of the encryption backend.

use rand::rngs::OsRng;
use rand::TryRngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub const KEYGEN: &str = "keygen";
pub const ZERO_SHARES: &str = "zero-shares";
pub const TAX_SHARES: &str = "tax-shares";
pub const ENCRYPT: &str = "encrypt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngFactory {
    master: [u8; 32],
    run: u64,
}

impl RngFactory {
    pub fn from_seed(seed: u64) -> Self {
        let mut master = [0u8; 32];
        master[..8].copy_from_slice(&seed.to_le_bytes());
        Self { master, run: 0 }
    }

    pub fn from_entropy() -> Self {
        let mut master = [0u8; 32];
        OsRng.try_fill_bytes(&mut master).expect("operating system randomness");
        Self { master, run: 0 }
    }

    /// Same keys, fresh per-run randomness.
    pub fn with_run(&self, run: u64) -> Self {
        Self {
            master: self.master,
            run,
        }
    }

    pub fn run(&self) -> u64 {
        self.run
    }

    pub fn seed_for(&self, purpose: &str, party: u32) -> [u8; 32] {
        let run = if purpose == KEYGEN { 0 } else { self.run };
        let mut h = Sha256::new();
        h.update(b"encon/rng/v1");
        h.update(self.master);
        h.update(run.to_le_bytes());
        h.update((purpose.len() as u32).to_le_bytes());
        h.update(purpose.as_bytes());
        h.update(party.to_le_bytes());
        h.finalize().into()
    }

    pub fn stream(&self, purpose: &str, party: u32) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.seed_for(purpose, party))
    }
}
