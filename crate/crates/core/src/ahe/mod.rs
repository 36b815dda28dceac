//! Additively homomorphic encryption over `Z_q`.
//!
//! Every backend implements [`AheScheme`], which supplies the raw algebra
//! (`*_body` methods). The provided methods wrap that algebra with key
//! bookkeeping and a worst-case noise ledger: each [`Ciphertext`] carries an
//! upper bound on the magnitude of its decryption integer, fresh ciphertexts
//! start at [`AheScheme::fresh_noise`], `add` sums bounds and `scalar_mul`
//! scales them by `|s|`. Decryption refuses to run once the bound reaches
//! [`AheScheme::noise_threshold`].

use std::fmt;

use rand::CryptoRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ring::{Modulus, RingElement};

pub mod exact_mask;
pub mod lattice;

pub use exact_mask::ExactMask;
pub use lattice::{AhParams, Lattice};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AheError {
    #[error("noise bound {bound} reached decryption threshold {threshold}")]
    NoiseBudgetExceeded { bound: u128, threshold: u128 },
    #[error("ciphertext under key {found} used with key {expected}")]
    KeyMismatch { expected: KeyId, found: KeyId },
    #[error("scalar {scalar} outside the centered range |s| < q/2")]
    ScalarOutOfRange { scalar: i64 },
    #[error("malformed encoding: {0}")]
    Malformed(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Stable identifier of a public key: the first eight bytes of
/// `SHA-256(scheme name || serialized key)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyId(pub u64);

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublicKey<S: AheScheme> {
    pub id: KeyId,
    pub material: S::PublicMaterial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey<S: AheScheme> {
    pub id: KeyId,
    pub material: S::SecretMaterial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyPair<S: AheScheme> {
    pub pk: PublicKey<S>,
    pub sk: SecretKey<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ciphertext<S: AheScheme> {
    pub body: S::Body,
    /// Worst-case magnitude of the decryption integer.
    pub noise_bound: u128,
    pub key: KeyId,
}

pub trait AheScheme: Clone + fmt::Debug + PartialEq + Send + Sync + 'static {
    type PublicMaterial: Clone + fmt::Debug + PartialEq + Send + Sync;
    type SecretMaterial: Clone + fmt::Debug + PartialEq + Send + Sync;
    type Body: Clone + fmt::Debug + PartialEq + Send + Sync;

    fn name(&self) -> &'static str;
    fn modulus(&self) -> Modulus;
    fn fresh_noise(&self) -> u128;
    /// Decryption is exact while the noise bound is strictly below this.
    fn noise_threshold(&self) -> u128;

    fn generate<R: CryptoRng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> (Self::PublicMaterial, Self::SecretMaterial);
    fn encrypt_body<R: CryptoRng + ?Sized>(
        &self,
        pk: &Self::PublicMaterial,
        m: RingElement,
        rng: &mut R,
    ) -> Self::Body;
    /// Returns the plaintext and the actual magnitude of the decryption integer.
    fn decrypt_body(&self, sk: &Self::SecretMaterial, body: &Self::Body) -> (RingElement, u128);
    fn add_bodies(&self, a: &Self::Body, b: &Self::Body) -> Self::Body;
    fn scale_body(&self, a: &Self::Body, s: i64) -> Self::Body;

    fn public_words(&self, pk: &Self::PublicMaterial) -> Vec<u128>;
    fn body_words(&self, body: &Self::Body) -> Vec<u128>;
    fn body_from_words(&self, words: &[u128]) -> Result<Self::Body, AheError>;

    fn keygen<R: CryptoRng + ?Sized>(&self, rng: &mut R) -> KeyPair<Self> {
        let (pk, sk) = self.generate(rng);
        let mut bytes = self.name().as_bytes().to_vec();
        write_words(&mut bytes, &self.public_words(&pk));
        let digest = Sha256::digest(&bytes);
        let id = KeyId(u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes")));
        KeyPair {
            pk: PublicKey { id, material: pk },
            sk: SecretKey { id, material: sk },
        }
    }

    fn enc<R: CryptoRng + ?Sized>(
        &self,
        pk: &PublicKey<Self>,
        m: RingElement,
        rng: &mut R,
    ) -> Ciphertext<Self> {
        Ciphertext {
            body: self.encrypt_body(&pk.material, m, rng),
            noise_bound: self.fresh_noise(),
            key: pk.id,
        }
    }

    fn dec(&self, sk: &SecretKey<Self>, ct: &Ciphertext<Self>) -> Result<RingElement, AheError> {
        self.check_decryptable(sk, ct)?;
        Ok(self.decrypt_body(&sk.material, &ct.body).0)
    }

    /// Actual magnitude of the decryption integer, for ledger audits.
    fn measured_noise(&self, sk: &SecretKey<Self>, ct: &Ciphertext<Self>) -> Result<u128, AheError> {
        self.check_decryptable(sk, ct)?;
        Ok(self.decrypt_body(&sk.material, &ct.body).1)
    }

    fn check_decryptable(&self, sk: &SecretKey<Self>, ct: &Ciphertext<Self>) -> Result<(), AheError> {
        if sk.id != ct.key {
            return Err(AheError::KeyMismatch {
                expected: sk.id,
                found: ct.key,
            });
        }
        if ct.noise_bound >= self.noise_threshold() {
            return Err(AheError::NoiseBudgetExceeded {
                bound: ct.noise_bound,
                threshold: self.noise_threshold(),
            });
        }
        Ok(())
    }

    /// Homomorphic addition `a ⊕ b`.
    fn add(&self, a: &Ciphertext<Self>, b: &Ciphertext<Self>) -> Result<Ciphertext<Self>, AheError> {
        if a.key != b.key {
            return Err(AheError::KeyMismatch {
                expected: a.key,
                found: b.key,
            });
        }
        Ok(Ciphertext {
            body: self.add_bodies(&a.body, &b.body),
            noise_bound: a.noise_bound.saturating_add(b.noise_bound),
            key: a.key,
        })
    }

    /// Plaintext-scalar multiplication `ct ⊙ s` with a centered scalar.
    fn scalar_mul(&self, ct: &Ciphertext<Self>, s: i64) -> Result<Ciphertext<Self>, AheError> {
        if !self.modulus().fits_centered(s as i128) {
            return Err(AheError::ScalarOutOfRange { scalar: s });
        }
        Ok(Ciphertext {
            body: self.scale_body(&ct.body, s),
            noise_bound: ct.noise_bound.saturating_mul(s.unsigned_abs() as u128),
            key: ct.key,
        })
    }

    /// `key id (u64) | noise bound (u128) | word count (u32) | words (u128)`,
    /// all little-endian.
    fn encode_ciphertext(&self, ct: &Ciphertext<Self>) -> Vec<u8> {
        let words = self.body_words(&ct.body);
        let mut out = Vec::with_capacity(28 + 16 * words.len());
        out.extend_from_slice(&ct.key.0.to_le_bytes());
        out.extend_from_slice(&ct.noise_bound.to_le_bytes());
        write_words(&mut out, &words);
        out
    }

    fn decode_ciphertext(&self, bytes: &[u8]) -> Result<Ciphertext<Self>, AheError> {
        if bytes.len() < 24 {
            return Err(AheError::Malformed("ciphertext header truncated".into()));
        }
        let key = KeyId(u64::from_le_bytes(bytes[..8].try_into().unwrap()));
        let noise_bound = u128::from_le_bytes(bytes[8..24].try_into().unwrap());
        let (words, rest) = read_words(&bytes[24..])?;
        if !rest.is_empty() {
            return Err(AheError::Malformed("trailing bytes after ciphertext".into()));
        }
        Ok(Ciphertext {
            body: self.body_from_words(&words)?,
            noise_bound,
            key,
        })
    }

    fn encode_public_key(&self, pk: &PublicKey<Self>) -> Vec<u8> {
        let mut out = pk.id.0.to_le_bytes().to_vec();
        write_words(&mut out, &self.public_words(&pk.material));
        out
    }
}

/// Appends `u32 length` followed by each word as 16 little-endian bytes.
pub fn write_words(out: &mut Vec<u8>, words: &[u128]) {
    out.extend_from_slice(&(words.len() as u32).to_le_bytes());
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

pub fn read_words(bytes: &[u8]) -> Result<(Vec<u128>, &[u8]), AheError> {
    if bytes.len() < 4 {
        return Err(AheError::Malformed("missing length prefix".into()));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = &bytes[4..];
    let need = len
        .checked_mul(16)
        .ok_or_else(|| AheError::Malformed("length overflow".into()))?;
    if body.len() < need {
        return Err(AheError::Malformed(format!(
            "expected {len} words, found {} bytes",
            body.len()
        )));
    }
    let words = body[..need]
        .chunks_exact(16)
        .map(|c| u128::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((words, &body[need..]))
}
