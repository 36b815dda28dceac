//! Keyed linear masking over `Z_q` with zero noise.
//!
//! A ciphertext of `m` is `(r, m + k·r)` for a fresh uniform `r` and the
//! agent key `k`. The public and secret material are the same value, so this
//! backend hides nothing from anyone holding a "public" key. It exists to run
//! protocol logic quickly and bit-exactly; use [`super::Lattice`] for
//! anything resembling a real deployment.

use rand::CryptoRng;

use super::{AheError, AheScheme};
use crate::ring::{Modulus, RingElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactMask {
    q: Modulus,
}

impl ExactMask {
    pub fn new(q: Modulus) -> Self {
        Self { q }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskBody {
    pub nonce: RingElement,
    pub masked: RingElement,
}

impl AheScheme for ExactMask {
    type PublicMaterial = RingElement;
    type SecretMaterial = RingElement;
    type Body = MaskBody;

    fn name(&self) -> &'static str {
        "exact-mask"
    }

    fn modulus(&self) -> Modulus {
        self.q
    }

    fn fresh_noise(&self) -> u128 {
        0
    }

    fn noise_threshold(&self) -> u128 {
        u128::MAX
    }

    fn generate<R: CryptoRng + ?Sized>(&self, rng: &mut R) -> (RingElement, RingElement) {
        let k = loop {
            let k = self.q.random(rng);
            if k != RingElement::ZERO {
                break k;
            }
        };
        (k, k)
    }

    fn encrypt_body<R: CryptoRng + ?Sized>(
        &self,
        pk: &RingElement,
        m: RingElement,
        rng: &mut R,
    ) -> MaskBody {
        let nonce = self.q.random(rng);
        MaskBody {
            nonce,
            masked: self.q.add(m, self.q.mul(*pk, nonce)),
        }
    }

    fn decrypt_body(&self, sk: &RingElement, body: &MaskBody) -> (RingElement, u128) {
        let m = self.q.sub(body.masked, self.q.mul(*sk, body.nonce));
        (m, 0)
    }

    fn add_bodies(&self, a: &MaskBody, b: &MaskBody) -> MaskBody {
        MaskBody {
            nonce: self.q.add(a.nonce, b.nonce),
            masked: self.q.add(a.masked, b.masked),
        }
    }

    fn scale_body(&self, a: &MaskBody, s: i64) -> MaskBody {
        let s = self.q.reduce(s as i128);
        MaskBody {
            nonce: self.q.mul(a.nonce, s),
            masked: self.q.mul(a.masked, s),
        }
    }

    fn public_words(&self, pk: &RingElement) -> Vec<u128> {
        vec![pk.value() as u128]
    }

    fn body_words(&self, body: &MaskBody) -> Vec<u128> {
        vec![body.nonce.value() as u128, body.masked.value() as u128]
    }

    fn body_from_words(&self, words: &[u128]) -> Result<MaskBody, AheError> {
        let element = |w: u128| {
            if w < self.q.value() as u128 {
                Ok(self.q.element(w as u64))
            } else {
                Err(AheError::Malformed(format!("word {w} not below q")))
            }
        };
        match words {
            [nonce, masked] => Ok(MaskBody {
                nonce: element(*nonce)?,
                masked: element(*masked)?,
            }),
            _ => Err(AheError::Malformed(format!(
                "exact-mask body needs 2 words, got {}",
                words.len()
            ))),
        }
    }
}
