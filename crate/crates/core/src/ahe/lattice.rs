//! Public-key LWE encryption with the message in the low-order slot.
//!
//! Ciphertext arithmetic lives in `Z_{2^128}` (wrapping `u128`). A secret key
//! is a ternary vector `s`; the public key is the seed of a uniform matrix `A`
//! together with `b = A·s + q·e` for bounded Gaussian errors `e`. Encryption
//! picks a sparse signed subset `r` of the public rows and outputs
//! `(rᵀA, rᵀb + m + q·e')`. Decryption computes `b − ⟨a, s⟩`, reads it as a
//! signed integer `m + q·(rᵀe + e')` and reduces it modulo `q`. The result is
//! exact as long as that integer stays below `2^127` in magnitude, which is
//! what the noise ledger tracks.

use rand::seq::index;
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::{AheError, AheScheme};
use crate::ring::{Modulus, RingElement};

/// Lattice parameters. The `security_level_bits` field is an informative
/// label; it has not been derived with a lattice estimator here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AhParams {
    pub dimension: usize,
    /// Number of public-key rows.
    pub samples: usize,
    /// Nonzero entries of the encryption randomizer.
    pub hamming_weight: usize,
    pub noise_stddev: f64,
    /// Errors are rejected outside `tail_cut · noise_stddev`.
    pub tail_cut: f64,
    pub security_level_bits: u32,
}

impl AhParams {
    /// Tiny preset for unit tests. Not secure.
    pub fn test() -> Self {
        Self {
            dimension: 16,
            samples: 64,
            hamming_weight: 8,
            noise_stddev: 3.2,
            tail_cut: 6.0,
            security_level_bits: 0,
        }
    }

    /// Preset labelled 128-bit.
    pub fn standard() -> Self {
        Self {
            dimension: 1024,
            samples: 2048,
            hamming_weight: 64,
            noise_stddev: 3.2,
            tail_cut: 6.0,
            security_level_bits: 128,
        }
    }

    pub fn tail_bound(&self) -> u64 {
        (self.tail_cut * self.noise_stddev).ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    params: AhParams,
    q: Modulus,
    fresh_noise: u128,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LwePublicKey {
    pub seed: [u8; 32],
    pub b: Vec<u128>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LweSecretKey {
    pub s: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LweBody {
    pub a: Vec<u128>,
    pub b: u128,
}

const THRESHOLD: u128 = 1 << 127;

impl Lattice {
    pub fn new(params: AhParams, q: Modulus) -> Result<Self, AheError> {
        if params.dimension < 16 {
            return Err(AheError::InvalidParams(format!(
                "dimension {} below 16",
                params.dimension
            )));
        }
        if params.hamming_weight == 0 || params.hamming_weight > params.samples {
            return Err(AheError::InvalidParams(format!(
                "hamming weight {} must be in 1..={}",
                params.hamming_weight, params.samples
            )));
        }
        if !(params.noise_stddev > 0.0 && params.tail_cut > 0.0) {
            return Err(AheError::InvalidParams("noise parameters must be positive".into()));
        }
        // |m + q(rᵀe + e')| <= (q - 1) + q·T·(h + 1)
        let tail = params.tail_bound() as u128;
        let qv = q.value() as u128;
        let fresh_noise = tail
            .checked_mul(params.hamming_weight as u128 + 1)
            .and_then(|t| t.checked_mul(qv))
            .and_then(|t| t.checked_add(qv - 1))
            .filter(|&n| n < THRESHOLD)
            .ok_or_else(|| AheError::InvalidParams("fresh noise exceeds threshold".into()))?;
        Ok(Self {
            params,
            q,
            fresh_noise,
        })
    }

    pub fn params(&self) -> &AhParams {
        &self.params
    }

    fn matrix_row(&self, seed: &[u8; 32], row: usize) -> Vec<u128> {
        let mut rng = ChaCha20Rng::from_seed(*seed);
        rng.set_stream(row as u64);
        (0..self.params.dimension)
            .map(|_| ((rng.next_u64() as u128) << 64) | rng.next_u64() as u128)
            .collect()
    }

    fn bounded_error<R: RngCore + ?Sized>(&self, rng: &mut R) -> i64 {
        let normal = Normal::new(0.0, self.params.noise_stddev).expect("positive stddev");
        let tail = self.params.tail_bound() as i64;
        loop {
            let e = normal.sample(rng).round() as i64;
            if e.abs() <= tail {
                return e;
            }
        }
    }

    /// `q·e` as an element of `Z_{2^128}`.
    fn lift_error(&self, e: i64) -> u128 {
        (self.q.value() as i128 * e as i128) as u128
    }
}

fn inner(a: &[u128], s: &[i8]) -> u128 {
    a.iter().zip(s).fold(0u128, |acc, (&ai, &si)| match si {
        1 => acc.wrapping_add(ai),
        -1 => acc.wrapping_sub(ai),
        _ => acc,
    })
}

impl AheScheme for Lattice {
    type PublicMaterial = LwePublicKey;
    type SecretMaterial = LweSecretKey;
    type Body = LweBody;

    fn name(&self) -> &'static str {
        "lattice"
    }

    fn modulus(&self) -> Modulus {
        self.q
    }

    fn fresh_noise(&self) -> u128 {
        self.fresh_noise
    }

    fn noise_threshold(&self) -> u128 {
        THRESHOLD
    }

    fn generate<R: CryptoRng + ?Sized>(&self, rng: &mut R) -> (LwePublicKey, LweSecretKey) {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let s: Vec<i8> = (0..self.params.dimension)
            .map(|_| rng.random_range(-1i8..=1))
            .collect();
        let b = (0..self.params.samples)
            .map(|row| {
                let e = self.bounded_error(rng);
                inner(&self.matrix_row(&seed, row), &s).wrapping_add(self.lift_error(e))
            })
            .collect();
        (LwePublicKey { seed, b }, LweSecretKey { s })
    }

    fn encrypt_body<R: CryptoRng + ?Sized>(
        &self,
        pk: &LwePublicKey,
        m: RingElement,
        rng: &mut R,
    ) -> LweBody {
        let mut a = vec![0u128; self.params.dimension];
        let mut b = 0u128;
        for row in index::sample(rng, self.params.samples, self.params.hamming_weight) {
            let negate = rng.random::<bool>();
            let ar = self.matrix_row(&pk.seed, row);
            if negate {
                a.iter_mut().zip(&ar).for_each(|(x, y)| *x = x.wrapping_sub(*y));
                b = b.wrapping_sub(pk.b[row]);
            } else {
                a.iter_mut().zip(&ar).for_each(|(x, y)| *x = x.wrapping_add(*y));
                b = b.wrapping_add(pk.b[row]);
            }
        }
        let e = self.bounded_error(rng);
        b = b
            .wrapping_add(m.value() as u128)
            .wrapping_add(self.lift_error(e));
        LweBody { a, b }
    }

    fn decrypt_body(&self, sk: &LweSecretKey, body: &LweBody) -> (RingElement, u128) {
        let raw = body.b.wrapping_sub(inner(&body.a, &sk.s)) as i128;
        (self.q.reduce(raw), raw.unsigned_abs())
    }

    fn add_bodies(&self, x: &LweBody, y: &LweBody) -> LweBody {
        LweBody {
            a: x.a.iter().zip(&y.a).map(|(p, r)| p.wrapping_add(*r)).collect(),
            b: x.b.wrapping_add(y.b),
        }
    }

    fn scale_body(&self, x: &LweBody, s: i64) -> LweBody {
        let s = s as i128 as u128;
        LweBody {
            a: x.a.iter().map(|p| p.wrapping_mul(s)).collect(),
            b: x.b.wrapping_mul(s),
        }
    }

    fn public_words(&self, pk: &LwePublicKey) -> Vec<u128> {
        let mut words = vec![
            u128::from_le_bytes(pk.seed[..16].try_into().unwrap()),
            u128::from_le_bytes(pk.seed[16..].try_into().unwrap()),
        ];
        words.extend_from_slice(&pk.b);
        words
    }

    fn body_words(&self, body: &LweBody) -> Vec<u128> {
        let mut words = body.a.clone();
        words.push(body.b);
        words
    }

    fn body_from_words(&self, words: &[u128]) -> Result<LweBody, AheError> {
        if words.len() != self.params.dimension + 1 {
            return Err(AheError::Malformed(format!(
                "lattice body needs {} words, got {}",
                self.params.dimension + 1,
                words.len()
            )));
        }
        let (b, a) = words.split_last().expect("non-empty");
        Ok(LweBody { a: a.to_vec(), b: *b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scheme() -> Lattice {
        Lattice::new(AhParams::test(), Modulus::desk_default()).unwrap()
    }

    #[test]
    fn fresh_noise_formula() {
        let s = scheme();
        let q = s.modulus().value() as u128;
        assert_eq!(s.fresh_noise(), (q - 1) + q * 20 * 9);
    }

    #[test]
    fn rejects_degenerate_params() {
        let q = Modulus::desk_default();
        let mut p = AhParams::test();
        p.dimension = 8;
        assert!(Lattice::new(p, q).is_err());
        let mut p = AhParams::test();
        p.hamming_weight = p.samples + 1;
        assert!(Lattice::new(p, q).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ledger_dominates_measured_noise(
            seed in any::<u64>(),
            m1 in any::<u64>(),
            m2 in any::<u64>(),
            s in -(1i64 << 30)..(1i64 << 30),
        ) {
            let scheme = scheme();
            let q = scheme.modulus();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let keys = scheme.keygen(&mut rng);
            let a = scheme.enc(&keys.pk, q.element(m1), &mut rng);
            let b = scheme.enc(&keys.pk, q.element(m2), &mut rng);
            let combined = scheme.add(&scheme.scalar_mul(&a, s).unwrap(), &b).unwrap();
            for ct in [&a, &b, &combined] {
                prop_assert!(scheme.measured_noise(&keys.sk, ct).unwrap() <= ct.noise_bound);
            }
            let expect = q.add(q.mul(q.element(m1), q.reduce(s as i128)), q.element(m2));
            prop_assert_eq!(scheme.dec(&keys.sk, &combined).unwrap(), expect);
        }
    }
}
