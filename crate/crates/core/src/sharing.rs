//! Additive secret sharing over `Z_q`.

use rand::RngCore;
use thiserror::Error;

use crate::ring::{Modulus, RingElement};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SharingError {
    #[error("additive sharing needs at least 2 shares, got {0}")]
    BadCount(usize),
}

/// Additive shares of one message; they sum to it modulo `q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareVector {
    shares: Vec<RingElement>,
    q: Modulus,
}

impl ShareVector {
    pub fn from_shares(shares: Vec<RingElement>, q: Modulus) -> Result<Self, SharingError> {
        if shares.len() < 2 {
            return Err(SharingError::BadCount(shares.len()));
        }
        Ok(Self { shares, q })
    }

    pub fn shares(&self) -> &[RingElement] {
        &self.shares
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn modulus(&self) -> Modulus {
        self.q
    }
}

/// `Share(m, n)`: `n - 1` uniform shares and a last share closing the sum.
pub fn share<R: RngCore + ?Sized>(
    m: RingElement,
    n: usize,
    q: Modulus,
    rng: &mut R,
) -> Result<ShareVector, SharingError> {
    if n < 2 {
        return Err(SharingError::BadCount(n));
    }
    let mut shares: Vec<RingElement> = (0..n - 1).map(|_| q.random(rng)).collect();
    let partial = shares.iter().fold(RingElement::ZERO, |acc, &s| q.add(acc, s));
    shares.push(q.sub(m, partial));
    Ok(ShareVector { shares, q })
}

/// `Reconst(s_1, ..., s_n) = Σ s_i mod q`.
pub fn reconst(sv: &ShareVector) -> Result<RingElement, SharingError> {
    reconst_slice(sv.shares(), sv.modulus())
}

pub fn reconst_slice(shares: &[RingElement], q: Modulus) -> Result<RingElement, SharingError> {
    if shares.len() < 2 {
        return Err(SharingError::BadCount(shares.len()));
    }
    Ok(shares.iter().fold(RingElement::ZERO, |acc, &s| q.add(acc, s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi_square_uniform, UNIFORMITY_P_THRESHOLD};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn q() -> Modulus {
        Modulus::desk_default()
    }

    #[test]
    fn zero_sharing_reconstructs_to_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let sv = share(RingElement::ZERO, 3, q(), &mut rng).unwrap();
        assert_eq!(sv.len(), 3);
        assert_eq!(reconst(&sv).unwrap(), RingElement::ZERO);
    }

    #[test]
    fn last_share_is_forced() {
        let q = q();
        let shares = vec![q.element(5), q.element(7), q.element(q.value() - 12)];
        let sv = ShareVector::from_shares(shares, q).unwrap();
        assert_eq!(reconst(&sv).unwrap(), RingElement::ZERO);
        assert_eq!(reconst_slice(&[q.element(0), q.element(0)], q).unwrap(), RingElement::ZERO);
        assert_eq!(
            reconst_slice(&[q.element(q.value() - 1), q.element(1)], q).unwrap(),
            RingElement::ZERO
        );
    }

    #[test]
    fn bad_counts() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(share(RingElement::ZERO, 1, q(), &mut rng), Err(SharingError::BadCount(1)));
        assert_eq!(share(RingElement::ZERO, 0, q(), &mut rng), Err(SharingError::BadCount(0)));
        assert_eq!(
            reconst_slice(&[RingElement::ZERO], q()),
            Err(SharingError::BadCount(1))
        );
    }

    #[test]
    fn correctness_on_random_inputs() {
        let q = q();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = q.random(&mut rng);
            let n = rng.random_range(2..=8);
            let sv = share(m, n, q, &mut rng).unwrap();
            assert_eq!(sv.len(), n);
            assert_eq!(reconst(&sv).unwrap(), m);
        }
    }

    fn hiding_p_value(seed: u64) -> f64 {
        let q = q();
        let m = q.element(123_456_789);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for _ in 0..64 * 100 {
            let sv = share(m, 4, q, &mut rng).unwrap();
            // any n - 1 of them: drop the first
            samples.extend(sv.shares()[1..].iter().map(|s| s.value()));
        }
        chi_square_uniform(&samples, q.value(), 64).p_value
    }

    #[test]
    fn any_n_minus_one_shares_look_uniform() {
        let mut p = hiding_p_value(11);
        if p <= UNIFORMITY_P_THRESHOLD {
            p = hiding_p_value(12);
        }
        assert!(p > UNIFORMITY_P_THRESHOLD, "p = {p}");
    }
}
