//! Arithmetic in `Z_q`, fixed-point encoding of reals and the centered
//! (minimal-residue) decoding map shared by both protocols.
//!
//! Reals are encoded as `round(x / resolution) mod q` with rounding half away
//! from zero. Rational quantities (weights and resolutions) are carried as
//! exact `i64` ratios so that weight encodings can be checked for integrality.

use std::fmt;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact rational number used for weights, step sizes and resolutions.
pub type Rational = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RingError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} is below the 2^16 floor")]
    ModulusTooSmall(u64),
    #[error("modulus {0} exceeds 2^62")]
    ModulusTooLarge(u64),
    #[error("encoded magnitude {value} does not fit below q/2 = {half_q}")]
    Overflow { value: f64, half_q: u64 },
    #[error("weight {weight} is not an integer multiple of resolution {resolution}")]
    NonIntegerWeight { weight: Rational, resolution: Rational },
    #[error("resolution must be positive, got {0}")]
    NonPositiveResolution(Rational),
    #[error("cannot parse rational from {0:?}")]
    BadRational(String),
}

/// A prime modulus `q` with `2^16 <= q < 2^62`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Modulus(u64);

impl Modulus {
    pub const FLOOR: u64 = 1 << 16;
    pub const CEILING: u64 = 1 << 62;

    pub fn new(q: u64) -> Result<Self, RingError> {
        if q < Self::FLOOR {
            return Err(RingError::ModulusTooSmall(q));
        }
        if q >= Self::CEILING {
            return Err(RingError::ModulusTooLarge(q));
        }
        if !is_prime(q) {
            return Err(RingError::NotPrime(q));
        }
        Ok(Self(q))
    }

    /// Smallest admissible prime strictly greater than `bound`.
    pub fn smallest_prime_above(bound: u64) -> Result<Self, RingError> {
        let mut candidate = bound.max(Self::FLOOR - 1) + 1;
        while candidate < Self::CEILING {
            if is_prime(candidate) {
                return Ok(Self(candidate));
            }
            candidate += 1;
        }
        Err(RingError::ModulusTooLarge(candidate))
    }

    /// Default desk-scale modulus: the smallest prime above 2^40.
    pub fn desk_default() -> Self {
        Self::smallest_prime_above(1 << 40).expect("a prime exists just above 2^40")
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    /// True iff `|z| < q/2`, i.e. `z` survives centered decoding.
    #[inline]
    pub fn fits_centered(self, z: i128) -> bool {
        z.unsigned_abs().saturating_mul(2) < self.0 as u128
    }

    #[inline]
    pub fn reduce(self, z: i128) -> RingElement {
        RingElement(z.rem_euclid(self.0 as i128) as u64)
    }

    #[inline]
    pub fn add(self, a: RingElement, b: RingElement) -> RingElement {
        RingElement(((a.0 as u128 + b.0 as u128) % self.0 as u128) as u64)
    }

    #[inline]
    pub fn sub(self, a: RingElement, b: RingElement) -> RingElement {
        RingElement(((a.0 as u128 + self.0 as u128 - b.0 as u128) % self.0 as u128) as u64)
    }

    #[inline]
    pub fn neg(self, a: RingElement) -> RingElement {
        self.sub(RingElement(0), a)
    }

    #[inline]
    pub fn mul(self, a: RingElement, b: RingElement) -> RingElement {
        RingElement(((a.0 as u128 * b.0 as u128) % self.0 as u128) as u64)
    }

    pub fn element(self, value: u64) -> RingElement {
        RingElement(value % self.0)
    }

    /// Uniform element of `Z_q` by rejection sampling on the next power of two.
    pub fn random<R: RngCore + ?Sized>(self, rng: &mut R) -> RingElement {
        let bits = 64 - (self.0 - 1).leading_zeros();
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        loop {
            let candidate = rng.next_u64() & mask;
            if candidate < self.0 {
                return RingElement(candidate);
            }
        }
    }
}

impl TryFrom<u64> for Modulus {
    type Error = RingError;
    fn try_from(q: u64) -> Result<Self, RingError> {
        Self::new(q)
    }
}

impl From<Modulus> for u64 {
    fn from(q: Modulus) -> u64 {
        q.0
    }
}

impl fmt::Display for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Element of `Z_q`, always in `[0, q)` for the modulus it was produced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct RingElement(u64);

impl RingElement {
    pub const ZERO: Self = Self(0);

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Minimal residue `[z]_q = z - floor((z + q/2) / q) * q`, in `[-q/2, q/2)`.
pub fn min_residue(z: i128, q: Modulus) -> i64 {
    let q = q.value() as i128;
    // floor((z + q/2)/q) == floor((2z + q) / 2q) for real q/2
    let k = (2 * z + q).div_euclid(2 * q);
    (z - k * q) as i64
}

/// Resolutions of the fixed-point encodings: `delta_w` for weights,
/// `delta_x` for states and their product `delta` for decoded products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    delta_w: Rational,
    delta_x: Rational,
}

impl FixedPointCodec {
    pub fn new(delta_w: Rational, delta_x: Rational) -> Result<Self, RingError> {
        for d in [delta_w, delta_x] {
            if !d.is_positive() {
                return Err(RingError::NonPositiveResolution(d));
            }
        }
        Ok(Self { delta_w, delta_x })
    }

    pub fn delta_w(&self) -> Rational {
        self.delta_w
    }

    pub fn delta_x(&self) -> Rational {
        self.delta_x
    }

    /// `delta_w * delta_x`, the scale of decoded weight-state products.
    pub fn delta(&self) -> Rational {
        self.delta_w * self.delta_x
    }

    /// Centered integer `round(x / delta_x)`.
    pub fn quantize_state(&self, x: f64, q: Modulus) -> Result<i64, RingError> {
        quantize(x, self.delta_x, q)
    }

    /// Exact integer `w / delta_w`.
    pub fn weight_integer(&self, w: Rational) -> Result<i64, RingError> {
        let scaled = w / self.delta_w;
        if !scaled.is_integer() {
            return Err(RingError::NonIntegerWeight {
                weight: w,
                resolution: self.delta_w,
            });
        }
        Ok(scaled.to_integer())
    }
}

/// Centered integer `round(x / resolution)`, rounding half away from zero.
pub fn quantize(x: f64, resolution: Rational, q: Modulus) -> Result<i64, RingError> {
    let half_q = q.value() / 2;
    let scaled = x * *resolution.denom() as f64 / *resolution.numer() as f64;
    // f64::round rounds half away from zero
    let rounded = scaled.round();
    if !rounded.is_finite() || !q.fits_centered(rounded as i128) {
        return Err(RingError::Overflow {
            value: rounded,
            half_q,
        });
    }
    Ok(rounded as i64)
}

/// `round(x / delta_x) mod q`.
pub fn encode_state(x: f64, codec: &FixedPointCodec, q: Modulus) -> Result<RingElement, RingError> {
    Ok(q.reduce(codec.quantize_state(x, q)? as i128))
}

/// `(w / delta_w) mod q`; fails unless `w / delta_w` is an integer.
pub fn encode_weight(
    w: Rational,
    codec: &FixedPointCodec,
    q: Modulus,
) -> Result<RingElement, RingError> {
    Ok(q.reduce(codec.weight_integer(w)? as i128))
}

/// `scale * [v]_q`, as one division so that `1029 · 1/100` reads `10.29`.
pub fn decode_scaled(v: RingElement, scale: Rational, q: Modulus) -> f64 {
    let centered = min_residue(v.value() as i128, q) as i128;
    (centered * *scale.numer() as i128) as f64 / *scale.denom() as f64
}

pub fn rational_to_f64(r: Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Rounds a rational to the nearest integer, half away from zero.
pub fn round_rational(r: Rational) -> i64 {
    r.round().to_integer()
}

/// Parses `"3"`, `"-1/10"`, `"0.25"` or `"1e-2"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<Rational, RingError> {
    let bad = || RingError::BadRational(text.to_string());
    let s = text.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(n, d));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => (&s[..pos], s[pos + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let negative = mantissa.starts_with('-');
    let digits = mantissa.trim_start_matches(['-', '+']);
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let all: String = format!("{int_part}{frac_part}");
    if !all.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let mut numer: i64 = all.parse().map_err(|_| bad())?;
    let mut scale = exponent - frac_part.len() as i32;
    let mut denom: i64 = 1;
    while scale > 0 {
        numer = numer.checked_mul(10).ok_or_else(bad)?;
        scale -= 1;
    }
    while scale < 0 {
        denom = denom.checked_mul(10).ok_or_else(bad)?;
        scale += 1;
    }
    if negative {
        numer = -numer;
    }
    Ok(Rational::new(numer, denom))
}

/// Deterministic Miller-Rabin; the witness set is exact for all `u64`.
pub fn is_prime(n: u64) -> bool {
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for p in WITNESSES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    let mul = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let pow = |mut base: u64, mut exp: u64| {
        let mut acc = 1u64;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = mul(acc, base);
            }
            base = mul(base, base);
            exp >>= 1;
        }
        acc
    };
    'witness: for a in WITNESSES {
        let mut x = pow(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
