//! Arithmetic in the multiplicative group `F_p^*` of a safe prime
//! `p = 2q + 1`, plus the election parameters built on top of it.
//!
//! Exponents live modulo `p - 1` (the order of the whole group, not of the
//! quadratic-residue subgroup). The common generator `g` is checked to have
//! full order `p - 1`, and the candidate generators are
//! `f_i = g^(2^((i-1)m))` where `m` is the smallest integer with `2^m > n_max`.
//! Vote counts therefore pack into disjoint `m`-bit fields of the exponent of
//! the tally product.

use std::fmt;

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("modulus {0} is not a safe prime")]
    NotSafePrime(BigUint),
    #[error("{0} does not generate the full group")]
    NotGenerator(BigUint),
    #[error("security parameter of {0} bits is too small (need at least 16)")]
    TooFewBits(u32),
    #[error("k = {k} candidates with m = {m} bits per count need 2^(k*m) <= p - 1")]
    PackingOverflow { k: usize, m: u32 },
    #[error("invalid group size bound {0}: need 3 <= n_max < p - 1")]
    BadGroupBound(u64),
    #[error("at least one candidate is required")]
    NoCandidates,
    #[error("{0} is not an element of the group")]
    NotInGroup(BigUint),
    #[error("candidate list does not match g^(2^((i-1)m))")]
    BadCandidates,
    #[error("malformed integer {0:?}")]
    Parse(String),
}

/// A nonzero residue modulo `p`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupElement(BigUint);

/// An exponent reduced modulo `p - 1`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scalar(BigUint);

impl GroupElement {
    pub fn one() -> Self {
        GroupElement(BigUint::one())
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn into_value(self) -> BigUint {
        self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    /// Wraps a raw integer without checking membership. Callers that take
    /// untrusted input must go through [`GroupParams::element`] or
    /// [`GroupParams::contains`].
    pub fn from_raw(v: BigUint) -> Self {
        GroupElement(v)
    }
}

impl Scalar {
    pub fn zero() -> Self {
        Scalar(BigUint::zero())
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn from_raw(v: BigUint) -> Self {
        Scalar(v)
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", self.0)
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({})", self.0)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Big integers travel as decimal strings in every JSON document.
pub(crate) mod decimal {
    use super::*;

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }

    pub fn parse(s: &str) -> Result<BigUint, GroupError> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(GroupError::Parse(s.to_string()));
        }
        BigUint::parse_bytes(s.as_bytes(), 10).ok_or_else(|| GroupError::Parse(s.to_string()))
    }
}

macro_rules! decimal_serde {
    ($t:ident) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                decimal::serialize(&self.0, s)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                decimal::deserialize(d).map($t)
            }
        }
    };
}

decimal_serde!(GroupElement);
decimal_serde!(Scalar);

/// Election parameters agreed by every booth.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct GroupParams {
    #[serde(with = "decimal")]
    p: BigUint,
    #[serde(with = "decimal")]
    q: BigUint,
    g: GroupElement,
    #[serde(with = "decimal")]
    exp_mod: BigUint,
    k: usize,
    m: u32,
    candidates: Vec<GroupElement>,
    n_max: u64,
}

#[derive(Deserialize)]
struct RawParams {
    #[serde(with = "decimal")]
    p: BigUint,
    #[serde(with = "decimal")]
    q: BigUint,
    g: GroupElement,
    #[serde(with = "decimal")]
    exp_mod: BigUint,
    k: usize,
    m: u32,
    candidates: Vec<GroupElement>,
    n_max: u64,
}

impl TryFrom<RawParams> for GroupParams {
    type Error = GroupError;

    fn try_from(raw: RawParams) -> Result<Self, GroupError> {
        let params = GroupParams::new(raw.p, raw.g.0, raw.n_max, raw.k)?;
        if params.q != raw.q
            || params.exp_mod != raw.exp_mod
            || params.m != raw.m
            || params.candidates != raw.candidates
        {
            return Err(GroupError::BadCandidates);
        }
        Ok(params)
    }
}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupParams")
            .field("p", &self.p.to_str_radix(10))
            .field("g", &self.g.0.to_str_radix(10))
            .field("k", &self.k)
            .field("m", &self.m)
            .field("n_max", &self.n_max)
            .finish()
    }
}

/// Smallest `m` with `2^m > n`.
pub fn count_bits(n: u64) -> u32 {
    64 - n.leading_zeros()
}

impl GroupParams {
    /// Builds parameters over a known safe prime and generator.
    pub fn new(p: BigUint, g: BigUint, n_max: u64, k: usize) -> Result<Self, GroupError> {
        if p < BigUint::from(7u8) || !is_safe_prime(&p) {
            return Err(GroupError::NotSafePrime(p));
        }
        let one = BigUint::one();
        let exp_mod = &p - &one;
        let q = &exp_mod >> 1u32;
        if g.is_zero() || g >= p || !is_full_order(&g, &q, &p) {
            return Err(GroupError::NotGenerator(g));
        }
        if k == 0 {
            return Err(GroupError::NoCandidates);
        }
        if n_max < 3 || BigUint::from(n_max) >= exp_mod {
            return Err(GroupError::BadGroupBound(n_max));
        }
        let m = count_bits(n_max);
        let packed_bits = (k as u64) * u64::from(m);
        if packed_bits > u64::from(u32::MAX) || (&one << packed_bits) > exp_mod {
            return Err(GroupError::PackingOverflow { k, m });
        }
        let candidates = (0..k)
            .map(|i| {
                let e = &one << (i as u64 * u64::from(m));
                GroupElement(g.modpow(&e, &p))
            })
            .collect();
        Ok(GroupParams {
            p,
            q,
            g: GroupElement(g),
            exp_mod,
            k,
            m,
            candidates,
            n_max,
        })
    }

    /// Searches for a `bits`-bit safe prime driven by `seed` and picks the
    /// smallest full-order generator.
    pub fn generate(bits: u32, n_max: u64, k: usize, seed: &[u8]) -> Result<Self, GroupError> {
        if bits < 16 {
            return Err(GroupError::TooFewBits(bits));
        }
        if k == 0 {
            return Err(GroupError::NoCandidates);
        }
        if n_max < 3 || count_bits(n_max) >= bits - 1 {
            return Err(GroupError::BadGroupBound(n_max));
        }
        let m = count_bits(n_max);
        // p - 1 >= 2^(bits-1) for any bits-bit p
        if (k as u64) * u64::from(m) > u64::from(bits - 1) {
            return Err(GroupError::PackingOverflow { k, m });
        }
        let p = find_safe_prime(bits, seed);
        let q = &p >> 1u32;
        let mut g = BigUint::from(2u8);
        while !is_full_order(&g, &q, &p) {
            g += 1u8;
        }
        GroupParams::new(p, g, n_max, k)
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn g(&self) -> &GroupElement {
        &self.g
    }

    pub fn exp_mod(&self) -> &BigUint {
        &self.exp_mod
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n_max(&self) -> u64 {
        self.n_max
    }

    pub fn candidates(&self) -> &[GroupElement] {
        &self.candidates
    }

    /// Generator for the 1-based candidate `choice`.
    pub fn candidate(&self, choice: usize) -> Option<&GroupElement> {
        choice.checked_sub(1).and_then(|i| self.candidates.get(i))
    }

    pub fn bits(&self) -> u64 {
        self.p.bits()
    }

    pub fn contains(&self, e: &GroupElement) -> bool {
        !e.0.is_zero() && e.0 < self.p
    }

    pub fn element(&self, v: BigUint) -> Result<GroupElement, GroupError> {
        let e = GroupElement(v);
        if self.contains(&e) {
            Ok(e)
        } else {
            Err(GroupError::NotInGroup(e.0))
        }
    }

    pub fn scalar(&self, v: BigUint) -> Scalar {
        Scalar(v % &self.exp_mod)
    }

    pub fn scalar_from_u64(&self, v: u64) -> Scalar {
        self.scalar(BigUint::from(v))
    }

    /// Reduces a signed exponent into `[0, p - 1)`.
    pub fn scalar_from_signed(&self, v: &BigInt) -> Scalar {
        let m = BigInt::from_biguint(Sign::Plus, self.exp_mod.clone());
        let r = v.mod_floor(&m);
        Scalar(r.to_biguint().expect("mod_floor is non-negative"))
    }

    pub fn pow(&self, base: &GroupElement, e: &Scalar) -> GroupElement {
        GroupElement(base.0.modpow(&e.0, &self.p))
    }

    /// `base^e` for a signed exponent; negative exponents invert.
    pub fn pow_signed(&self, base: &GroupElement, e: &BigInt) -> GroupElement {
        self.pow(base, &self.scalar_from_signed(e))
    }

    pub fn g_pow(&self, e: &Scalar) -> GroupElement {
        self.pow(&self.g, e)
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        GroupElement((&a.0 * &b.0) % &self.p)
    }

    pub fn inv(&self, a: &GroupElement) -> GroupElement {
        // Fermat: a^(p-2); a is nonzero so the inverse exists.
        let e = &self.p - BigUint::from(2u8);
        GroupElement(a.0.modpow(&e, &self.p))
    }

    pub fn div(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.mul(a, &self.inv(b))
    }

    pub fn product<'a, I>(&self, items: I) -> GroupElement
    where
        I: IntoIterator<Item = &'a GroupElement>,
    {
        items.into_iter().fold(GroupElement::one(), |acc, x| self.mul(&acc, x))
    }

    pub fn scalar_add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &b.0) % &self.exp_mod)
    }

    pub fn scalar_sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        let b = &b.0 % &self.exp_mod;
        Scalar((&a.0 + &self.exp_mod - b) % &self.exp_mod)
    }

    pub fn scalar_mul(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 * &b.0) % &self.exp_mod)
    }

    /// Uniform draw from `[0, p - 1)`.
    pub fn random_scalar<R: Rng + ?Sized>(&self, rng: &mut R) -> Scalar {
        Scalar(rng.gen_biguint_below(&self.exp_mod))
    }

    /// Uniform draw from `[1, p - 1)`.
    pub fn random_nonzero_scalar<R: Rng + ?Sized>(&self, rng: &mut R) -> Scalar {
        Scalar(rng.gen_biguint_range(&BigUint::one(), &self.exp_mod))
    }

    /// Canonical JSON: fixed field order, decimal big integers, no whitespace.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }
}

fn is_full_order(g: &BigUint, q: &BigUint, p: &BigUint) -> bool {
    let one = BigUint::one();
    g > &one && g < p && g.modpow(&BigUint::from(2u8), p) != one && g.modpow(q, p) != one
}

const SMALL_PRIMES: [u32; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233, 239,
    241, 251,
];

/// Miller-Rabin with the first 54 primes as fixed witnesses. Deterministic
/// for every n below 3.3 * 10^24 and a 2^-108 error bound beyond.
pub fn is_probable_prime(n: &BigUint) -> bool {
    if let Some(small) = n.to_u32() {
        if small < 2 {
            return false;
        }
        if SMALL_PRIMES.contains(&small) {
            return true;
        }
    }
    for &sp in &SMALL_PRIMES {
        if (n % sp).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for &a in &SMALL_PRIMES {
        let mut x = BigUint::from(a).modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

pub fn is_safe_prime(p: &BigUint) -> bool {
    if p.is_even() {
        return false;
    }
    let q = p >> 1u32;
    is_probable_prime(&q) && is_probable_prime(p)
}

fn find_safe_prime(bits: u32, seed: &[u8]) -> BigUint {
    let mut rng = seeded_rng(seed);
    let q_bits = u64::from(bits - 1);
    loop {
        let mut q = rng.gen_biguint(q_bits);
        q.set_bit(q_bits - 1, true);
        q.set_bit(0, true);
        let p = (&q << 1u32) + 1u8;
        // cheap sieve on both before Miller-Rabin
        let composite = SMALL_PRIMES[1..].iter().any(|&sp| {
            let qm = (&q % sp).to_u32().unwrap_or(0);
            let pm = (&p % sp).to_u32().unwrap_or(0);
            (qm == 0 && q != BigUint::from(sp)) || (pm == 0 && p != BigUint::from(sp))
        });
        if composite {
            continue;
        }
        if is_probable_prime(&q) && is_probable_prime(&p) {
            return p;
        }
    }
}

/// Pinned parameter sets used by tests, benches and the cost model.
pub mod fixtures {
    use super::*;

    /// p = 23, g = 5.
    pub fn p23(n_max: u64, k: usize) -> Result<GroupParams, GroupError> {
        GroupParams::new(BigUint::from(23u32), BigUint::from(5u32), n_max, k)
    }

    /// p = 47, g = 5.
    pub fn p47(n_max: u64, k: usize) -> Result<GroupParams, GroupError> {
        GroupParams::new(BigUint::from(47u32), BigUint::from(5u32), n_max, k)
    }

    /// Largest 64-bit safe prime, g = 2.
    pub const P64: u64 = 18_446_744_073_709_550_147;

    pub fn p64(n_max: u64, k: usize) -> Result<GroupParams, GroupError> {
        GroupParams::new(BigUint::from(P64), BigUint::from(2u32), n_max, k)
    }

    /// Largest 128-bit safe prime, g = 5.
    pub const P128: u128 = 340_282_366_920_938_463_463_374_607_431_768_196_007;

    pub fn p128(n_max: u64, k: usize) -> Result<GroupParams, GroupError> {
        GroupParams::new(BigUint::from(P128), BigUint::from(5u32), n_max, k)
    }
}
