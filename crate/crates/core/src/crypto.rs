//! Shared cryptographic primitives for both protocol roles.
//!
//! Everything here is a pure function over value inputs. Operand widths are
//! fixed at 32 bytes so that masking a value with a digest is always a
//! bytewise XOR of equal-length strings.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const BLOCK_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const AEAD_TAG_LEN: usize = 16;
/// Bytes an envelope adds on top of its plaintext.
pub const ENVELOPE_OVERHEAD: usize = NONCE_LEN + AEAD_TAG_LEN;

pub const EXPONENT_MIN: u8 = 2;
pub const DEFAULT_EXPONENT_MAX: u8 = 16;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication failure")]
    AuthFailure,
    #[error("envelope shorter than nonce and tag")]
    TooShort,
    #[error("exponent {0} outside configured bounds")]
    ExponentOutOfBounds(u8),
}

fn xor32(a: &[u8; BLOCK_LEN], b: &[u8; BLOCK_LEN]) -> [u8; BLOCK_LEN] {
    let mut out = [0u8; BLOCK_LEN];
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b.iter())) {
        *o = x ^ y;
    }
    out
}

macro_rules! block_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name([u8; BLOCK_LEN]);

        impl $name {
            pub const fn from_bytes(bytes: [u8; BLOCK_LEN]) -> Self {
                Self(bytes)
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; BLOCK_LEN]>::try_from(bytes).ok().map(Self)
            }

            pub fn as_bytes(&self) -> &[u8; BLOCK_LEN] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Option<Self> {
                let raw = hex::decode(s).ok()?;
                Self::from_slice(&raw)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), &hex::encode(&self.0[..4]))
            }
        }

        impl From<[u8; BLOCK_LEN]> for $name {
            fn from(bytes: [u8; BLOCK_LEN]) -> Self {
                Self(bytes)
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).ok_or_else(|| {
                    serde::de::Error::custom(concat!("expected 64 hex chars for ", stringify!($name)))
                })
            }
        }
    };
}

block_newtype!(
    /// 32-byte symmetric key or digest. All-zero is reserved as "unset".
    Key256
);
block_newtype!(
    /// Per-session random value drawn from the shared seed.
    Rand256
);
block_newtype!(
    /// Quantized channel observation attached to a received packet.
    CsiSample
);

impl Key256 {
    pub const UNSET: Key256 = Key256([0u8; BLOCK_LEN]);

    pub fn is_unset(&self) -> bool {
        self.0 == [0u8; BLOCK_LEN]
    }

    pub fn xor(&self, other: &Key256) -> Key256 {
        Key256(xor32(&self.0, &other.0))
    }
}

impl From<Rand256> for Key256 {
    fn from(r: Rand256) -> Self {
        Key256(r.0)
    }
}

impl From<CsiSample> for Key256 {
    fn from(c: CsiSample) -> Self {
        Key256(c.0)
    }
}

/// Counter-mode DRBG state: output `i` is `hash(bytes || be64(i))`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Seed {
    bytes: [u8; BLOCK_LEN],
    draw_index: u64,
}

impl Seed {
    pub fn new(bytes: [u8; BLOCK_LEN]) -> Self {
        Self { bytes, draw_index: 0 }
    }

    /// Rebuild a DRBG position, e.g. from a persisted registry record.
    pub fn at_index(bytes: [u8; BLOCK_LEN], draw_index: u64) -> Self {
        Self { bytes, draw_index }
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; BLOCK_LEN];
        rng.fill_bytes(&mut bytes);
        Self::new(bytes)
    }

    pub fn bytes(&self) -> &[u8; BLOCK_LEN] {
        &self.bytes
    }

    pub fn draw_index(&self) -> u64 {
        self.draw_index
    }

    /// Replace the seed material; the draw counter restarts at zero.
    pub fn replace(&mut self, bytes: [u8; BLOCK_LEN]) {
        self.bytes = bytes;
        self.draw_index = 0;
    }
}

/// Value of the continuous-authentication function, compared by exact equality.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct FWrap64(pub u64);

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Exponent(u8);

impl Exponent {
    pub const fn new(value: u8) -> Self {
        Self(value)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Zero-padded (big-endian) to a full block so it can be masked.
    pub fn to_block(self) -> [u8; BLOCK_LEN] {
        let mut out = [0u8; BLOCK_LEN];
        out[BLOCK_LEN - 1] = self.0;
        out
    }

    /// Inverse of [`Exponent::to_block`]; `None` if the padding is not zero.
    pub fn from_block(block: &[u8; BLOCK_LEN]) -> Option<Self> {
        if block[..BLOCK_LEN - 1].iter().all(|&b| b == 0) {
            Some(Self(block[BLOCK_LEN - 1]))
        } else {
            None
        }
    }
}

/// Inclusive exponent range `[EXPONENT_MIN, max]`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ExponentBounds {
    max: u8,
}

impl ExponentBounds {
    /// `max` is raised to [`EXPONENT_MIN`] if smaller.
    pub fn new(max: u8) -> Self {
        Self {
            max: max.max(EXPONENT_MIN),
        }
    }

    pub fn max(&self) -> u8 {
        self.max
    }

    pub fn contains(&self, e: Exponent) -> bool {
        (EXPONENT_MIN..=self.max).contains(&e.0)
    }

    pub fn check(&self, e: Exponent) -> Result<Exponent, CryptoError> {
        if self.contains(e) {
            Ok(e)
        } else {
            Err(CryptoError::ExponentOutOfBounds(e.0))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Exponent {
        Exponent(rng.gen_range(EXPONENT_MIN..=self.max))
    }
}

impl Default for ExponentBounds {
    fn default() -> Self {
        Self::new(DEFAULT_EXPONENT_MAX)
    }
}

/// SHA-256.
pub fn hash(data: &[u8]) -> Key256 {
    Key256(Sha256::digest(data).into())
}

/// HMAC-SHA-256 over `be32(len(f)) || f` for each field in order.
///
/// The length prefixes make the tag injective in the field boundaries, so
/// `[A, B]` and `[A || B]` never collide by construction.
pub fn hmac_tag(key: &Key256, fields: &[&[u8]]) -> Key256 {
    assert!(!fields.is_empty(), "hmac_tag needs at least one field");
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key.as_bytes()).expect("HMAC accepts any key length");
    for field in fields {
        let len = u32::try_from(field.len()).expect("field longer than 4 GiB");
        mac.update(&len.to_be_bytes());
        mac.update(field);
    }
    Key256(mac.finalize().into_bytes().into())
}

/// `value XOR hash(key XOR r)`. Applying it twice with the same key and r is the identity.
pub fn xor_mask(value: &[u8; BLOCK_LEN], key: &Key256, r: &Rand256) -> [u8; BLOCK_LEN] {
    let pad = hash(&xor32(&key.0, &r.0));
    xor32(value, &pad.0)
}

/// Draw the next value and return the advanced seed. The input is not modified,
/// so a caller can decide when (or whether) to commit the advance.
pub fn prng_draw(seed: &Seed) -> (Rand256, Seed) {
    let mut buf = [0u8; BLOCK_LEN + 8];
    buf[..BLOCK_LEN].copy_from_slice(&seed.bytes);
    buf[BLOCK_LEN..].copy_from_slice(&seed.draw_index.to_be_bytes());
    let r = Rand256(hash(&buf).0);
    let next = Seed {
        bytes: seed.bytes,
        draw_index: seed.draw_index + 1,
    };
    (r, next)
}

/// Enrollment key: `HMAC(r, [raw edge id])`.
pub fn derive_init_key(edge_raw_id: &[u8], r: &Rand256) -> Key256 {
    hmac_tag(&Key256::from(*r), &[edge_raw_id])
}

/// ChaCha20-Poly1305 under `key`; output is `nonce || ciphertext || tag`.
pub fn aead_seal<R: RngCore + CryptoRng>(key: &Key256, plaintext: &[u8], rng: &mut R) -> Vec<u8> {
    assert!(!key.is_unset(), "sealing under the unset key");
    let cipher = ChaCha20Poly1305::new(key.as_bytes().into());
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ct = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("ChaCha20-Poly1305 encryption is infallible for in-range lengths");
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

pub fn aead_open(key: &Key256, envelope: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if envelope.len() < ENVELOPE_OVERHEAD {
        return Err(CryptoError::TooShort);
    }
    let cipher = ChaCha20Poly1305::new(key.as_bytes().into());
    let (nonce, ct) = envelope.split_at(NONCE_LEN);
    cipher
        .decrypt(Nonce::from_slice(nonce), ct)
        .map_err(|_| CryptoError::AuthFailure)
}

/// `(t^a + t^b) mod 2^64`.
pub fn compute_f(t: u64, a: Exponent, b: Exponent, bounds: &ExponentBounds) -> Result<FWrap64, CryptoError> {
    bounds.check(a)?;
    bounds.check(b)?;
    let ta = t.wrapping_pow(u32::from(a.0));
    let tb = t.wrapping_pow(u32::from(b.0));
    Ok(FWrap64(ta.wrapping_add(tb)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    fn random_block(rng: &mut ChaCha20Rng) -> [u8; BLOCK_LEN] {
        let mut b = [0u8; BLOCK_LEN];
        rng.fill_bytes(&mut b);
        b
    }

    #[test]
    fn sha256_empty_vector() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_is_sensitive_to_single_bit() {
        let mut rng = rng();
        for _ in 0..100 {
            let len = rng.gen_range(1..200);
            let mut data = vec![0u8; len];
            rng.fill_bytes(&mut data);
            let bit = rng.gen_range(0..len * 8);
            let mut flipped = data.clone();
            flipped[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(hash(&data), hash(&data));
            assert_ne!(hash(&data), hash(&flipped));
        }
    }

    #[test]
    fn hmac_tag_matches_manual_length_prefixed_hmac() {
        // Oracle: HMAC-SHA-256 assembled by hand from the RFC 2104 definition.
        let key = Key256::from_bytes([0x0b; 32]);
        let fields: [&[u8]; 2] = [b"ab", b"cde"];
        let mut msg = Vec::new();
        for f in fields {
            msg.extend_from_slice(&(f.len() as u32).to_be_bytes());
            msg.extend_from_slice(f);
        }
        let mut k = [0u8; 64];
        k[..32].copy_from_slice(key.as_bytes());
        let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
        let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
        let inner = Sha256::digest([ipad.as_slice(), &msg].concat());
        let outer = Sha256::digest([opad.as_slice(), inner.as_slice()].concat());
        assert_eq!(hmac_tag(&key, &fields).as_bytes().as_slice(), outer.as_slice());
    }

    #[test]
    fn hmac_field_boundaries_matter() {
        let key = Key256::from_bytes([9; 32]);
        let split = hmac_tag(&key, &[b"AAAA", b"BBBB"]);
        let merged = hmac_tag(&key, &[b"AAAABBBB"]);
        let shifted = hmac_tag(&key, &[b"AAA", b"ABBBB"]);
        assert_ne!(split, merged);
        assert_ne!(split, shifted);
        assert_eq!(split, hmac_tag(&key, &[b"AAAA", b"BBBB"]));
    }

    #[test]
    fn hmac_key_bit_flip_changes_tag() {
        let mut rng = rng();
        for _ in 0..100 {
            let key = Key256::from_bytes(random_block(&mut rng));
            let bit = rng.gen_range(0..256);
            let mut flipped = *key.as_bytes();
            flipped[bit / 8] ^= 1 << (bit % 8);
            let fields: [&[u8]; 2] = [b"field-one", b"field-two"];
            assert_ne!(hmac_tag(&key, &fields), hmac_tag(&Key256::from_bytes(flipped), &fields));
        }
    }

    #[test]
    fn xor_mask_of_zero_is_pad() {
        let key = Key256::from_bytes([1; 32]);
        let r = Rand256::from_bytes([2; 32]);
        assert_eq!(xor_mask(&[0; 32], &key, &r), *hash(&[3; 32]).as_bytes());
    }

    #[test]
    fn xor_mask_avalanche() {
        // Flipping one bit of key or r should change about half of the unmasked bits.
        let mut rng = rng();
        let mut total = 0u32;
        let trials = 100;
        for i in 0..trials {
            let value = random_block(&mut rng);
            let key = Key256::from_bytes(random_block(&mut rng));
            let r = Rand256::from_bytes(random_block(&mut rng));
            let masked = xor_mask(&value, &key, &r);
            let bit = rng.gen_range(0..256);
            let (k2, r2) = if i % 2 == 0 {
                let mut k = *key.as_bytes();
                k[bit / 8] ^= 1 << (bit % 8);
                (Key256::from_bytes(k), r)
            } else {
                let mut rb = *r.as_bytes();
                rb[bit / 8] ^= 1 << (bit % 8);
                (key, Rand256::from_bytes(rb))
            };
            let wrong = xor_mask(&masked, &k2, &r2);
            let diff: u32 = wrong.iter().zip(value.iter()).map(|(a, b)| (a ^ b).count_ones()).sum();
            assert!((64..=192).contains(&diff), "trial {i}: {diff} bits differ");
            total += diff;
        }
        let mean = f64::from(total) / f64::from(trials);
        assert!((118.0..=138.0).contains(&mean), "mean differing bits {mean}");
    }

    #[test]
    fn prng_lockstep_and_index_sensitivity() {
        let seed = Seed::new([5; 32]);
        let (r0a, s1a) = prng_draw(&seed);
        let (r0b, s1b) = prng_draw(&seed);
        assert_eq!(r0a, r0b);
        assert_eq!(s1a, s1b);
        assert_eq!(s1a.draw_index(), 1);
        let (r1, s2) = prng_draw(&s1a);
        assert_ne!(r0a, r1);
        assert_eq!(s2.draw_index(), 2);

        // Oracle: hash(seed || be64(index)) computed directly.
        let mut buf = vec![5u8; 32];
        buf.extend_from_slice(&1u64.to_be_bytes());
        assert_eq!(r1.as_bytes(), hash(&buf).as_bytes());
    }

    #[test]
    fn prng_replacement_resets_and_decorrelates() {
        let mut rng = rng();
        for _ in 0..100 {
            let mut seed = Seed::new(random_block(&mut rng));
            let old: Vec<Rand256> = (0..4)
                .scan(seed, |s, _| {
                    let (r, next) = prng_draw(s);
                    *s = next;
                    Some(r)
                })
                .collect();
            seed = prng_draw(&seed).1;
            seed.replace(random_block(&mut rng));
            assert_eq!(seed.draw_index(), 0);
            let (fresh, _) = prng_draw(&seed);
            assert!(!old.contains(&fresh));
        }
    }

    #[test]
    fn init_key_distinctness() {
        let r = Rand256::from_bytes([4; 32]);
        let k1 = derive_init_key(b"edge-a", &r);
        assert_eq!(k1, derive_init_key(b"edge-a", &r));
        assert_ne!(k1, derive_init_key(b"edge-b", &r));
        assert_ne!(k1, derive_init_key(b"edge-a", &Rand256::from_bytes([6; 32])));
    }

    #[test]
    fn aead_round_trip_and_wrong_key() {
        let mut rng = rng();
        let key = Key256::from_bytes([7; 32]);
        let env = aead_seal(&key, b"hello gateway", &mut rng);
        assert_eq!(env.len(), 13 + ENVELOPE_OVERHEAD);
        assert_eq!(aead_open(&key, &env).unwrap(), b"hello gateway");
        let other = Key256::from_bytes([8; 32]);
        assert_eq!(aead_open(&other, &env), Err(CryptoError::AuthFailure));
        assert_eq!(aead_open(&key, &env[..27]), Err(CryptoError::TooShort));
    }

    #[test]
    fn aead_detects_each_of_first_64_bit_flips() {
        let mut rng = rng();
        let key = Key256::from_bytes([7; 32]);
        let env = aead_seal(&key, &[0xAB; 40], &mut rng);
        for bit in 0..64 {
            let mut bad = env.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(aead_open(&key, &bad), Err(CryptoError::AuthFailure), "bit {bit}");
        }
    }

    #[test]
    fn compute_f_examples() {
        let b = ExponentBounds::default();
        let f = |t, a, c| compute_f(t, Exponent::new(a), Exponent::new(c), &b).unwrap().0;
        assert_eq!(f(1, 5, 9), 2);
        assert_eq!(f(2, 3, 4), 24);
        // (2^64 + 2^96) mod 2^64 = 0
        assert_eq!(f(1 << 32, 2, 3), 0);
        assert_eq!(
            compute_f(3, Exponent::new(1), Exponent::new(4), &b),
            Err(CryptoError::ExponentOutOfBounds(1))
        );
        assert_eq!(
            compute_f(3, Exponent::new(2), Exponent::new(17), &b),
            Err(CryptoError::ExponentOutOfBounds(17))
        );
    }

    #[test]
    fn exponent_padding_round_trip() {
        let e = Exponent::new(13);
        assert_eq!(Exponent::from_block(&e.to_block()), Some(e));
        let mut bad = e.to_block();
        bad[0] = 1;
        assert_eq!(Exponent::from_block(&bad), None);
    }

    proptest! {
        #[test]
        fn xor_mask_is_involution(v in any::<[u8; 32]>(), k in any::<[u8; 32]>(), r in any::<[u8; 32]>()) {
            let key = Key256::from_bytes(k);
            let r = Rand256::from_bytes(r);
            prop_assert_eq!(xor_mask(&xor_mask(&v, &key, &r), &key, &r), v);
        }

        #[test]
        fn aead_round_trips_up_to_4k(pt in proptest::collection::vec(any::<u8>(), 0..4096), k in any::<[u8; 32]>(), seed in any::<u64>(), flip in any::<usize>()) {
            prop_assume!(k != [0u8; 32]);
            let key = Key256::from_bytes(k);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let env = aead_seal(&key, &pt, &mut rng);
            prop_assert_eq!(aead_open(&key, &env).unwrap(), pt);
            let bit = flip % (env.len() * 8);
            let mut bad = env.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            prop_assert_eq!(aead_open(&key, &bad), Err(CryptoError::AuthFailure));
        }

        #[test]
        fn sampled_exponents_stay_in_bounds(max in 2u8..=40, seed in any::<u64>()) {
            let bounds = ExponentBounds::new(max);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for _ in 0..32 {
                let e = bounds.sample(&mut rng);
                prop_assert!(e.value() >= 2 && e.value() <= max);
            }
        }
    }
}
