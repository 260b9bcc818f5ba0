//! Seeded hash families for signs, buckets and the per-row scaling factors.
//!
//! Every family is a pure function of `(seed, key)`: nothing is stored per
//! key, so sketches can recompute a row's sign or scale at query time.

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Number of fractional bits carried by a [`UniformScale`].
pub const SCALE_BITS: u32 = 30;

/// Stafford's "mix13" variant of the SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed hash: two full mixing rounds separate seed and key.
#[inline]
pub fn hash2(seed: u64, key: u64) -> u64 {
    hash_premixed(premix(seed), key)
}

/// The seed half of [`hash2`], for callers hashing many keys under one seed.
#[inline]
pub(crate) fn premix(seed: u64) -> u64 {
    mix64(seed ^ GOLDEN)
}

/// `hash_premixed(premix(s), k) == hash2(s, k)`.
#[inline]
pub(crate) fn hash_premixed(premixed: u64, key: u64) -> u64 {
    mix64(premixed ^ mix64(key.wrapping_add(GOLDEN).wrapping_mul(0xD6E8_FEB8_6659_FD93)))
}

/// Derives an independent child seed for sub-structure `(tag, index)`.
#[inline]
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    hash2(hash2(seed, tag ^ 0xA076_1D64_78BD_642F), index)
}

/// Maps a 64-bit hash uniformly onto `[0, b)`.
#[inline]
pub(crate) fn reduce(h: u64, b: u64) -> u64 {
    ((h as u128 * b as u128) >> 64) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HashKind {
    Sign,
    Bucket(u64),
    Uniform,
}

impl HashKind {
    fn name(&self) -> &'static str {
        match self {
            HashKind::Sign => "sign",
            HashKind::Bucket(_) => "bucket",
            HashKind::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashFamily {
    pub seed: u64,
    pub kind: HashKind,
    /// Declared independence level; informational only.
    pub independence: u32,
}

impl HashFamily {
    pub fn sign(seed: u64) -> Self {
        HashFamily {
            seed,
            kind: HashKind::Sign,
            independence: 4,
        }
    }

    pub fn bucket(seed: u64, b: u64) -> Result<Self> {
        if b == 0 {
            return Err(Error::InvalidParameter("bucket count must be positive".into()));
        }
        Ok(HashFamily {
            seed,
            kind: HashKind::Bucket(b),
            independence: 4,
        })
    }

    pub fn uniform(seed: u64) -> Self {
        HashFamily {
            seed,
            kind: HashKind::Uniform,
            independence: 64,
        }
    }

    fn wrong(&self, requested: &'static str) -> Error {
        Error::WrongHashKind {
            requested,
            actual: self.kind.name(),
        }
    }

    pub fn sign_of(&self, key: u64) -> Result<i8> {
        match self.kind {
            HashKind::Sign => Ok(if hash2(self.seed, key) >> 63 == 0 { 1 } else { -1 }),
            _ => Err(self.wrong("sign")),
        }
    }

    /// 64 independent sign bits for `key` (bit set means −1).
    pub fn sign_word(&self, key: u64) -> Result<u64> {
        match self.kind {
            HashKind::Sign => Ok(hash2(self.seed, key)),
            _ => Err(self.wrong("sign")),
        }
    }

    pub fn bucket_of(&self, key: u64) -> Result<u64> {
        match self.kind {
            HashKind::Bucket(b) => Ok(reduce(hash2(self.seed, key), b)),
            _ => Err(self.wrong("bucket")),
        }
    }

    pub fn uniform_scale(&self, key: u64) -> Result<UniformScale> {
        match self.kind {
            HashKind::Uniform => Ok(UniformScale::from_hash(hash2(self.seed, key))),
            _ => Err(self.wrong("uniform")),
        }
    }
}

/// A fixed-point value in `(0, 1]` with [`SCALE_BITS`] fractional bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct UniformScale(u32);

impl UniformScale {
    #[inline]
    pub(crate) fn from_hash(h: u64) -> Self {
        UniformScale((h >> (64 - SCALE_BITS)) as u32)
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn value(self) -> f64 {
        (self.0 as f64 + 1.0) / (1u64 << SCALE_BITS) as f64
    }

    pub fn floor() -> f64 {
        1.0 / (1u64 << SCALE_BITS) as f64
    }
}

/// Parses a 64-bit seed written in decimal or as `0x`-prefixed hex.
pub fn parse_seed(s: &str) -> Result<u64> {
    let s = s.trim();
    let parsed = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        s.parse::<u64>()
    };
    parsed.map_err(|_| Error::InvalidParameter(format!("not a 64-bit seed: {s:?}")))
}
