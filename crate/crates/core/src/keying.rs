//! Messages, watermark keys and key-derived target sequences.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::KeyError;
use crate::rng::CounterRng;

pub const MAX_MESSAGE_BITS: usize = 32;
pub const MAX_ENUMERABLE_BITS: usize = 16;

/// Lower end of the target range, `Φ(−2)`.
pub const TARGET_LO: f64 = 0.0228;
/// Upper end of the target range, `Φ(2)`.
pub const TARGET_HI: f64 = 0.9772;

/// Version tag mixed into seed derivation; bump if the derivation changes.
pub const SEED_DERIVATION: &str = "featuremark/seed/sha256/v1";

/// A `b`-bit payload, `1 ≤ b ≤ 32`, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Message {
    bits: Vec<bool>,
}

impl Message {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self, KeyError> {
        if bits.is_empty() || bits.len() > MAX_MESSAGE_BITS {
            return Err(KeyError::BitsOutOfRange(bits.len()));
        }
        Ok(Message { bits })
    }

    /// The `bits`-wide big-endian encoding of `value`.
    pub fn from_value(value: u64, bits: usize) -> Result<Self, KeyError> {
        if bits == 0 || bits > MAX_MESSAGE_BITS {
            return Err(KeyError::BitsOutOfRange(bits));
        }
        if value >> bits != 0 {
            return Err(KeyError::ValueTooLarge { value, bits });
        }
        let bits_vec = (0..bits).rev().map(|i| (value >> i) & 1 == 1).collect();
        Ok(Message { bits: bits_vec })
    }

    /// Parse a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self, KeyError> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(KeyError::BitsOutOfRange(0)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Message::from_bits(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn value(&self) -> u64 {
        self.bits.iter().fold(0, |acc, &b| (acc << 1) | u64::from(b))
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// 128-bit watermarking secret.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Secret([u8; 16]);

impl Secret {
    pub const fn new(bytes: [u8; 16]) -> Self {
        Secret(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let mut out = [0u8; 16];
        hex::decode_to_slice(s.trim(), &mut out).map_err(|_| KeyError::InvalidSecret)?;
        Ok(Secret(out))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkKey {
    pub seed: u64,
    pub message: Message,
    pub secret: Secret,
}

/// Bind a message to a key: `seed = SHA-256(tag ‖ secret ‖ b ‖ bits)[..8]`.
pub fn message_to_key(message: &Message, secret: &Secret) -> WatermarkKey {
    let mut h = Sha256::new();
    h.update(SEED_DERIVATION.as_bytes());
    h.update([0u8]);
    h.update(secret.as_bytes());
    h.update([message.len() as u8]);
    h.update(message.value().to_be_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 8];
    seed.copy_from_slice(&digest[..8]);
    WatermarkKey {
        seed: u64::from_le_bytes(seed),
        message: message.clone(),
        secret: *secret,
    }
}

/// Key-derived targets, each in `[TARGET_LO, TARGET_HI]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSequence(Vec<f64>);

impl TargetSequence {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl core::ops::Deref for TargetSequence {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Target `i` is `TARGET_LO + u_i (TARGET_HI − TARGET_LO)` where `u_i` is
/// output `i` of a counter-mode stream keyed by the key's seed, so shorter
/// sequences are always prefixes of longer ones.
pub fn targets_from_key(key: &WatermarkKey, units: usize) -> TargetSequence {
    let rng = CounterRng::new(key.seed);
    TargetSequence(
        (0..units as u64)
            .map(|i| TARGET_LO + crate::rng::unit_f64(rng.at(i)) * (TARGET_HI - TARGET_LO))
            .collect(),
    )
}

/// One key per `b`-bit message, ordered by message value.
pub fn enumerate_keys(bits: usize, secret: &Secret) -> Result<Vec<WatermarkKey>, KeyError> {
    if bits == 0 {
        return Err(KeyError::BitsOutOfRange(bits));
    }
    if bits > MAX_ENUMERABLE_BITS {
        return Err(KeyError::SpaceTooLarge(bits));
    }
    (0..1u64 << bits)
        .map(|v| Message::from_value(v, bits).map(|m| message_to_key(&m, secret)))
        .collect()
}
