//! Stable content hashing for seeds, trial ids and digests.

use sha2::{Digest, Sha256};

/// SHA-256 over length-prefixed parts folded to 64 bits.
pub fn stable_seed(parts: &[&[u8]]) -> u64 {
    let digest = hash_parts(parts);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Hex SHA-256 over length-prefixed parts.
pub fn stable_hex(parts: &[&[u8]]) -> String {
    hex::encode(hash_parts(parts))
}

/// Hex SHA-256 of raw bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}
