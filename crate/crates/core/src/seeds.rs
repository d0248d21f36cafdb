// SPDX-License-Identifier: Apache-2.0

//! Stable seed derivation and content fingerprints.

use sha2::{Digest, Sha256};

/// Derives a child seed from `parent` and a label. Stable across platforms
/// and releases.
pub fn mix_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Hex sha256 of `bytes`.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
