//! Fingerprint helper shared by training configs and pipeline stages.

use sha2::Digest;

/// Hex SHA-256 over the parts joined with an unambiguous separator.
pub(crate) fn sha256_hex(parts: &[&str]) -> String {
    let mut h = sha2::Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    format!("{:x}", h.finalize())
}
