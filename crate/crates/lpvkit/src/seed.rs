//! Deterministic RNG stream derivation and content digests.
//!
//! Every stochastic component draws from a ChaCha stream keyed by a SHA-256
//! hash of the master seed, a textual label, and a stream index. Streams are
//! therefore independent of thread scheduling and of each other.

use nalgebra::DMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// 32-byte key for the (`seed`, `label`, `index`) substream.
pub fn derive_key(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0x1f]);
    h.update(label.as_bytes());
    h.update([0x1f]);
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Seeded generator for the (`seed`, `label`, `index`) substream.
pub fn derive_rng(seed: u64, label: &str, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive_key(seed, label, index))
}

/// Hex SHA-256 digest of a matrix (shape plus column-major little-endian
/// entry bytes), used to fingerprint point clouds and artifacts.
pub fn matrix_digest(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

/// Hex SHA-256 digest of raw bytes.
pub fn bytes_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
